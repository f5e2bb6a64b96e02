import zlib
from typing import Union
import numpy as np


def derive_seed(master_seed: int, *keys: Union[int, str]) -> int:
    """
    由主种子和若干键派生 64 位子种子

    混合函数：numpy SeedSequence 的熵散列，熵为 [master_seed, k_1, k_2, ...]，
    字符串键先取 crc32。结果只依赖输入，与执行顺序、线程数无关。

    Args:
        master_seed: 主种子
        keys: 实验编号、样本序号等

    Returns:
        int: 64 位种子
    """
    entropy = [int(master_seed)]
    for key in keys:
        entropy.append(zlib.crc32(key.encode("utf-8")) if isinstance(key, str) else int(key))
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])
