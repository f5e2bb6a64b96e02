"""
Pauli 串代数

内部表示采用辛编码：每个 Pauli 字由 x 位串、z 位串和一个 2-bit 相位指数 k 组成，
算符为 i^k · X^x · Z^z，约定 Y = iXZ。比特 q 对应整数的第 (n-1-q) 位，
即字符串最左边的字符是 qubit 0，也是矩阵张量积中最高位的比特。

字符串形式：可选相位前缀 {+, -, +i, -i} 后跟 n 个 I/X/Y/Z 字符，例如 "-iXZI"。
"""
from dataclasses import dataclass
from enum import Enum
from functools import reduce
from typing import Iterable, Optional, Sequence, Tuple, Union
import numpy as np

from services.spectral_solver import DenseOperator
from utils.errors import CapacityError, DimensionError, ParameterError
from utils.settings import get_settings
from utils.logger import get_logger

# 获取日志器
logger = get_logger()


class PauliLetter(str, Enum):
    I = "I"
    X = "X"
    Y = "Y"
    Z = "Z"

    @property
    def code(self) -> int:
        """σ^0..σ^3 的编号：I=0, X=1, Y=2, Z=3"""
        return "IXYZ".index(self.value)

    @property
    def bits(self) -> Tuple[int, int]:
        return _LETTER_BITS[self.value]

    @classmethod
    def from_code(cls, code: int) -> "PauliLetter":
        return cls("IXYZ"[code])


NON_IDENTITY_LETTERS = (PauliLetter.X, PauliLetter.Y, PauliLetter.Z)

# (x, z) 位
_LETTER_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}

LETTER_MATRICES = {
    PauliLetter.I: np.array([[1, 0], [0, 1]], dtype=complex),
    PauliLetter.X: np.array([[0, 1], [1, 0]], dtype=complex),
    PauliLetter.Y: np.array([[0, -1j], [1j, 0]], dtype=complex),
    PauliLetter.Z: np.array([[1, 0], [0, -1]], dtype=complex),
}

_PHASES = (1, 1j, -1, -1j)
_PHASE_PREFIX = {0: "", 1: "+i", 2: "-", 3: "-i"}


def _popcount(value: int) -> int:
    return int(np.bitwise_count(np.uint64(value)))


def z_signs(basis: np.ndarray, z_mask: int) -> np.ndarray:
    """
    Z^z 在计算基上的对角元 (−1)^{|m∧z|}

    np.bitwise_count 返回 uint8，先取奇偶再映射为 ±1.0，不做无符号减法
    """
    parity = np.bitwise_count(np.asarray(basis, dtype=np.int64) & int(z_mask)) & 1
    return np.where(parity == 1, -1.0, 1.0)


@dataclass(frozen=True)
class PauliTerm:
    """
    p-local Pauli 项：严格递增的比特下标元组 + 同长度的字母元组

    调整模型 (adjusted model) 允许字母中出现 I。
    """
    n: int
    qubits: Tuple[int, ...]
    letters: Tuple[PauliLetter, ...]

    def __post_init__(self):
        if len(self.qubits) != len(self.letters):
            raise DimensionError(f"qubits 与 letters 长度不一致: {self.qubits} / {self.letters}")
        if not 1 <= len(self.qubits) <= self.n:
            raise DimensionError(f"局域度 p={len(self.qubits)} 不在 [1, n={self.n}] 内")
        if any(b <= a for a, b in zip(self.qubits, self.qubits[1:])):
            raise ParameterError(f"qubits 必须严格递增: {self.qubits}")
        if self.qubits[0] < 0 or self.qubits[-1] >= self.n:
            raise ParameterError(f"qubit 下标越界: {self.qubits}, n={self.n}")
        object.__setattr__(self, "letters", tuple(PauliLetter(a) for a in self.letters))

    @property
    def p(self) -> int:
        return len(self.qubits)

    def label(self) -> str:
        """序列化标签，如 "X0 Z2"；调整模型中不同项可能对应同一个字，因此标签带下标"""
        return " ".join(f"{a.value}{q}" for q, a in zip(self.qubits, self.letters))

    @classmethod
    def from_label(cls, label: str, n: int) -> "PauliTerm":
        parts = label.split()
        try:
            letters = tuple(PauliLetter(part[0]) for part in parts)
            qubits = tuple(int(part[1:]) for part in parts)
        except (ValueError, IndexError) as e:
            raise ParameterError(f"无法解析 Pauli 项标签 '{label}': {e}")
        return cls(n=n, qubits=qubits, letters=letters)

    def to_word(self) -> "PhasedPauli":
        return term_to_word(self)


@dataclass(frozen=True)
class PhasedPauli:
    """
    带相位的 n 比特 Pauli 字，算符为 i^k X^x Z^z
    """
    n: int
    x: int
    z: int
    k: int = 0

    def __post_init__(self):
        object.__setattr__(self, "k", self.k % 4)

    @classmethod
    def from_letters(cls, letters: Iterable[Union[PauliLetter, str]], phase_exponent: int = 0) -> "PhasedPauli":
        """
        由字母序列构造

        Args:
            letters: 每个比特的字母，qubit 0 在最前
            phase_exponent: 公开相位 i^phase_exponent

        Returns:
            PhasedPauli
        """
        letters = [PauliLetter(a) for a in letters]
        n = len(letters)
        x = z = 0
        n_y = 0
        for q, a in enumerate(letters):
            bx, bz = a.bits
            shift = n - 1 - q
            x |= bx << shift
            z |= bz << shift
            n_y += bx & bz
        return cls(n=n, x=x, z=z, k=phase_exponent + n_y)

    @classmethod
    def identity(cls, n: int) -> "PhasedPauli":
        return cls(n=n, x=0, z=0, k=0)

    @property
    def phase_exponent(self) -> int:
        """公开相位指数（相对于 I/X/Y/Z 字母矩阵）"""
        return (self.k - _popcount(self.x & self.z)) % 4

    @property
    def phase(self) -> complex:
        return _PHASES[self.phase_exponent]

    @property
    def letters(self) -> Tuple[PauliLetter, ...]:
        out = []
        for q in range(self.n):
            shift = self.n - 1 - q
            bx = (self.x >> shift) & 1
            bz = (self.z >> shift) & 1
            out.append(PauliLetter("IZXY"[bx * 2 + bz]))
        return tuple(out)

    @property
    def weight(self) -> int:
        return _popcount(self.x | self.z)

    @property
    def is_identity(self) -> bool:
        return self.x == 0 and self.z == 0

    def __mul__(self, other: "PhasedPauli") -> "PhasedPauli":
        return pauli_product(self, other)

    def __str__(self) -> str:
        return format_word(self)


def pauli_product(a: PhasedPauli, b: PhasedPauli) -> PhasedPauli:
    """
    精确的群乘积 a·b

    Z^z1 X^x2 = (-1)^{|z1 & x2|} X^x2 Z^z1，相位指数加 2 即乘 -1

    Args:
        a: 左因子
        b: 右因子

    Returns:
        PhasedPauli: 含累积相位的乘积
    """
    if a.n != b.n:
        raise DimensionError(f"比特数不一致: {a.n} vs {b.n}")
    k = a.k + b.k + 2 * _popcount(a.z & b.x)
    return PhasedPauli(n=a.n, x=a.x ^ b.x, z=a.z ^ b.z, k=k)


def _as_word(value: Union[PhasedPauli, PauliTerm]) -> PhasedPauli:
    return term_to_word(value) if isinstance(value, PauliTerm) else value


def anticommutes(a: Union[PhasedPauli, PauliTerm], b: Union[PhasedPauli, PauliTerm]) -> bool:
    """两个 Pauli 反对易当且仅当双方都非 I 且字母不同的位置数为奇数"""
    a, b = _as_word(a), _as_word(b)
    if a.n != b.n:
        raise DimensionError(f"比特数不一致: {a.n} vs {b.n}")
    return (_popcount(a.x & b.z) + _popcount(a.z & b.x)) % 2 == 1


def letter_sequence_phase(seq: Sequence[Union[PauliLetter, str]]) -> Optional[int]:
    """
    单比特字母序列乘积的相位指数

    Returns:
        乘积正比于 I 时返回 k（乘积 = i^k I），否则返回 None（迹为 0）
    """
    x = z = k = 0
    for a in seq:
        bx, bz = _LETTER_BITS[PauliLetter(a).value]
        k += bx & bz
        k += 2 * (z & bx)
        x ^= bx
        z ^= bz
    if x or z:
        return None
    return k % 4


def trace_of_letter_sequence(seq: Sequence[Union[PauliLetter, str]]) -> complex:
    """
    单比特 Pauli 字母序列乘积的迹

    Args:
        seq: 非空字母序列

    Returns:
        complex: 取值于 {0, ±2, ±2i}
    """
    if len(seq) == 0:
        raise ParameterError("字母序列不能为空")
    k = letter_sequence_phase(seq)
    if k is None:
        return 0j
    return complex(2 * _PHASES[k])


def term_to_word(term: PauliTerm) -> PhasedPauli:
    letters = [PauliLetter.I] * term.n
    for q, a in zip(term.qubits, term.letters):
        letters[q] = a
    return PhasedPauli.from_letters(letters)


def materialize_word(word: PhasedPauli, n: Optional[int] = None, dense_limit: Optional[int] = None) -> DenseOperator:
    """
    生成 2^n × 2^n 的显式矩阵（逐比特 Kronecker 积）

    Args:
        word: Pauli 字
        n: 比特数，缺省取 word.n
        dense_limit: 稠密上限，缺省取配置

    Returns:
        DenseOperator
    """
    n = word.n if n is None else n
    if n != word.n:
        raise DimensionError(f"比特数不一致: {n} vs {word.n}")
    limit = dense_limit or get_settings().dense_limit
    if n > limit:
        logger.error(f"materialize_word: n={n} 超过稠密上限 {limit}")
        raise CapacityError(f"n={n} 超过稠密上限 {limit}", required=n, limit=limit)
    mats = [LETTER_MATRICES[a] for a in word.letters]
    entries = reduce(np.kron, mats, np.ones((1, 1), dtype=complex))
    return DenseOperator(n=n, entries=word.phase * entries)


def format_word(word: PhasedPauli) -> str:
    return _PHASE_PREFIX[word.phase_exponent] + "".join(a.value for a in word.letters)


def parse_word(text: str) -> PhasedPauli:
    """
    解析字符串形式的 Pauli 字，如 "XYZ"、"-XX"、"+iZ"、"-iIY"
    """
    body = text.strip().replace("−", "-")
    exponent = 0
    for prefix, value in (("+i", 1), ("-i", 3), ("i", 1), ("+", 0), ("-", 2)):
        if body.startswith(prefix):
            exponent = value
            body = body[len(prefix):]
            break
    if not body or any(c not in "IXYZ" for c in body):
        raise ParameterError(f"非法的 Pauli 字符串: '{text}'")
    return PhasedPauli.from_letters(body, phase_exponent=exponent)


def swap_identity_check() -> dict:
    """
    检查 ∑_a σ^a⊗σ^a = 2·SWAP − I

    Returns:
        dict: max_abs_error 与 holds
    """
    total = sum(np.kron(LETTER_MATRICES[a], LETTER_MATRICES[a]) for a in NON_IDENTITY_LETTERS)
    swap = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)
    error = float(np.max(np.abs(total - (2 * swap - np.eye(4)))))
    return {"max_abs_error": error, "holds": error == 0.0}
