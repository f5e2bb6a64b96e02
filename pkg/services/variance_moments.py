"""
单态的无序方差 E[⟨φ|H|φ⟩²]、Haar 平均以及纯度展开
"""
from dataclasses import dataclass
from itertools import combinations
from math import comb
from typing import Any, Dict, List, Optional, Sequence, Tuple
import numpy as np

from services.hamiltonian_model import HamiltonianModel, ModelConfig
from services.pauli_algebra import z_signs
from services.spectral_solver import SpectralSolver, StateVector
from utils.errors import CapacityError, DimensionError, DomainError, StateValidationError
from utils.seeding import derive_seed
from utils.settings import get_settings
from utils.logger import get_logger

# 获取日志器
logger = get_logger()

SUBSET_LIMIT = 10 ** 5


@dataclass(frozen=True)
class PurityProfile:
    """A_k：全部 k 比特子系统约化态纯度的平均，k = 0..p"""
    n: int
    p: int
    A: Tuple[float, ...]

    def __post_init__(self):
        if len(self.A) != self.p + 1:
            raise DimensionError(f"A 的长度应为 p+1={self.p + 1}，实际 {len(self.A)}")
        if abs(self.A[0] - 1.0) > 1e-12:
            raise StateValidationError(f"A_0 必须为 1: {self.A[0]}")
        if any(a <= 0 or a > 1 + 1e-10 for a in self.A):
            raise StateValidationError(f"纯度必须在 (0, 1] 内: {self.A}")


def bell_state() -> StateVector:
    """(|00⟩ + |11⟩)/√2"""
    amps = np.zeros(4, dtype=complex)
    amps[0] = amps[3] = 1.0
    return StateVector.from_amplitudes(amps)


def ghz_state(n: int) -> StateVector:
    """(|0…0⟩ + |1…1⟩)/√2"""
    if n < 1:
        raise DomainError(f"n 必须 ≥ 1: {n}")
    amps = np.zeros(2 ** n, dtype=complex)
    amps[0] = amps[-1] = 1.0
    return StateVector.from_amplitudes(amps)


class VarianceMoments:
    """
    方差矩服务
    精确计算（不采样）单态方差、纯度展开与调整模型方差
    """

    def __init__(self, model: Optional[HamiltonianModel] = None, spectral: Optional[SpectralSolver] = None,
                 params: Optional[Dict[str, Any]] = None):
        """
        初始化方差矩服务

        Args:
            model: 哈密顿量服务
            spectral: 谱计算服务（偏迹、Haar 态）
            params: 参数
        """
        self.model = model or HamiltonianModel()
        self.spectral = spectral or SpectralSolver()
        self.params = params or {
            'dense_limit': get_settings().dense_limit,
            'subset_limit': SUBSET_LIMIT,
        }
        logger.debug(f"初始化VarianceMoments方差服务，参数: {self.params}")

    def _check_state(self, state: StateVector, n: Optional[int] = None):
        if n is not None and state.n != n:
            raise DimensionError(f"态的比特数 {state.n} 与 n={n} 不符")
        limit = self.params['dense_limit']
        if state.n > limit:
            raise CapacityError(f"n={state.n} 超过稠密上限 {limit}", required=state.n, limit=limit)

    def pauli_expectations(self, state: StateVector, config: ModelConfig) -> np.ndarray:
        """
        规范顺序下每一项的 ⟨φ|P|φ⟩

        P = i^{#Y} X^x Z^z，⟨φ|P|φ⟩ = i^{#Y} ∑_m conj(φ[m⊕x]) (−1)^{|m∧z|} φ[m]
        """
        self._check_state(state, config.n)
        table = self.model.term_table(config)
        psi = state.amplitudes
        basis = np.arange(2 ** config.n, dtype=np.int64)
        phases = np.array([1, 1j, -1, -1j])
        overlaps: Dict[int, np.ndarray] = {}
        out = np.empty(len(table))
        for t in range(len(table)):
            x = int(table.x_masks[t])
            if x not in overlaps:
                overlaps[x] = np.conj(psi[basis ^ x]) * psi
            signs = z_signs(basis, int(table.z_masks[t]))
            value = phases[int(table.y_counts[t]) % 4] * np.dot(overlaps[x], signs)
            out[t] = float(np.real(value))
        return out

    def state_variance(self, state: StateVector, config: ModelConfig) -> float:
        """
        E[⟨φ|H|φ⟩²] = norm² ∑ ⟨φ|P|φ⟩²，单位方差系数下精确成立

        Args:
            state: 纯态
            config: 模型配置（调整模型亦可）

        Returns:
            float: 方差
        """
        expectations = self.pauli_expectations(state, config)
        return float(config.normalization ** 2 * np.dot(expectations, expectations))

    def haar_variance_check(self, n: int, p: int, samples: int, seed: int) -> Dict[str, float]:
        """
        Haar 随机态的方差平均与 3^p/(2^n+1) 比较

        Args:
            n: 比特数
            p: 局域度
            samples: 样本数
            seed: 主种子

        Returns:
            dict: empirical_mean、target、stderr、samples
        """
        try:
            config = ModelConfig(n=n, p=p)
            logger.info(f"Haar方差检验: n={n}, p={p}, samples={samples}")
            values = np.array([
                self.state_variance(self.spectral.haar_state(n, derive_seed(seed, "haar", s)), config)
                for s in range(samples)
            ])
            stderr = float(np.std(values, ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
            return {
                "n": n, "p": p, "samples": samples,
                "empirical_mean": float(values.mean()),
                "target": 3.0 ** p / (2 ** n + 1),
                "stderr": stderr,
            }
        except Exception as e:
            logger.error(f"Haar方差检验时出错: {str(e)}")
            logger.exception(e)
            raise

    def _average_purity(self, state: StateVector, k: int) -> float:
        if k == 0:
            return 1.0
        count = comb(state.n, k)
        if count > self.params['subset_limit']:
            raise CapacityError(f"C({state.n},{k})={count} 个子系统超过上限", required=count,
                                limit=self.params['subset_limit'])
        total = 0.0
        for subset in combinations(range(state.n), k):
            total += self.spectral.purity(self.spectral.partial_trace(state, subset))
        return total / count

    def purity_profile(self, state: StateVector, p: int) -> PurityProfile:
        """A_0..A_p，对全部 C(n,k) 个子系统精确平均"""
        self._check_state(state)
        if p > state.n:
            raise DomainError(f"p={p} 大于 n={state.n}")
        return PurityProfile(n=state.n, p=p, A=tuple(self._average_purity(state, k) for k in range(p + 1)))

    def purity_variance(self, state: StateVector, n: int, p: int) -> float:
        """
        纯度展开 ∑_k (−1)^{p−k} 2^k C(p,k) A_k

        Args:
            state: 纯态
            n: 比特数
            p: 局域度

        Returns:
            float: 与 state_variance 相等
        """
        self._check_state(state, n)
        profile = self.purity_profile(state, p)
        return float(sum((-1) ** (p - k) * 2 ** k * comb(p, k) * profile.A[k] for k in range(p + 1)))

    def adjusted_variance(self, state: StateVector, n: int, p: int) -> float:
        """调整模型的方差：p 比特子系统纯度的平均 A_p"""
        self._check_state(state, n)
        if p > n:
            raise DomainError(f"p={p} 大于 n={n}")
        return self._average_purity(state, p)

    def variance_additivity_check(self, state: StateVector, config: ModelConfig) -> Dict[str, float]:
        """
        调整模型方差的两种算法：全字母项求和 vs 纯度平均

        Returns:
            dict: state_variance（标准模型）、adjusted_variance、adjusted_from_terms
        """
        standard = ModelConfig(n=config.n, p=config.p)
        adjusted = ModelConfig(n=config.n, p=config.p, include_identity_letters=True)
        return {
            "state_variance": self.state_variance(state, standard),
            "adjusted_variance": self.adjusted_variance(state, config.n, config.p),
            "adjusted_from_terms": self.state_variance(state, adjusted),
        }

    def variance_table(self, n: int, p: int, samples: int, seed: int) -> List[Dict[str, Any]]:
        """Haar 随机态上三种方差的逐行记录，列顺序 n, p, seed, state_variance, purity_variance, adjusted_variance"""
        config = ModelConfig(n=n, p=p)
        rows = []
        for s in range(samples):
            state_seed = derive_seed(seed, "variance", s)
            state = self.spectral.haar_state(n, state_seed)
            rows.append({
                "n": n,
                "p": p,
                "seed": state_seed,
                "state_variance": self.state_variance(state, config),
                "purity_variance": self.purity_variance(state, n, p),
                "adjusted_variance": self.adjusted_variance(state, n, p),
            })
        return rows
