"""
2^n 维算符上的线性代数：极大本征值、自由能、偏迹、Haar 随机态
"""
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union
import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh, ArpackNoConvergence
from scipy.special import logsumexp

from utils.errors import CapacityError, ConvergenceError, DimensionError, DomainError, StateValidationError
from utils.settings import get_settings
from utils.logger import get_logger

# 获取日志器
logger = get_logger()


@dataclass(frozen=True)
class DenseOperator:
    """2^n × 2^n 复矩阵"""
    n: int
    entries: np.ndarray

    def __post_init__(self):
        dim = 2 ** self.n
        if self.entries.shape != (dim, dim):
            raise DimensionError(f"矩阵形状 {self.entries.shape} 与 n={self.n} 不符")
        self.entries.setflags(write=False)

    @property
    def dim(self) -> int:
        return 2 ** self.n

    @property
    def is_zero(self) -> bool:
        return not np.any(self.entries)

    def is_hermitian(self, tol: float = 1e-10) -> bool:
        return bool(np.max(np.abs(self.entries - self.entries.conj().T), initial=0.0) <= tol)

    def apply(self, vector: np.ndarray) -> np.ndarray:
        return self.entries @ vector

    def quadratic_form(self, state: "StateVector") -> float:
        """⟨ψ|H|ψ⟩ 的实部"""
        psi = state.amplitudes
        return float(np.real(np.vdot(psi, self.entries @ psi)))


@dataclass(frozen=True)
class StateVector:
    """n 比特纯态，振幅长度 2^n，2-范数为 1"""
    n: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.amplitudes.shape != (2 ** self.n,):
            raise DimensionError(f"振幅长度 {self.amplitudes.shape} 与 n={self.n} 不符")
        norm = np.linalg.norm(self.amplitudes)
        if abs(norm - 1.0) > 1e-12:
            raise StateValidationError(f"态未归一化: |ψ| = {norm!r}")
        self.amplitudes.setflags(write=False)

    @classmethod
    def from_amplitudes(cls, amplitudes: Sequence[complex], normalize: bool = True) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=complex).copy()
        n = int(round(np.log2(len(amps))))
        if normalize:
            amps = amps / np.linalg.norm(amps)
        return cls(n=n, amplitudes=amps)

    def density_matrix(self) -> DenseOperator:
        return DenseOperator(n=self.n, entries=np.outer(self.amplitudes, self.amplitudes.conj()))


class SpectralSolver:
    """
    谱计算服务
    稠密情形走 LAPACK 全对角化，大维度走 ARPACK Lanczos 并做残差认证
    """

    def __init__(self, params: Optional[Dict[str, Any]] = None):
        """
        初始化谱计算服务

        Args:
            params: 求解参数
        """
        self.params = params or {
            'tol': 1e-8,             # 残差认证 ‖Hv − λv‖
            'dense_threshold': 64,   # 维度不超过该值时直接全对角化
            'max_iterations': None,  # ARPACK 迭代上限，None 为 scipy 默认
            'start_seed': 0,         # Lanczos 起始向量的种子
        }
        self.dense_limit = get_settings().dense_limit
        logger.debug(f"初始化SpectralSolver谱计算服务，参数: {self.params}")

    def _check_dense(self, n: int, what: str):
        if n > self.dense_limit:
            logger.error(f"{what}: n={n} 超过稠密上限 {self.dense_limit}")
            raise CapacityError(f"{what}: n={n} 超过稠密上限 {self.dense_limit}", required=n, limit=self.dense_limit)

    def dense_spectrum(self, operator: DenseOperator) -> np.ndarray:
        """
        全谱（升序）

        Args:
            operator: 厄米算符

        Returns:
            升序本征值数组
        """
        self._check_dense(operator.n, "dense_spectrum")
        return np.linalg.eigvalsh(operator.entries)

    def spectrum_rows(self, operator: DenseOperator) -> List[Dict[str, Any]]:
        """导出 CSV 用的 (index, eigenvalue) 行"""
        return [{"index": i, "eigenvalue": float(v)} for i, v in enumerate(self.dense_spectrum(operator))]

    def lambda_max(self, operator, tol: Optional[float] = None) -> float:
        """
        极大本征值

        operator 可以是 DenseOperator，也可以是任何带 n 属性与 apply(v) 方法的无矩阵算符。

        Args:
            operator: 厄米算符
            tol: 残差认证阈值

        Returns:
            float: λ_max
        """
        tol = tol if tol is not None else self.params['tol']
        n = operator.n
        dim = 2 ** n
        if getattr(operator, "is_zero", False):
            return 0.0
        if dim <= self.params['dense_threshold']:
            if isinstance(operator, DenseOperator):
                entries = operator.entries
            elif hasattr(operator, "to_dense"):
                entries = operator.to_dense()
            else:
                entries = np.column_stack([operator.apply(column) for column in np.eye(dim, dtype=complex)])
            return float(np.linalg.eigvalsh(entries)[-1])

        try:
            linear = LinearOperator((dim, dim), matvec=operator.apply, dtype=complex)
            rng = np.random.Generator(np.random.Philox(self.params['start_seed']))
            v0 = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
            try:
                values, vectors = eigsh(linear, k=1, which='LA', v0=v0 / np.linalg.norm(v0),
                                        maxiter=self.params['max_iterations'])
            except ArpackNoConvergence as e:
                residual = float("inf")
                if e.eigenvalues is not None and len(e.eigenvalues):
                    v = e.eigenvectors[:, 0]
                    residual = float(np.linalg.norm(operator.apply(v) - e.eigenvalues[0] * v))
                raise ConvergenceError("Lanczos 未在迭代上限内收敛", residual=residual)

            lam = float(np.real(values[0]))
            v = vectors[:, 0]
            v = v / np.linalg.norm(v)
            residual = float(np.linalg.norm(operator.apply(v) - lam * v))
            if residual > tol:
                raise ConvergenceError(f"λ_max 残差未达到 {tol:g}", residual=residual)
            logger.debug(f"lambda_max: n={n}, λ={lam:.12f}, residual={residual:.2e}")
            return lam
        except Exception as e:
            logger.error(f"计算λ_max时出错: {str(e)}")
            logger.exception(e)
            raise

    def log_partition(self, operator: DenseOperator, beta: float) -> float:
        """
        F_β = β⁻¹ log Tr e^{βH}，用 logsumexp 做最大值平移防止溢出

        Args:
            operator: 厄米算符
            beta: 逆温度，必须为正

        Returns:
            float: F_β
        """
        if beta <= 0:
            raise DomainError(f"beta 必须为正: {beta}")
        spectrum = self.dense_spectrum(operator)
        return float(logsumexp(beta * spectrum) / beta)

    def partial_trace(self, rho_or_state: Union[StateVector, DenseOperator], keep: Iterable[int]) -> DenseOperator:
        """
        约化密度矩阵 ρ_S = Tr_{[n]∖S}(ρ)

        保留比特按升序排列

        Args:
            rho_or_state: 纯态或密度矩阵
            keep: 保留的比特集合

        Returns:
            DenseOperator: 约化密度矩阵
        """
        n = rho_or_state.n
        requested = list(keep)
        keep = sorted(set(requested))
        if len(keep) != len(requested) or any(q < 0 or q >= n for q in keep):
            raise DomainError(f"非法的比特子集 {requested}，n={n}")
        traced = [q for q in range(n) if q not in keep]
        k = len(keep)

        if isinstance(rho_or_state, StateVector):
            psi = rho_or_state.amplitudes.reshape([2] * n)
            matrix = np.transpose(psi, keep + traced).reshape(2 ** k, 2 ** (n - k))
            return DenseOperator(n=k, entries=matrix @ matrix.conj().T)

        rho = np.asarray(rho_or_state.entries).reshape([2] * (2 * n))
        m = n
        for q in sorted(traced, reverse=True):
            rho = np.trace(rho, axis1=q, axis2=q + m)
            m -= 1
        return DenseOperator(n=k, entries=np.asarray(rho).reshape(2 ** k, 2 ** k))

    @staticmethod
    def purity(rho: DenseOperator) -> float:
        """Tr(ρ²)，ρ 厄米"""
        return float(np.sum(np.abs(rho.entries) ** 2))

    def haar_state(self, n: int, seed: int) -> StateVector:
        """
        Haar 随机纯态：复高斯向量归一化

        Args:
            n: 比特数
            seed: 种子

        Returns:
            StateVector
        """
        self._check_dense(n, "haar_state")
        rng = np.random.Generator(np.random.Philox(seed))
        dim = 2 ** n
        z = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        return StateVector(n=n, amplitudes=z / np.linalg.norm(z))

    @staticmethod
    def concentration_summary(lambda_values: Sequence[float], n: int, p: int) -> Dict[str, float]:
        """
        λ_max(√n H) 的涨落与高斯 Lipschitz 尾界对比

        以 t = std(λ_max(√n H))/n 计算 2·exp(−t²n/(2·3^p))

        Args:
            lambda_values: 各样本的 λ_max(H)
            n: 比特数
            p: 局域度

        Returns:
            dict: std_sqrt_n、t、tail_bound
        """
        values = np.asarray(lambda_values, dtype=float)
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        t = std * np.sqrt(n) / n
        return {
            "std_sqrt_n": std * float(np.sqrt(n)),
            "t": float(t),
            "tail_bound": float(min(1.0, 2.0 * np.exp(-t * t * n / (2.0 * 3 ** p)))),
        }
