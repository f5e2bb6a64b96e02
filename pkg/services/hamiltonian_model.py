"""
随机 p-局域 Pauli 哈密顿量系综

H = C(n,p)^{-1/2} ∑_{ī} ∑_{ā∈{X,Y,Z}^p} α[ī;ā] P_ī^ā

调整模型 (include_identity_letters=True) 的字母取遍 {I,X,Y,Z}^p（含全 I 项），
归一化为 2^{-p/2} C(n,p)^{-1/2}。

随机数：numpy Philox4x64-10 计数器生成器，以种子为 key、计数器从 0 开始；
第 t 项系数只使用流中第 t 个 64 位字 w_t，u_t = (⌊w_t/2^11⌋ + 1/2)/2^53 ∈ (0,1)。
Gaussian 用逆 CDF (ndtri) 得到，Rademacher 取 u<1/2 为 +1，
SparseRademacher 取 u<q/2 为 +m、q/2≤u<q 为 −m、其余为 0。
因此同一种子下稠密与稀疏采样在共享项上逐项一致。
"""
import json
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from itertools import combinations, product
from math import comb, sqrt
from typing import Any, Dict, Iterator, List, Optional, Tuple
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import ndtri

from services.pauli_algebra import PauliLetter, PauliTerm, z_signs
from services.spectral_solver import DenseOperator
from utils.errors import CapacityError, DimensionError, DomainError, ParameterError
from utils.settings import get_settings
from utils.logger import get_logger

# 获取日志器
logger = get_logger()

UINT64_MAX = 2 ** 64 - 1


class DisorderKind(str, Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"
    SPARSE_RADEMACHER = "sparse_rademacher"


class DisorderSpec(BaseModel):
    """无序分布与种子"""
    model_config = ConfigDict(frozen=True)

    kind: DisorderKind = DisorderKind.GAUSSIAN
    average_degree: Optional[float] = Field(None, gt=0, description="SparseRademacher 的平均度 d_n")
    seed: int = Field(0, ge=0, le=UINT64_MAX)

    @model_validator(mode="after")
    def _check_sparse(self):
        if self.kind == DisorderKind.SPARSE_RADEMACHER and self.average_degree is None:
            raise ValueError("sparse_rademacher 需要 average_degree")
        return self

    def with_seed(self, seed: int) -> "DisorderSpec":
        return self.model_copy(update={"seed": seed})


class ModelConfig(BaseModel):
    """模型规模；p ≤ n 由 HamiltonianModel 检查并抛 DomainError"""
    model_config = ConfigDict(frozen=True)

    n: int = Field(..., ge=1)
    p: int = Field(..., ge=1)
    include_identity_letters: bool = False

    @property
    def letter_alphabet(self) -> Tuple[PauliLetter, ...]:
        if self.include_identity_letters:
            return (PauliLetter.I, PauliLetter.X, PauliLetter.Y, PauliLetter.Z)
        return (PauliLetter.X, PauliLetter.Y, PauliLetter.Z)

    @property
    def term_count(self) -> int:
        return len(self.letter_alphabet) ** self.p * comb(self.n, self.p)

    @property
    def normalization(self) -> float:
        scale = 1.0 / sqrt(comb(self.n, self.p))
        if self.include_identity_letters:
            scale *= 2.0 ** (-self.p / 2)
        return scale


@dataclass(frozen=True)
class TermTable:
    """规范顺序下的项表：比特下标、字母编号以及辛编码掩码"""
    n: int
    p: int
    qubits: np.ndarray      # (N, p)
    codes: np.ndarray       # (N, p)，I=0 X=1 Y=2 Z=3
    x_masks: np.ndarray     # (N,)
    z_masks: np.ndarray     # (N,)
    y_counts: np.ndarray    # (N,)
    labels: Tuple[str, ...]
    _index: Dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.labels)

    def index_of(self, label: str) -> int:
        if not self._index:
            self._index.update({lab: i for i, lab in enumerate(self.labels)})
        try:
            return self._index[label]
        except KeyError:
            raise ParameterError(f"项 '{label}' 不属于该模型")

    def term(self, t: int) -> PauliTerm:
        return PauliTerm(
            n=self.n,
            qubits=tuple(int(q) for q in self.qubits[t]),
            letters=tuple(PauliLetter.from_code(int(c)) for c in self.codes[t]),
        )


@lru_cache(maxsize=32)
def _term_table(n: int, p: int, adjusted: bool) -> TermTable:
    alphabet = (0, 1, 2, 3) if adjusted else (1, 2, 3)
    subsets = list(combinations(range(n), p))
    words = list(product(alphabet, repeat=p))
    qubits = np.repeat(np.array(subsets, dtype=np.int64).reshape(len(subsets), p), len(words), axis=0)
    codes = np.tile(np.array(words, dtype=np.int64).reshape(len(words), p), (len(subsets), 1))

    shifts = (n - 1 - qubits).astype(np.int64)
    x_bits = np.isin(codes, (1, 2)).astype(np.int64)
    z_bits = np.isin(codes, (2, 3)).astype(np.int64)
    x_masks = np.sum(x_bits << shifts, axis=1)
    z_masks = np.sum(z_bits << shifts, axis=1)
    y_counts = np.sum(codes == 2, axis=1)
    labels = tuple(
        " ".join(f"{'IXYZ'[c]}{q}" for q, c in zip(qs, cs))
        for qs, cs in zip(qubits.tolist(), codes.tolist())
    )
    for arr in (qubits, codes, x_masks, z_masks, y_counts):
        arr.setflags(write=False)
    return TermTable(n=n, p=p, qubits=qubits, codes=codes, x_masks=x_masks,
                     z_masks=z_masks, y_counts=y_counts, labels=labels)


@dataclass(frozen=True)
class DisorderSample:
    """
    一次无序实现

    稠密存储：coefficients 为规范顺序下长度 N 的数组；
    稀疏存储：indices（升序）与 values 只记录非零项。
    """
    config: ModelConfig
    spec: DisorderSpec
    coefficients: Optional[np.ndarray] = None
    indices: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None

    def __post_init__(self):
        for arr in (self.coefficients, self.indices, self.values):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def p(self) -> int:
        return self.config.p

    @property
    def is_sparse(self) -> bool:
        return self.coefficients is None

    @property
    def table(self) -> TermTable:
        return _term_table(self.config.n, self.config.p, self.config.include_identity_letters)

    def nonzero(self) -> Tuple[np.ndarray, np.ndarray]:
        """(项下标, 系数) 只含存储中的项"""
        if self.is_sparse:
            return self.indices, self.values
        return np.arange(len(self.coefficients)), self.coefficients

    def dense_coefficients(self) -> np.ndarray:
        if not self.is_sparse:
            return self.coefficients
        dense = np.zeros(self.config.term_count)
        dense[self.indices] = self.values
        return dense

    def entries(self) -> Iterator[Tuple[PauliTerm, float]]:
        idx, vals = self.nonzero()
        table = self.table
        for t, v in zip(idx.tolist(), vals.tolist()):
            yield table.term(t), v

    # ---- 序列化 ----

    def to_json(self) -> str:
        idx, vals = self.nonzero()
        labels = self.table.labels
        payload = {
            "n": self.n,
            "p": self.p,
            "include_identity_letters": self.config.include_identity_letters,
            "spec": self.spec.model_dump(mode="json"),
            "entries": [[labels[t], float(v)] for t, v in zip(idx.tolist(), vals.tolist())],
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DisorderSample":
        payload = json.loads(text)
        config = ModelConfig(n=payload["n"], p=payload["p"],
                             include_identity_letters=payload.get("include_identity_letters", False))
        spec = DisorderSpec(**payload["spec"])
        table = _term_table(config.n, config.p, config.include_identity_letters)
        pairs = sorted((table.index_of(label), float(value)) for label, value in payload["entries"])
        indices = np.array([t for t, _ in pairs], dtype=np.int64)
        values = np.array([v for _, v in pairs], dtype=float)
        if spec.kind == DisorderKind.SPARSE_RADEMACHER:
            return cls(config=config, spec=spec, indices=indices, values=values)
        dense = np.zeros(config.term_count)
        dense[indices] = values
        return cls(config=config, spec=spec, coefficients=dense)

    def to_bytes(self) -> bytes:
        """稠密系数的小端 f64 数组"""
        return np.asarray(self.dense_coefficients(), dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, config: ModelConfig, spec: DisorderSpec) -> "DisorderSample":
        coefficients = np.frombuffer(data, dtype="<f8").astype(float)
        if len(coefficients) != config.term_count:
            raise DimensionError(f"系数个数 {len(coefficients)} 与模型项数 {config.term_count} 不符")
        return cls(config=config, spec=spec, coefficients=coefficients)


class MatrixFreeHamiltonian:
    """
    无矩阵 H·v

    按 x 掩码分组：H = ∑_x X^x D_x，D_x 为对角相位，(Hv)[j] = ∑_x D_x[j⊕x] v[j⊕x]
    """

    def __init__(self, sample: DisorderSample, cache_entries: int = 2 ** 24):
        self.n = sample.n
        self.dim = 2 ** self.n
        table = sample.table
        idx, vals = sample.nonzero()
        scale = sample.config.normalization
        mask = vals != 0
        idx, vals = idx[mask], vals[mask]

        # 相同 (x, z) 的项合并系数；算符为 i^{#Y} X^x Z^z
        combined: Dict[int, Dict[int, complex]] = {}
        phases = (1, 1j, -1, -1j)
        for t, v in zip(idx.tolist(), vals.tolist()):
            x = int(table.x_masks[t])
            z = int(table.z_masks[t])
            coeff = scale * v * phases[int(table.y_counts[t]) % 4]
            group = combined.setdefault(x, {})
            group[z] = group.get(z, 0) + coeff
        self._groups = combined
        self.is_zero = not any(c != 0 for g in combined.values() for c in g.values())
        self._basis = np.arange(self.dim, dtype=np.int64)
        self._diagonals: Optional[Dict[int, np.ndarray]] = None
        if len(combined) * self.dim <= cache_entries:
            self._diagonals = {x: self._diagonal(x) for x in combined}

    def _diagonal(self, x: int) -> np.ndarray:
        diag = np.zeros(self.dim, dtype=complex)
        for z, coeff in self._groups[x].items():
            diag += coeff * z_signs(self._basis, z)
        return diag

    def diagonals(self) -> Iterator[Tuple[int, np.ndarray]]:
        for x in sorted(self._groups):
            yield x, (self._diagonals[x] if self._diagonals is not None else self._diagonal(x))

    def apply(self, vector: np.ndarray) -> np.ndarray:
        vector = np.asarray(vector).reshape(-1)
        out = np.zeros(self.dim, dtype=complex)
        for x, diag in self.diagonals():
            flipped = self._basis ^ x
            out += diag[flipped] * vector[flipped]
        return out

    def to_dense(self) -> np.ndarray:
        matrix = np.zeros((self.dim, self.dim), dtype=complex)
        for x, diag in self.diagonals():
            flipped = self._basis ^ x
            matrix[self._basis, flipped] += diag[flipped]
        return matrix


class HamiltonianModel:
    """
    哈密顿量系综服务
    负责项枚举、无序采样、稠密 / 无矩阵表示以及乘积态能量
    """

    def __init__(self, params: Optional[Dict[str, Any]] = None):
        """
        初始化哈密顿量系综服务

        Args:
            params: 规模上限配置
        """
        settings = get_settings()
        self.params = params or {
            'dense_limit': settings.dense_limit,
            'matrix_free_limit': settings.matrix_free_limit,
        }
        logger.debug(f"初始化HamiltonianModel哈密顿量服务，参数: {self.params}")

    @staticmethod
    def _check_config(config: ModelConfig):
        if config.p > config.n:
            raise DomainError(f"局域度 p={config.p} 大于比特数 n={config.n}")

    def term_table(self, config: ModelConfig) -> TermTable:
        self._check_config(config)
        return _term_table(config.n, config.p, config.include_identity_letters)

    def enumerate_terms(self, config: ModelConfig) -> List[PauliTerm]:
        """
        按规范顺序（先比特元组、后字母元组的字典序）列出全部项

        Args:
            config: 模型配置

        Returns:
            List[PauliTerm]: 3^p·C(n,p) 项（调整模型为 4^p·C(n,p) 项）
        """
        table = self.term_table(config)
        return [table.term(t) for t in range(len(table))]

    @staticmethod
    def sparse_probability(config: ModelConfig, average_degree: float) -> float:
        """非零概率 q = 3^{-p} d_n / C(n, p−1)"""
        return 3.0 ** (-config.p) * average_degree / comb(config.n, config.p - 1)

    def sparse_pair_probability(self, config: ModelConfig, average_degree: float) -> float:
        """另一种稀疏参数化中每个符号的概率 p_n = q/2"""
        return 0.5 * self.sparse_probability(config, average_degree)

    @staticmethod
    def _uniforms(seed: int, count: int) -> np.ndarray:
        bit_generator = np.random.Philox(key=seed)
        words = bit_generator.random_raw(count) if count else np.zeros(0, dtype=np.uint64)
        return ((words >> np.uint64(11)).astype(float) + 0.5) * 2.0 ** -53

    def sample_disorder(self, config: ModelConfig, spec: DisorderSpec) -> DisorderSample:
        """
        采样一组系数

        Args:
            config: 模型配置
            spec: 无序分布与种子

        Returns:
            DisorderSample: Gaussian / Rademacher 为稠密存储，SparseRademacher 为稀疏存储
        """
        self._check_config(config)
        count = config.term_count
        try:
            u = self._uniforms(spec.seed, count)
            if spec.kind == DisorderKind.GAUSSIAN:
                return DisorderSample(config=config, spec=spec, coefficients=ndtri(u))
            if spec.kind == DisorderKind.RADEMACHER:
                return DisorderSample(config=config, spec=spec, coefficients=np.where(u < 0.5, 1.0, -1.0))

            q = self.sparse_probability(config, spec.average_degree)
            if q > 1.0:
                limit = 3 ** config.p * comb(config.n, config.p - 1)
                raise ParameterError(f"平均度 d_n={spec.average_degree} 超过上限 3^p·C(n,p−1)={limit}")
            magnitude = 1.0 / sqrt(q)
            indices = np.flatnonzero(u < q)
            values = np.where(u[indices] < q / 2, magnitude, -magnitude)
            logger.debug(f"稀疏采样: q={q:.4g}, 非零项 {len(indices)}/{count}")
            return DisorderSample(config=config, spec=spec, indices=indices.astype(np.int64), values=values)
        except Exception as e:
            logger.error(f"采样无序系数时出错: {str(e)}")
            logger.exception(e)
            raise

    def _check_capacity(self, n: int, key: str):
        limit = self.params[key]
        if n > limit:
            logger.error(f"n={n} 超过上限 {key}={limit}")
            raise CapacityError(f"n={n} 超过上限 {key}={limit}", required=n, limit=limit)

    def matrix_free(self, sample: DisorderSample) -> MatrixFreeHamiltonian:
        self._check_capacity(sample.n, 'matrix_free_limit')
        return MatrixFreeHamiltonian(sample)

    def apply_hamiltonian(self, sample: DisorderSample, vector: np.ndarray) -> np.ndarray:
        """无矩阵 H·v"""
        if len(vector) != 2 ** sample.n:
            raise DimensionError(f"向量长度 {len(vector)} 与 2^{sample.n} 不符")
        return self.matrix_free(sample).apply(vector)

    def materialize_hamiltonian(self, sample: DisorderSample) -> DenseOperator:
        """
        稠密哈密顿量

        Args:
            sample: 无序实现

        Returns:
            DenseOperator: 厄米矩阵，含归一化
        """
        self._check_capacity(sample.n, 'dense_limit')
        return DenseOperator(n=sample.n, entries=MatrixFreeHamiltonian(sample).to_dense())

    def product_energy(self, sample: DisorderSample, state) -> float:
        """
        乘积态能量 ⟨φ|H|φ⟩ = norm·∑ α ∏_k n̂_{i_k}[a_k]

        Args:
            sample: 无序实现
            state: BlochProductState 或 (n, 3) 数组

        Returns:
            float: 能量
        """
        vectors = np.asarray(getattr(state, "vectors", state), dtype=float)
        if vectors.shape != (sample.n, 3):
            raise DimensionError(f"乘积态比特数 {vectors.shape[0]} 与模型 n={sample.n} 不符")
        bloch = np.hstack([np.ones((sample.n, 1)), vectors])
        idx, vals = sample.nonzero()
        table = sample.table
        factors = bloch[table.qubits[idx], table.codes[idx]]
        return float(sample.config.normalization * np.dot(vals, np.prod(factors, axis=1)))

    @staticmethod
    def coefficient_moments(sample: DisorderSample) -> Dict[str, float]:
        """系数的经验矩：均值、方差、非零比例及其标准误"""
        coeffs = sample.dense_coefficients()
        count = len(coeffs)
        mean = float(np.mean(coeffs))
        second = float(np.mean(coeffs ** 2))
        nonzero = float(np.mean(coeffs != 0))
        return {
            "count": count,
            "mean": mean,
            "mean_stderr": float(np.std(coeffs) / sqrt(count)),
            "second_moment": second,
            "second_moment_stderr": float(np.std(coeffs ** 2) / sqrt(count)),
            "variance": float(np.var(coeffs)),
            "nonzero_fraction": nonzero,
            "nonzero_stderr": float(sqrt(max(nonzero * (1 - nonzero), 0.0) / count)),
        }
