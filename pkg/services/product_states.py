"""
乘积态几何与优化

能量约定：这里的能量都是 ⟨μ|H|μ⟩（方差为 1 的归一化）。
计数变量 N_ε 使用 √n⟨μ|H|μ⟩ ≥ threshold·n 的约定，即 ⟨μ|H|μ⟩ ≥ threshold·√n。
"""
from dataclasses import dataclass
from math import comb
from typing import Any, Dict, List, Optional, Sequence
import numpy as np
from scipy.stats import norm

from services.hamiltonian_model import DisorderSample, HamiltonianModel, ModelConfig
from services.spectral_solver import StateVector
from utils.errors import CapacityError, DimensionError, DomainError, ParameterError, StateValidationError
from utils.seeding import derive_seed
from utils.settings import get_settings
from utils.logger import get_logger

# 获取日志器
logger = get_logger()

UNIT_TOL = 1e-12
MIN_CAP_HEIGHT = 0.01

AXIS_POINTS = np.array([
    [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
])


def _check_unit(vectors: np.ndarray, what: str):
    norms = np.linalg.norm(vectors, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise StateValidationError(f"{what} 不是单位向量: 范数 {norms}")


@dataclass(frozen=True)
class BlochProductState:
    """n 个单位 Bloch 向量，形状 (n, 3)"""
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[1] != 3:
            raise DimensionError(f"Bloch 向量形状应为 (n, 3)，实际 {vectors.shape}")
        _check_unit(vectors, "Bloch 向量")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def uniform(cls, n: int, axis: Sequence[float]) -> "BlochProductState":
        return cls(np.tile(np.asarray(axis, dtype=float), (n, 1)))


@dataclass(frozen=True)
class OverlapProfile:
    """逐比特重叠 R_k = n̂_k · n̂'_k"""
    R: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        if np.any(np.abs(R) > 1.0 + UNIT_TOL):
            raise StateValidationError(f"重叠必须在 [-1, 1] 内: {R}")
        R.setflags(write=False)
        object.__setattr__(self, "R", R)

    @property
    def n(self) -> int:
        return len(self.R)


@dataclass(frozen=True)
class PackingNet:
    """上半球 z ≥ 0.01 上两两 |u·v| ≤ 1−ε 的点集；乘积网格使用 points ∪ (−points)"""
    points: np.ndarray
    epsilon: float

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        _check_unit(points, "网格点")
        if np.any(points[:, 2] < MIN_CAP_HEIGHT):
            raise ParameterError("网格点必须满足 z ≥ 0.01")
        gram = np.abs(points @ points.T)
        np.fill_diagonal(gram, 0.0)
        if len(points) > 1 and gram.max() > 1.0 - self.epsilon:
            raise ParameterError(f"网格点两两 |u·v| 最大为 {gram.max():.6f}，超过 1−ε={1.0 - self.epsilon}")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def size(self) -> int:
        return len(self.points)

    def signed_points(self) -> np.ndarray:
        """points 与其相反点，共 q = 2·size 个"""
        return np.vstack([self.points, -self.points])

    def rows(self) -> List[Dict[str, float]]:
        return [{"x": float(x), "y": float(y), "z": float(z)} for x, y, z in self.points]


@dataclass(frozen=True)
class CoveringNet:
    """对每个方向 x 都存在点 x' 使 |x·x'| ≥ 1−ε（在探针集上验证）"""
    points: np.ndarray
    epsilon: float
    worst_alignment: float
    probe_count: int

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def target_size(self) -> float:
        return 2.01 / self.epsilon

    def rows(self) -> List[Dict[str, float]]:
        return [{"x": float(x), "y": float(y), "z": float(z)} for x, y, z in self.points]


def _fibonacci_hemisphere(count: int) -> np.ndarray:
    i = np.arange(count, dtype=float)
    z = (i + 0.5) / count
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    r = np.sqrt(1.0 - z * z)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


class ProductStateService:
    """
    乘积态服务
    负责 Bloch 重叠、协方差、网格构造与计数、坐标上升优化
    """

    def __init__(self, model: Optional[HamiltonianModel] = None, params: Optional[Dict[str, Any]] = None):
        """
        初始化乘积态服务

        Args:
            model: 哈密顿量服务
            params: 优化与枚举参数
        """
        self.model = model or HamiltonianModel()
        self.params = params or {
            'max_sweeps': 500,
            'tol': 1e-9,
            'restarts': 8,
            'saddle_escapes': 3,
            'enumeration_limit': get_settings().enumeration_limit,
            'mc_chunk': 2048,
        }
        logger.debug(f"初始化ProductStateService乘积态服务，参数: {self.params}")

    # ---- 态 ----

    @staticmethod
    def random_product_state(n: int, seed: int) -> BlochProductState:
        rng = np.random.Generator(np.random.Philox(key=seed))
        v = rng.standard_normal((n, 3))
        return BlochProductState(v / np.linalg.norm(v, axis=1, keepdims=True))

    @staticmethod
    def product_state_vector(state: BlochProductState) -> StateVector:
        """
        乘积态振幅，每个比特为 (cos θ/2, e^{iφ} sin θ/2)

        Args:
            state: Bloch 乘积态

        Returns:
            StateVector: qubit 0 为最高位
        """
        amplitudes = np.ones(1, dtype=complex)
        for x, y, z in state.vectors:
            theta = np.arccos(np.clip(z, -1.0, 1.0))
            phi = np.arctan2(y, x)
            qubit = np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)])
            amplitudes = np.kron(amplitudes, qubit)
        return StateVector(n=state.n, amplitudes=amplitudes)

    # ---- 协方差 ----

    @staticmethod
    def bloch_overlap(u: Sequence[float], v: Sequence[float]) -> float:
        """u·v = 2|⟨φ_u|ψ_v⟩|² − 1"""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        _check_unit(np.vstack([u, v]), "Bloch 向量")
        return float(np.dot(u, v))

    def overlap_profile(self, a: BlochProductState, b: BlochProductState) -> OverlapProfile:
        if a.n != b.n:
            raise DimensionError(f"比特数不一致: {a.n} vs {b.n}")
        return OverlapProfile(np.clip(np.sum(a.vectors * b.vectors, axis=1), -1.0, 1.0))

    @staticmethod
    def covariance(p: int, profile: OverlapProfile) -> float:
        """
        E_p(R)/C(n,p)，E_p 为 p 次初等对称多项式，O(n·p) 递推

        Args:
            p: 局域度
            profile: 重叠

        Returns:
            float: 协方差
        """
        n = profile.n
        if p > n:
            raise DomainError(f"局域度 p={p} 大于比特数 n={n}")
        e = np.zeros(p + 1)
        e[0] = 1.0
        for k, r in enumerate(profile.R):
            for j in range(min(k + 1, p), 0, -1):
                e[j] += r * e[j - 1]
        return float(e[p] / comb(n, p))

    def covariance_matches_monte_carlo(self, p: int, state_a: BlochProductState, state_b: BlochProductState,
                                       samples: int, seed: int) -> Dict[str, float]:
        """
        高斯无序下 E[⟨φ|H|φ⟩⟨ψ|H|ψ⟩] 的解析值与 Monte Carlo 估计

        Args:
            p: 局域度
            state_a: 乘积态 φ
            state_b: 乘积态 ψ
            samples: 无序样本数
            seed: 种子

        Returns:
            dict: analytic, empirical, stderr, samples
        """
        if state_a.n != state_b.n:
            raise DimensionError(f"比特数不一致: {state_a.n} vs {state_b.n}")
        config = ModelConfig(n=state_a.n, p=p)
        table = self.model.term_table(config)
        analytic = self.covariance(p, self.overlap_profile(state_a, state_b))

        def features(state: BlochProductState) -> np.ndarray:
            bloch = np.hstack([np.ones((state.n, 1)), state.vectors])
            return config.normalization * np.prod(bloch[table.qubits, table.codes], axis=1)

        fa, fb = features(state_a), features(state_b)
        rng = np.random.Generator(np.random.Philox(key=seed))
        products = np.empty(samples)
        chunk = self.params['mc_chunk']
        for start in range(0, samples, chunk):
            rows = min(chunk, samples - start)
            alpha = rng.standard_normal((rows, len(table)))
            products[start:start + rows] = (alpha @ fa) * (alpha @ fb)
        empirical = float(np.mean(products))
        stderr = float(np.std(products, ddof=1) / np.sqrt(samples)) if samples > 1 else float("inf")
        logger.debug(f"协方差 MC: analytic={analytic:.6f}, empirical={empirical:.6f}, stderr={stderr:.2e}")
        return {"analytic": analytic, "empirical": empirical, "stderr": stderr, "samples": samples}

    @staticmethod
    def subadditivity_check(p: int, trials: int, seed: int, max_block: int = 12) -> Dict[str, Any]:
        """
        偶数 p 的凸性不等式：(∑R)^p/(m+k)^{p−1} ≤ (∑_A R)^p/m^{p−1} + (∑_B R)^p/k^{p−1}

        Args:
            p: 偶数局域度
            trials: 随机实例数
            seed: 种子
            max_block: 每块最大长度

        Returns:
            dict: trials, violations, worst_slack
        """
        if p % 2:
            raise ParameterError(f"该不等式只对偶数 p 成立: p={p}")
        rng = np.random.Generator(np.random.Philox(key=seed))
        violations = 0
        worst = float("inf")
        for _ in range(trials):
            m, k = rng.integers(1, max_block + 1, size=2)
            R = rng.uniform(-1.0, 1.0, size=m + k)
            lhs = R.sum() ** p / (m + k) ** (p - 1)
            rhs = R[:m].sum() ** p / m ** (p - 1) + R[m:].sum() ** p / k ** (p - 1)
            slack = rhs - lhs
            worst = min(worst, slack)
            if slack < -1e-12 * max(1.0, abs(rhs)):
                violations += 1
        return {"p": p, "trials": trials, "violations": violations, "worst_slack": float(worst)}

    # ---- 网格 ----

    @staticmethod
    def build_packing_net(epsilon: float) -> PackingNet:
        """
        纬度带球面码：极角间隔 α = arccos(1−ε)，每条纬线上按弦条件等分方位角，
        再按确定顺序贪心筛掉与已接受点 |u·v| > 1−ε 的候选（处理赤道附近的近对径点）

        Args:
            epsilon: (0, 0.5]

        Returns:
            PackingNet
        """
        if not 0 < epsilon <= 0.5:
            raise ParameterError(f"epsilon 必须在 (0, 0.5] 内: {epsilon}")
        alpha = np.arccos(1.0 - epsilon) * (1.0 + 1e-6)
        theta_max = np.arccos(MIN_CAP_HEIGHT + 1e-9)
        candidates = [np.array([0.0, 0.0, 1.0])]
        ring = 1
        while ring * alpha <= theta_max:
            theta = ring * alpha
            s2 = np.sin(theta) ** 2
            cos_dphi = np.clip((np.cos(alpha) - np.cos(theta) ** 2) / s2, -1.0, 1.0)
            count = max(1, int(np.floor(2 * np.pi / np.arccos(cos_dphi))))
            offset = 0.5 * (ring % 2) * 2 * np.pi / count
            for j in range(count):
                phi = offset + 2 * np.pi * j / count
                candidates.append(np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)]))
            ring += 1

        accepted: List[np.ndarray] = []
        for c in candidates:
            if not accepted or np.max(np.abs(np.asarray(accepted) @ c)) <= 1.0 - epsilon:
                accepted.append(c)
        net = PackingNet(points=np.asarray(accepted), epsilon=epsilon)
        logger.info(f"构造 packing net: ε={epsilon}, 点数 {net.size}")
        return net

    @staticmethod
    def build_covering_net(epsilon: float, probe_count: int = 20000) -> CoveringNet:
        """
        覆盖网：半球 Fibonacci 点集，点数从 ⌈1/ε⌉ 起按 10% 递增，直到探针集全部被覆盖

        Args:
            epsilon: (0, 0.5]
            probe_count: 探针点数（全球面 Fibonacci）

        Returns:
            CoveringNet: 点数与目标 2.01/ε 一并报告
        """
        if not 0 < epsilon <= 0.5:
            raise ParameterError(f"epsilon 必须在 (0, 0.5] 内: {epsilon}")
        i = np.arange(probe_count, dtype=float)
        pz = 1.0 - 2.0 * (i + 0.5) / probe_count
        pr = np.sqrt(1.0 - pz * pz)
        pphi = i * np.pi * (3.0 - np.sqrt(5.0))
        probes = np.column_stack([pr * np.cos(pphi), pr * np.sin(pphi), pz])

        count = int(np.ceil(1.0 / epsilon))
        while True:
            points = _fibonacci_hemisphere(count)
            alignment = np.max(np.abs(probes @ points.T), axis=1)
            worst = float(alignment.min())
            if worst >= 1.0 - epsilon:
                logger.info(f"构造 covering net: ε={epsilon}, 点数 {count}，目标 ≤ {2.01 / epsilon:.1f}")
                return CoveringNet(points=points, epsilon=epsilon, worst_alignment=worst, probe_count=probe_count)
            count = int(np.ceil(count * 1.1))

    def _grid_energies(self, sample: DisorderSample, points: np.ndarray) -> np.ndarray:
        """
        每个比特从 points 中取一个方向，返回全部 q^n 个乘积态的能量张量

        逐个比特元组 ī 先收缩出 q^p 小张量，再广播累加到 q^n 张量上
        """
        n = sample.n
        q = len(points)
        total = float(q) ** n
        limit = self.params['enumeration_limit']
        if total > limit:
            logger.error(f"枚举规模 q^n={total:.3g} 超过上限 {limit}")
            raise CapacityError(f"枚举规模 q^n={q}^{n}={total:.6g} 超过上限 {limit}", required=total, limit=limit)

        config = sample.config
        p = config.p
        table = sample.table
        alphabet = [0, 1, 2, 3] if config.include_identity_letters else [1, 2, 3]
        L = len(alphabet)
        coords = np.hstack([np.ones((q, 1)), points])[:, alphabet]     # (q, L)
        blocks = sample.dense_coefficients().reshape(comb(n, p), *([L] * p))

        letter_idx = "abcdefgh"[:p]
        point_idx = "ijklmnop"[:p]
        subscripts = letter_idx + "," + ",".join(f"{pi}{li}" for pi, li in zip(point_idx, letter_idx)) + "->" + point_idx

        energies = np.zeros((q,) * n)
        for block, qubits in zip(blocks, table.qubits[::L ** p]):
            if not np.any(block):
                continue
            local = np.einsum(subscripts, block, *([coords] * p))
            shape = [1] * n
            for qubit in qubits:
                shape[int(qubit)] = q
            energies += local.reshape(shape)
        return config.normalization * energies

    def count_net_exceedances(self, sample: DisorderSample, net: PackingNet, threshold: float) -> int:
        """
        N_ε：网格乘积态中 √n⟨μ|H|μ⟩ ≥ threshold·n 的个数

        Args:
            sample: 无序实现
            net: packing net，每个比特取 points ∪ (−points)
            threshold: 阈值（√n 标度约定），可为 -inf

        Returns:
            int: 计数
        """
        energies = self._grid_energies(sample, net.signed_points())
        if threshold == float("-inf"):
            return int(energies.size)
        return int(np.count_nonzero(energies >= threshold * np.sqrt(sample.n)))

    @staticmethod
    def expected_exceedance_count(n: int, q: int, threshold: float) -> float:
        """一阶矩 E[N_ε] = q^n·(1 − Φ(threshold·√n))"""
        return float(q) ** n * float(norm.sf(threshold * np.sqrt(n)))

    def axis_grid_best(self, sample: DisorderSample) -> Dict[str, Any]:
        """每个比特取 ±x̂, ±ŷ, ±ẑ 的 6^n 个乘积态中能量最大者"""
        energies = self._grid_energies(sample, AXIS_POINTS)
        flat = int(np.argmax(energies))
        digits = np.unravel_index(flat, energies.shape)
        state = BlochProductState(AXIS_POINTS[list(digits)])
        return {"state": state, "energy": float(energies.reshape(-1)[flat])}

    # ---- 优化 ----

    def _incidence(self, sample: DisorderSample):
        idx, vals = sample.nonzero()
        keep = vals != 0
        idx, vals = idx[keep], vals[keep]
        table = sample.table
        qubits = table.qubits[idx]
        codes = table.codes[idx]
        weights = sample.config.normalization * vals
        incidence = []
        for i in range(sample.n):
            rows, pos = np.nonzero(qubits == i)
            incidence.append((qubits[rows], codes[rows], weights[rows], pos))
        return incidence

    @staticmethod
    def _local_field(bloch: np.ndarray, entry) -> np.ndarray:
        qubits, codes, weights, pos = entry
        if len(weights) == 0:
            return np.zeros(4)
        factors = bloch[qubits, codes]
        factors[np.arange(len(pos)), pos] = 1.0
        own = codes[np.arange(len(pos)), pos]
        return np.bincount(own, weights=weights * np.prod(factors, axis=1), minlength=4)

    def optimize_product_state(self, sample: DisorderSample, init: BlochProductState,
                               max_sweeps: Optional[int] = None, tol: Optional[float] = None) -> Dict[str, Any]:
        """
        坐标上升：固定其余比特时能量对 n̂_i 是仿射的，E = h_0 + h·n̂_i，
        因此把 n̂_i 置为 h/|h|。局域场恰为零时保持原向量；某轮改进不足 tol 且存在零场比特
        （该比特至少出现在一个非零项中）时，
        把这些比特转到与当前向量最不对齐的坐标轴（能量不变）以离开鞍点，最多 saddle_escapes 次。

        Args:
            sample: 无序实现
            init: 初始乘积态
            max_sweeps: 最大轮数，默认 500
            tol: 一轮的最小改进，默认 1e-9

        Returns:
            dict: state, energy, sweep_trace, update_trace, sweeps, converged
        """
        if init.n != sample.n:
            raise DimensionError(f"初始态比特数 {init.n} 与模型 n={sample.n} 不符")
        max_sweeps = max_sweeps if max_sweeps is not None else self.params['max_sweeps']
        tol = tol if tol is not None else self.params['tol']
        try:
            incidence = self._incidence(sample)
            bloch = np.hstack([np.ones((sample.n, 1)), np.array(init.vectors, dtype=float)])
            energy = self.model.product_energy(sample, init)
            sweep_trace = [energy]
            update_trace = [energy]
            escapes = self.params['saddle_escapes']
            converged = False
            sweeps = 0

            while sweeps < max_sweeps:
                sweeps += 1
                start = energy
                zero_field = []
                for i in range(sample.n):
                    h = self._local_field(bloch, incidence[i])
                    field = h[1:]
                    strength = float(np.linalg.norm(field))
                    if strength <= 1e-14:
                        # 不被任何非零项触及的比特保持原向量
                        if len(incidence[i][2]):
                            zero_field.append(i)
                        continue
                    # 只有含比特 i 的项随 n̂_i 变化
                    energy += strength - float(np.dot(field, bloch[i, 1:]))
                    bloch[i, 1:] = field / strength
                    update_trace.append(energy)
                sweep_trace.append(energy)

                if energy - start < tol:
                    if zero_field and escapes > 0:
                        escapes -= 1
                        for i in zero_field:
                            h = self._local_field(bloch, incidence[i])
                            if np.linalg.norm(h[1:]) <= 1e-14:
                                axis = np.zeros(3)
                                axis[2 - int(np.argmin(np.abs(bloch[i, 1:][::-1])))] = 1.0
                                bloch[i, 1:] = axis
                        continue
                    converged = True
                    break

            state = BlochProductState(bloch[:, 1:].copy())
            final = self.model.product_energy(sample, state)
            logger.debug(f"坐标上升完成: sweeps={sweeps}, energy={final:.10f}, converged={converged}")
            return {
                "state": state,
                "energy": final,
                "sweep_trace": sweep_trace,
                "update_trace": update_trace,
                "sweeps": sweeps,
                "converged": converged,
            }
        except Exception as e:
            logger.error(f"乘积态优化时出错: {str(e)}")
            logger.exception(e)
            raise

    def optimize_multistart(self, sample: DisorderSample, restarts: Optional[int] = None,
                            seed: int = 0) -> Dict[str, Any]:
        """
        多起点坐标上升，保留能量最大者（并列取序号最小者）

        Args:
            sample: 无序实现
            restarts: 起点数，默认 8
            seed: 起点种子，第 r 个起点用 derive_seed(seed, "restart", r)

        Returns:
            dict: 最优结果，另含 restart_energies 与 best_initial_energy
        """
        restarts = restarts if restarts is not None else self.params['restarts']
        if restarts < 1:
            raise ParameterError(f"restarts 必须 ≥ 1: {restarts}")
        best = None
        energies = []
        initial = []
        for r in range(restarts):
            init = self.random_product_state(sample.n, derive_seed(seed, "restart", r))
            initial.append(self.model.product_energy(sample, init))
            result = self.optimize_product_state(sample, init)
            energies.append(result["energy"])
            if best is None or result["energy"] > best["energy"]:
                best = result
        best = dict(best)
        best["restart_energies"] = energies
        best["best_initial_energy"] = float(max(initial))
        return best
