"""
匹配迹演算

Trace_sum(M) = ½·Tr(∑_{σ:M} ∏_i σ_i)，其中配对位置取相同的非单位字母。
随机超图部分沿用"每个元组恰好出现两次"的读法：r 个不同的 p 元组各复制一份，
2r 个副本随机排序，每个比特 j 上诱导出一个匹配 M_j。
"""
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations, product
from math import comb, log, sqrt
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple
import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.optimize import minimize_scalar
from scipy.stats import poisson

from services.pauli_algebra import NON_IDENTITY_LETTERS, letter_sequence_phase
from utils.errors import CapacityError, DomainError, ParameterError
from utils.seeding import derive_seed
from utils.logger import get_logger

# 获取日志器
logger = get_logger()

ENUMERATION_MAX_D = 7
BRUTE_FORCE_MAX_D = 12
MAX_DEGREE = 12
TUPLE_TABLE_LIMIT = 200_000


@dataclass(frozen=True)
class Matching:
    """
    长度 2d 的完美匹配，位置从 0 开始编号

    pairs 规范化为 (a, b) 且 a < b，按 a 升序排列
    """
    pairs: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        pairs = tuple(sorted(tuple(sorted((int(a), int(b)))) for a, b in self.pairs))
        flat = [i for pair in pairs for i in pair]
        if sorted(flat) != list(range(2 * len(pairs))):
            raise ParameterError(f"非法匹配: {self.pairs}")
        object.__setattr__(self, "pairs", pairs)

    @property
    def d(self) -> int:
        return len(self.pairs)

    def partner_map(self) -> Dict[int, int]:
        partner = {}
        for a, b in self.pairs:
            partner[a] = b
            partner[b] = a
        return partner

    def label(self) -> str:
        """1 起编号的可读形式，如 (1,3)(2,4)"""
        return "".join(f"({a + 1},{b + 1})" for a, b in self.pairs) or "()"


@dataclass(frozen=True)
class HypergraphSample:
    """r 个不同 p 元组构成的超图与每个比特上诱导的匹配（度为 0 的比特记 None）"""
    n: int
    p: int
    r: int
    tuples: Tuple[Tuple[int, ...], ...]
    degrees: Tuple[int, ...]
    induced_matchings: Tuple[Optional[Matching], ...]

    def __post_init__(self):
        if sum(self.degrees) != self.p * self.r:
            raise DomainError(f"度数和 {sum(self.degrees)} ≠ p·r = {self.p * self.r}")
        if len(set(self.tuples)) != len(self.tuples):
            raise DomainError("元组必须两两不同")


class GammaEstimate(BaseModel):
    n: int
    p: int
    r: int
    samples: int = Field(gt=0)
    lhs_mean: float
    rhs_mean: float
    ratio: float
    per_r_ratio: Optional[float]
    lhs_stderr: float = Field(ge=0)
    rhs_stderr: float = Field(ge=0)
    ratio_stderr: float = Field(ge=0)


class BoundConfig(BaseModel):
    """g(β,p) 的参数与 β 网格"""
    p: float = Field(gt=1)
    gamma: float = Field(1.0, ge=1)
    C: float = Field(0.7, gt=log(2))
    beta_min: float = Field(0.01, gt=0)
    beta_max: float = Field(100.0, gt=0)
    grid_points: int = Field(4000, ge=3)

    @model_validator(mode="after")
    def _grid_order(self):
        if self.beta_min >= self.beta_max:
            raise ValueError(f"beta_min={self.beta_min} 必须小于 beta_max={self.beta_max}")
        return self

    @property
    def witness_beta(self) -> float:
        return sqrt(2.0 * log(self.p) / self.gamma)


def _relabel(pairs: Sequence[Tuple[int, int]]) -> Tuple[Tuple[int, int], ...]:
    """按原顺序把剩余位置压缩到 0..2d'-1"""
    positions = sorted(i for pair in pairs for i in pair)
    index = {pos: i for i, pos in enumerate(positions)}
    return tuple(sorted(tuple(sorted((index[a], index[b]))) for a, b in pairs))


@lru_cache(maxsize=None)
def _recursive_value(pairs: Tuple[Tuple[int, int], ...]) -> int:
    d = len(pairs)
    if d == 0:
        return 1
    if d == 1:
        return 3
    partner = {}
    for a, b in pairs:
        partner[a] = b
        partner[b] = a
    k = partner[0]
    total = 0
    for j in range(1, 2 * d):
        # 位置按 1 起编号计符号
        sign = 1 if (j + 1) % 2 == 0 else -1
        if j == k:
            rest = [pair for pair in pairs if 0 not in pair]
            total += 3 * sign * _recursive_value(_relabel(rest))
        else:
            r = partner[j]
            rest = [pair for pair in pairs if 0 not in pair and j not in pair]
            rest.append((k, r))
            total += sign * _recursive_value(_relabel(rest))
    return total


def _all_matchings(items: Tuple[int, ...]) -> Iterator[Tuple[Tuple[int, int], ...]]:
    if not items:
        yield ()
        return
    first = items[0]
    for i in range(1, len(items)):
        rest = items[1:i] + items[i + 1:]
        for tail in _all_matchings(rest):
            yield ((first, items[i]),) + tail


def _pair_ordered_sequences(r: int) -> Iterator[Tuple[int, ...]]:
    """0..r-1 每个标签恰好出现两次的所有排列"""
    counts = [2] * r
    sequence: List[int] = []

    def extend():
        if len(sequence) == 2 * r:
            yield tuple(sequence)
            return
        for label in range(r):
            if counts[label]:
                counts[label] -= 1
                sequence.append(label)
                yield from extend()
                sequence.pop()
                counts[label] += 1

    yield from extend()


@lru_cache(maxsize=64)
def _all_tuples(n: int, p: int) -> Tuple[Tuple[int, ...], ...]:
    return tuple(combinations(range(n), p))


def _induced_matchings(n: int, tuples: Sequence[Tuple[int, ...]],
                       sequence: Sequence[int]) -> List[Optional[Matching]]:
    """sequence 为副本的元组标签序列；比特 j 上保留含 j 的副本并把同一元组的两次出现配对"""
    members = [set(t) for t in tuples]
    matchings: List[Optional[Matching]] = []
    for j in range(n):
        first_seen: Dict[int, int] = {}
        pairs = []
        position = 0
        for label in sequence:
            if j not in members[label]:
                continue
            if label in first_seen:
                pairs.append((first_seen[label], position))
            else:
                first_seen[label] = position
            position += 1
        matchings.append(Matching(tuple(pairs)) if pairs else None)
    return matchings


def _rhs_product(degrees: Sequence[int]) -> int:
    value = 1
    for delta in degrees:
        value *= 2 * delta + 1
    return value


class MatchingCalculus:
    """
    匹配演算服务
    提供 Trace_sum 的穷举与递推、2d+1 期望、γ(p) 比值估计、度分布检验和 g(β,p) 极小化
    """

    def __init__(self, params: Optional[Dict[str, Any]] = None):
        """
        初始化匹配演算服务

        Args:
            params: 参数
        """
        self.params = params or {
            'bootstrap': 200,   # γ 比值的 bootstrap 重采样次数
        }
        logger.debug(f"初始化MatchingCalculus匹配演算服务，参数: {self.params}")

    # ---------- 匹配与 Trace_sum ----------

    @staticmethod
    def enumerate_matchings(d: int) -> List[Matching]:
        """
        列出长度 2d 的全部 (2d−1)!! 个匹配

        Args:
            d: 配对数

        Returns:
            匹配列表
        """
        if d < 0:
            raise ParameterError(f"d 不能为负: {d}")
        if d > ENUMERATION_MAX_D:
            raise CapacityError(f"d={d} 超过枚举上限 {ENUMERATION_MAX_D}", required=d, limit=ENUMERATION_MAX_D)
        return [Matching(pairs) for pairs in _all_matchings(tuple(range(2 * d)))]

    @staticmethod
    def trace_sum(matching: Matching) -> int:
        """
        穷举 3^d 种字母赋值求 Trace_sum

        每种赋值的迹为 2·i^k，½ 在最后统一约去，结果为整数

        Args:
            matching: 匹配

        Returns:
            int: Trace_sum(M)
        """
        d = matching.d
        if d > BRUTE_FORCE_MAX_D:
            raise CapacityError(f"d={d} 超过穷举上限 {BRUTE_FORCE_MAX_D}", required=d, limit=BRUTE_FORCE_MAX_D)
        if d == 0:
            return 1
        pair_of = [0] * (2 * d)
        for index, (a, b) in enumerate(matching.pairs):
            pair_of[a] = index
            pair_of[b] = index
        counts = [0, 0, 0, 0]
        for assignment in product(NON_IDENTITY_LETTERS, repeat=d):
            k = letter_sequence_phase([assignment[pair_of[i]] for i in range(2 * d)])
            if k is not None:
                counts[k] += 1
        if counts[1] != counts[3]:
            raise DomainError(f"Trace_sum 出现非零虚部: {matching.label()}")
        return counts[0] - counts[2]

    @staticmethod
    def trace_sum_recursive(matching: Matching) -> int:
        """
        按重连递推求 Trace_sum（带缓存）

        位置 1 与 k 配对；对 j ≠ k，删去 1 和 j 并把 j 的配偶改连到 k，符号 (−1)^j；
        j = k 时删去 1 和 k，系数 3·(−1)^k
        """
        return _recursive_value(matching.pairs)

    def expected_trace_sum(self, d: int) -> Fraction:
        """
        对全部 (2d−1)!! 个匹配精确平均 Trace_sum

        Args:
            d: 配对数

        Returns:
            Fraction: 精确平均值，应等于 2d+1
        """
        matchings = self.enumerate_matchings(d)
        total = sum(self.trace_sum_recursive(m) for m in matchings)
        value = Fraction(total, len(matchings))
        logger.debug(f"expected_trace_sum: d={d}, 平均={value}")
        return value

    # ---------- 随机超图 ----------

    @staticmethod
    def _sample_tuples(rng: np.random.Generator, n: int, p: int, r: int) -> List[Tuple[int, ...]]:
        total = comb(n, p)
        if r > total:
            raise DomainError(f"r={r} 超过不同元组总数 C({n},{p})={total}")
        if r == 0:
            return []
        if total <= TUPLE_TABLE_LIMIT:
            table = _all_tuples(n, p)
            picks = rng.choice(total, size=r, replace=False)
            return [table[int(i)] for i in picks]
        chosen: List[Tuple[int, ...]] = []
        seen = set()
        while len(chosen) < r:
            t = tuple(sorted(int(q) for q in rng.choice(n, size=p, replace=False)))
            if t not in seen:
                seen.add(t)
                chosen.append(t)
        return chosen

    def sample_hypergraph(self, n: int, p: int, r: int, seed: int) -> HypergraphSample:
        """
        均匀抽取 r 个不同 p 元组，并对 2r 个副本做一次均匀排序

        Args:
            n: 比特数
            p: 元组大小
            r: 元组个数
            seed: 种子

        Returns:
            HypergraphSample
        """
        if p < 1 or p > n:
            raise DomainError(f"需要 1 ≤ p ≤ n，实际 p={p}, n={n}")
        rng = np.random.Generator(np.random.Philox(seed))
        tuples = self._sample_tuples(rng, n, p, r)
        # 副本 2t 与 2t+1 属于元组 t
        order = rng.permutation(2 * r) // 2
        degrees = np.bincount(np.asarray(tuples, dtype=int).ravel(), minlength=n) if r else np.zeros(n, dtype=int)
        return HypergraphSample(
            n=n, p=p, r=r,
            tuples=tuple(tuples),
            degrees=tuple(int(x) for x in degrees),
            induced_matchings=tuple(_induced_matchings(n, tuples, [int(x) for x in order])),
        )

    def _sample_ratio_terms(self, hypergraph: HypergraphSample) -> Tuple[int, int]:
        lhs = 1
        for j, (delta, matching) in enumerate(zip(hypergraph.degrees, hypergraph.induced_matchings)):
            if delta > MAX_DEGREE:
                raise CapacityError(f"比特 {j} 的度 Δ={delta} 超过上限 {MAX_DEGREE}", required=delta, limit=MAX_DEGREE)
            if matching is not None:
                lhs *= self.trace_sum_recursive(matching)
        return lhs, _rhs_product(hypergraph.degrees)

    def estimate_gamma_ratio(self, n: int, p: int, r: int, samples: int, seed: int) -> GammaEstimate:
        """
        蒙特卡洛估计 E[∏_j Trace_sum(M_j)] / E[∏_j (2Δ(j)+1)]

        Args:
            n: 比特数
            p: 元组大小
            r: 元组个数
            samples: 样本数
            seed: 主种子

        Returns:
            GammaEstimate
        """
        try:
            if r < 1:
                raise ParameterError(f"r 必须 ≥ 1: {r}")
            if samples < 1:
                raise ParameterError(f"samples 必须 ≥ 1: {samples}")
            logger.info(f"估计γ比值: n={n}, p={p}, r={r}, samples={samples}, seed={seed}")

            lhs = np.empty(samples)
            rhs = np.empty(samples)
            for s in range(samples):
                hypergraph = self.sample_hypergraph(n, p, r, derive_seed(seed, "gamma", s))
                left, right = self._sample_ratio_terms(hypergraph)
                lhs[s] = float(left)
                rhs[s] = float(right)

            lhs_mean = float(lhs.mean())
            rhs_mean = float(rhs.mean())
            ratio = lhs_mean / rhs_mean

            lhs_se = rhs_se = ratio_se = 0.0
            if samples > 1:
                rng = np.random.Generator(np.random.Philox(derive_seed(seed, "bootstrap")))
                idx = rng.integers(0, samples, size=(self.params['bootstrap'], samples))
                boot_lhs = lhs[idx].mean(axis=1)
                boot_rhs = rhs[idx].mean(axis=1)
                lhs_se = float(np.std(boot_lhs, ddof=1))
                rhs_se = float(np.std(boot_rhs, ddof=1))
                ratio_se = float(np.std(boot_lhs / boot_rhs, ddof=1))

            estimate = GammaEstimate(
                n=n, p=p, r=r, samples=samples,
                lhs_mean=lhs_mean, rhs_mean=rhs_mean, ratio=ratio,
                per_r_ratio=ratio ** (1.0 / r) if ratio > 0 else None,
                lhs_stderr=lhs_se, rhs_stderr=rhs_se, ratio_stderr=ratio_se,
            )
            logger.info(f"γ比值估计完成: ratio={ratio:.6f} ± {ratio_se:.6f}")
            return estimate
        except Exception as e:
            logger.error(f"估计γ比值时出错: {str(e)}")
            logger.exception(e)
            raise

    def exhaustive_gamma_ratio(self, n: int, p: int, r: int) -> Dict[str, Any]:
        """
        小规模精确期望：遍历全部 r 元组子集与全部副本排序

        Args:
            n: 比特数
            p: 元组大小
            r: 元组个数

        Returns:
            dict: lhs_mean、rhs_mean、ratio、configurations
        """
        table = _all_tuples(n, p)
        subsets = comb(len(table), r)
        arrangements = 1
        for k in range(1, 2 * r, 2):
            arrangements *= k
        for k in range(1, r + 1):
            arrangements *= k
        configurations = subsets * arrangements
        if configurations > 10 ** 6:
            raise CapacityError(f"穷举规模 {configurations} 过大", required=configurations, limit=10 ** 6)

        sequences = list(_pair_ordered_sequences(r))
        lhs_total = 0
        rhs_total = 0
        for tuples in combinations(table, r):
            degrees = np.bincount(np.asarray(tuples, dtype=int).ravel(), minlength=n)
            rhs = _rhs_product([int(x) for x in degrees])
            for sequence in sequences:
                lhs = 1
                for matching in _induced_matchings(n, tuples, sequence):
                    if matching is not None:
                        lhs *= self.trace_sum_recursive(matching)
                lhs_total += lhs
                rhs_total += rhs

        lhs_mean = Fraction(lhs_total, configurations)
        rhs_mean = Fraction(rhs_total, configurations)
        return {
            "n": n, "p": p, "r": r,
            "configurations": configurations,
            "lhs_mean": float(lhs_mean),
            "rhs_mean": float(rhs_mean),
            "ratio": float(lhs_mean / rhs_mean),
        }

    def gamma_sweep(self, n: int, p_values: Sequence[int], r_values: Sequence[int],
                    samples: int, seed: int) -> List[Dict[str, Any]]:
        """(p, r) 网格上的 γ 比值表"""
        rows = []
        for p in p_values:
            for r in r_values:
                estimate = self.estimate_gamma_ratio(n, p, r, samples, derive_seed(seed, "sweep", p, r))
                rows.append(estimate.model_dump())
        return rows

    def poisson_degree_check(self, n: int, p: int, r: int, samples: int, seed: int) -> Dict[str, Any]:
        """
        比特 0 的度 Δ 的经验分布与 Poisson(pr/n) 的全变差距离

        Args:
            n: 比特数
            p: 元组大小
            r: 元组个数
            samples: 样本数
            seed: 主种子

        Returns:
            dict: lambda、mean、mean_stderr、empirical_pmf、poisson_pmf、tv_distance
        """
        if samples < 1:
            raise ParameterError(f"samples 必须 ≥ 1: {samples}")
        lam = p * r / n
        degrees = np.empty(samples, dtype=int)
        for s in range(samples):
            rng = np.random.Generator(np.random.Philox(derive_seed(seed, "poisson", s)))
            tuples = self._sample_tuples(rng, n, p, r)
            degrees[s] = sum(1 for t in tuples if 0 in t)

        top = int(degrees.max())
        empirical = np.bincount(degrees, minlength=top + 1) / samples
        ks = np.arange(top + 1)
        if lam == 0:
            reference = np.zeros(top + 1)
            reference[0] = 1.0
            tail = 0.0
        else:
            reference = poisson.pmf(ks, lam)
            tail = float(poisson.sf(top, lam))
        tv = 0.5 * (float(np.abs(empirical - reference).sum()) + tail)
        mean_stderr = float(np.std(degrees, ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
        logger.debug(f"poisson_degree_check: λ={lam}, TV={tv:.4f}")
        return {
            "n": n, "p": p, "r": r, "samples": samples,
            "lambda": lam,
            "mean": float(degrees.mean()),
            "mean_stderr": mean_stderr,
            "empirical_pmf": [float(x) for x in empirical],
            "poisson_pmf": [float(x) for x in reference],
            "tv_distance": tv,
        }

    # ---------- g(β, p) ----------

    @staticmethod
    def g_value(beta, config: BoundConfig):
        """g(β,p) = C/β + βγ/2 + log(1+pγβ²)/β，beta 可为数组"""
        beta = np.asarray(beta, dtype=float)
        value = config.C / beta + beta * config.gamma / 2.0 + np.log1p(config.p * config.gamma * beta ** 2) / beta
        return float(value) if value.ndim == 0 else value

    @staticmethod
    def witness_terms(config: BoundConfig) -> Dict[str, float]:
        """
        在 β = √(2 log p/γ) 处的三个加项

        Returns:
            dict: beta、constant_term、linear_term、log_term、total
        """
        beta = config.witness_beta
        log_p = log(config.p)
        constant_term = config.C * sqrt(config.gamma) / sqrt(2.0 * log_p)
        linear_term = sqrt(config.gamma * log_p) / sqrt(2.0)
        log_term = np.log1p(2.0 * config.p * log_p) * sqrt(config.gamma) / sqrt(2.0 * log_p)
        return {
            "beta": beta,
            "constant_term": constant_term,
            "linear_term": linear_term,
            "log_term": float(log_term),
            "total": constant_term + linear_term + float(log_term),
        }

    def minimize_g(self, config: BoundConfig) -> Dict[str, float]:
        """
        网格搜索加有界一维细化求 min_β g(β,p)

        Args:
            config: BoundConfig

        Returns:
            dict: beta_star、g_min、bound_value（见证点处的值）、ratio_to_sqrt
        """
        witness = config.witness_beta
        if not config.beta_min <= witness <= config.beta_max:
            raise ParameterError(
                f"β 网格 [{config.beta_min}, {config.beta_max}] 未覆盖见证点 β={witness:.6g}")
        betas = np.geomspace(config.beta_min, config.beta_max, config.grid_points)
        values = self.g_value(betas, config)
        i = int(np.argmin(values))
        beta_star, g_min = float(betas[i]), float(values[i])

        lo = betas[max(i - 1, 0)]
        hi = betas[min(i + 1, len(betas) - 1)]
        refined = minimize_scalar(lambda b: self.g_value(b, config), bounds=(lo, hi),
                                  method="bounded", options={"xatol": 1e-12})
        if refined.success and refined.fun < g_min:
            beta_star, g_min = float(refined.x), float(refined.fun)

        target = sqrt(2.0 * config.gamma * log(config.p))
        return {
            "p": config.p,
            "gamma": config.gamma,
            "C": config.C,
            "beta_star": beta_star,
            "g_min": g_min,
            "witness_beta": witness,
            "bound_value": self.g_value(witness, config),
            "sqrt_target": target,
            "ratio_to_sqrt": g_min / target,
        }
