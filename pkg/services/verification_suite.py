"""
恒等式与引理的数值验证套件（CLI verify 子命令）
"""
from dataclasses import dataclass
from itertools import combinations
from math import comb, log, sqrt
from typing import Any, Callable, Dict, List, Optional
import numpy as np

from services.hamiltonian_model import DisorderSample, DisorderSpec, HamiltonianModel, ModelConfig
from services.lovasz_theta import (
    LovaszThetaService, PAIRWISE_ANTICOMMUTING_WORDS, complete_graph, cycle_graph, empty_graph,
)
from services.matching_calculus import BoundConfig, MatchingCalculus
from services.pauli_algebra import (
    PhasedPauli, materialize_word, swap_identity_check, trace_of_letter_sequence, LETTER_MATRICES, PauliLetter,
)
from services.product_states import BlochProductState, ProductStateService
from services.spectral_solver import SpectralSolver
from services.variance_moments import VarianceMoments, bell_state
from utils.errors import ParameterError
from utils.seeding import derive_seed
from utils.logger import get_logger

# 获取日志器
logger = get_logger()


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: Dict[str, Any]

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


class VerificationSuite:
    """
    验证套件
    quick 模式使用较小的样本数，z_gate 为蒙特卡洛检查的标准误倍数
    """

    def __init__(self, seed: int = 20240601, params: Optional[Dict[str, Any]] = None):
        self.seed = seed
        self.params = params or {'lovasz_tol': 1e-3}
        self.model = HamiltonianModel()
        self.spectral = SpectralSolver()
        self.products = ProductStateService(self.model)
        self.matchings = MatchingCalculus()
        self.moments = VarianceMoments(self.model, self.spectral)
        self.lovasz = LovaszThetaService(self.model)
        logger.debug(f"初始化VerificationSuite验证套件，seed={seed}, 参数: {self.params}")

    def _seed(self, *keys) -> int:
        return derive_seed(self.seed, *keys)

    def _gaussian(self, n: int, p: int, *keys) -> DisorderSample:
        return self.model.sample_disorder(ModelConfig(n=n, p=p), DisorderSpec(seed=self._seed(*keys)))

    # ---------- 单项检查 ----------

    def check_pauli_oracles(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        rng = np.random.Generator(np.random.Philox(self._seed("pauli")))
        trials = 20 if quick else 200
        worst = 0.0
        for _ in range(trials):
            a = PhasedPauli.from_letters("IXYZ"[i] for i in rng.integers(0, 4, 3))
            b = PhasedPauli.from_letters("IXYZ"[i] for i in rng.integers(0, 4, 3))
            diff = materialize_word(a * b).entries - materialize_word(a).entries @ materialize_word(b).entries
            worst = max(worst, float(np.max(np.abs(diff))))
            seq = ["IXYZ"[i] for i in rng.integers(0, 4, int(rng.integers(1, 7)))]
            matrix = np.eye(2, dtype=complex)
            for letter in seq:
                matrix = matrix @ LETTER_MATRICES[PauliLetter(letter)]
            worst = max(worst, abs(trace_of_letter_sequence(seq) - np.trace(matrix)))
        return {"passed": worst <= 1e-12, "max_abs_error": worst, "trials": trials}

    def check_swap_identity(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        result = swap_identity_check()
        return {"passed": result["holds"], **result}

    def check_covariance(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        shapes = [(4, 2)] if quick else [(4, 2), (6, 2), (6, 3)]
        pairs = 3 if quick else 20
        samples = 20000 if quick else 100000
        worst_z = 0.0
        worst_recurrence = 0.0
        for n, p in shapes:
            for k in range(pairs):
                a = self.products.random_product_state(n, self._seed("cov", n, p, k, "a"))
                b = self.products.random_product_state(n, self._seed("cov", n, p, k, "b"))
                profile = self.products.overlap_profile(a, b)
                brute = sum(np.prod(profile.R[list(s)]) for s in combinations(range(n), p)) / comb(n, p)
                worst_recurrence = max(worst_recurrence, abs(brute - self.products.covariance(p, profile)))
                mc = self.products.covariance_matches_monte_carlo(p, a, b, samples, self._seed("cov-mc", n, p, k))
                worst_z = max(worst_z, abs(mc["analytic"] - mc["empirical"]) / mc["stderr"])
        return {"passed": worst_z <= z_gate and worst_recurrence <= 1e-12,
                "worst_z": worst_z, "worst_recurrence_error": worst_recurrence}

    def check_product_variance(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        shapes = [(4, 2), (5, 3)] if quick else [(4, 2), (6, 2), (6, 3), (8, 2), (8, 3)]
        states = 5 if quick else 50
        worst = 0.0
        for n, p in shapes:
            config = ModelConfig(n=n, p=p)
            for k in range(states):
                state = self.products.product_state_vector(self.products.random_product_state(n, self._seed("pv", n, p, k)))
                worst = max(worst, abs(self.moments.state_variance(state, config) - 1.0))
        return {"passed": worst <= 1e-10, "max_abs_error": worst}

    def check_packing_net(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        sizes = {}
        for epsilon in ((0.05, 0.2) if quick else (0.01, 0.05, 0.2)):
            net = self.products.build_packing_net(epsilon)
            sizes[str(epsilon)] = net.size
            if net.size < 0.5 / epsilon:
                return {"passed": False, "epsilon": epsilon, "size": net.size}
        return {"passed": True, "sizes": sizes}

    def check_subadditivity(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        trials = 1000 if quick else 10000
        results = [self.products.subadditivity_check(p, trials, self._seed("subadd", p)) for p in (2, 4)]
        return {"passed": all(r["violations"] == 0 for r in results),
                "worst_slack": min(r["worst_slack"] for r in results)}

    def check_eigen_crosscheck(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        instances = 5 if quick else 50
        worst = 0.0
        for k in range(instances):
            n = 6 + k % 3
            sample = self._gaussian(n, 2, "eig", k)
            dense = float(self.spectral.dense_spectrum(self.model.materialize_hamiltonian(sample))[-1])
            iterative = self.spectral.lambda_max(self.model.matrix_free(sample))
            worst = max(worst, abs(dense - iterative))
        return {"passed": worst <= 1e-8, "max_abs_error": worst}

    def check_free_energy(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        instances = 4 if quick else 20
        violations = 0
        for k in range(instances):
            n = 4 + k % 3
            H = self.model.materialize_hamiltonian(self._gaussian(n, 2, "free", k))
            lam = float(self.spectral.dense_spectrum(H)[-1])
            for beta in (1.0, 10.0, 100.0):
                F = self.spectral.log_partition(H, beta)
                if not (lam - 1e-9 <= F <= lam + n * log(2) / beta + 1e-9):
                    violations += 1
        return {"passed": violations == 0, "violations": violations}

    def check_optimizer(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        instances = 3 if quick else 20
        monotone = True
        bounded = True
        for k in range(instances):
            n = 4 + k % 5
            sample = self._gaussian(n, 2, "opt", k)
            result = self.products.optimize_multistart(sample, restarts=2, seed=self._seed("opt-start", k))
            trace = np.asarray(result["update_trace"])
            monotone &= bool(np.all(np.diff(trace) >= -1e-10))
            lam = float(self.spectral.dense_spectrum(self.model.materialize_hamiltonian(sample))[-1])
            bounded &= result["energy"] <= lam + 1e-9

        config = ModelConfig(n=2, p=2)
        coefficients = np.zeros(config.term_count)
        coefficients[self.model.term_table(config).index_of("Z0 Z1")] = 1.0
        toy = DisorderSample(config=config, spec=DisorderSpec(), coefficients=coefficients)
        toy_result = self.products.optimize_product_state(toy, BlochProductState.uniform(2, (1.0, 0.0, 0.0)))
        toy_ok = abs(toy_result["energy"] - 1.0) <= 1e-9
        return {"passed": monotone and bounded and toy_ok, "monotone": monotone,
                "below_lambda_max": bounded, "zz_energy": toy_result["energy"]}

    def check_trace_sum_recursion(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        top = 4 if quick else 5
        mismatches = 0
        checked = 0
        for d in range(1, top + 1):
            for matching in self.matchings.enumerate_matchings(d):
                checked += 1
                if self.matchings.trace_sum(matching) != self.matchings.trace_sum_recursive(matching):
                    mismatches += 1
        return {"passed": mismatches == 0, "checked": checked, "mismatches": mismatches}

    def check_expected_trace_sum(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        top = 5 if quick else 6
        values = {str(d): str(self.matchings.expected_trace_sum(d)) for d in range(1, top + 1)}
        return {"passed": all(self.matchings.expected_trace_sum(d) == 2 * d + 1 for d in range(1, top + 1)),
                "values": values}

    def check_gamma_r1(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        estimate = self.matchings.estimate_gamma_ratio(6, 2, 1, 10 if quick else 100, self._seed("gamma"))
        return {"passed": estimate.ratio == 1.0, "ratio": estimate.ratio}

    def check_gamma_exhaustive(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        exact = self.matchings.exhaustive_gamma_ratio(4, 2, 2)
        estimate = self.matchings.estimate_gamma_ratio(4, 2, 2, 1000 if quick else 10000, self._seed("gamma-exhaustive"))
        diff = abs(estimate.ratio - exact["ratio"])
        z = diff / estimate.ratio_stderr if estimate.ratio_stderr > 0 else (0.0 if diff <= 1e-12 else float("inf"))
        return {"passed": z <= z_gate, "z": z, "exhaustive_ratio": exact["ratio"], "estimated_ratio": estimate.ratio}

    def check_poisson_tv(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        samples, limit = (2000, 0.08) if quick else (10000, 0.05)
        result = self.matchings.poisson_degree_check(60, 2, 30, samples, self._seed("poisson"))
        return {"passed": result["tv_distance"] <= limit, "tv_distance": result["tv_distance"], "limit": limit}

    def check_g_witness(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        config = BoundConfig(p=1e6, gamma=1.0, C=1.0)
        terms = self.matchings.witness_terms(config)
        direct = self.matchings.g_value(terms["beta"], config)
        ratios = [self.matchings.minimize_g(BoundConfig(p=10.0 ** e, gamma=1.0, C=1.0))["ratio_to_sqrt"]
                  for e in (2, 4, 6, 8)]
        decreasing = all(b <= a + 1e-12 for a, b in zip(ratios, ratios[1:]))
        return {"passed": abs(terms["total"] - direct) <= 1e-12 and ratios[2] <= 1.25 and decreasing,
                "witness_error": abs(terms["total"] - direct), "ratios": ratios}

    def check_haar_variance(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        shapes = [(4, 2)] if quick else [(4, 2), (6, 2)]
        samples = 2000 if quick else 10000
        worst_z = 0.0
        for n, p in shapes:
            result = self.moments.haar_variance_check(n, p, samples, self._seed("haar", n, p))
            worst_z = max(worst_z, abs(result["empirical_mean"] - result["target"]) / result["stderr"])
        return {"passed": worst_z <= z_gate, "worst_z": worst_z}

    def check_purity_expansion(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        shapes = [(4, 2)] if quick else [(4, 2), (5, 3)]
        states = 5 if quick else 50
        worst = 0.0
        for n, p in shapes:
            config = ModelConfig(n=n, p=p)
            for k in range(states):
                state = self.spectral.haar_state(n, self._seed("purity", n, p, k))
                worst = max(worst, abs(self.moments.purity_variance(state, n, p) - self.moments.state_variance(state, config)))
        bell = self.moments.purity_variance(bell_state(), 2, 2)
        return {"passed": worst <= 1e-10 and abs(bell - 3.0) <= 1e-12, "max_abs_error": worst, "bell": bell}

    def check_adjusted_model(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        worst = 0.0
        largest = 0.0
        for k in range(3 if quick else 20):
            n, p = 4, 1 + k % 3
            state = self.spectral.haar_state(n, self._seed("adjusted", k))
            result = self.moments.variance_additivity_check(state, ModelConfig(n=n, p=p))
            worst = max(worst, abs(result["adjusted_variance"] - result["adjusted_from_terms"]))
            largest = max(largest, result["adjusted_variance"])
        product = self.products.product_state_vector(self.products.random_product_state(4, self._seed("adjusted-product")))
        saturated = abs(self.moments.adjusted_variance(product, 4, 2) - 1.0) <= 1e-10
        return {"passed": worst <= 1e-10 and largest <= 1.0 + 1e-12 and saturated,
                "max_abs_error": worst, "max_adjusted_variance": largest}

    def check_lovasz_extremes(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        tol = self.params['lovasz_tol']
        empty = self.lovasz.lovasz_theta(empty_graph(5), tol).value
        complete = self.lovasz.lovasz_theta(complete_graph(5), tol).value
        pentagon = self.lovasz.lovasz_theta(cycle_graph(5), tol).value
        passed = abs(empty - 5) <= 1e-3 and abs(complete - 1) <= 1e-3 and abs(pentagon - sqrt(5)) <= 1e-2
        return {"passed": passed, "empty_5": empty, "complete_5": complete, "cycle_5": pentagon}

    def check_lovasz_g3(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        theta = self.lovasz.lovasz_theta(self.lovasz.build_anticommutativity_graph(3), self.params['lovasz_tol']).value
        return {"passed": theta <= 3 + 1e-2, "theta": theta}

    def check_vertex_symmetric_product(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        # 完整模式用 n=4（54 个节点），同时检查 ϑ(G_4) ≤ C(4,2)
        n = 3 if quick else 4
        result = self.lovasz.vertex_symmetric_product_check(n, self.params['lovasz_tol'])
        within_pairs = result["theta_G"] <= comb(n, 2) + 1e-2
        return {"passed": result["relative_error"] <= 0.05 and within_pairs, "n": n,
                "relative_error": result["relative_error"], "theta_G": result["theta_G"]}

    def check_independent_set(self, quick: bool, z_gate: float) -> Dict[str, Any]:
        listed = self.lovasz.verify_independent_set()
        corrupted = list(PAIRWISE_ANTICOMMUTING_WORDS)
        corrupted[-1] = "XXII"
        return {"passed": listed and not self.lovasz.verify_independent_set(corrupted),
                "listed": listed}

    # ---------- 执行 ----------

    def checks(self) -> List[tuple]:
        return [
            ("pauli_oracles", self.check_pauli_oracles),
            ("swap_identity", self.check_swap_identity),
            ("covariance", self.check_covariance),
            ("product_variance", self.check_product_variance),
            ("packing_net", self.check_packing_net),
            ("subadditivity", self.check_subadditivity),
            ("eigen_crosscheck", self.check_eigen_crosscheck),
            ("free_energy_sandwich", self.check_free_energy),
            ("optimizer_validity", self.check_optimizer),
            ("trace_sum_recursion", self.check_trace_sum_recursion),
            ("expected_trace_sum", self.check_expected_trace_sum),
            ("gamma_r1", self.check_gamma_r1),
            ("gamma_exhaustive", self.check_gamma_exhaustive),
            ("poisson_tv", self.check_poisson_tv),
            ("g_witness", self.check_g_witness),
            ("haar_variance", self.check_haar_variance),
            ("purity_expansion", self.check_purity_expansion),
            ("adjusted_model", self.check_adjusted_model),
            ("lovasz_extremes", self.check_lovasz_extremes),
            ("lovasz_g3", self.check_lovasz_g3),
            ("vertex_symmetric_product", self.check_vertex_symmetric_product),
            ("independent_set", self.check_independent_set),
        ]

    def run(self, quick: bool = True, z_gate: float = 3.0, only: Optional[List[str]] = None) -> List[CheckResult]:
        """
        运行全部检查

        Args:
            quick: 快速模式
            z_gate: 蒙特卡洛检查允许的标准误倍数
            only: 只运行这些检查

        Returns:
            List[CheckResult]: 单项异常记为失败，不中断其余检查
        """
        registry = self.checks()
        if only:
            unknown = sorted(set(only) - {name for name, _ in registry})
            if unknown:
                raise ParameterError(f"未知的验证项: {', '.join(unknown)}")
        results = []
        for name, check in registry:
            if only and name not in only:
                continue
            try:
                detail = check(quick, z_gate)
                passed = bool(detail.pop("passed"))
            except Exception as e:
                logger.error(f"验证项 {name} 执行出错: {str(e)}")
                logger.exception(e)
                passed, detail = False, {"error": str(e)}
            level = "INFO" if passed else "WARNING"
            logger.log(level, f"验证项 {name}: {'通过' if passed else '未通过'}")
            results.append(CheckResult(name=name, passed=passed, detail=detail))
        return results
