"""
组合各计算服务的门面，供 CLI 与 HTTP 接口共用
"""
from math import sqrt
from typing import Any, Dict, List, Optional, Sequence, Tuple

from services.experiment_runner import DisorderArm, ExperimentConfig, ExperimentReport, ExperimentRunner
from services.hamiltonian_model import DisorderSample, HamiltonianModel, ModelConfig
from services.lovasz_theta import LovaszThetaService, PauliGraph, complete_graph, cycle_graph, empty_graph
from services.matching_calculus import BoundConfig, GammaEstimate, Matching, MatchingCalculus
from services.product_states import ProductStateService
from services.spectral_solver import SpectralSolver
from services.variance_moments import VarianceMoments
from services.verification_suite import CheckResult, VerificationSuite
from utils.errors import ParameterError
from utils.seeding import derive_seed
from utils.logger import get_logger

# 获取日志器
logger = get_logger()


class SpinLabService:
    """
    spinlab 门面服务
    """

    def __init__(self):
        """初始化并组合全部计算服务"""
        self.model = HamiltonianModel()
        self.spectral = SpectralSolver()
        self.products = ProductStateService(self.model)
        self.matchings = MatchingCalculus()
        self.moments = VarianceMoments(self.model, self.spectral)
        self.lovasz = LovaszThetaService(self.model)
        self.runner = ExperimentRunner(self.model, self.spectral)
        logger.debug("初始化SpinLabService门面服务")

    # ---------- 模型与谱 ----------

    def sample(self, n: int, p: int, seed: int, disorder: str = "gaussian",
               adjusted: bool = False) -> DisorderSample:
        """按命令行写法（如 sparse_rademacher:8）采样一组系数"""
        arm = DisorderArm.parse(disorder)
        return self.model.sample_disorder(ModelConfig(n=n, p=p, include_identity_letters=adjusted), arm.to_spec(seed))

    def lambda_max(self, sample: DisorderSample) -> Tuple[float, str]:
        if sample.n <= self.model.params['dense_limit'] and sample.n <= 10:
            H = self.model.materialize_hamiltonian(sample)
            return float(self.spectral.dense_spectrum(H)[-1]), "dense"
        return self.spectral.lambda_max(self.model.matrix_free(sample)), "lanczos"

    def exact(self, n: int, p: int, seed: int, disorder: str = "gaussian",
              beta: Optional[float] = None) -> Dict[str, Any]:
        """
        单个实例的 λ_max（以及可选的 F_β）

        Args:
            n: 比特数
            p: 局域度
            seed: 种子
            disorder: 无序分布
            beta: 逆温度，给出时同时计算 F_β

        Returns:
            dict: lambda_max、lambda_max_over_sqrt_n、method 等
        """
        try:
            sample = self.sample(n, p, seed, disorder)
            lam, method = self.lambda_max(sample)
            result = {
                "n": n, "p": p, "seed": seed, "disorder": disorder,
                "lambda_max": lam,
                "lambda_max_over_sqrt_n": lam / sqrt(n),
                "method": method,
            }
            if beta is not None:
                result["beta"] = beta
                result["free_energy"] = self.spectral.log_partition(self.model.materialize_hamiltonian(sample), beta)
            return result
        except Exception as e:
            logger.error(f"计算精确λ_max时出错: {str(e)}")
            logger.exception(e)
            raise

    def lambda_max_concentration(self, n: int, p: int, samples: int, seed: int) -> Dict[str, float]:
        """λ_max(√n H) 在无序样本间的涨落与高斯 Lipschitz 尾界"""
        values = [self.lambda_max(self.sample(n, p, derive_seed(seed, "lambda", s)))[0] for s in range(samples)]
        summary = self.spectral.concentration_summary(values, n, p)
        summary.update({"n": n, "p": p, "samples": samples})
        return summary

    def optimize(self, n: int, p: int, seed: int, restarts: int = 8, disorder: str = "gaussian",
                 with_lambda_max: bool = True) -> Dict[str, Any]:
        """多起点坐标上升，n 较小时附带 λ_max 供比较"""
        sample = self.sample(n, p, seed, disorder)
        result = self.products.optimize_multistart(sample, restarts, seed=derive_seed(seed, "optimizer"))
        payload = {
            "n": n, "p": p, "seed": seed, "disorder": disorder,
            "energy": result["energy"],
            "energy_scaled": result["energy"] / sqrt(n),
            "best_initial_energy": result["best_initial_energy"],
            "restart_energies": result["restart_energies"],
            "sweeps": result["sweeps"],
            "converged": result["converged"],
            "bloch_vectors": result["state"].vectors.tolist(),
        }
        if with_lambda_max and n <= 10:
            payload["lambda_max"] = self.lambda_max(sample)[0]
        return payload

    # ---------- 匹配 ----------

    def trace_sum(self, pairs: Sequence[Tuple[int, int]], one_based: bool = True) -> Dict[str, Any]:
        offset = 1 if one_based else 0
        matching = Matching(tuple((a - offset, b - offset) for a, b in pairs))
        return {
            "matching": matching.label(),
            "d": matching.d,
            "trace_sum": self.matchings.trace_sum(matching),
            "trace_sum_recursive": self.matchings.trace_sum_recursive(matching),
        }

    def matching_table(self, d: int) -> List[Dict[str, Any]]:
        """长度 2d 的全部匹配及其 Trace_sum"""
        return [
            {"index": i, "matching": m.label(), "trace_sum": self.matchings.trace_sum_recursive(m)}
            for i, m in enumerate(self.matchings.enumerate_matchings(d))
        ]

    def expected_trace_sum(self, d: int) -> Dict[str, Any]:
        value = self.matchings.expected_trace_sum(d)
        return {"d": d, "expected": float(value), "exact": str(value), "target": 2 * d + 1,
                "holds": value == 2 * d + 1}

    def gamma(self, n: int, p: int, r: int, samples: int, seed: int) -> GammaEstimate:
        return self.matchings.estimate_gamma_ratio(n, p, r, samples, seed)

    def poisson(self, n: int, p: int, r: int, samples: int, seed: int) -> Dict[str, Any]:
        return self.matchings.poisson_degree_check(n, p, r, samples, seed)

    def gbound(self, p: float, gamma: float = 1.0, C: float = 0.7) -> Dict[str, Any]:
        config = BoundConfig(p=p, gamma=gamma, C=C)
        result = self.matchings.minimize_g(config)
        result["witness_terms"] = self.matchings.witness_terms(config)
        return result

    # ---------- 方差与 theta ----------

    def variance(self, n: int, p: int, samples: int, seed: int) -> Dict[str, Any]:
        return {
            "haar": self.moments.haar_variance_check(n, p, samples, seed),
            "rows": self.moments.variance_table(n, p, min(samples, 20), seed),
        }

    def graph(self, kind: str, size: int) -> PauliGraph:
        """kind 取 anticommutation（size 为 n）、commutation、empty、complete、cycle"""
        builders = {
            "anticommutation": lambda: self.lovasz.build_anticommutativity_graph(size),
            "commutation": lambda: self.lovasz.build_anticommutativity_graph(size).complement(),
            "empty": lambda: empty_graph(size),
            "complete": lambda: complete_graph(size),
            "cycle": lambda: cycle_graph(size),
        }
        if kind not in builders:
            raise ParameterError(f"未知的图类型 '{kind}'，可选 {sorted(builders)}")
        return builders[kind]()

    def theta(self, kind: str, size: int, tol: Optional[float] = None) -> Dict[str, Any]:
        graph = self.graph(kind, size)
        result = self.lovasz.lovasz_theta(graph, tol)
        payload = result.to_dict()
        payload.update({"graph": kind, "size": size, "edges": len(graph.edges())})
        return payload

    def net(self, epsilon: float, kind: str = "packing") -> Dict[str, Any]:
        if kind == "packing":
            net = self.products.build_packing_net(epsilon)
            return {"kind": kind, "epsilon": epsilon, "size": net.size, "points": net.rows()}
        if kind == "covering":
            net = self.products.build_covering_net(epsilon)
            return {"kind": kind, "epsilon": epsilon, "size": net.size, "target_size": net.target_size,
                    "worst_alignment": net.worst_alignment, "points": net.rows()}
        raise ParameterError(f"未知的网格类型 '{kind}'，可选 packing / covering")

    # ---------- 实验与验证 ----------

    def run_experiment(self, config: ExperimentConfig, out_dir: Optional[str] = None) -> Tuple[ExperimentReport, Dict[str, str]]:
        report = self.runner.run(config)
        paths = self.runner.write_report(report, config.out_dir or out_dir)
        return report, paths

    def verify(self, quick: bool = True, z_gate: float = 3.0, seed: Optional[int] = None,
               only: Optional[List[str]] = None) -> List[CheckResult]:
        suite = VerificationSuite(seed) if seed is not None else VerificationSuite()
        return suite.run(quick=quick, z_gate=z_gate, only=only)
