"""
Pauli 反对易图与 Lovász theta

ϑ(G) = max J·Z，Z ⪰ 0，tr Z = 1，且 G 的每条边 (i, j) 上 Z_ij = 0。
空图为 N，完全图为 1。用 cvxopt 求解其对偶形式：

    min t   s.t.  t·I + ∑_e y_e E_e − J ⪰ 0

原始变量 (t, y) 给出极小化形式矩阵 J − ∑ y_e E_e，其 λ_max 为上界；
对偶变量 Z 给出可行下界 J·Z，单位对角证书 B = D^{-1/2} Z D^{-1/2}。
"""
from dataclasses import dataclass, field
from math import comb
from typing import Any, Dict, List, Optional, Sequence, Tuple
import numpy as np
from cvxopt import matrix, spmatrix, solvers

from services.hamiltonian_model import HamiltonianModel, ModelConfig
from services.pauli_algebra import PauliTerm, anticommutes, parse_word
from services.spectral_solver import StateVector
from services.variance_moments import VarianceMoments, ghz_state
from utils.errors import CapacityError, ConvergenceError, DomainError
from utils.seeding import derive_seed
from utils.logger import get_logger

# 获取日志器
logger = get_logger()

GRAPH_NODE_LIMIT = 2000
SOLVER_NODE_LIMIT = 200

# n=4 时两两反对易的 9 个 2-局域 Pauli，最左字符为 qubit 0
PAIRWISE_ANTICOMMUTING_WORDS = (
    "XXII", "XYII", "XZII",
    "YIXI", "YIYI", "YIZI",
    "ZIIX", "ZIIY", "ZIIZ",
)


@dataclass(frozen=True)
class PauliGraph:
    """
    无向简单图；由 Pauli 族构造时 terms 与节点一一对应，抽象图的 terms 为空
    """
    adjacency: np.ndarray
    labels: Tuple[str, ...]
    n: int = 0
    terms: Tuple[PauliTerm, ...] = ()

    def __post_init__(self):
        adjacency = np.asarray(self.adjacency, dtype=bool)
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise DomainError(f"邻接矩阵必须是方阵: {adjacency.shape}")
        if not np.array_equal(adjacency, adjacency.T):
            raise DomainError("邻接矩阵必须对称")
        if np.any(np.diag(adjacency)):
            raise DomainError("图中不允许自环")
        if len(self.labels) != adjacency.shape[0]:
            raise DomainError(f"标签数 {len(self.labels)} 与节点数 {adjacency.shape[0]} 不符")
        adjacency.setflags(write=False)
        object.__setattr__(self, "adjacency", adjacency)

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    def edges(self) -> List[Tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(i.tolist(), j.tolist()))

    def complement(self) -> "PauliGraph":
        adjacency = ~self.adjacency
        np.fill_diagonal(adjacency, False)
        return PauliGraph(adjacency=adjacency, labels=self.labels, n=self.n, terms=self.terms)

    def without_edges(self, removed: Sequence[Tuple[int, int]]) -> "PauliGraph":
        adjacency = self.adjacency.copy()
        for i, j in removed:
            adjacency[i, j] = adjacency[j, i] = False
        return PauliGraph(adjacency=adjacency, labels=self.labels, n=self.n, terms=self.terms)

    def edge_rows(self) -> List[Dict[str, Any]]:
        """边表，CSV 列顺序 i, j, label_i, label_j"""
        return [{"i": i, "j": j, "label_i": self.labels[i], "label_j": self.labels[j]} for i, j in self.edges()]


@dataclass(frozen=True)
class ThetaResult:
    value: float
    lower_bound: float
    upper_bound: float
    certificate: np.ndarray = field(repr=False)
    residuals: Dict[str, float]

    @property
    def certificate_lambda_max(self) -> float:
        """单位对角证书矩阵 B 的最大本征值"""
        return float(np.linalg.eigvalsh(self.certificate)[-1])

    def to_dict(self, include_certificate: bool = False) -> Dict[str, Any]:
        payload = {
            "value": self.value,
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "certificate_lambda_max": self.certificate_lambda_max,
            "residuals": dict(self.residuals),
            "nodes": int(self.certificate.shape[0]),
        }
        if include_certificate:
            payload["certificate"] = self.certificate.tolist()
        return payload


def _abstract_graph(adjacency: np.ndarray) -> PauliGraph:
    return PauliGraph(adjacency=adjacency, labels=tuple(str(i) for i in range(adjacency.shape[0])))


def empty_graph(size: int) -> PauliGraph:
    return _abstract_graph(np.zeros((size, size), dtype=bool))


def complete_graph(size: int) -> PauliGraph:
    adjacency = np.ones((size, size), dtype=bool)
    np.fill_diagonal(adjacency, False)
    return _abstract_graph(adjacency)


def cycle_graph(size: int) -> PauliGraph:
    if size < 3:
        raise DomainError(f"环至少需要 3 个节点: {size}")
    adjacency = np.zeros((size, size), dtype=bool)
    for i in range(size):
        j = (i + 1) % size
        adjacency[i, j] = adjacency[j, i] = True
    return _abstract_graph(adjacency)


class LovaszThetaService:
    """
    Lovász theta 服务
    构造反对易图，用 SDP 求 ϑ 并给出上下界夹逼
    """

    def __init__(self, model: Optional[HamiltonianModel] = None, params: Optional[Dict[str, Any]] = None):
        """
        初始化 Lovász theta 服务

        Args:
            model: 哈密顿量服务（项表）
            params: 求解参数
        """
        self.model = model or HamiltonianModel()
        self.params = params or {
            'tol': 1e-3,                     # 上下界允许的最大间隙
            'node_limit': SOLVER_NODE_LIMIT,
            'max_iterations': 100,
        }
        logger.debug(f"初始化LovaszThetaService服务，参数: {self.params}")

    def build_anticommutativity_graph(self, n: int, p: int = 2) -> PauliGraph:
        """
        全部 3^p·C(n,p) 个 p-局域 Pauli，反对易即相邻

        Args:
            n: 比特数
            p: 局域度，只有 p=2 对应方差界

        Returns:
            PauliGraph
        """
        if n < 2:
            raise DomainError(f"n 必须 ≥ 2: {n}")
        config = ModelConfig(n=n, p=p)
        if config.term_count > GRAPH_NODE_LIMIT:
            raise CapacityError(f"节点数 {config.term_count} 超过上限 {GRAPH_NODE_LIMIT}",
                                required=config.term_count, limit=GRAPH_NODE_LIMIT)
        if p != 2:
            logger.warning(f"p={p} 的反对易图只用于探索，不对应已知的方差界")
        table = self.model.term_table(config)
        x = table.x_masks
        z = table.z_masks
        parity = (np.bitwise_count(x[:, None] & z[None, :]) + np.bitwise_count(z[:, None] & x[None, :])) & 1
        adjacency = parity.astype(bool)
        terms = tuple(table.term(t) for t in range(len(table)))
        return PauliGraph(adjacency=adjacency, labels=table.labels, n=n, terms=terms)

    def lovasz_theta(self, graph: PauliGraph, tol: Optional[float] = None) -> ThetaResult:
        """
        求 ϑ(G)

        Args:
            graph: 图
            tol: 上下界间隙阈值

        Returns:
            ThetaResult: value 取上下界中点

        Raises:
            ConvergenceError: 求解失败或间隙超过 tol
        """
        tol = tol if tol is not None else self.params['tol']
        size = graph.node_count
        if size > self.params['node_limit']:
            raise CapacityError(f"节点数 {size} 超过求解上限 {self.params['node_limit']}",
                                required=size, limit=self.params['node_limit'])
        if size == 0:
            raise DomainError("空节点集没有 theta")
        if size == 1:
            return ThetaResult(value=1.0, lower_bound=1.0, upper_bound=1.0,
                               certificate=np.ones((1, 1)), residuals={"gap": 0.0, "trace": 0.0, "edge": 0.0})

        edges = graph.edges()
        num_edges = len(edges)
        try:
            values, rows, cols = [], [], []
            for e, (i, j) in enumerate(edges):
                values += [-1.0, -1.0]
                rows += [i * size + j, j * size + i]
                cols += [e, e]
            for i in range(size):
                values.append(-1.0)
                rows.append(i * size + i)
                cols.append(num_edges)
            G = spmatrix(values, rows, cols, (size * size, num_edges + 1))
            h = -matrix(1.0, (size, size))
            c = matrix([0.0] * num_edges + [1.0])

            options = {
                "show_progress": False,
                "maxiters": self.params['max_iterations'],
                "abstol": 1e-9,
                "reltol": 1e-9,
                "feastol": 1e-9,
            }
            sol = solvers.sdp(c=c, Gs=[G], hs=[h], options=options)
            if sol["status"] != "optimal" and sol["x"] is None:
                raise ConvergenceError(f"SDP 求解失败: {sol['status']}", residual=float(sol.get("gap") or np.inf))

            y = np.array(sol["x"]).ravel()
            Z = np.array(sol["zs"][0])
            # cvxopt 只保证下三角
            Z = np.tril(Z) + np.tril(Z, -1).T
            J = np.ones((size, size))

            min_form = J.copy()
            for e, (i, j) in enumerate(edges):
                min_form[i, j] -= y[e]
                min_form[j, i] -= y[e]
            upper = float(np.linalg.eigvalsh(min_form)[-1])

            # 把对偶解投影回可行集后再取下界
            trace = float(np.trace(Z))
            Z = Z / trace
            edge_residual = max((abs(Z[i, j]) for i, j in edges), default=0.0)
            for i, j in edges:
                Z[i, j] = Z[j, i] = 0.0
            w, V = np.linalg.eigh(Z)
            Z = (V * np.clip(w, 0.0, None)) @ V.T
            Z = Z / np.trace(Z)
            lower = float(np.sum(Z))

            diag = np.sqrt(np.clip(np.diag(Z), 1e-300, None))
            B = Z / np.outer(diag, diag)
            np.fill_diagonal(B, 1.0)
            for i, j in edges:
                B[i, j] = B[j, i] = 0.0

            gap = upper - lower
            residuals = {
                "gap": gap,
                "trace": abs(trace - 1.0),
                "edge": float(edge_residual),
                "solver_gap": float(sol["gap"]) if sol["gap"] is not None else float("nan"),
            }
            if gap > tol:
                raise ConvergenceError(f"theta 上下界间隙 {gap:.3e} 超过 {tol:g}", residual=gap)
            logger.debug(f"lovasz_theta: N={size}, |E|={num_edges}, [{lower:.8f}, {upper:.8f}]")
            return ThetaResult(value=0.5 * (lower + upper), lower_bound=lower, upper_bound=upper,
                               certificate=B, residuals=residuals)
        except Exception as e:
            logger.error(f"求解Lovász theta时出错: {str(e)}")
            logger.exception(e)
            raise

    @staticmethod
    def verify_independent_set(words: Sequence[str] = PAIRWISE_ANTICOMMUTING_WORDS, n: int = 4) -> bool:
        """
        检查给定 Pauli 字两两反对易，即它们在对易图 Ḡ_n 中两两不相邻，ϑ(Ḡ_n) ≥ len(words)

        Args:
            words: Pauli 字符串，长度不足 n 的右侧补 I
            n: 比特数，至少 4

        Returns:
            bool
        """
        if n < 4:
            raise DomainError(f"n 必须 ≥ 4: {n}")
        paulis = [parse_word(w.ljust(n, "I")) for w in words]
        return all(anticommutes(a, b) for k, a in enumerate(paulis) for b in paulis[k + 1:])

    def vertex_symmetric_product_check(self, n: int, tol: Optional[float] = None) -> Dict[str, float]:
        """
        ϑ(G_n)·ϑ(Ḡ_n) 与节点数 9·C(n,2) 比较

        Args:
            n: 比特数
            tol: 求解间隙阈值

        Returns:
            dict: theta_G、theta_Gbar、product、target、relative_error
        """
        try:
            logger.info(f"顶点对称乘积检验: n={n}")
            graph = self.build_anticommutativity_graph(n)
            theta_g = self.lovasz_theta(graph, tol).value
            theta_gbar = self.lovasz_theta(graph.complement(), tol).value
            target = graph.node_count
            product = theta_g * theta_gbar
            return {
                "n": n,
                "theta_G": theta_g,
                "theta_Gbar": theta_gbar,
                "product": product,
                "target": float(target),
                "relative_error": abs(product - target) / target,
                "pair_count": comb(n, 2),
            }
        except Exception as e:
            logger.error(f"顶点对称乘积检验时出错: {str(e)}")
            logger.exception(e)
            raise

    def variance_bound(self, n: int, tol: Optional[float] = None) -> Dict[str, float]:
        """p=2 模型任意态方差的上界 ϑ(G_n)/C(n,2)"""
        theta = self.lovasz_theta(self.build_anticommutativity_graph(n), tol).value
        return {"n": n, "theta": theta, "bound": theta / comb(n, 2)}

    @staticmethod
    def ghz_variance_exploration(moments: Optional[VarianceMoments] = None) -> Dict[str, Any]:
        """
        n=2、p=2 时 GHZ 态方差 3 与乘积态方差 1 的对比（探索性质，不作为验收）
        """
        moments = moments or VarianceMoments()
        config = ModelConfig(n=2, p=2)
        product_state = StateVector.from_amplitudes([1.0, 0.0, 0.0, 0.0])
        ghz = moments.state_variance(ghz_state(2), config)
        product = moments.state_variance(product_state, config)
        return {"ghz_variance": ghz, "product_variance": product, "exceeds": bool(ghz > product + 1e-9)}

    def edge_deletion_monotonicity(self, graph: PauliGraph, trials: int, seed: int,
                                   fraction: float = 0.2, tol: Optional[float] = None) -> List[Dict[str, Any]]:
        """
        随机删去一部分边后 ϑ 不减

        Args:
            graph: 原图
            trials: 随机子图个数
            seed: 主种子
            fraction: 每次删去的边比例
            tol: 求解间隙阈值

        Returns:
            每次试验的 before、after、removed、monotone
        """
        tol = tol if tol is not None else self.params['tol']
        before = self.lovasz_theta(graph, tol).value
        edges = graph.edges()
        results = []
        for trial in range(trials):
            rng = np.random.Generator(np.random.Philox(derive_seed(seed, "edge_deletion", trial)))
            count = max(1, int(round(fraction * len(edges)))) if edges else 0
            picks = rng.choice(len(edges), size=count, replace=False) if count else []
            removed = [edges[int(k)] for k in picks]
            after = self.lovasz_theta(graph.without_edges(removed), tol).value
            results.append({
                "trial": trial,
                "before": before,
                "after": after,
                "removed": len(removed),
                "monotone": bool(after >= before - 2 * tol),
            })
        return results
