"""
带种子的实验驱动：普适性、乘积态能量标度、集中性

每个样本的种子为 derive_seed(master_seed, experiment_id, sample_index)，
样本在线程池中并发执行，结果按样本序号装配，与线程数无关。
"""
import asyncio
import hashlib
import json
import os
from enum import Enum
from math import log, sqrt
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from services.hamiltonian_model import DisorderKind, DisorderSample, DisorderSpec, HamiltonianModel, ModelConfig
from services.product_states import ProductStateService
from services.spectral_solver import SpectralSolver
from utils.artifact_utils import ArtifactUtils
from utils.errors import ProvenanceError, SchemaError
from utils.seeding import derive_seed
from utils.settings import CODE_VERSION, get_settings
from utils.logger import get_logger

# 获取日志器
logger = get_logger()

UINT64_MAX = 2 ** 64 - 1
EXACT_SPECTRUM_MAX_N = 10


class ExperimentKind(str, Enum):
    UNIVERSALITY = "universality"
    SCALING = "scaling"
    CONCENTRATION = "concentration"


class DisorderArm(BaseModel):
    """实验中的一种无序分布（种子由实验统一派生）"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: DisorderKind = DisorderKind.GAUSSIAN
    average_degree: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _check_sparse(self):
        if self.kind == DisorderKind.SPARSE_RADEMACHER and self.average_degree is None:
            raise ValueError("sparse_rademacher 需要 average_degree")
        return self

    @property
    def label(self) -> str:
        if self.average_degree is None:
            return self.kind.value
        return f"{self.kind.value}:{self.average_degree:g}"

    def to_spec(self, seed: int) -> DisorderSpec:
        return DisorderSpec(kind=self.kind, average_degree=self.average_degree, seed=seed)

    @classmethod
    def parse(cls, text: str) -> "DisorderArm":
        """命令行写法，如 gaussian、rademacher、sparse_rademacher:8"""
        kind, _, degree = text.partition(":")
        return cls(kind=kind.strip(), average_degree=float(degree) if degree else None)


class ExperimentConfig(BaseModel):
    """实验配置，JSON 形式见 model_json_schema()"""
    model_config = ConfigDict(extra="forbid")

    experiment_id: str = Field(..., pattern=r"^[A-Za-z0-9_.-]+$", description="实验编号，也是输出文件名")
    kind: ExperimentKind
    n: int = Field(8, ge=1, description="比特数（universality / concentration）")
    p: int = Field(2, ge=1, description="局域度（universality / concentration）")
    n_values: List[int] = Field(default_factory=list, description="scaling 扫描的 n")
    p_values: List[int] = Field(default_factory=list, description="scaling 扫描的 p")
    include_identity_letters: bool = False
    disorders: List[DisorderArm] = Field(default_factory=lambda: [DisorderArm()])
    samples: int = Field(100, gt=0, description="每个分支 / 每个 (n, p) 的无序样本数")
    restarts: int = Field(4, gt=0, description="坐标上升的随机起点数")
    max_sweeps: int = Field(500, gt=0)
    optimizer_tol: float = Field(1e-9, gt=0)
    exact_limit: int = Field(8, ge=1, description="n 不超过该值时计算 λ_max 做交叉检查")
    epsilon: float = Field(0.1, gt=0, lt=1, description="阈值 C_ε = (1−ε)√2 中的 ε")
    seed: int = Field(0, ge=0, le=UINT64_MAX)
    out_dir: Optional[str] = None
    threads: Optional[int] = Field(None, gt=0)

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind == ExperimentKind.UNIVERSALITY and len(self.disorders) < 2:
            raise ValueError("universality 至少需要两个 disorders")
        if self.kind == ExperimentKind.SCALING and (not self.n_values or not self.p_values):
            raise ValueError("scaling 需要非空的 n_values 与 p_values")
        return self

    @property
    def c_epsilon(self) -> float:
        return (1.0 - self.epsilon) * sqrt(2.0)

    @classmethod
    def from_json(cls, text: Union[str, bytes, Dict[str, Any]]) -> "ExperimentConfig":
        """
        解析 JSON 配置

        Raises:
            SchemaError: 字段缺失或非法，field 指出第一个出错的字段
        """
        try:
            data = json.loads(text) if isinstance(text, (str, bytes)) else text
        except json.JSONDecodeError as e:
            raise SchemaError(f"配置不是合法 JSON: {e}")
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            first = e.errors()[0]
            field = ".".join(str(part) for part in first["loc"]) or None
            raise SchemaError(f"配置字段 {field or '<root>'} 非法: {first['msg']}", field=field)


class ExperimentReport(BaseModel):
    experiment_id: str
    kind: ExperimentKind
    columns: List[str]
    records: List[Dict[str, Any]]
    summary: Dict[str, Any]
    provenance: Dict[str, str]
    errors: List[Dict[str, Any]] = Field(default_factory=list)

    def summary_payload(self) -> Dict[str, Any]:
        """写入 JSON 的部分（逐样本记录在 CSV 中）"""
        return {
            "experiment_id": self.experiment_id,
            "kind": self.kind.value,
            "columns": self.columns,
            "record_count": len(self.records),
            "summary": self.summary,
            "provenance": self.provenance,
            "errors": self.errors,
        }


def config_hash(config: ExperimentConfig) -> str:
    """规范 JSON 的 sha256；输出目录与线程数不影响结果，不参与哈希"""
    payload = config.model_dump(mode="json", exclude={"out_dir", "threads"})
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _mean_stderr(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if len(arr) == 0:
        return float("nan"), float("nan")
    stderr = float(np.std(arr, ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return float(arr.mean()), stderr


class ExperimentRunner:
    """
    实验驱动服务
    负责逐样本并发执行、汇总统计和结果文件写出
    """

    def __init__(self, model: Optional[HamiltonianModel] = None, spectral: Optional[SpectralSolver] = None,
                 params: Optional[Dict[str, Any]] = None):
        """
        初始化实验驱动

        Args:
            model: 哈密顿量服务
            spectral: 谱计算服务
            params: 执行参数
        """
        self.model = model or HamiltonianModel()
        self.spectral = spectral or SpectralSolver()
        self.params = params or {
            'threads': get_settings().threads,
            'fail_fast': False,
        }
        logger.debug(f"初始化ExperimentRunner实验服务，参数: {self.params}")

    # ---------- 执行 ----------

    async def _gather_samples(self, worker: Callable[[int], Dict[str, Any]], count: int, threads: int):
        # 使用信号量控制并发数
        semaphore = asyncio.Semaphore(threads)

        async def run_with_semaphore(index: int):
            async with semaphore:
                try:
                    return index, await asyncio.to_thread(worker, index), None
                except Exception as e:
                    logger.error(f"样本 {index} 执行出错: {str(e)}")
                    return index, None, str(e)

        tasks = [run_with_semaphore(i) for i in range(count)]
        return await asyncio.gather(*tasks)

    def _map_samples(self, worker: Callable[[int], Dict[str, Any]], count: int,
                     threads: Optional[int]) -> Tuple[List[Dict[str, Any]], List[Dict[str, Any]]]:
        """并发执行 worker(0..count-1)，按序号返回 (成功记录, 错误记录)"""
        threads = threads or self.params['threads']
        results = asyncio.run(self._gather_samples(worker, count, threads))
        records, errors = [], []
        for index, record, error in sorted(results, key=lambda item: item[0]):
            if error is None:
                records.append(record)
            else:
                errors.append({"sample": index, "error": error})
        return records, errors

    def _lambda_max(self, sample: DisorderSample) -> float:
        if sample.n <= EXACT_SPECTRUM_MAX_N:
            return float(self.spectral.dense_spectrum(self.model.materialize_hamiltonian(sample))[-1])
        return self.spectral.lambda_max(self.model.matrix_free(sample))

    def _optimizer(self, config: ExperimentConfig) -> ProductStateService:
        params = dict(ProductStateService(self.model).params)
        params.update({'restarts': config.restarts, 'max_sweeps': config.max_sweeps, 'tol': config.optimizer_tol})
        return ProductStateService(self.model, params)

    def _provenance(self, config: ExperimentConfig) -> Dict[str, str]:
        return {"config_hash": config_hash(config), "code_version": CODE_VERSION}

    # ---------- 实验 ----------

    def run_universality(self, config: ExperimentConfig) -> ExperimentReport:
        """
        各无序分布下 λ_max(H)/√n 的均值与标准误，以及前两个分支的差

        同一样本序号在所有分支上使用同一种子，因此相同分支的差恰为 0

        Args:
            config: kind=universality 的配置

        Returns:
            ExperimentReport
        """
        logger.info(f"普适性实验 {config.experiment_id}: n={config.n}, p={config.p}, "
                    f"arms={[arm.label for arm in config.disorders]}, samples={config.samples}")
        model_config = ModelConfig(n=config.n, p=config.p, include_identity_letters=config.include_identity_letters)
        sqrt_n = sqrt(config.n)
        arm_count = len(config.disorders)

        def worker(index: int) -> Dict[str, Any]:
            arm_index, s = divmod(index, config.samples)
            arm = config.disorders[arm_index]
            seed = derive_seed(config.seed, config.experiment_id, s)
            lam = self._lambda_max(self.model.sample_disorder(model_config, arm.to_spec(seed)))
            return {"arm": arm_index, "kind": arm.label, "sample": s, "seed": seed,
                    "lambda_max": lam, "lambda_max_over_sqrt_n": lam / sqrt_n}

        records, errors = self._map_samples(worker, arm_count * config.samples, config.threads)

        arms = []
        for arm_index, arm in enumerate(config.disorders):
            mean, stderr = _mean_stderr([r["lambda_max_over_sqrt_n"] for r in records if r["arm"] == arm_index])
            arms.append({"arm": arm_index, "kind": arm.label, "mean": mean, "stderr": stderr})
        gap = arms[1]["mean"] - arms[0]["mean"]
        combined = sqrt(arms[0]["stderr"] ** 2 + arms[1]["stderr"] ** 2)
        summary = {
            "n": config.n,
            "p": config.p,
            "arms": arms,
            "gap": gap,
            "combined_stderr": combined,
            "within_gate": bool(abs(gap) <= max(2.0 * combined, 0.1 * abs(arms[0]["mean"]))),
        }
        logger.info(f"普适性实验完成: gap={gap:.6f}, combined_stderr={combined:.6f}")
        return ExperimentReport(
            experiment_id=config.experiment_id, kind=config.kind,
            columns=["arm", "kind", "sample", "seed", "lambda_max", "lambda_max_over_sqrt_n"],
            records=records, summary=summary, provenance=self._provenance(config), errors=errors,
        )

    def run_product_scaling(self, config: ExperimentConfig) -> ExperimentReport:
        """
        每个 (n, p) 上多起点坐标上升的乘积态能量

        energy 为 ⟨μ|H|μ⟩，energy_scaled = energy/√n 与 √(2 log p) 比较；
        n ≤ exact_limit 时同时给出 λ_max 做上界检查

        Args:
            config: kind=scaling 的配置

        Returns:
            ExperimentReport
        """
        logger.info(f"乘积态标度实验 {config.experiment_id}: n={config.n_values}, p={config.p_values}")
        arm = config.disorders[0]
        optimizer = self._optimizer(config)
        grid = [(n, p) for n in config.n_values for p in config.p_values]

        def worker(index: int) -> Dict[str, Any]:
            cell, s = divmod(index, config.samples)
            n, p = grid[cell]
            seed = derive_seed(config.seed, config.experiment_id, n, p, s)
            model_config = ModelConfig(n=n, p=p, include_identity_letters=config.include_identity_letters)
            sample = self.model.sample_disorder(model_config, arm.to_spec(seed))
            result = optimizer.optimize_multistart(sample, config.restarts, seed=derive_seed(seed, "optimizer"))
            target = sqrt(2.0 * log(p)) if p > 1 else float("nan")
            energy_scaled = result["energy"] / sqrt(n)
            return {
                "n": n, "p": p, "sample": s, "seed": seed,
                "energy": result["energy"],
                "best_initial_energy": result["best_initial_energy"],
                "energy_scaled": energy_scaled,
                "sqrt_2_log_p": target,
                "ratio": energy_scaled / target if p > 1 else float("nan"),
                "lambda_max": self._lambda_max(sample) if n <= config.exact_limit else float("nan"),
            }

        records, errors = self._map_samples(worker, len(grid) * config.samples, config.threads)

        groups = []
        for n, p in grid:
            rows = [r for r in records if r["n"] == n and r["p"] == p]
            mean, stderr = _mean_stderr([r["energy_scaled"] for r in rows])
            target = sqrt(2.0 * log(p)) if p > 1 else float("nan")
            checked = [r for r in rows if not np.isnan(r["lambda_max"])]
            groups.append({
                "n": n, "p": p, "count": len(rows),
                "mean_energy_scaled": mean, "stderr": stderr,
                "ratio": mean / target if p > 1 else float("nan"),
                "below_lambda_max": all(r["energy"] <= r["lambda_max"] + 1e-9 for r in checked),
                "not_below_initial": all(r["energy"] >= r["best_initial_energy"] - 1e-12 for r in rows),
            })
        return ExperimentReport(
            experiment_id=config.experiment_id, kind=config.kind,
            columns=["n", "p", "sample", "seed", "energy", "best_initial_energy", "energy_scaled",
                     "sqrt_2_log_p", "ratio", "lambda_max"],
            records=records, summary={"groups": groups, "c_epsilon": config.c_epsilon},
            provenance=self._provenance(config), errors=errors,
        )

    def run_concentration(self, config: ExperimentConfig) -> ExperimentReport:
        """
        优化后的乘积态能量在无序样本间的涨落

        报告 std(energy/√n)·√n；n ≤ 10 时另给出 λ_max 的涨落与高斯尾界

        Args:
            config: kind=concentration 的配置

        Returns:
            ExperimentReport
        """
        logger.info(f"集中性实验 {config.experiment_id}: n={config.n}, p={config.p}, samples={config.samples}")
        arm = config.disorders[0]
        optimizer = self._optimizer(config)
        model_config = ModelConfig(n=config.n, p=config.p, include_identity_letters=config.include_identity_letters)
        exact = config.n <= EXACT_SPECTRUM_MAX_N

        def worker(s: int) -> Dict[str, Any]:
            seed = derive_seed(config.seed, config.experiment_id, s)
            sample = self.model.sample_disorder(model_config, arm.to_spec(seed))
            result = optimizer.optimize_multistart(sample, config.restarts, seed=derive_seed(seed, "optimizer"))
            return {
                "sample": s, "seed": seed,
                "energy": result["energy"],
                "energy_scaled": result["energy"] / sqrt(config.n),
                "lambda_max": self._lambda_max(sample) if exact else float("nan"),
            }

        records, errors = self._map_samples(worker, config.samples, config.threads)
        scaled = np.array([r["energy_scaled"] for r in records])
        std = float(np.std(scaled, ddof=1)) if len(scaled) > 1 else 0.0
        mean, stderr = _mean_stderr(scaled)
        summary = {
            "n": config.n,
            "p": config.p,
            "mean_energy_scaled": mean,
            "stderr": stderr,
            "std_energy_scaled": std,
            "std_times_sqrt_n": std * sqrt(config.n),
            "product_tail_bound": float(min(1.0, 2.0 * np.exp(-(std ** 2) * config.n / 2.0))),
        }
        if exact and records:
            summary["lambda_max"] = self.spectral.concentration_summary(
                [r["lambda_max"] for r in records], config.n, config.p)
        logger.info(f"集中性实验完成: std·√n={summary['std_times_sqrt_n']:.6f}")
        return ExperimentReport(
            experiment_id=config.experiment_id, kind=config.kind,
            columns=["sample", "seed", "energy", "energy_scaled", "lambda_max"],
            records=records, summary=summary, provenance=self._provenance(config), errors=errors,
        )

    def run(self, config: ExperimentConfig) -> ExperimentReport:
        handlers = {
            ExperimentKind.UNIVERSALITY: self.run_universality,
            ExperimentKind.SCALING: self.run_product_scaling,
            ExperimentKind.CONCENTRATION: self.run_concentration,
        }
        return handlers[config.kind](config)

    # ---------- 结果文件 ----------

    def write_report(self, report: ExperimentReport, out_dir: Optional[str] = None) -> Dict[str, str]:
        """
        写出 {experiment_id}.csv 与 {experiment_id}.json

        已有同名 JSON 且配置哈希不同时拒绝覆盖

        Args:
            report: 实验报告
            out_dir: 输出目录，SPINLAB_OUT 优先

        Returns:
            dict: csv 与 json 路径
        """
        out = ArtifactUtils.resolve_out_dir(out_dir or get_settings().out_dir)
        json_path = os.path.join(out, f"{report.experiment_id}.json")
        csv_path = os.path.join(out, f"{report.experiment_id}.csv")
        if os.path.exists(json_path):
            with open(json_path, encoding="utf-8") as f:
                previous = json.load(f).get("provenance", {}).get("config_hash")
            if previous != report.provenance["config_hash"]:
                raise ProvenanceError(
                    f"{json_path} 的配置哈希 {previous} 与本次 {report.provenance['config_hash']} 不一致")
        ArtifactUtils.write_csv(report.records, report.columns, csv_path)
        ArtifactUtils.write_json(report.summary_payload(), json_path)
        logger.info(f"已写出实验结果: {csv_path}, {json_path}")
        return {"csv": csv_path, "json": json_path}

    def run_all(self, manifest: Union[str, Sequence[Any]], out_dir: Optional[str] = None,
                fail_fast: Optional[bool] = None) -> List[ExperimentReport]:
        """
        依次执行清单中的实验并写出结果

        清单可以是 JSON 文本（数组或 {"experiments": [...]}）或配置列表；
        解析阶段的 schema 错误直接抛出，执行阶段的错误记入该实验的报告

        Args:
            manifest: 实验清单
            out_dir: 输出目录
            fail_fast: 遇错即停，默认关闭

        Returns:
            List[ExperimentReport]
        """
        fail_fast = self.params['fail_fast'] if fail_fast is None else fail_fast
        if isinstance(manifest, (str, bytes)):
            try:
                manifest = json.loads(manifest)
            except json.JSONDecodeError as e:
                raise SchemaError(f"清单不是合法 JSON: {e}")
        if isinstance(manifest, dict):
            manifest = manifest.get("experiments", [])
        configs = [item if isinstance(item, ExperimentConfig) else ExperimentConfig.from_json(item)
                   for item in manifest]

        reports = []
        for config in configs:
            try:
                report = self.run(config)
                self.write_report(report, config.out_dir or out_dir)
            except Exception as e:
                logger.error(f"实验 {config.experiment_id} 执行出错: {str(e)}")
                logger.exception(e)
                if fail_fast:
                    raise
                report = ExperimentReport(
                    experiment_id=config.experiment_id, kind=config.kind, columns=[], records=[],
                    summary={}, provenance=self._provenance(config),
                    errors=[{"sample": None, "error": str(e)}],
                )
            reports.append(report)
        return reports
