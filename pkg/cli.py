"""
spinlab 命令行入口

    python cli.py verify --quick
    python cli.py exact --n 6 --p 2 --seed 3
    python cli.py gamma --n 40 --p 2 --r 20 --samples 10000 --seed 7
    python cli.py universality --config universality.json --samples 200

退出码：0 成功；1 验证失败或计算失败；2 用法错误、配置 schema 错误或非法输入
"""
import argparse
import json
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

from pydantic import ValidationError

from services.experiment_runner import ExperimentConfig
from services.spin_lab_service import SpinLabService
from utils.artifact_utils import ArtifactUtils
from utils.errors import SchemaError, SpinLabError
from utils.logger import get_logger, set_console_level

# 获取日志器
logger = get_logger()

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

FORMATS_HELP = """\
输出文件格式（目录由 --out 指定，环境变量 SPINLAB_OUT 优先，默认 ./out）

实验 CSV  {experiment_id}.csv，每个样本一行，列顺序固定，浮点格式 %.17g
  universality   arm,kind,sample,seed,lambda_max,lambda_max_over_sqrt_n
  scaling        n,p,sample,seed,energy,best_initial_energy,energy_scaled,
                 sqrt_2_log_p,ratio,lambda_max
  concentration  sample,seed,energy,energy_scaled,lambda_max
实验 JSON {experiment_id}.json，键排序：experiment_id, kind, columns, record_count,
          summary, provenance{config_hash, code_version}, errors
          已存在且 config_hash 不同的 JSON 不会被覆盖
其他子命令  结果 JSON 同时打印到 stdout 并写入 {name}.json（name 默认为子命令名，
          可用 --experiment-id 改写）
  exact --spectrum   额外写 {name}_spectrum.csv：index,eigenvalue
  matchings          额外写 {name}.csv：index,matching,trace_sum
  gamma              gamma.json 含 per_r_ratio；--p-values/--r-values 写 gamma_sweep.csv
  theta --edges      额外写 {name}_edges.csv：i,j,label_i,label_j
  net                额外写 {name}.csv：x,y,z
  sample             {name}.json 为系数样本；--binary 另写 {name}.bin（小端 float64）
"""

EXPERIMENT_COMMANDS = ("universality", "scaling", "concentration")

EXPERIMENT_FLAGS = (
    "n", "p", "n_values", "p_values", "include_identity_letters", "disorders", "samples",
    "restarts", "max_sweeps", "optimizer_tol", "exact_limit", "epsilon",
)


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="主种子（覆盖配置文件中的 seed）")
    common.add_argument("--out", default=None, help="输出目录（SPINLAB_OUT 优先）")
    common.add_argument("--threads", type=int, default=None, help="并发线程数，默认为逻辑核数")
    common.add_argument("--config", default=None, help="JSON 配置文件，命令行参数优先")
    common.add_argument("--experiment-id", default=None, help="实验编号 / 输出文件名")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="输出 DEBUG 日志")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="只输出 WARNING 及以上日志")
    return common


def _add_model_flags(parser: argparse.ArgumentParser, n: Optional[int] = 6, p: Optional[int] = 2):
    parser.add_argument("--n", type=int, default=n, help="比特数")
    parser.add_argument("--p", type=int, default=p, help="局域度")
    parser.add_argument("--disorder", default="gaussian",
                        help="gaussian / rademacher / sparse_rademacher:<平均度>")


def _add_experiment_flags(parser: argparse.ArgumentParser):
    # 默认值为 None，未给出的字段取配置文件或 ExperimentConfig 的默认值
    parser.add_argument("--n", type=int, default=None, help="比特数")
    parser.add_argument("--p", type=int, default=None, help="局域度")
    parser.add_argument("--n-values", type=int, nargs="+", default=None, help="scaling 扫描的 n")
    parser.add_argument("--p-values", type=int, nargs="+", default=None, help="scaling 扫描的 p")
    parser.add_argument("--include-identity-letters", action="store_true", default=None,
                        help="使用含单位字母的调整模型")
    parser.add_argument("--disorders", nargs="+", default=None,
                        help="无序分布列表，如 gaussian rademacher sparse_rademacher:8")
    parser.add_argument("--samples", type=int, default=None, help="每个分支 / 每个 (n, p) 的样本数")
    parser.add_argument("--restarts", type=int, default=None, help="坐标上升的随机起点数")
    parser.add_argument("--max-sweeps", type=int, default=None, help="坐标上升最大轮数")
    parser.add_argument("--optimizer-tol", type=float, default=None, help="坐标上升一轮的最小改进")
    parser.add_argument("--exact-limit", type=int, default=None, help="计算 λ_max 交叉检查的最大 n")
    parser.add_argument("--epsilon", type=float, default=None, help="C_ε = (1−ε)√2 中的 ε")


def build_parser() -> argparse.ArgumentParser:
    """构建带全部子命令的解析器"""
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="spinlab",
        description="量子 p-局域自旋玻璃的数值实验与恒等式验证",
        epilog="`spinlab --help formats` 查看输出文件格式",
    )
    sub = parser.add_subparsers(dest="command", metavar="<command>")
    sub.required = True

    verify = sub.add_parser("verify", parents=[common], help="运行恒等式 / 引理验证套件")
    verify.add_argument("--quick", action="store_true", help="桌面规模的缩减样本数")
    verify.add_argument("--z-gate", type=float, default=3.0, help="Monte Carlo 检查允许的标准误倍数")
    verify.add_argument("--only", nargs="+", default=None, help="只运行指定名称的检查")

    sample = sub.add_parser("sample", parents=[common], help="采样一组无序系数")
    _add_model_flags(sample)
    sample.add_argument("--include-identity-letters", action="store_true", help="调整模型")
    sample.add_argument("--binary", action="store_true", help="另写小端 float64 二进制文件")

    optimize = sub.add_parser("optimize", parents=[common], help="多起点坐标上升求乘积态能量")
    _add_model_flags(optimize)
    optimize.add_argument("--restarts", type=int, default=8, help="随机起点数")

    exact = sub.add_parser("exact", parents=[common], help="单个实例的 λ_max 与 F_β")
    _add_model_flags(exact)
    exact.add_argument("--beta", type=float, default=None, help="同时计算 F_β = log Tr e^{βH} / β")
    exact.add_argument("--spectrum", action="store_true", help="写出完整谱 CSV")

    matchings = sub.add_parser("matchings", parents=[common], help="匹配枚举与 Trace_sum")
    matchings.add_argument("--d", type=int, default=3, help="匹配的对数")
    matchings.add_argument("--pairs", default=None, help="单个匹配（1 起始），如 '1,3;2,4'")

    gamma = sub.add_parser("gamma", parents=[common], help="γ 比值的 Monte Carlo 估计")
    gamma.add_argument("--n", type=int, default=40)
    gamma.add_argument("--p", type=int, default=2)
    gamma.add_argument("--r", type=int, default=20)
    gamma.add_argument("--samples", type=int, default=1000)
    gamma.add_argument("--exhaustive", action="store_true", help="同时计算穷举期望（小规模）")
    gamma.add_argument("--p-values", type=int, nargs="+", default=None, help="扫描的 p")
    gamma.add_argument("--r-values", type=int, nargs="+", default=None, help="扫描的 r")

    poisson = sub.add_parser("poisson", parents=[common], help="超图度分布与 Poisson 的 TV 距离")
    poisson.add_argument("--n", type=int, default=60)
    poisson.add_argument("--p", type=int, default=2)
    poisson.add_argument("--r", type=int, default=30)
    poisson.add_argument("--samples", type=int, default=10000)

    gbound = sub.add_parser("gbound", parents=[common], help="g(β, p) 的数值最小化")
    gbound.add_argument("--p", type=float, default=1e6)
    gbound.add_argument("--gamma", type=float, default=1.0)
    gbound.add_argument("--C", type=float, default=0.7)

    for kind, text in (("universality", "不同无序分布下 λ_max/√n 的比较"),
                       ("scaling", "乘积态最优能量随 (n, p) 的标度"),
                       ("concentration", "乘积态最优能量的集中性")):
        _add_experiment_flags(sub.add_parser(kind, parents=[common], help=text))

    theta = sub.add_parser("theta", parents=[common], help="Lovász θ 函数")
    theta.add_argument("--graph", default="anticommutation",
                       choices=["anticommutation", "commutation", "empty", "complete", "cycle"])
    theta.add_argument("--size", type=int, default=3, help="anticommutation 图为 n，其余为顶点数")
    theta.add_argument("--tol", type=float, default=None, help="对偶间隙容差")
    theta.add_argument("--edges", action="store_true", help="写出边表 CSV")

    net = sub.add_parser("net", parents=[common], help="构造 packing / covering 网格")
    net.add_argument("--epsilon", type=float, default=0.1)
    net.add_argument("--kind", choices=["packing", "covering"], default="packing")
    parser.command_parsers = sub.choices
    return parser


def _load_config_file(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise SchemaError(f"无法读取配置文件 {path}: {e}")
    except json.JSONDecodeError as e:
        raise SchemaError(f"配置文件 {path} 不是合法 JSON: {e}")
    if not isinstance(data, dict):
        raise SchemaError(f"配置文件 {path} 必须是 JSON 对象")
    return data


def experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    """配置文件与命令行合并，命令行优先"""
    data = _load_config_file(args.config)
    for name in EXPERIMENT_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    if isinstance(data.get("disorders"), list):
        data["disorders"] = [_disorder_item(item) for item in data["disorders"]]
    data["kind"] = args.command
    data.setdefault("experiment_id", args.command)
    if args.experiment_id:
        data["experiment_id"] = args.experiment_id
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out:
        data["out_dir"] = args.out
    if args.threads is not None:
        data["threads"] = args.threads
    return ExperimentConfig.from_json(data)


def command_defaults(args: argparse.Namespace) -> Dict[str, Any]:
    """
    非实验子命令的配置文件：键为该子命令的参数名，作为默认值，命令行仍然优先

    Raises:
        SchemaError: 文件不可读或含有该子命令不接受的键
    """
    data = {str(k).replace("-", "_"): v for k, v in _load_config_file(args.config).items()}
    allowed = set(vars(args)) - {"command", "config", "verbose", "quiet"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise SchemaError(f"{args.command} 不接受的配置项: {', '.join(unknown)}", field=unknown[0])
    return data


def _disorder_item(item: Any) -> Any:
    if isinstance(item, str):
        kind, _, degree = item.partition(":")
        return {"kind": kind.strip(), "average_degree": float(degree)} if degree else {"kind": kind.strip()}
    return item


def _parse_pairs(text: str) -> List[tuple]:
    try:
        return [tuple(int(x) for x in chunk.split(",")) for chunk in text.split(";") if chunk.strip()]
    except ValueError:
        raise SchemaError(f"无法解析匹配 '{text}'，应形如 '1,3;2,4'", field="pairs")


class CommandRunner:
    """把解析后的参数分派到门面服务，打印并写出结果"""

    def __init__(self, args: argparse.Namespace, service: Optional[SpinLabService] = None):
        self.args = args
        self.service = service or SpinLabService()
        if args.threads is not None:
            self.service.runner.params['threads'] = args.threads
        self.seed = args.seed if args.seed is not None else 0

    def _path(self, name: str, suffix: str) -> str:
        out = ArtifactUtils.resolve_out_dir(self.args.out)
        return os.path.join(out, f"{self.args.experiment_id or name}{suffix}")

    def emit(self, payload: Any, name: str) -> str:
        text = ArtifactUtils.dumps(payload)
        print(text)
        path = self._path(name, ".json")
        ArtifactUtils.write_json(payload, path)
        logger.debug(f"已写出 {path}")
        return path

    def run(self) -> int:
        handler = getattr(self, f"cmd_{self.args.command}")
        return handler()

    def cmd_verify(self) -> int:
        a = self.args
        results = self.service.verify(quick=a.quick, z_gate=a.z_gate, seed=a.seed, only=a.only)
        payload = [r.to_dict() for r in results]
        self.emit(payload, "verify")
        failed = [r.name for r in results if not r.passed]
        if failed:
            logger.warning(f"验证失败: {', '.join(failed)}")
            return EXIT_FAILURE
        logger.info(f"全部 {len(results)} 项验证通过")
        return EXIT_OK

    def cmd_sample(self) -> int:
        a = self.args
        sample = self.service.sample(a.n, a.p, self.seed, a.disorder, a.include_identity_letters)
        path = self._path("sample", ".json")
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(sample.to_json())
            f.write("\n")
        if a.binary:
            with open(self._path("sample", ".bin"), "wb") as f:
                f.write(sample.to_bytes())
        summary = {"n": a.n, "p": a.p, "seed": self.seed, "disorder": a.disorder,
                   "terms": len(sample.table), "nonzero": int(len(sample.nonzero()[0])),
                   "path": path}
        print(ArtifactUtils.dumps(summary))
        return EXIT_OK

    def cmd_optimize(self) -> int:
        a = self.args
        self.emit(self.service.optimize(a.n, a.p, self.seed, a.restarts, a.disorder), "optimize")
        return EXIT_OK

    def cmd_exact(self) -> int:
        a = self.args
        result = self.service.exact(a.n, a.p, self.seed, a.disorder, a.beta)
        if a.spectrum:
            sample = self.service.sample(a.n, a.p, self.seed, a.disorder)
            rows = self.service.spectral.spectrum_rows(self.service.model.materialize_hamiltonian(sample))
            ArtifactUtils.write_csv(rows, ["index", "eigenvalue"], self._path("exact", "_spectrum.csv"))
        self.emit(result, "exact")
        return EXIT_OK

    def cmd_matchings(self) -> int:
        a = self.args
        if a.pairs:
            self.emit(self.service.trace_sum(_parse_pairs(a.pairs)), "matchings")
            return EXIT_OK
        rows = self.service.matching_table(a.d)
        ArtifactUtils.write_csv(rows, ["index", "matching", "trace_sum"], self._path("matchings", ".csv"))
        payload = self.service.expected_trace_sum(a.d)
        payload["matchings"] = len(rows)
        self.emit(payload, "matchings")
        return EXIT_OK

    def cmd_gamma(self) -> int:
        a = self.args
        if a.p_values or a.r_values:
            rows = self.service.matchings.gamma_sweep(a.n, a.p_values or [a.p], a.r_values or [a.r],
                                                      a.samples, self.seed)
            columns = ["n", "p", "r", "samples", "lhs_mean", "rhs_mean", "ratio",
                       "lhs_stderr", "rhs_stderr", "ratio_stderr"]
            ArtifactUtils.write_csv(rows, columns, self._path("gamma_sweep", ".csv"))
        estimate = self.service.gamma(a.n, a.p, a.r, a.samples, self.seed)
        payload = estimate.model_dump()
        payload["seed"] = self.seed
        if a.exhaustive:
            payload["exhaustive"] = self.service.matchings.exhaustive_gamma_ratio(a.n, a.p, a.r)
        self.emit(payload, "gamma")
        return EXIT_OK

    def cmd_poisson(self) -> int:
        a = self.args
        self.emit(self.service.poisson(a.n, a.p, a.r, a.samples, self.seed), "poisson")
        return EXIT_OK

    def cmd_gbound(self) -> int:
        a = self.args
        self.emit(self.service.gbound(a.p, a.gamma, a.C), "gbound")
        return EXIT_OK

    def _experiment(self) -> int:
        config = experiment_config(self.args)
        report, paths = self.service.run_experiment(config, self.args.out)
        payload = report.summary_payload()
        payload["paths"] = paths
        print(ArtifactUtils.dumps(payload))
        return EXIT_FAILURE if report.errors else EXIT_OK

    cmd_universality = _experiment
    cmd_scaling = _experiment
    cmd_concentration = _experiment

    def cmd_theta(self) -> int:
        a = self.args
        if a.edges:
            graph = self.service.graph(a.graph, a.size)
            ArtifactUtils.write_csv(graph.edge_rows(), ["i", "j", "label_i", "label_j"],
                                    self._path("theta", "_edges.csv"))
        self.emit(self.service.theta(a.graph, a.size, a.tol), "theta")
        return EXIT_OK

    def cmd_net(self) -> int:
        a = self.args
        payload = self.service.net(a.epsilon, a.kind)
        points = payload.pop("points")
        ArtifactUtils.write_csv(points, ["x", "y", "z"], self._path("net", ".csv"))
        self.emit(payload, "net")
        return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    命令行主函数

    Args:
        argv: 参数列表，默认取 sys.argv[1:]

    Returns:
        int: 退出码
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    if len(argv) >= 2 and argv[0] in ("-h", "--help") and argv[1] == "formats":
        print(FORMATS_HELP)
        return EXIT_OK

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse 在 --help 时退出 0，用法错误时退出 2
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE

    if args.config and args.command not in EXPERIMENT_COMMANDS:
        try:
            parser.command_parsers[args.command].set_defaults(**command_defaults(args))
            args = parser.parse_args(argv)
        except SchemaError as e:
            logger.error(f"配置错误: {str(e)}")
            return EXIT_USAGE
        except SystemExit as e:
            return int(e.code) if isinstance(e.code, int) else EXIT_USAGE

    if args.verbose:
        set_console_level("DEBUG")
    elif args.quiet:
        set_console_level("WARNING")

    logger.info(f"执行子命令: {args.command}")
    try:
        return CommandRunner(args).run()
    except SchemaError as e:
        logger.error(f"配置错误: {str(e)}")
        return EXIT_USAGE
    except ValidationError as e:
        logger.error(f"参数非法: {str(e)}")
        return EXIT_USAGE
    except SpinLabError as e:
        logger.error(f"{args.command} 执行失败: {str(e)}")
        return EXIT_USAGE if isinstance(e, ValueError) else EXIT_FAILURE
    except Exception as e:
        logger.error(f"{args.command} 执行时出错: {str(e)}")
        logger.exception(e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
