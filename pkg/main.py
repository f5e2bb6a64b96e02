import asyncio
from typing import Any, Callable, Dict, List, Optional
from fastapi import FastAPI, Query, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi_mcp import FastApiMCP
from pydantic import ValidationError

# 导入服务
from services.spin_lab_service import SpinLabService
from utils.artifact_utils import ArtifactUtils
from utils.errors import CapacityError, ConvergenceError, SpinLabError
from utils.settings import CODE_VERSION, get_settings
from utils.logger import get_logger

# 获取日志器
logger = get_logger()

# 创建FastAPI应用
app = FastAPI(
    title="spinlab 自旋玻璃数值服务",
    description="量子 p-局域自旋玻璃哈密顿量的精确谱、乘积态优化、匹配演算、方差与 Lovász θ 计算",
    version=CODE_VERSION,
)

# 添加CORS中间件
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# 创建门面服务实例
lab = SpinLabService()


async def _run(name: str, func: Callable[..., Any], *args, **kwargs) -> Any:
    """
    在线程中执行计算，并把领域异常映射为 HTTP 状态码

    CapacityError → 413，ConvergenceError → 500，其余 SpinLabError / 参数校验错误 → 400
    """
    logger.info(f"API调用: {name}{args}")
    try:
        result = await asyncio.to_thread(func, *args, **kwargs)
    except CapacityError as e:
        logger.warning(f"{name} 超出规模上限: {str(e)}")
        raise HTTPException(status_code=413, detail=str(e))
    except ConvergenceError as e:
        logger.error(f"{name} 未收敛: {str(e)}")
        raise HTTPException(status_code=500, detail=str(e))
    except (SpinLabError, ValidationError) as e:
        logger.warning(f"{name} 参数错误: {str(e)}")
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"{name} 执行时出错: {str(e)}")
        logger.exception(e)
        raise HTTPException(status_code=500, detail=str(e))
    # numpy 标量转换为 Python 类型
    return ArtifactUtils.to_jsonable(result) if isinstance(result, dict) else result


@app.get(
    "/exact",
    operation_id="exact_lambda_max",
    summary="精确计算最大本征值",
    description="对给定 (n, p, seed) 的无序实例计算 λ_max 与 λ_max/√n，可选计算自由能 F_β"
)
async def exact(
    n: int = Query(..., description="比特数，如 6"),
    p: int = Query(2, description="局域度"),
    seed: int = Query(0, description="无序种子"),
    disorder: str = Query("gaussian", description="gaussian、rademacher 或 sparse_rademacher:<平均度>"),
    beta: Optional[float] = Query(None, description="逆温度，给出时同时计算 F_β")
) -> Dict[str, Any]:
    return await _run("exact", lab.exact, n, p, seed, disorder, beta)


@app.get(
    "/optimize",
    operation_id="optimize_product_state",
    summary="乘积态能量优化",
    description="多起点坐标上升求 max ⟨φ|H|φ⟩，n ≤ 10 时附带 λ_max 作比较"
)
async def optimize(
    n: int = Query(..., description="比特数"),
    p: int = Query(2, description="局域度"),
    seed: int = Query(0, description="无序种子"),
    restarts: int = Query(8, description="随机起点数"),
    disorder: str = Query("gaussian", description="无序分布")
) -> Dict[str, Any]:
    return await _run("optimize", lab.optimize, n, p, seed, restarts, disorder)


@app.get(
    "/trace_sum",
    operation_id="trace_sum",
    summary="匹配的 Trace_sum",
    description="给定 2d 个位置上的完美匹配（1 起始，如 '1,3;2,4'），返回直接求和与递推两种结果"
)
async def trace_sum(
    pairs: str = Query(..., description="匹配，形如 '1,3;2,4'")
) -> Dict[str, Any]:
    try:
        parsed = [tuple(int(x) for x in chunk.split(",")) for chunk in pairs.split(";") if chunk.strip()]
    except ValueError:
        raise HTTPException(status_code=400, detail=f"无法解析匹配 '{pairs}'")
    return await _run("trace_sum", lab.trace_sum, parsed)


@app.get(
    "/expected_trace_sum",
    operation_id="expected_trace_sum",
    summary="均匀随机匹配的 Trace_sum 期望",
    description="精确有理数期望，应等于 2d+1"
)
async def expected_trace_sum(
    d: int = Query(..., description="匹配的对数，1 到 7")
) -> Dict[str, Any]:
    return await _run("expected_trace_sum", lab.expected_trace_sum, d)


@app.get(
    "/gamma",
    operation_id="gamma_ratio",
    summary="γ 比值估计",
    description="随机 p-均匀超图上 E[∏ Trace_sum] 与 E[∏(2Δ+1)] 之比的 Monte Carlo 估计"
)
async def gamma(
    n: int = Query(..., description="比特数"),
    p: int = Query(2, description="每个超边的比特数"),
    r: int = Query(..., description="超边数"),
    samples: int = Query(1000, description="样本数"),
    seed: int = Query(0, description="种子")
) -> Dict[str, Any]:
    estimate = await _run("gamma", lab.gamma, n, p, r, samples, seed)
    return estimate.model_dump()


@app.get(
    "/poisson",
    operation_id="poisson_degree",
    summary="超图度分布的 Poisson 近似",
    description="比特 0 的度分布与 Poisson(pr/n) 的全变差距离"
)
async def poisson(
    n: int = Query(..., description="比特数"),
    p: int = Query(2, description="每个超边的比特数"),
    r: int = Query(..., description="超边数"),
    samples: int = Query(10000, description="样本数"),
    seed: int = Query(0, description="种子")
) -> Dict[str, Any]:
    return await _run("poisson", lab.poisson, n, p, r, samples, seed)


@app.get(
    "/gbound",
    operation_id="g_bound",
    summary="g(β, p) 最小化",
    description="在对数网格与有界一维优化上最小化 g(β, p)，并给出 β = √(2 log p/γ) 处的三项分解"
)
async def gbound(
    p: float = Query(..., description="p > 1，可取实数，如 1e6"),
    gamma: float = Query(1.0, description="γ ≥ 1"),
    C: float = Query(0.7, description="C > log 2")
) -> Dict[str, Any]:
    return await _run("gbound", lab.gbound, p, gamma, C)


@app.get(
    "/variance",
    operation_id="state_variance",
    summary="态方差",
    description="Haar 随机态方差与 3^p/(2^n+1) 的比较，以及逐样本的纯度展开表"
)
async def variance(
    n: int = Query(..., description="比特数"),
    p: int = Query(2, description="局域度"),
    samples: int = Query(200, description="Haar 样本数"),
    seed: int = Query(0, description="种子")
) -> Dict[str, Any]:
    return await _run("variance", lab.variance, n, p, samples, seed)


@app.get(
    "/theta",
    operation_id="lovasz_theta",
    summary="Lovász θ 函数",
    description="反对易图 / 对易图（size 为 n）或 empty、complete、cycle 图（size 为顶点数）的 θ 与上下界"
)
async def theta(
    graph: str = Query("anticommutation", description="anticommutation、commutation、empty、complete、cycle"),
    size: int = Query(3, description="图的规模"),
    tol: Optional[float] = Query(None, description="对偶间隙容差")
) -> Dict[str, Any]:
    return await _run("theta", lab.theta, graph, size, tol)


@app.get(
    "/net",
    operation_id="sphere_net",
    summary="球面网格",
    description="packing（上半球，两两 |u·v| ≤ 1−ε）或 covering（任意方向都有 |x·x'| ≥ 1−ε 的点）"
)
async def net(
    epsilon: float = Query(0.1, description="ε ∈ (0, 1)"),
    kind: str = Query("packing", description="packing 或 covering")
) -> Dict[str, Any]:
    return await _run("net", lab.net, epsilon, kind)


@app.get(
    "/verify",
    operation_id="verify_identities",
    summary="运行验证套件",
    description="运行恒等式与引理检查，返回每项的 name、passed 与 detail"
)
async def verify(
    quick: bool = Query(True, description="快速模式"),
    z_gate: float = Query(3.0, description="Monte Carlo 检查允许的标准误倍数"),
    only: Optional[List[str]] = Query(None, description="只运行这些检查")
) -> Dict[str, Any]:
    results = await _run("verify", lab.verify, quick, z_gate, None, only)
    return {
        "passed": all(bool(r.passed) for r in results),
        "checks": [ArtifactUtils.to_jsonable(r.to_dict()) for r in results],
    }


# 健康检查端点
@app.get("/health")
async def health_check():
    """
    健康检查端点
    """
    return {"status": "ok", "message": "spinlab 服务正常运行", "version": CODE_VERSION}

# 创建MCP服务
mcp = FastApiMCP(
    app,
    name="spinlab 自旋玻璃数值服务",
    description="量子 p-局域自旋玻璃哈密顿量的数值实验与恒等式验证工具"
)

# 挂载MCP服务
mcp.mount()

# 必须在所有路由定义后调用
mcp.setup_server()

# 主函数
if __name__ == "__main__":
    import uvicorn

    settings = get_settings()

    # 启动服务
    uvicorn.run(app, host=settings.host, port=settings.port)
