"""
spinlab 异常体系

服务层抛出这里定义的异常；HTTP 层和 CLI 层负责把它们映射成状态码 / 退出码。
"""
from typing import Optional


class SpinLabError(Exception):
    """所有领域异常的基类"""


class DimensionError(SpinLabError, ValueError):
    """比特数 / 维度不一致"""


class CapacityError(SpinLabError, ValueError):
    """规模超过配置的上限（稠密矩阵、枚举、匹配长度等）"""

    def __init__(self, message: str, required: Optional[float] = None, limit: Optional[float] = None):
        super().__init__(message)
        self.required = required
        self.limit = limit


class DomainError(SpinLabError, ValueError):
    """参数落在数学定义域之外，例如 p > n"""


class ParameterError(SpinLabError, ValueError):
    """参数取值非法，例如稀疏分布的平均度过大"""


class StateValidationError(SpinLabError, ValueError):
    """态或 Bloch 向量未归一化"""


class SchemaError(SpinLabError, ValueError):
    """实验配置不符合 schema"""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class ConvergenceError(SpinLabError):
    """迭代求解器未收敛，携带最终残差 / 对偶间隙"""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class ProvenanceError(SpinLabError):
    """已有结果的配置哈希与本次运行不一致"""
