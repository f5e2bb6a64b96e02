import os
from functools import lru_cache
from pydantic import BaseModel, Field
from dotenv import load_dotenv

# 加载环境变量
load_dotenv()

CODE_VERSION = "1.0.0"


class LabSettings(BaseModel):
    """运行环境配置，全部来自环境变量（.env 亦可）"""
    out_dir: str = Field("out", description="结果输出目录 (SPINLAB_OUT)")
    dense_limit: int = Field(12, ge=1, description="稠密矩阵允许的最大比特数")
    matrix_free_limit: int = Field(20, ge=1, description="无矩阵 H·v 允许的最大比特数")
    enumeration_limit: int = Field(10**7, ge=1, description="网格乘积态枚举上限 q^n")
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    host: str = "0.0.0.0"
    port: int = 8000


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    return int(value) if value else default


@lru_cache(maxsize=1)
def get_settings() -> LabSettings:
    """读取并缓存配置"""
    return LabSettings(
        out_dir=os.getenv("SPINLAB_OUT", "out"),
        dense_limit=_env_int("SPINLAB_DENSE_LIMIT", 12),
        matrix_free_limit=_env_int("SPINLAB_MATRIX_FREE_LIMIT", 20),
        enumeration_limit=_env_int("SPINLAB_ENUMERATION_LIMIT", 10**7),
        threads=_env_int("SPINLAB_THREADS", os.cpu_count() or 1),
        host=os.getenv("HOST", "0.0.0.0"),
        port=_env_int("PORT", 8000),
    )
