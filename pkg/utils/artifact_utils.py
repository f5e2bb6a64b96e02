import os
import json
from typing import Any, Dict, List, Optional
import numpy as np
import pandas as pd


class ArtifactUtils:
    """结果文件的确定性写出：固定列顺序、固定浮点格式、JSON 键排序"""

    FLOAT_FORMAT = "%.17g"

    @staticmethod
    def resolve_out_dir(out_dir: Optional[str]) -> str:
        """
        解析输出目录

        环境变量 SPINLAB_OUT 优先于调用方给出的目录

        Args:
            out_dir: 调用方给出的目录

        Returns:
            str: 已创建的输出目录
        """
        path = os.getenv("SPINLAB_OUT") or out_dir or "out"
        os.makedirs(path, exist_ok=True)
        return path

    @staticmethod
    def to_jsonable(value: Any) -> Any:
        """把 numpy 标量 / 数组等转换成可 JSON 序列化的对象"""
        if isinstance(value, dict):
            return {str(k): ArtifactUtils.to_jsonable(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [ArtifactUtils.to_jsonable(v) for v in value]
        if isinstance(value, np.ndarray):
            return ArtifactUtils.to_jsonable(value.tolist())
        if isinstance(value, np.generic):
            return value.item()
        if isinstance(value, complex):
            return [value.real, value.imag]
        if hasattr(value, "model_dump"):
            return ArtifactUtils.to_jsonable(value.model_dump(mode="json"))
        return value

    @staticmethod
    def dumps(payload: Any) -> str:
        return json.dumps(ArtifactUtils.to_jsonable(payload), sort_keys=True, indent=2, ensure_ascii=False)

    @staticmethod
    def write_json(payload: Any, path: str) -> str:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(ArtifactUtils.dumps(payload))
            f.write("\n")
        return path

    @staticmethod
    def write_csv(rows: List[Dict[str, Any]], columns: List[str], path: str) -> str:
        """按给定列顺序写 CSV"""
        df = pd.DataFrame(rows, columns=columns)
        df.to_csv(path, index=False, float_format=ArtifactUtils.FLOAT_FORMAT, lineterminator="\n")
        return path

    @staticmethod
    def to_csv_text(rows: List[Dict[str, Any]], columns: List[str]) -> str:
        df = pd.DataFrame(rows, columns=columns)
        return df.to_csv(index=False, float_format=ArtifactUtils.FLOAT_FORMAT, lineterminator="\n")
