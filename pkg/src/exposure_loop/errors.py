"""异常层级

所有异常都继承 ValueError，捕获 ValueError 的调用方无需改动。
"""


class ExposureLoopError(ValueError):
    """所有领域错误的基类"""

    kind = "error"


class ParseError(ExposureLoopError):
    """输入文本格式错误，携带行号"""

    kind = "parse"

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class CatalogError(ExposureLoopError):
    """曲目与艺人/标签的关联错误，携带曲目标识"""

    kind = "catalog"

    def __init__(self, item: object, reason: str):
        super().__init__(f"item {item!r}: {reason}")
        self.item = item


class MatrixError(ExposureLoopError):
    kind = "matrix"


class SolverError(ExposureLoopError):
    kind = "solver"


class MetricError(ExposureLoopError):
    kind = "metric"


class SimulationError(ExposureLoopError):
    kind = "simulation"


class SnapshotError(ExposureLoopError):
    """快照文件损坏（magic / 版本 / 长度不符）"""

    kind = "integrity"


class ConfigError(ExposureLoopError):
    kind = "config"
