"""自定义异常类"""

from typing import Any, Optional


class SpinDriftError(Exception):
    """自旋漂移扩散模拟器基础异常类"""

    pass


class MeshError(SpinDriftError):
    """网格构造或网格文件错误"""

    pass


class ModelError(SpinDriftError):
    """模型参数或初边值数据不合法"""

    pass


class SingularSystemError(ModelError):
    """线性系统奇异（例如没有Dirichlet边的Poisson问题）"""

    pass


class ConvergenceError(SpinDriftError):
    """非线性求解不收敛"""

    def __init__(
        self,
        message: str,
        residual_norm: float = float("nan"),
        iterations: int = 0,
        trajectory: Optional[Any] = None,
    ):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations
        self.trajectory = trajectory


class NegativeDensityError(SpinDriftError):
    """自旋上/下密度出现负值"""

    pass


class ContactError(SpinDriftError):
    """接触定义错误"""

    pass


class ConfigError(SpinDriftError):
    """配置错误"""

    pass
