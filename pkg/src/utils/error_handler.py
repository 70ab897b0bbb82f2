"""统一的错误处理和用户反馈逻辑"""

import math
import traceback
from functools import wraps
from typing import Any, Callable, Optional

from .exceptions import ConfigError, ConvergenceError, MeshError, SpinDriftError
from .logger import get_logger

logger = get_logger(__name__)


class ErrorHandler:
    """统一错误处理器 - 把库异常格式化成命令行消息"""

    @staticmethod
    def handle_convergence_error(error: ConvergenceError, operation: str = "求解") -> str:
        """
        处理求解不收敛

        Args:
            error: 收敛异常（可能携带部分轨迹）
            operation: 操作描述

        Returns:
            格式化的错误消息
        """
        error_msg = f"❌ {operation}未收敛: {error}"
        details = []
        if error.iterations:
            details.append(f"迭代 {error.iterations} 次")
        if not math.isnan(error.residual_norm):
            details.append(f"残差 {error.residual_norm:.3e}")
        trajectory = getattr(error, "trajectory", None)
        if trajectory is not None and trajectory.final is not None:
            details.append(f"已完成 {trajectory.final.k} 个时间步")
        if details:
            error_msg += f"\n   • {', '.join(details)}"
        error_msg += "\n💡 可尝试减小 --dt 或改用 --solver picard"
        logger.error(f"{operation} failed to converge: {error}")
        return error_msg

    @staticmethod
    def handle_generic_error(
        error: Exception, operation: str = "操作", show_traceback: bool = False
    ) -> str:
        """
        处理通用错误

        Args:
            error: 异常对象
            operation: 操作描述
            show_traceback: 是否显示详细堆栈信息

        Returns:
            格式化的错误消息
        """
        if isinstance(error, ConvergenceError):
            return ErrorHandler.handle_convergence_error(error, operation)

        if isinstance(error, ConfigError):
            error_msg = f"❌ 配置无效: {error}"
        elif isinstance(error, MeshError):
            error_msg = f"❌ 网格错误: {error}"
        elif isinstance(error, SpinDriftError):
            error_msg = f"❌ {operation}失败 ({type(error).__name__}): {error}"
        else:
            error_msg = f"❌ {operation}失败: {error}"

        logger.error(f"{operation} failed: {error}")

        if show_traceback:
            logger.debug(f"Traceback: {traceback.format_exc()}")
            error_msg += f"\n💥 详细错误: {traceback.format_exc()}"

        return error_msg

    @staticmethod
    def handle_validation_error(validation_errors: list, context: str = "网格检查") -> str:
        """
        处理检查失败列表

        Args:
            validation_errors: 错误描述列表
            context: 检查上下文

        Returns:
            格式化的错误消息
        """
        error_count = len(validation_errors)
        error_msg = f"❌ {context}失败 ({error_count} 项):"

        # 只显示前3项，避免输出过长
        for error in validation_errors[:3]:
            error_msg += f"\n   • {error}"

        if error_count > 3:
            error_msg += f"\n   • ... 还有 {error_count - 3} 项"

        return error_msg


def with_error_handling(
    operation_name: str = "操作",
    return_on_error: Any = False,
    show_traceback: bool = False,
):
    """
    错误处理装饰器：捕获异常、打印格式化消息并返回 return_on_error

    Args:
        operation_name: 操作名称
        return_on_error: 发生错误时的返回值
        show_traceback: 是否显示堆栈跟踪
    """

    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except (SpinDriftError, OSError, ValueError) as e:
                error_msg = ErrorHandler.handle_generic_error(e, operation_name, show_traceback)
                print(error_msg)
                return return_on_error

        return wrapper

    return decorator


class UserFeedback:
    """用户反馈处理器 - 统一的命令行反馈"""

    @staticmethod
    def print_operation_start(operation: str, details: Optional[str] = None) -> None:
        msg = f"🔄 开始{operation}"
        if details:
            msg += f": {details}"
        print(msg)

    @staticmethod
    def print_operation_complete(operation: str, success: bool = True) -> None:
        if success:
            print(f"✅ {operation}完成")
        else:
            print(f"❌ {operation}失败")
