"""终端展示模块"""

from .console_view import ConsoleView

__all__ = ["ConsoleView"]
