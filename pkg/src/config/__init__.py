"""配置管理模块"""

from .app_config import AppConfig, get_app_config, reload_config
from .run_config import RunConfig, load_run_config, parse_run_config

__all__ = ["AppConfig", "get_app_config", "reload_config", "RunConfig", "load_run_config", "parse_run_config"]
