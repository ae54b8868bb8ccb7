"""Referring video object segmentation on a numpy autograd core."""

from .config import Config, load_config
from .errors import ConfigError, ContractError, ShapeError

__all__ = ["Config", "ConfigError", "ContractError", "ShapeError", "load_config"]
__version__ = "0.1.0"
