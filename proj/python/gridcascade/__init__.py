"""Power-grid cascade simulation, GRU-GAT training and cascade exposure rankings."""

from ._core import *  # noqa: F401,F403
from ._core import Error, __version__

__all__ = [name for name in dir() if not name.startswith("_")]
