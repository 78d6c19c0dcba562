"""Ergodic mean field games with subelliptic diffusions on the flat torus."""

__version__ = "0.1.0"

from .torusgrid import GridFunction, TorusGrid, build_generator
from .vfields import family_by_name, lie_bracket, verify_hormander

__all__ = [
    "TorusGrid",
    "GridFunction",
    "build_generator",
    "family_by_name",
    "lie_bracket",
    "verify_hormander",
    "__version__",
]
