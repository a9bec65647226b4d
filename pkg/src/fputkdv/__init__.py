"""Normal form of quasi-unidirectional FPUT waves and the KdV hierarchy."""
from .diffpoly import DiffPoly, HSeries, lie_bracket, parse, to_text

__version__ = "0.1.0"

__all__ = ["DiffPoly", "HSeries", "lie_bracket", "parse", "to_text", "__version__"]
