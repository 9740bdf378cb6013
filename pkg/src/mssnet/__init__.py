"""Coarse-to-fine multi-scale image deblurring on a small numpy autodiff core."""

__version__ = "0.1.0"

from .errors import ContractViolation, FormatError

__all__ = ["ContractViolation", "FormatError", "__version__"]
