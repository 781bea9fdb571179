"""Multi-task purchase-funnel intent model, autodiff core, and tooling."""

__version__ = "0.1.0"

from .autograd import Tensor, grad_check

__all__ = ["Tensor", "grad_check", "__version__"]
