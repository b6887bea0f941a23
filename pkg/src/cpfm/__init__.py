"""Black-box time-series domain adaptation with a prompted dual-branch encoder.

Adapts a frozen, seeded transformer backbone to an unlabeled target domain
using only soft-label predictions from source-model services: soft-label
distillation, prompt and masked-input reconstruction, EMA pseudo-label
refinement, and entropy-weighted multi-teacher fusion.
"""

from . import backend
from .autodiff import Tensor, backward, grad_check, no_grad
from .config import RunConfig
from .encoder import EncoderConfig
from .models import DualBranchModel, PromptedClassifier

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAME",
    "DualBranchModel",
    "EncoderConfig",
    "PromptedClassifier",
    "RunConfig",
    "Tensor",
    "backward",
    "grad_check",
    "no_grad",
]

BACKEND_NAME = backend.active.NAME
