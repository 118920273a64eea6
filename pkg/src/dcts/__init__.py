"""Cross-domain Thompson Sampling with similarity-transferred, discounted priors."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .core import Observation, RewardLedger

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "Observation", "RewardLedger", "__version__"]
