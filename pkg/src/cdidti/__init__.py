"""Multimodal drug-target interaction prediction on a small numpy autodiff engine."""

from .estimator import CDIDTIClassifier
from .model import ModelConfig
from .tensor import Tensor
from .training import TrainConfig

__version__ = "0.1.0"
__all__ = ["CDIDTIClassifier", "ModelConfig", "Tensor", "TrainConfig", "__version__"]
