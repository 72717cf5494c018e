"""Image inpainting with a contextual attention layer, built on a small
numpy autodiff engine."""

from .attention import AttentionConfig, contextual_attention
from .model import ArchSpec, build_critics, build_generator
from .tensor import Tensor, backward, grad, no_grad, precision

__version__ = "0.1.0"
