"""paratrans: a desk-scale lab for group-parallel sequence transduction.

A single Transformer decoder parametrized by a parallelism degree k (k=1
left-to-right, k=N fully parallel) is trained through an easy-to-hard task
curriculum, distilled from a left-to-right teacher, and evaluated with
length-candidate parallel decoding, BLEU, and latency benchmarks.
"""

__version__ = "0.1.0"

from .model import K_N, ModelConfig, build_causal_k_mask, build_decoder_input  # noqa: F401
from .tensor import Tensor, no_grad  # noqa: F401
