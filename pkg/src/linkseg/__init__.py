"""linkseg: a deterministic, from-scratch segmentation mini-engine.

Encoder-decoder network with additive bypass links, hand-rolled reverse-
mode differentiation, static cost analysis, IoU/iIoU metrics, and a
toy-scale training harness. Kernels run through a compiled core when the
extension is built, with a pure numpy fallback.
"""

__version__ = "0.1.0"

from .model import NetConfig, backward, build_network, forward, init_params  # noqa: F401
from .train import TrainConfig, evaluate, make_toy_dataset, train_loop  # noqa: F401
