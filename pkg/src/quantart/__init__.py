"""quantart: vector-quantized style transfer with alpha/beta fidelity control.

Two image domains (photos and artworks) each get a continuous and a
vector-quantized autoencoder. Style transfer happens at feature level
through style-guided attention stacks, one per branch. At inference the
two branches are blended: beta mixes stylized vs. content features,
alpha mixes the quantized vs. continuous branch (and the matching
decoders), giving a direct handle on the style/realism trade-off.
"""

__version__ = "0.1.0"

from quantart.fusion import FusionParams, stylize
from quantart.tensor import Tensor, no_grad, stop_gradient
from quantart.training import (
    ModelBundle,
    TrainConfig,
    train_stage1,
    train_stage2,
)

__all__ = [
    "FusionParams",
    "ModelBundle",
    "Tensor",
    "TrainConfig",
    "__version__",
    "no_grad",
    "stop_gradient",
    "stylize",
    "train_stage1",
    "train_stage2",
]
