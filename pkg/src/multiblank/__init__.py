"""Multi-blank transducer loss, decoding and a toy trainable model in numpy."""

__version__ = "0.1.0"

from .loss import (  # noqa: E402
    AlphaBetaLattice,
    BlankSet,
    InfeasibleLatticeError,
    LossConfig,
    LossResult,
    backward,
    forward,
    loss_and_grad,
    occupancy,
    under_normalize,
)
from .numerics import LOG_ZERO, log_softmax, log_sum_exp  # noqa: E402

__all__ = [
    "AlphaBetaLattice",
    "BlankSet",
    "InfeasibleLatticeError",
    "LOG_ZERO",
    "LossConfig",
    "LossResult",
    "backward",
    "forward",
    "log_softmax",
    "log_sum_exp",
    "loss_and_grad",
    "occupancy",
    "under_normalize",
]
