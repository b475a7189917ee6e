"""Invariant energy-surface surrogate and its online trainer."""

from .model import SurrogateConfig, SurrogateModel
from .trainer import (
    SQRT_2_OVER_PI,
    SurrogateHyper,
    SurrogateTrainerState,
    TrainingAdapter,
    adaptive_decay,
    estimate_mad,
    online_update,
    surrogate_loss,
)

__all__ = [
    "SQRT_2_OVER_PI",
    "SurrogateConfig",
    "SurrogateHyper",
    "SurrogateModel",
    "SurrogateTrainerState",
    "TrainingAdapter",
    "adaptive_decay",
    "estimate_mad",
    "online_update",
    "surrogate_loss",
]
