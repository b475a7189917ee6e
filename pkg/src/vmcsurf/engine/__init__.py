"""Variational Monte Carlo core: sampling, energies, gradients, training."""

from .evaluate import evaluate_energy
from .gradients import (
    center_scores,
    centered_deltas,
    clip_local_energies,
    fisher_matvec,
    natural_gradient_update,
    vmc_gradient,
)
from .hamiltonian import kinetic_energy, local_energy, potential_energy
from .hooks import HarmonicLogPsi, HydrogenGroundState, IsotropicGaussianDensity
from .pretrain import GtoFileProvider, HydrogenicProvider, pretrain_step, run_pretraining
from .sampling import (
    WalkerState,
    init_electrons,
    mcmc_step,
    thermalize,
    transform_electrons,
)
from .training import (
    DivergenceError,
    EnergyStats,
    TrainSettings,
    TrainState,
    TrainingSetup,
    batch_stats,
    init_walkers,
    score_rows,
    train_step,
)

__all__ = [
    "DivergenceError",
    "EnergyStats",
    "GtoFileProvider",
    "HarmonicLogPsi",
    "HydrogenGroundState",
    "HydrogenicProvider",
    "IsotropicGaussianDensity",
    "TrainSettings",
    "TrainState",
    "TrainingSetup",
    "WalkerState",
    "batch_stats",
    "center_scores",
    "centered_deltas",
    "clip_local_energies",
    "evaluate_energy",
    "fisher_matvec",
    "init_electrons",
    "init_walkers",
    "kinetic_energy",
    "local_energy",
    "mcmc_step",
    "natural_gradient_update",
    "potential_energy",
    "pretrain_step",
    "run_pretraining",
    "score_rows",
    "thermalize",
    "train_step",
    "transform_electrons",
    "vmc_gradient",
]
