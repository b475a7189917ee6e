"""Online learning of the energy surrogate from noisy per-step labels.

Each outer iteration takes the current geometries and batch statistics
exactly once, runs a few AdamW steps from the merged parameters, and
folds the result back with an adaptive exponential moving average whose
decay switches between a tracking and an averaging regime depending on
whether the smoothed loss has reached the label-noise floor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import AdamWState, adamw_step, ema_combine, tree_copy
from .model import SurrogateModel

SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))


def surrogate_loss(predictions, stats, sigma_floor: float = 1e-12) -> float:
    """Weighted root mean squared error against the batch means.

    sqrt( (1/C) sum_c (E_c - V_c)^2 / sigma_c ), with sigma floored to
    survive degenerate zero-variance batches.
    """
    preds = np.asarray(predictions, dtype=np.float64)
    e = np.asarray(stats.e_mean, dtype=np.float64)
    if preds.shape != e.shape or preds.size == 0:
        raise ValueError("predictions must match the per-geometry labels")
    sig = np.maximum(np.asarray(stats.sigma, dtype=np.float64), sigma_floor)
    return float(np.sqrt(np.mean((e - preds) ** 2 / sig)))


def estimate_mad(stats) -> float:
    """Noise floor estimate: sqrt(2/pi) times the mean batch sigma."""
    sig = np.asarray(stats.sigma, dtype=np.float64)
    return SQRT_2_OVER_PI * float(sig.mean())


def adaptive_decay(loss_smooth, mad_smooth, gamma_base, gamma_high, zeta) -> float:
    """Two-regime decay: gamma_base (+ gamma_high once below the floor)."""
    if not 0.0 < gamma_base + gamma_high < 1.0:
        raise ValueError("need 0 < gamma_base + gamma_high < 1")
    if zeta <= 1.0:
        raise ValueError("zeta must exceed 1")
    return gamma_base + gamma_high * float(loss_smooth < zeta * mad_smooth)


@dataclass(frozen=True)
class SurrogateHyper:
    gamma_base: float = 0.99
    gamma_high: float = 0.0099
    zeta: float = 1.05
    n_inner: int = 5
    ema_decay: float = 0.999
    lr0: float = 1e-4
    lr_decay: float = 10000.0
    weight_decay: float = 0.01
    sigma_floor: float = 1e-12
    init_reference: bool = True  # seed per-element offsets from the first batch
    force_gamma: float | None = None  # test hook

    def learning_rate(self, t: int) -> float:
        return self.lr0 / (1.0 + t / self.lr_decay)


@dataclass
class SurrogateTrainerState:
    """Live and merged parameters plus the smoothed regime statistics."""

    model: SurrogateModel
    hyper: SurrogateHyper
    params_live: dict
    params_merged: dict
    opt: AdamWState
    loss_smooth: float | None = None
    mad_smooth: float | None = None
    gamma: float = float("nan")
    n_updates: int = 0

    @classmethod
    def init(cls, model: SurrogateModel, params, hyper: SurrogateHyper = SurrogateHyper()):
        return cls(
            model=model,
            hyper=hyper,
            params_live=tree_copy(params),
            params_merged=tree_copy(params),
            opt=AdamWState.init(params),
            n_updates=0,
        )

    def predict(self, positions):
        """Inference always reads the merged parameters."""
        return self.model.energy(self.params_merged, positions)


def initialize_reference(state: SurrogateTrainerState, stats) -> None:
    """Seed the per-element offsets so the flat initial surface sits at the
    first batch's mean energy (paper-silent warm start)."""
    mean_e = float(np.mean(stats.e_mean))
    per_atom = mean_e / state.model.m
    for tree in (state.params_live, state.params_merged):
        ref = tree["z_ref"]
        ref[np.asarray(state.model.charges, dtype=int)] = per_atom


def online_update(state: SurrogateTrainerState, geometries, stats, t: int):
    """One outer iteration on the current batch (used exactly once).

    Returns (new_state, loss, gamma); the reported loss is evaluated on
    the merged parameters before the inner steps.
    """
    hyper = state.hyper
    model = state.model
    positions = np.stack([g.positions for g in geometries])
    if positions.shape[0] != np.shape(stats.e_mean)[0]:
        raise ValueError("geometry count does not match the label count")
    if state.n_updates == 0 and hyper.init_reference:
        initialize_reference(state, stats)

    preds = model.energy(state.params_merged, positions)
    loss_t = surrogate_loss(preds, stats, hyper.sigma_floor)
    mad_t = estimate_mad(stats)

    e_mean = np.array(stats.e_mean, dtype=np.float64, copy=True)
    sigma = np.array(stats.sigma, dtype=np.float64, copy=True)
    live = tree_copy(state.params_merged)  # inner steps start from merged
    opt = state.opt
    lr = hyper.learning_rate(t)
    for _ in range(hyper.n_inner):
        _, grads = model.loss_grads(live, positions, e_mean, sigma, hyper.sigma_floor)
        live, opt = adamw_step(opt, live, grads, lr, weight_decay=hyper.weight_decay)

    d = hyper.ema_decay
    loss_smooth = loss_t if state.loss_smooth is None else d * state.loss_smooth + (1 - d) * loss_t
    mad_smooth = mad_t if state.mad_smooth is None else d * state.mad_smooth + (1 - d) * mad_t
    if hyper.force_gamma is not None:
        gamma = hyper.force_gamma
    else:
        gamma = adaptive_decay(loss_smooth, mad_smooth, hyper.gamma_base, hyper.gamma_high, hyper.zeta)
    merged = ema_combine(state.params_merged, live, gamma)

    new_state = SurrogateTrainerState(
        model=model,
        hyper=hyper,
        params_live=live,
        params_merged=merged,
        opt=opt,
        loss_smooth=loss_smooth,
        mad_smooth=mad_smooth,
        gamma=gamma,
        n_updates=state.n_updates + 1,
    )
    return new_state, loss_t, gamma


class TrainingAdapter:
    """Duck-typed hook consumed by the VMC training loop."""

    def __init__(self, state: SurrogateTrainerState):
        self.state = state

    def update(self, geometries, stats, t):
        self.state, loss, gamma = online_update(self.state, geometries, stats, t)
        return loss, gamma
