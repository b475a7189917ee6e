"""Metropolis-Hastings electron sampling and the nuclear-displacement
electron transform used when the geometry moves."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..molecule import Geometry, Molecule
from ..numerics import Rng


@dataclass
class WalkerState:
    """Electron batch, adaptive proposal step and geometry parameters."""

    electrons: np.ndarray  # (B, N, 3)
    step_size: float
    geom_params: np.ndarray
    log_psi: np.ndarray | None = None  # cached log|psi| of the batch

    def invalidate(self) -> "WalkerState":
        return replace(self, log_psi=None)


def assign_electrons_to_nuclei(molecule: Molecule):
    """Nucleus index for each electron, charge-proportional, spins alternating."""
    slots = np.concatenate(
        [np.full(z, m, dtype=int) for m, z in enumerate(molecule.charges)]
    )
    n = molecule.n_electrons
    if len(slots) < n:
        slots = np.concatenate([slots, np.resize(slots, n - len(slots))])
    slots = slots[:n]
    # interleave so both spin sectors cover all nuclei
    up = slots[0::2]
    down = slots[1::2]
    both = np.concatenate([up, down])
    if len(up) != molecule.n_up:
        both = np.concatenate([slots[: molecule.n_up], slots[molecule.n_up :]])
    return both


def init_electrons(
    molecule: Molecule, geometry: Geometry, batch: int, rng: Rng, width=1.0, dtype=np.float64
):
    """Gaussian clouds of unit width around charge-assigned nuclei."""
    assign = assign_electrons_to_nuclei(molecule)
    centers = geometry.positions[assign].astype(dtype)
    noise = rng.gen.standard_normal((batch, molecule.n_electrons, 3), dtype=dtype)
    return centers[None] + width * noise


def mcmc_step(
    log_psi_fn,
    walkers: WalkerState,
    n_steps: int,
    rng: Rng,
    *,
    adapt_low: float = 0.45,
    adapt_high: float = 0.55,
    adapt_factor: float = 1.02,
):
    """All-electron Gaussian Metropolis-Hastings sweeps.

    Acceptance uses psi^2(new)/psi^2(old); after the block the proposal
    step is nudged multiplicatively toward the 0.5 acceptance window.
    Returns (new_walkers, acceptance_rate).  A zero step size degenerates
    to proposals identical to the current state (always accepted).
    """
    if walkers.step_size < 0:
        raise ValueError("proposal step size must be non-negative")
    x = np.array(walkers.electrons, copy=True)
    b = x.shape[0]
    logp = walkers.log_psi
    if logp is None:
        logp = np.asarray(log_psi_fn(x))
    accepted = 0
    gen = rng.gen
    for _ in range(int(n_steps)):
        prop = x + walkers.step_size * gen.standard_normal(x.shape, dtype=x.dtype)
        logp_new = np.asarray(log_psi_fn(prop))
        log_ratio = 2.0 * (logp_new - logp)
        u = gen.random(b)
        with np.errstate(invalid="ignore"):
            accept = np.log(u) < log_ratio
        accept = accept & np.isfinite(logp_new)
        x[accept] = prop[accept]
        logp = np.where(accept, logp_new, logp)
        accepted += int(np.sum(accept))
    rate = accepted / float(max(1, n_steps) * b) if n_steps else 1.0
    step = walkers.step_size
    if n_steps:
        if rate > adapt_high:
            step *= adapt_factor
        elif rate < adapt_low:
            step /= adapt_factor
    new = WalkerState(x, step, walkers.geom_params, logp)
    return new, rate


def thermalize(
    log_psi_fn,
    walkers: WalkerState,
    n_sweeps: int,
    rng: Rng,
    block: int = 20,
    adapt_factor: float = 1.1,
):
    """Burn-in in short blocks with faster step-size adaptation."""
    remaining = int(n_sweeps)
    rate = 1.0
    while remaining > 0:
        n = min(block, remaining)
        walkers, rate = mcmc_step(log_psi_fn, walkers, n, rng, adapt_factor=adapt_factor)
        remaining -= n
    return walkers, rate


def transform_electrons(electrons, new_geometry: Geometry, old_geometry: Geometry):
    """Shift each electron by the displacement of its nearest old nucleus.

    Ties pick the lowest nucleus index.  The electron keeps its offset
    from the carrier nucleus, so its distance to that nucleus is
    preserved (to round-off), and an unchanged geometry is an exact
    identity.
    """
    old = old_geometry.positions
    new = new_geometry.positions
    if old.shape != new.shape:
        raise ValueError("geometries must share atom count and ordering")
    e = np.asarray(electrons)
    d = np.linalg.norm(e[..., None, :] - old[None, None, :, :], axis=-1)
    nearest = np.argmin(d, axis=-1)  # (B, N); argmin takes the first minimum
    displacement = (new - old).astype(e.dtype)
    return e + displacement[nearest]
