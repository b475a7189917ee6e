"""Energy estimation by Monte Carlo integration over a fixed model."""

from __future__ import annotations

import numpy as np

from ..numerics import Rng
from .sampling import WalkerState, mcmc_step


def evaluate_energy(
    model,
    n_samples: int,
    rng: Rng,
    *,
    batch: int = 4096,
    burn_in: int = 400,
    decorrelate: int = 10,
    init_step: float = 0.5,
):
    """Mean local energy and its naive standard error over ``n_samples``.

    ``model`` provides ``log_abs``, ``local_energy`` and ``init_electrons``.
    Walkers thermalize for ``burn_in`` sweeps before collection; the
    reported standard error assumes independent samples (no
    autocorrelation correction), which the ``decorrelate`` sweeps between
    batches only approximate.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    batch = int(min(batch, n_samples))
    r_init, r_chain = rng.split(2)
    walkers = WalkerState(
        electrons=model.init_electrons(batch, r_init),
        step_size=init_step,
        geom_params=np.zeros(0),
    )
    # aggressive adaptation while burning in, gentle afterwards
    remaining = int(burn_in)
    while remaining > 0:
        n = min(10, remaining)
        walkers, _ = mcmc_step(model.log_abs, walkers, n, r_chain, adapt_factor=1.1)
        remaining -= n

    collected = []
    total = 0
    while total < n_samples:
        walkers, _ = mcmc_step(model.log_abs, walkers, decorrelate, r_chain)
        energies = np.asarray(model.local_energy(walkers.electrons))
        collected.append(energies)
        total += energies.size
    values = np.concatenate(collected)[: int(n_samples)]
    energy = float(values.mean())
    stderr = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return energy, stderr
