"""Potential and local energies, in hartree."""

from __future__ import annotations

import numpy as np

from ..molecule import Geometry, nuclear_repulsion


def potential_energy(electrons, geometry: Geometry, charges):
    """Coulomb potential per sample: e-e repulsion, e-n attraction, n-n repulsion.

    Coincident particles produce an infinite sentinel value.
    """
    e = np.asarray(electrons, dtype=np.float64)
    if e.ndim == 2:
        e = e[None]
    b, n, _ = e.shape
    pos = geometry.positions
    z = np.asarray(charges, dtype=np.float64)

    out = np.full(b, nuclear_repulsion(geometry, charges))
    with np.errstate(divide="ignore"):
        if n > 1:
            dee = np.linalg.norm(e[:, :, None, :] - e[:, None, :, :], axis=-1)
            iu, ju = np.triu_indices(n, k=1)
            out = out + np.sum(1.0 / dee[:, iu, ju], axis=-1)
        den = np.linalg.norm(e[:, :, None, :] - pos[None, None, :, :], axis=-1)
        out = out - np.sum(z[None, None, :] / den, axis=(1, 2))
    return out


def kinetic_energy(grad, laplacian_sum):
    """-1/2 (lap log|psi| + |grad log|psi||^2), per sample."""
    g = np.asarray(grad)
    sq = np.sum(g.reshape(g.shape[0], -1) ** 2, axis=-1)
    return -0.5 * (np.asarray(laplacian_sum) + sq)


def local_energy(derivs, electrons, geometry: Geometry, charges):
    """Local energy from (log_abs, grad, laplacian_sum) derivative output."""
    _, grad, lap = derivs
    return kinetic_energy(grad, lap) + potential_energy(electrons, geometry, charges)
