"""Closed-form test models: exact eigenfunctions and simple densities.

These plug into the same sampling/evaluation machinery as the neural
wave function and provide known energies and distributions.
"""

from __future__ import annotations

import numpy as np

from ..molecule import Geometry, Molecule
from ..numerics import Rng
from .hamiltonian import kinetic_energy, potential_energy


class HydrogenGroundState:
    """log psi = -||r||: the exact hydrogen 1s state (energy -1/2 hartree)."""

    def __init__(self):
        self.molecule = Molecule([1], 1, 0)
        self.geometry = Geometry(np.zeros((1, 3)))

    def log_abs(self, electrons):
        e = np.asarray(electrons)
        return -np.linalg.norm(e.reshape(e.shape[0], 3), axis=-1)

    def derivatives(self, electrons):
        e = np.asarray(electrons).reshape(-1, 3)
        r = np.linalg.norm(e, axis=-1, keepdims=True)
        grad = (-e / r).reshape(-1, 1, 3)
        lap = -2.0 / r[:, 0]
        return self.log_abs(electrons), grad, lap

    def local_energy(self, electrons):
        derivs = self.derivatives(electrons)
        return kinetic_energy(derivs[1], derivs[2]) + potential_energy(
            electrons, self.geometry, self.molecule.charges
        )

    def init_electrons(self, batch: int, rng: Rng):
        return rng.gen.standard_normal((batch, 1, 3))


class IsotropicGaussianDensity:
    """Sampling hook: psi^2 is a unit isotropic Gaussian over all coordinates."""

    def __init__(self, n_particles: int = 1):
        self.n = n_particles

    def log_abs(self, x):
        e = np.asarray(x)
        flat = e.reshape(e.shape[0], -1)
        return -0.25 * np.sum(flat * flat, axis=-1)

    def init_electrons(self, batch: int, rng: Rng):
        return rng.gen.standard_normal((batch, self.n, 3))


class HarmonicLogPsi:
    """log psi = -||r||^2 / 2: Gaussian trial state for gradient checks."""

    def log_abs(self, electrons):
        e = np.asarray(electrons)
        flat = e.reshape(e.shape[0], -1)
        return -0.5 * np.sum(flat * flat, axis=-1)

    def derivatives(self, electrons):
        e = np.asarray(electrons)
        b = e.shape[0]
        grad = -e.reshape(b, -1, 3)
        lap = np.full(b, -3.0 * grad.shape[1], dtype=e.dtype)
        return self.log_abs(e), grad, lap
