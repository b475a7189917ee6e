"""Supervised orbital pretraining against a pluggable target provider.

The default provider builds analytic hydrogen-like orbitals; a file
provider evaluates externally computed molecular-orbital coefficients
over contracted Gaussian primitives.
"""

from __future__ import annotations

import json

import numpy as np

from ..molecule import Geometry, Molecule
from ..numerics import AdamWState, Rng, Tape, adam_step, ops
from .sampling import WalkerState, init_electrons, mcmc_step


class HydrogenicProvider:
    """Occupied orbitals as symmetric sums of nucleus-centered exponentials.

    Orbital ``i`` decays with zeta = Z_m / (1 + i), mimicking the 1/n
    spread of hydrogenic shells.  Crude, but a stable pretraining target
    at desk scale.
    """

    def __init__(self, molecule: Molecule):
        self.mol = molecule
        self.n_orb = max(molecule.n_up, molecule.n_down)

    def orbital_block(self, electrons, geometry: Geometry, n_orb: int):
        """(B, n_orb, N_elec) matrix of orbital values at electron positions."""
        e = np.asarray(electrons)
        d = np.linalg.norm(
            e[:, None, :, :] - geometry.positions[None, :, None, :], axis=-1
        )  # (B, M, N)
        z = np.asarray(self.mol.charges, dtype=e.dtype)
        out = []
        for i in range(n_orb):
            zeta = z / (1.0 + i)
            out.append(np.sum(np.exp(-zeta[None, :, None] * d), axis=1))
        return np.stack(out, axis=1)

    def reference_matrix(self, electrons, geometry: Geometry):
        """Block-diagonal (B, N, N) target; both spins share the orbital set."""
        mol = self.mol
        e = np.asarray(electrons)
        b, n, _ = e.shape
        up = self.orbital_block(e[:, : mol.n_up], geometry, mol.n_up)
        out = np.zeros((b, n, n), dtype=e.dtype)
        out[:, : mol.n_up, : mol.n_up] = up
        if mol.n_down:
            down = self.orbital_block(e[:, mol.n_up :], geometry, mol.n_down)
            out[:, mol.n_up :, mol.n_up :] = down
        return out

    def log_density(self, electrons, geometry: Geometry):
        """log |det of the reference| for sampling pretraining batches."""
        mol = self.mol
        e = np.asarray(electrons)
        up = self.orbital_block(e[:, : mol.n_up], geometry, mol.n_up)
        total = np.linalg.slogdet(up)[1]
        if mol.n_down:
            down = self.orbital_block(e[:, mol.n_up :], geometry, mol.n_down)
            total = total + np.linalg.slogdet(down)[1]
        return total


class GtoFileProvider:
    """Molecular orbitals from a JSON file of contracted Gaussians.

    Schema: ``{"basis": [{"center": int, "type": "s"|"px"|"py"|"pz",
    "exponents": [...], "coefficients": [...]}, ...],
    "mo_coeffs": [[...], ...]}`` with one mo_coeffs row per occupied
    orbital.  Values are evaluated at electron positions in bohr.
    """

    def __init__(self, path, molecule: Molecule):
        self.mol = molecule
        with open(path) as fh:
            spec = json.load(fh)
        try:
            self.basis = [
                (
                    int(fn["center"]),
                    str(fn["type"]),
                    np.asarray(fn["exponents"], dtype=np.float64),
                    np.asarray(fn["coefficients"], dtype=np.float64),
                )
                for fn in spec["basis"]
            ]
            self.mo = np.asarray(spec["mo_coeffs"], dtype=np.float64)
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: malformed orbital file") from exc
        if self.mo.ndim != 2 or self.mo.shape[1] != len(self.basis):
            raise ValueError(f"{path}: mo_coeffs must be (n_orbitals, n_basis)")
        self.n_orb = self.mo.shape[0]

    def _basis_values(self, electrons, geometry: Geometry):
        e = np.asarray(electrons)
        cols = []
        for center, kind, alphas, coeffs in self.basis:
            rel = e - geometry.positions[center]
            r2 = np.sum(rel * rel, axis=-1)
            radial = np.sum(
                coeffs[None, None, :] * np.exp(-alphas[None, None, :] * r2[..., None]),
                axis=-1,
            )
            if kind == "s":
                cols.append(radial)
            elif kind in ("px", "py", "pz"):
                axis = {"px": 0, "py": 1, "pz": 2}[kind]
                cols.append(rel[..., axis] * radial)
            else:
                raise ValueError(f"unsupported basis function type {kind!r}")
        return np.stack(cols, axis=-1)  # (B, N, n_basis)

    def orbital_block(self, electrons, geometry: Geometry, n_orb: int):
        vals = self._basis_values(electrons, geometry)
        mos = vals @ self.mo.T  # (B, N, n_orb)
        return np.swapaxes(mos[..., :n_orb], -1, -2)

    reference_matrix = HydrogenicProvider.reference_matrix
    log_density = HydrogenicProvider.log_density


def orbital_loss(wf, params, electrons, geometry, targets):
    """Mean squared deviation of every determinant's orbitals from the target."""
    from ..molecule import identity_frame

    h, r_en = wf.final_embeddings(params, electrons, geometry, identity_frame())
    k = wf.cfg.n_determinants
    if wf.cfg.dense_orbitals:
        diff = wf.build_orbitals(params, h, r_en) - targets[:, None]
        return ops.asum(ops.mul(diff, diff)) / float(targets.size * k)
    uu, dd = wf.build_orbitals(params, h, r_en)
    nu = wf.n_up
    t_uu, t_dd = targets[:, :nu, :nu], targets[:, nu:, nu:]
    total = ops.asum(ops.mul(uu - t_uu[:, None], uu - t_uu[:, None]))
    if t_dd.size:
        total = total + ops.asum(ops.mul(dd - t_dd[:, None], dd - t_dd[:, None]))
    return total / float((t_uu.size + t_dd.size) * k)


def grads_to_tree(template, grads_by_path, prefix=()):
    """Reshape a {path: grad} mapping into the template's nested layout."""
    if isinstance(template, dict):
        return {
            k: grads_to_tree(v, grads_by_path, prefix + (k,))
            for k, v in template.items()
        }
    return grads_by_path[prefix]


def pretrain_step(wf, params, provider, geometry, electrons, opt_state, lr):
    """One least-squares step toward the provider's orbitals.

    Returns (params, opt_state, loss).  In restricted mode both spin
    blocks chase the same doubly-occupied orbital set by construction.
    """
    targets = provider.reference_matrix(electrons, geometry)
    tape = Tape()
    wrapped = tape.wrap_params(params)
    loss_node = orbital_loss(wf, wrapped, np.asarray(electrons), geometry, targets)
    grads = grads_to_tree(params, tape.backward(loss_node))
    new_params, new_state = adam_step(opt_state, params, grads, lr)
    return new_params, new_state, float(loss_node.value)


def run_pretraining(
    wf,
    params,
    provider,
    geometry,
    rng: Rng,
    *,
    iterations: int = 2000,
    lr: float = 3e-3,
    batch: int = 256,
    mcmc_steps: int = 5,
    init_step: float = 0.5,
    thermalize_sweeps: int = 200,
):
    """Sample from the provider's determinant density and fit the orbitals."""
    r_init, r_chain = rng.split(2)
    walkers = WalkerState(
        electrons=init_electrons(wf.mol, geometry, batch, r_init),
        step_size=init_step,
        geom_params=np.zeros(0),
    )

    def log_density(x):
        return provider.log_density(x, geometry)

    remaining = thermalize_sweeps
    while remaining > 0:
        walkers, _ = mcmc_step(log_density, walkers, min(10, remaining), r_chain, adapt_factor=1.1)
        remaining -= 10

    opt_state = AdamWState.init(params)
    losses = []
    for _ in range(int(iterations)):
        walkers, _ = mcmc_step(log_density, walkers, mcmc_steps, r_chain)
        params, opt_state, loss = pretrain_step(
            wf, params, provider, geometry, walkers.electrons, opt_state, lr
        )
        losses.append(loss)
    return params, losses
