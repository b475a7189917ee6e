"""Message passing over nuclei that adapts wave-function parameters.

For each geometry the network emits per-nucleus embedding slots plus
additive offsets for the nucleus-indexed orbital parameters (envelopes,
orbital biases, determinant weights).  All output heads start at zero so
training begins from a geometry-neutral wave function.  Reductions over
nuclei run in value-sorted order, making outputs exactly equivariant
under permutations of identical nuclei.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .molecule import Geometry, Molecule
from .numerics import Rng, ops, value_of
from .wavefunction import SILU_UNIT_NORMAL_STD, WfConfig

_MAX_Z = 10


@dataclass(frozen=True)
class MetaGnnConfig:
    n_message_passes: int = 2
    node_dim: int = 64
    message_dim: int = 32
    n_rbf: int = 6
    n_sbf: int = 7
    mlp_depth: int = 2
    cutoff: float = 24.0

    def __post_init__(self):
        for name in ("n_message_passes", "node_dim", "message_dim", "n_rbf", "n_sbf", "mlp_depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class ParamAdaptation:
    """Per-geometry outputs: embedding slots and additive parameter offsets."""

    z: object
    envelope_pi: dict
    envelope_sigma: dict
    orbital_bias: dict
    det_weights: object


def bessel_rbf(d, n_rbf, cutoff, envelope_p=5):
    """Radial sine basis with a smooth polynomial cutoff (zero beyond it)."""
    d = np.asarray(d, dtype=np.float64)
    x = np.clip(d / cutoff, 1e-12, None)
    p = envelope_p
    env = (
        1.0
        - (p + 1) * (p + 2) / 2.0 * x**p
        + p * (p + 2) * x ** (p + 1)
        - p * (p + 1) / 2.0 * x ** (p + 2)
    )
    n = np.arange(1, n_rbf + 1)
    basis = np.sqrt(2.0 / cutoff) * np.sin(n * np.pi * x[..., None]) / (x[..., None] * cutoff)
    return np.where(x[..., None] < 1.0, env[..., None] * basis, 0.0)


def chebyshev_angles(cos_theta, n_sbf):
    """T_s(cos theta) = cos(s theta) for s = 0..n_sbf-1."""
    out = [np.ones_like(cos_theta), cos_theta]
    for _ in range(2, n_sbf):
        out.append(2.0 * cos_theta * out[-1] - out[-2])
    return np.stack(out[:n_sbf], axis=-1)


class MetaGnn:
    """Binds config, wave-function layout and molecule; params external."""

    def __init__(self, config: MetaGnnConfig, wf_config: WfConfig, molecule: Molecule):
        self.cfg = config
        self.wf_cfg = wf_config
        self.mol = molecule
        self.m = molecule.n_nuclei
        if wf_config.restricted:
            self.blocks = {"eq": molecule.n_up, "ne": molecule.n_up}
        else:
            self.blocks = {
                "uu": molecule.n_up,
                "dd": molecule.n_down,
                "ud": molecule.n_up,
                "du": molecule.n_down,
            }
        self._act_scale = 1.0 / SILU_UNIT_NORMAL_STD

    def _act(self, x):
        return ops.silu(x) * self._act_scale

    def init_params(self, rng: Rng, dtype=np.float32) -> dict:
        cfg = self.cfg
        nd, md = cfg.node_dim, cfg.message_dim
        k = self.wf_cfg.n_determinants
        streams = iter(rng.split(64))

        def dense(shape):
            fan_in = shape[0]
            return np.asarray(
                next(streams).gen.standard_normal(shape) / np.sqrt(fan_in), dtype=dtype
            )

        def mlp(d_in, d_out):
            dims = [d_in] + [d_out] * cfg.mlp_depth
            return {
                str(i): {"w": dense((dims[i], dims[i + 1])), "b": np.zeros(dims[i + 1], dtype=dtype)}
                for i in range(cfg.mlp_depth)
            }

        params = {
            "atom_embed": dense((_MAX_Z + 1, nd)),
            "w_rbf": dense((cfg.n_rbf, md)),
            "w_tri": dense((cfg.n_rbf * cfg.n_sbf, md)),
            "passes": {},
        }
        for t in range(cfg.n_message_passes):
            params["passes"][str(t)] = {
                "msg": mlp(2 * nd + md, md),
                "upd": mlp(nd + 2 * md, nd),
            }
        # all heads start at zero: adaptation is inert at initialization
        heads = {
            "z": np.zeros((nd, self.wf_cfg.nuclei_embed_dim), dtype=dtype),
            "det_weights": np.zeros((nd, k), dtype=dtype),
        }
        for name, n_orb in self.blocks.items():
            heads[f"pi_{name}"] = np.zeros((nd, k * n_orb), dtype=dtype)
            heads[f"sigma_{name}"] = np.zeros((nd, k * n_orb), dtype=dtype)
            heads[f"bias_{name}"] = np.zeros((nd, k * n_orb), dtype=dtype)
        params["heads"] = heads
        return params

    def _features(self, geometry: Geometry, dtype):
        cfg = self.cfg
        pos = np.asarray(geometry.positions, dtype=np.float64)
        m = self.m
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        off = 1.0 - np.eye(m)
        rbf = bessel_rbf(dist + np.eye(m), cfg.n_rbf, cfg.cutoff) * off[..., None]
        if m >= 3:
            unit = diff / (dist + np.eye(m))[..., None]
            cos = np.einsum("abk,cbk->abc", unit, unit)  # angle at b between a,c
            cos = np.clip(cos, -1.0, 1.0)
            ang = chebyshev_angles(cos, cfg.n_sbf)  # (a,b,c,S)
            tri_basis = rbf[:, :, None, :, None] * ang[..., None, :]  # (a,b,c,R,S)
            tri_basis = tri_basis.reshape(m, m, m, -1)
            tri_mask = (
                off[:, :, None] * off[None, :, :] * off[:, None, :]
            )  # a!=b, b!=c, a!=c
            tri_basis = tri_basis * tri_mask[..., None]
        else:
            tri_basis = np.zeros((m, m, m, cfg.n_rbf * cfg.n_sbf))
        return (
            rbf.astype(dtype),
            tri_basis.astype(dtype),
            off.astype(dtype)[..., None],
        )

    def _run_mlp(self, mlp_params, x):
        depth = self.cfg.mlp_depth
        for i in range(depth):
            lp = mlp_params[str(i)]
            x = ops.matmul(x, lp["w"]) + lp["b"]
            if i < depth - 1:
                x = self._act(x)
        return x

    def forward(self, params, geometry: Geometry) -> ParamAdaptation:
        """Per-geometry adaptation; traceable in the parameters."""
        cfg = self.cfg
        dtype = value_of(params["atom_embed"]).dtype
        rbf, tri_basis, off = self._features(geometry, dtype)
        m = self.m
        z_idx = np.asarray(self.mol.charges, dtype=int)
        onehot = np.zeros((m, _MAX_Z + 1), dtype=dtype)
        onehot[np.arange(m), z_idx] = 1.0
        x = ops.matmul(onehot, params["atom_embed"])  # (M, nd)

        edge_rbf = ops.matmul(rbf, params["w_rbf"])  # (M, M, md)
        tri = ops.matmul(tri_basis, params["w_tri"])  # (M, M, M, md)
        tri_per_node = ops.asum(ops.asum(tri, axis=2, sort=True), axis=0, sort=True)  # (M, md)

        for t in range(cfg.n_message_passes):
            pp = params["passes"][str(t)]
            xi = ops.reshape(x, (m, 1, -1)) + np.zeros((m, m, 1), dtype=dtype)
            xj = ops.reshape(x, (1, m, -1)) + np.zeros((m, m, 1), dtype=dtype)
            msg_in = ops.concat([xi, xj, edge_rbf], axis=-1)
            msg = self._run_mlp(pp["msg"], msg_in) * off
            agg = ops.asum(msg, axis=1, sort=True)  # (M, md)
            upd_in = ops.concat([x, agg, tri_per_node], axis=-1)
            x = x + self._run_mlp(pp["upd"], upd_in)

        heads = params["heads"]
        k = self.wf_cfg.n_determinants
        z = ops.matmul(x, heads["z"])
        pooled = ops.asum(x, axis=0, keepdims=True, sort=True)  # (1, nd)
        dw = ops.reshape(ops.matmul(pooled, heads["det_weights"]), (k,))

        env_pi, env_sigma, orb_bias = {}, {}, {}
        for name, n_orb in self.blocks.items():
            pi_flat = ops.matmul(x, heads[f"pi_{name}"])  # (M, K*No)
            sig_flat = ops.matmul(x, heads[f"sigma_{name}"])
            env_pi[name] = ops.transpose(
                ops.reshape(pi_flat, (m, k, n_orb)), (1, 2, 0)
            )  # (K, No, M)
            env_sigma[name] = ops.transpose(
                ops.reshape(sig_flat, (m, k, n_orb)), (1, 2, 0)
            )
            bias_pooled = ops.matmul(pooled, heads[f"bias_{name}"])
            orb_bias[name] = ops.reshape(bias_pooled, (k, n_orb))
        return ParamAdaptation(z, env_pi, env_sigma, orb_bias, dw)

    def apply_adaptation(self, base_params, adaptation: ParamAdaptation):
        """Offset the nucleus-indexed parameters; replace the z slots."""
        new = dict(base_params)
        new["z"] = adaptation.z
        new["det_weights"] = base_params["det_weights"] + adaptation.det_weights
        orbitals = {}
        for name, blk in base_params["orbitals"].items():
            if value_of(adaptation.envelope_pi[name]).shape != value_of(blk["pi"]).shape:
                raise ValueError(f"adaptation shape mismatch for orbital block {name!r}")
            orbitals[name] = {
                "w": blk["w"],
                "b": blk["b"] + adaptation.orbital_bias[name],
                "pi": blk["pi"] + adaptation.envelope_pi[name],
                # offsets act before the positivity transform
                "sigma": blk["sigma"] + adaptation.envelope_sigma[name],
            }
        new["orbitals"] = orbitals
        return new

    def adapt(self, gnn_params, base_params, geometry: Geometry):
        return self.apply_adaptation(base_params, self.forward(gnn_params, geometry))
