"""Directional message-passing energy regressor over nuclei.

The energy is built exclusively from interatomic distances and angles
inside a hard cutoff, so translation, rotation and reflection invariance
hold by construction.  Every reduction over atom axes sums its operands
in value-sorted order, making the output exactly invariant under
permutations of identical nuclei.  The model runs in float64; its cost
is negligible next to the sampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..metagnn import bessel_rbf, chebyshev_angles
from ..numerics import Rng, Tape, ops
from ..wavefunction import SILU_UNIT_NORMAL_STD

_MAX_Z = 10


@dataclass(frozen=True)
class SurrogateConfig:
    cutoff: float = 10.0
    n_rbf: int = 6
    n_sbf: int = 7
    n_blocks: int = 4
    basis_embed: int = 8
    interaction_dim: int = 64
    out_dim: int = 256
    n_layers_before_skip: int = 1
    n_layers_after_skip: int = 2
    n_layers_out: int = 3

    def __post_init__(self):
        if self.cutoff <= 0:
            raise ValueError("cutoff must be positive")
        for name in ("n_rbf", "n_sbf", "n_blocks", "basis_embed", "interaction_dim", "out_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


class SurrogateModel:
    """Binds the architecture to a fixed set of nuclear charges."""

    def __init__(self, config: SurrogateConfig, charges):
        self.cfg = config
        self.charges = np.asarray(charges, dtype=int)
        self.m = len(self.charges)
        self._act_scale = 1.0 / SILU_UNIT_NORMAL_STD
        onehot = np.zeros((self.m, _MAX_Z + 1))
        onehot[np.arange(self.m), self.charges] = 1.0
        self._onehot = onehot

    def _act(self, x):
        return ops.silu(x) * self._act_scale

    def init_params(self, rng: Rng) -> dict:
        cfg = self.cfg
        d, f = cfg.interaction_dim, cfg.basis_embed
        streams = iter(rng.split(128))

        def dense(shape):
            return next(streams).gen.standard_normal(shape) / np.sqrt(shape[0])

        params = {
            "atom_embed": dense((_MAX_Z + 1, d)),
            "edge_embed": {
                "w_rbf": dense((cfg.n_rbf, f)),
                "w": dense((2 * d + f, d)),
                "b": np.zeros(d),
            },
            "blocks": {},
            "out": {},
            "z_ref": np.zeros(_MAX_Z + 1),
        }
        for t in range(cfg.n_blocks):
            blk = {
                "w_down": dense((d, f)),
                "w_basis": dense((cfg.n_rbf * cfg.n_sbf, f)),
                "w_up": dense((f, d)),
                "before": {},
                "after": {},
            }
            for i in range(cfg.n_layers_before_skip):
                blk["before"][str(i)] = {"w": dense((d, d)), "b": np.zeros(d)}
            for i in range(cfg.n_layers_after_skip):
                blk["after"][str(i)] = {"w": dense((d, d)), "b": np.zeros(d)}
            params["blocks"][str(t)] = blk
        dims = [d] + [cfg.out_dim] * (cfg.n_layers_out - 1) + [1]
        params["out"]["gate"] = dense((cfg.n_rbf, d))
        for i in range(cfg.n_layers_out):
            last = i == cfg.n_layers_out - 1
            params["out"][str(i)] = {
                # zero-initialized head: the initial surface is flat at the
                # per-element reference offsets
                "w": np.zeros((dims[i], dims[i + 1])) if last else dense((dims[i], dims[i + 1])),
                "b": np.zeros(dims[i + 1]),
            }
        return params

    def features(self, positions):
        """Geometry-derived constants; positions is (G, M, 3) or (M, 3)."""
        pos = np.asarray(positions, dtype=np.float64)
        if pos.ndim == 2:
            pos = pos[None]
        g, m, _ = pos.shape
        if m != self.m:
            raise ValueError(f"expected {self.m} nuclei, got {m}")
        cfg = self.cfg
        diff = pos[:, :, None, :] - pos[:, None, :, :]  # [g, a, b] = a - b
        dist = np.linalg.norm(diff, axis=-1)
        eye = np.eye(m)[None]
        mask = ((dist < cfg.cutoff) & (eye == 0)).astype(np.float64)
        rbf = bessel_rbf(dist + eye, cfg.n_rbf, cfg.cutoff) * mask[..., None]
        if m >= 2:
            unit = diff / (dist + eye)[..., None]
            # angle at j between edges (j->i) and (j->k)
            cos = np.einsum("gijd,gkjd->gijk", unit, unit)
            cos = np.clip(cos, -1.0, 1.0)
            ang = chebyshev_angles(cos, cfg.n_sbf)  # (g, i, j, k, S)
            rbf_kj = np.transpose(rbf, (0, 2, 1, 3))[:, None]  # [g, 1, j, k, R]
            tri = rbf_kj[..., :, None] * ang[..., None, :]
            tri = tri.reshape(g, m, m, m, cfg.n_rbf * cfg.n_sbf)
            tri_mask = (
                mask[:, :, :, None]  # edge (j->i)
                * np.transpose(mask, (0, 2, 1))[:, None]  # edge (k->j)
                * (1.0 - eye)[:, :, None, :].transpose(0, 1, 3, 2)  # k != i
            )
            tri = tri * tri_mask[..., None]
        else:
            tri = np.zeros((g, m, m, m, cfg.n_rbf * cfg.n_sbf))
        return {"rbf": rbf, "tri": tri, "mask": mask[..., None], "n_geoms": g}

    def forward(self, params, feats):
        """Energies (G,) from precomputed features; traceable in params."""
        cfg = self.cfg
        g = feats["n_geoms"]
        m = self.m
        rbf, tri, mask = feats["rbf"], feats["tri"], feats["mask"]

        z = ops.matmul(self._onehot, params["atom_embed"])  # (M, D)
        zi = ops.reshape(z, (1, m, 1, -1)) + np.zeros((g, m, m, 1))
        zj = ops.reshape(z, (1, 1, m, -1)) + np.zeros((g, m, m, 1))
        ee = params["edge_embed"]
        rbf_emb = ops.matmul(rbf, ee["w_rbf"])
        e = self._act(ops.matmul(ops.concat([zi, zj, rbf_emb], axis=-1), ee["w"]) + ee["b"])
        e = e * mask

        for t in range(cfg.n_blocks):
            blk = params["blocks"][str(t)]
            pre = e
            for i in range(cfg.n_layers_before_skip):
                lp = blk["before"][str(i)]
                pre = self._act(ops.matmul(pre, lp["w"]) + lp["b"])
            q = ops.matmul(e, blk["w_down"])  # (G, K=a, J=b, F) edge (b->a)
            t_emb = ops.matmul(tri, blk["w_basis"])  # (G, I, J, K, F)
            q_kj = ops.transpose(q, (0, 2, 1, 3))  # [g, j, k, f]
            q5 = ops.reshape(q_kj, (g, 1, m, m, -1))
            s = ops.asum(ops.mul(t_emb, q5), axis=3, sort=True)  # sum over k
            s_up = ops.matmul(s, blk["w_up"])
            e = (e + self._act(pre + s_up)) * mask
            for i in range(cfg.n_layers_after_skip):
                lp = blk["after"][str(i)]
                e = (e + self._act(ops.matmul(e, lp["w"]) + lp["b"])) * mask

        gate = ops.matmul(rbf, params["out"]["gate"])
        agg = ops.asum(ops.mul(gate, e) * mask, axis=2, sort=True)  # (G, M, D)
        x = agg
        for i in range(cfg.n_layers_out):
            lp = params["out"][str(i)]
            x = ops.matmul(x, lp["w"]) + lp["b"]
            if i < cfg.n_layers_out - 1:
                x = self._act(x)
        per_atom = ops.reshape(x, (g, m))
        ref = ops.matmul(self._onehot, ops.reshape(params["z_ref"], (-1, 1)))
        per_atom = per_atom + ops.reshape(ref, (1, m))
        return ops.asum(per_atom, axis=1, sort=True)

    def energy(self, params, positions):
        """Plain evaluation: (G,) energies in hartree."""
        return np.asarray(self.forward(params, self.features(positions)))

    def loss_grads(self, params, positions, e_mean, sigma, sigma_floor):
        """Weighted-RMSE loss and its parameter gradients (one batch)."""
        from ..engine.pretrain import grads_to_tree

        feats = self.features(positions)
        tape = Tape()
        wrapped = tape.wrap_params(params)
        preds = self.forward(wrapped, feats)
        res = preds - np.asarray(e_mean)
        w = 1.0 / np.maximum(np.asarray(sigma), sigma_floor)
        q = ops.asum(ops.mul(res, res) * w) / float(len(e_mean))
        if float(q.value) <= 0.0:
            # exact fit: d(sqrt)/dq is undefined, take the zero subgradient
            from ..numerics import tree_zeros_like

            return 0.0, tree_zeros_like(params)
        loss = ops.sqrt(q)
        grads = grads_to_tree(params, tape.backward(loss))
        return float(loss.value), grads
