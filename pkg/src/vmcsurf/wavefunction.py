"""Neural wave function with doubly-occupied restricted orbitals.

The model follows a fixed pipeline: per-electron and per-pair feature
embedding, a stack of interaction layers whose weights depend only on
spin equality, dense orbital matrices with nucleus-centered exponential
envelopes, and a permutation-invariant multiplicative log-amplitude
term.  Everything is written against the registered primitives so one
implementation serves value evaluation, exact electron-coordinate
derivative propagation, and reverse-mode parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .molecule import Frame, Geometry, Molecule, identity_frame
from .numerics import Rng, Tape, ops, seed_duals, value_of
from .numerics.autodiff import Dual

# Output standard deviations of the activations under unit-normal input;
# dividing by these keeps per-layer feature variance near one.
SILU_UNIT_NORMAL_STD = 0.5595384678415070
TANH_UNIT_NORMAL_STD = 0.6279287303491067


@dataclass(frozen=True)
class WfConfig:
    """Hyperparameters of the wave function model."""

    single_width: int = 256
    pair_width: int = 32
    n_layers: int = 4
    n_determinants: int = 16
    n_jastrow_layers: int = 3
    jastrow_width: int = 64
    nuclei_embed_dim: int = 64
    restricted: bool = True
    dense_orbitals: bool = True
    activation: str = "silu"
    activation_rescale: bool = True
    zero_bias_init: bool = True
    envelope_sigma_init: float = 1.0

    def __post_init__(self):
        for name in ("single_width", "pair_width", "n_layers", "n_determinants",
                     "n_jastrow_layers", "jastrow_width", "nuclei_embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.activation not in ("silu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")


def inverse_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


def _orthogonal(rng: Rng, shape, dtype):
    rows, cols = shape
    n = max(rows, cols)
    a = rng.gen.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return np.asarray(q[:rows, :cols], dtype=dtype)


class WaveFunction:
    """Binds a configuration and molecule; parameters stay external."""

    def __init__(self, config: WfConfig, molecule: Molecule):
        if config.restricted and not molecule.closed_shell:
            raise ValueError("restricted mode requires n_up == n_down")
        self.cfg = config
        self.mol = molecule
        self.n_up = molecule.n_up
        self.n_down = molecule.n_down
        self.n = molecule.n_electrons
        self.m = molecule.n_nuclei
        c = 1.0
        if config.activation_rescale:
            c = SILU_UNIT_NORMAL_STD if config.activation == "silu" else TANH_UNIT_NORMAL_STD
        self._act_scale = 1.0 / c
        self._act_fn = ops.silu if config.activation == "silu" else ops.tanh

    # -- initialization ----------------------------------------------------

    def init_params(self, rng: Rng, dtype=np.float32) -> dict:
        cfg = self.cfg
        s, pw, zd = cfg.single_width, cfg.pair_width, cfg.nuclei_embed_dim
        streams = iter(rng.split(64))

        def nxt():
            return next(streams)

        def bias(shape):
            if cfg.zero_bias_init:
                return np.zeros(shape, dtype=dtype)
            return np.asarray(nxt().gen.standard_normal(shape), dtype=dtype)

        params = {
            "embed": {
                "w_feat": _orthogonal(nxt(), (4, zd), dtype),
                "b_feat": bias((zd,)),
                "w_out": _orthogonal(nxt(), (zd, s), dtype),
            },
            "z": np.zeros((self.m, zd), dtype=dtype),
            "layers": {},
            "det_weights": np.ones(cfg.n_determinants, dtype=dtype),
        }
        g_in = 4
        for layer in range(cfg.n_layers):
            params["layers"][str(layer)] = {
                "w_single": _orthogonal(nxt(), (s + 2 * g_in, s), dtype),
                "b_single": bias((s,)),
                "w_global": _orthogonal(nxt(), (2 * s, s), dtype),
                "w_pair_eq": _orthogonal(nxt(), (g_in, pw), dtype),
                "b_pair_eq": bias((pw,)),
                "w_pair_ne": _orthogonal(nxt(), (g_in, pw), dtype),
                "b_pair_ne": bias((pw,)),
            }
            g_in = pw
        params["orbitals"] = self._init_orbitals(nxt(), dtype)
        params["jastrow"] = self._init_jastrow(nxt(), dtype)
        return params

    def _orbital_block(self, rng, n_orb, zero, dtype):
        cfg = self.cfg
        k, s, m = cfg.n_determinants, cfg.single_width, self.m
        sig0 = inverse_softplus(cfg.envelope_sigma_init)
        if zero:
            w = np.zeros((k, n_orb, s), dtype=dtype)
        else:
            w = np.asarray(
                rng.gen.standard_normal((k, n_orb, s)) / np.sqrt(s), dtype=dtype
            )
        return {
            "w": w,
            "b": np.zeros((k, n_orb), dtype=dtype),
            "pi": np.ones((k, n_orb, m), dtype=dtype),
            "sigma": np.full((k, n_orb, m), sig0, dtype=dtype),
        }

    def _init_orbitals(self, rng, dtype):
        streams = iter(rng.split(8))
        if self.cfg.restricted:
            return {
                "eq": self._orbital_block(next(streams), self.n_up, False, dtype),
                "ne": self._orbital_block(next(streams), self.n_up, True, dtype),
            }
        return {
            "uu": self._orbital_block(next(streams), self.n_up, False, dtype),
            "dd": self._orbital_block(next(streams), self.n_down, False, dtype),
            "ud": self._orbital_block(next(streams), self.n_up, True, dtype),
            "du": self._orbital_block(next(streams), self.n_down, True, dtype),
        }

    def _init_jastrow(self, rng, dtype):
        cfg = self.cfg
        streams = iter(rng.split(cfg.n_jastrow_layers))
        layers = {}
        dims = [cfg.single_width] + [cfg.jastrow_width] * (cfg.n_jastrow_layers - 1) + [1]
        for i in range(cfg.n_jastrow_layers):
            d_in, d_out = dims[i], dims[i + 1]
            last = i == cfg.n_jastrow_layers - 1
            layers[str(i)] = {
                # final layer starts at zero so the multiplicative factor is 1
                "w": np.zeros((d_in, d_out), dtype=dtype)
                if last
                else _orthogonal(next(streams), (d_in, d_out), dtype),
                "b": np.zeros((d_out,), dtype=dtype),
            }
        return layers

    # -- forward pieces ------------------------------------------------------

    def _act(self, x):
        y = self._act_fn(x)
        if self._act_scale != 1.0:
            y = y * self._act_scale
        return y

    def _pair_mask(self, dtype):
        eye = np.eye(self.n, dtype=dtype)[None, :, :, None]
        return eye, 1.0 - eye

    def embed(self, params, electrons, geometry: Geometry, frame: Frame):
        """First-layer electron features h1 (B,N,S) and pair features g1.

        Also returns electron-nucleus distances for the envelopes.
        """
        pos = np.asarray(geometry.positions, dtype=value_of(electrons).dtype)
        rot = np.asarray(frame.rotation, dtype=pos.dtype)

        e4 = ops.reshape(electrons, (-1, self.n, 1, 3))
        diff = e4 - pos[None, None, :, :]
        drot = ops.matmul(diff, rot)
        r2 = ops.asum(ops.mul(drot, drot), axis=-1, keepdims=True)
        r = ops.sqrt(r2)
        feat = ops.concat([drot, r], axis=-1)  # (B,N,M,4)

        emb = params["embed"]
        z = ops.reshape(params["z"], (1, 1, self.m, -1))
        u = ops.matmul(feat, emb["w_feat"]) + emb["b_feat"] + z
        t = ops.tanh(u)
        h1 = ops.asum(ops.matmul(t, emb["w_out"]), axis=2)  # (B,N,S)

        ei = ops.reshape(electrons, (-1, self.n, 1, 3))
        ej = ops.reshape(electrons, (-1, 1, self.n, 3))
        ediff = ei - ej
        erot = ops.matmul(ediff, rot)
        eye, off = self._pair_mask(pos.dtype)
        d2 = ops.asum(ops.mul(erot, erot), axis=-1, keepdims=True)
        dist = ops.sqrt(d2 + eye) * off  # exact zeros on the diagonal
        g1 = ops.concat([erot, dist], axis=-1)  # (B,N,N,4)

        r_en = ops.reshape(r, (-1, self.n, self.m))
        return h1, g1, r_en, t

    def _spin_masks(self, dtype):
        nu, n = self.n_up, self.n
        up = np.zeros((1, n, 1), dtype=dtype)
        up[:, :nu] = 1.0
        dn = 1.0 - up
        eq = up[:, :, None, :] * up[:, None, :, :] + dn[:, :, None, :] * dn[:, None, :, :]
        return up, dn, eq, 1.0 - eq

    def interaction_layer(self, lp, h, g):
        """One update of single and pair streams (spin-equality weights).

        Spin sectors are selected with constant 0/1 masks rather than
        slicing, which keeps the traced op count low.
        """
        nu = self.n_up
        dtype = value_of(h).dtype
        m_up, m_dn, m_eq, m_ne = self._spin_masks(dtype)

        sum_from_up = ops.asum(ops.take(g, (slice(None), slice(None), slice(0, nu))), axis=2)
        sum_from_dn = ops.asum(ops.take(g, (slice(None), slice(None), slice(nu, None))), axis=2)
        same = sum_from_up * m_up + sum_from_dn * m_dn
        opp = sum_from_dn * m_up + sum_from_up * m_dn
        single_in = ops.concat([h, same, opp], axis=-1)
        pre = ops.matmul(single_in, lp["w_single"]) + lp["b_single"]

        h_up = ops.asum(h * m_up, axis=1, keepdims=True)
        h_dn = ops.asum(h * m_dn, axis=1, keepdims=True)
        glob_up = ops.matmul(ops.concat([h_up, h_dn], axis=-1), lp["w_global"])
        glob_dn = ops.matmul(ops.concat([h_dn, h_up], axis=-1), lp["w_global"])
        h_new = self._act(pre + glob_up * m_up + glob_dn * m_dn)

        pair_eq = ops.matmul(g, lp["w_pair_eq"]) + lp["b_pair_eq"]
        pair_ne = ops.matmul(g, lp["w_pair_ne"]) + lp["b_pair_ne"]
        g_new = self._act(pair_eq * m_eq + pair_ne * m_ne)
        return h_new, g_new

    def final_embeddings(self, params, electrons, geometry, frame, collect=None):
        h, g, r_en, t_embed = self.embed(params, electrons, geometry, frame)
        if collect is not None:
            collect.append(("embed_tanh", t_embed))
        for layer in range(self.cfg.n_layers):
            h, g = self.interaction_layer(params["layers"][str(layer)], h, g)
            if collect is not None:
                collect.append((f"h_{layer}", h))
                collect.append((f"g_{layer}", g))
        return h, r_en

    def _orbital_blocks(self, params):
        orb = params["orbitals"]
        if self.cfg.restricted:
            return {"uu": orb["eq"], "dd": orb["eq"], "ud": orb["ne"], "du": orb["ne"]}
        return orb

    def _block(self, blk, h_cols, r_cols):
        """(B,K,No,Nj) orbital entries for one spin block."""
        k = self.cfg.n_determinants
        n_orb = value_of(blk["w"]).shape[1]
        n_cols = value_of(r_cols).shape[1]
        pre = ops.einsum("bjd,kid->bkij", h_cols, blk["w"])
        pre = pre + ops.reshape(blk["b"], (1, k, n_orb, 1))
        sig = ops.softplus(blk["sigma"])  # positivity transform
        sig5 = ops.reshape(sig, (1, k, n_orb, 1, self.m))
        r5 = ops.reshape(r_cols, (-1, 1, 1, n_cols, self.m))
        expo = ops.exp(-(sig5 * r5))
        env = ops.einsum("kim,bkijm->bkij", blk["pi"], expo)
        return ops.mul(pre, env)

    def build_orbitals(self, params, h, r_en, return_blocks=False):
        """Dense (B,K,N,N) orbital matrices, or per-spin diagonal blocks."""
        nu = self.n_up
        h_up = ops.take(h, (slice(None), slice(0, nu)))
        h_dn = ops.take(h, (slice(None), slice(nu, None)))
        r_up = ops.take(r_en, (slice(None), slice(0, nu)))
        r_dn = ops.take(r_en, (slice(None), slice(nu, None)))
        blocks = self._orbital_blocks(params)
        phi_uu = self._block(blocks["uu"], h_up, r_up)
        phi_dd = self._block(blocks["dd"], h_dn, r_dn)
        if not self.cfg.dense_orbitals or return_blocks:
            return phi_uu, phi_dd
        phi_ud = self._block(blocks["ud"], h_dn, r_dn)
        phi_du = self._block(blocks["du"], h_up, r_up)
        top = ops.concat([phi_uu, phi_ud], axis=3)
        bottom = ops.concat([phi_du, phi_dd], axis=3)
        return ops.concat([top, bottom], axis=2)

    def jastrow(self, params, h, collect=None):
        """Permutation-invariant log-amplitude term: sum_i MLP(h_i)."""
        x = h
        n_layers = self.cfg.n_jastrow_layers
        for i in range(n_layers):
            lp = params["jastrow"][str(i)]
            x = ops.matmul(x, lp["w"]) + lp["b"]
            if i < n_layers - 1:
                x = self._act(x)
                if collect is not None:
                    collect.append((f"jastrow_{i}", x))
        per_electron = ops.reshape(x, (-1, self.n))
        return ops.asum(per_electron, axis=1, sort=True)

    # -- public evaluation ---------------------------------------------------

    def log_psi(self, params, electrons, geometry, frame=None, collect=None):
        """Sign and log-magnitude of the wave function, per sample."""
        frame = frame or identity_frame()
        h, r_en = self.final_embeddings(params, electrons, geometry, frame, collect)
        j = self.jastrow(params, h, collect)
        if self.cfg.dense_orbitals:
            mats = self.build_orbitals(params, h, r_en)
            signs, logs = ops.slogdet(mats)
        else:
            phi_uu, phi_dd = self.build_orbitals(params, h, r_en)
            s_u, l_u = ops.slogdet(phi_uu)
            s_d, l_d = ops.slogdet(phi_dd)
            signs, logs = s_u * s_d, l_u + l_d
        sign, log_sum = ops.signed_logsumexp(logs, signs, params["det_weights"])
        return sign, log_sum + j

    def log_psi_derivatives(self, params, electrons, geometry, frame=None):
        """log|psi| with its exact gradient and Laplacian trace.

        Returns (log_abs (B,), grad (B,N,3), laplacian_sum (B,)).
        """
        elec = np.asarray(electrons)
        b = elec.shape[0]
        flat = elec.reshape(b, self.n * 3)
        dual_flat = seed_duals(flat)
        dual_elec = ops.reshape(dual_flat, (b, self.n, 3))
        _, out = self.log_psi(params, dual_elec, geometry, frame)
        if not isinstance(out, Dual):
            raise TypeError("wave function did not propagate derivatives")
        grad = np.moveaxis(out.jac, 0, -1).reshape(b, self.n, 3)
        return out.value, grad, out.lap

    def log_psi_scores(self, params, electrons, geometry, frame=None):
        """Per-sample parameter gradients of log|psi| (the score function).

        Returns (log_abs (B,), grads {path: (B, *shape)}).
        """
        elec = np.asarray(electrons)
        tape = Tape(sample_size=elec.shape[0])
        wrapped = tape.wrap_params(params)
        _, out = self.log_psi(wrapped, tape.input(elec, sample=True), geometry, frame)
        grads = tape.backward(out)
        return out.value, grads

    def dead_neuron_fraction(self, params, electrons, geometry, frame=None) -> float:
        """Fraction of hidden channels constant across a batch (std < 1e-6)."""
        elec = np.asarray(electrons)
        if elec.shape[0] < 2:
            raise ValueError("dead-neuron diagnostic needs a batch of at least 2")
        collect = []
        self.log_psi(params, elec, geometry, frame, collect=collect)
        dead = total = 0
        for _, act in collect:
            arr = np.asarray(act)
            flat = arr.reshape(-1, arr.shape[-1])
            std = flat.std(axis=0)
            dead += int(np.sum(std < 1e-6))
            total += arr.shape[-1]
        return dead / total if total else 0.0
