"""Energy clipping, the VMC gradient estimator, and natural-gradient steps."""

from __future__ import annotations

import numpy as np

from ..numerics import cg_solve_info


def clip_local_energies(energies, clip_scale: float):
    """Clip to median +- scale * mean-absolute-deviation, per geometry.

    ``energies`` is (C, B); an infinite scale is the identity.
    """
    e = np.asarray(energies)
    if clip_scale <= 0:
        raise ValueError("clip scale must be positive (or infinite)")
    if not np.isfinite(clip_scale):
        return e
    med = np.median(e, axis=-1, keepdims=True)
    mad = np.mean(np.abs(e - med), axis=-1, keepdims=True)
    return np.clip(e, med - clip_scale * mad, med + clip_scale * mad)


def centered_deltas(e_clipped):
    """Per-geometry centered energies: the gradient weights of Alg-style VMC."""
    e = np.asarray(e_clipped)
    return e - e.mean(axis=-1, keepdims=True)


def vmc_gradient(score_fn, e_clipped, walkers):
    """Monte-Carlo gradient estimate E[(E_L - mean_c E_L) * score].

    ``score_fn(c, electrons)`` returns per-sample score rows (B, P) for
    geometry ``c``; the estimate averages over geometries and batch.
    """
    e = np.asarray(e_clipped)
    c, b = e.shape
    delta = centered_deltas(e)
    grad = None
    for ci in range(c):
        rows = np.asarray(score_fn(ci, walkers[ci].electrons))
        if rows.shape[0] != b:
            raise ValueError("score rows do not match the energy batch")
        contrib = rows.T @ delta[ci]
        grad = contrib if grad is None else grad + contrib
    return grad / (c * b)


def center_scores(scores, n_geometries: int):
    """Subtract the per-geometry mean score. ``scores`` is (C*B, P)."""
    s = np.asarray(scores)
    cb, p = s.shape
    b = cb // n_geometries
    s = s.reshape(n_geometries, b, p)
    s = s - s.mean(axis=1, keepdims=True)
    return s.reshape(cb, p)


def fisher_matvec(centered_scores):
    """Matrix-free centered-score covariance: F v = mean_i s_i (s_i . v)."""
    s = np.asarray(centered_scores)
    n = s.shape[0]

    def matvec(v):
        return s.T @ (s @ v) / n

    return matvec


def natural_gradient_update(
    grad_flat,
    centered_scores,
    damping_base: float,
    sigma_t: float,
    lr: float,
    cg_steps: int = 100,
):
    """Natural-gradient step lr * (F + damping I)^-1 grad via CG.

    ``centered_scores`` are per-geometry centered score rows (n, P);
    damping is ``damping_base * sigma_t``.  Returns (delta, cg_residual).
    """
    damping = float(damping_base) * float(sigma_t)
    x, residual = cg_solve_info(
        fisher_matvec(centered_scores), np.asarray(grad_flat), damping, cg_steps
    )
    return lr * x, residual
