"""Dense numerical kernels: conjugate-gradient solver and friends."""

from __future__ import annotations

import numpy as np


def cg_solve(matvec, b, damping=0.0, max_iter=100):
    """Solve ``(A + damping * I) x = b`` by conjugate gradients.

    Runs exactly ``max_iter`` iterations with no convergence cut-off; the
    only early exit is an exactly zero residual, where further iterations
    are undefined.  ``matvec`` must represent a symmetric positive
    semi-definite operator.
    """
    x, _ = cg_solve_info(matvec, b, damping, max_iter)
    return x


def cg_solve_info(matvec, b, damping=0.0, max_iter=100):
    """Like :func:`cg_solve`, also returning the final residual norm."""
    b = np.asarray(b)
    if b.ndim != 1:
        raise ValueError(f"right-hand side must be a flat vector, got shape {b.shape}")
    damping = float(damping)

    def op(v):
        av = np.asarray(matvec(v))
        if av.shape != b.shape:
            raise ValueError(
                f"operator output shape {av.shape} does not match rhs {b.shape}"
            )
        return av + damping * v if damping != 0.0 else av

    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    for _ in range(int(max_iter)):
        if rs == 0.0:
            break
        ap = op(p)
        pap = float(p @ ap)
        if pap <= 0.0:
            # Numerical breakdown (operator not PD along p); stop cleanly.
            break
        alpha = rs / pap
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, float(np.sqrt(rs))
