"""High-resolution surface scans and equilibrium search."""

from __future__ import annotations

import numpy as np


def scan_axes(domain, resolution: float):
    """Per-free-parameter grids with spacing exactly ``resolution``."""
    free = domain.free_mask()
    n_free = int(free.sum())
    if n_free not in (1, 2):
        raise ValueError(f"scans support 1 or 2 free parameters, domain has {n_free}")
    axes = []
    for i in np.flatnonzero(free):
        lo, hi = domain.lower[i], domain.upper[i]
        count = int(np.floor((hi - lo) / resolution + 1e-9)) + 1
        axes.append((int(i), lo + resolution * np.arange(count)))
    return axes


def find_minimum(energy_fn, domain, resolution: float):
    """Dense 64-bit scan plus local quadratic refinement.

    ``energy_fn`` maps a parameter batch (n, P) to energies (n,).  Returns
    (minima, energy): ``minima`` is a list of parameter vectors; more than
    one entry means the grid minimum was exactly tied (flat surface).
    """
    axes = scan_axes(domain, resolution)
    base = domain.lower.astype(np.float64).copy()
    free_idx = [i for i, _ in axes]
    grids = np.meshgrid(*[vals for _, vals in axes], indexing="ij")
    flat = [g.ravel() for g in grids]
    n_points = flat[0].size
    params = np.tile(base, (n_points, 1))
    for (i, _), vals in zip(axes, flat):
        params[:, i] = vals
    energies = np.asarray(energy_fn(params), dtype=np.float64)
    if energies.shape != (n_points,):
        raise ValueError("energy function returned the wrong shape")

    e_min = energies.min()
    tied = np.flatnonzero(energies == e_min)
    if len(tied) > 1:
        return [params[i].copy() for i in tied], float(e_min)

    best = int(tied[0])
    shape = tuple(len(vals) for _, vals in axes)
    multi = np.unravel_index(best, shape)
    e_grid = energies.reshape(shape)

    refined = params[best].copy()
    for d, (i, vals) in enumerate(axes):
        k = multi[d]
        if 0 < k < len(vals) - 1:
            idx_m = list(multi)
            idx_p = list(multi)
            idx_m[d] = k - 1
            idx_p[d] = k + 1
            f0 = e_grid[multi]
            fm = e_grid[tuple(idx_m)]
            fp = e_grid[tuple(idx_p)]
            denom = fp - 2 * f0 + fm
            if denom > 0:
                shift = 0.5 * (fm - fp) / denom * resolution
                refined[i] = np.clip(vals[k] + shift, vals[k - 1], vals[k + 1])
    e_refined = float(np.asarray(energy_fn(refined[None]))[0])
    if e_refined <= e_min:
        return [refined], e_refined
    return [params[best].copy()], float(e_min)
