"""Molecular systems, parametrized geometry domains, and datasets.

Coordinates are in bohr throughout; angles in the domain descriptions are
degrees.  Every built-in system ships its training domain and an
evaluation grid of parameter vectors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .numerics import Rng

MIN_NUCLEAR_SEPARATION = 1e-6

_SYMBOLS = {
    "H": 1, "He": 2, "Li": 3, "Be": 4, "B": 5,
    "C": 6, "N": 7, "O": 8, "F": 9, "Ne": 10,
}
_NUMBERS = {v: k for k, v in _SYMBOLS.items()}

# standard atomic masses, used only for center-of-mass placement
_MASSES = {1: 1.007825, 3: 7.016003, 7: 14.003074, 9: 18.998403}


@dataclass(frozen=True)
class Molecule:
    """Nuclear charges and spin-resolved electron counts."""

    charges: np.ndarray
    n_up: int
    n_down: int

    def __post_init__(self):
        object.__setattr__(self, "charges", np.asarray(self.charges, dtype=int))
        if self.n_up < self.n_down:
            raise ValueError("spin convention requires n_up >= n_down")

    @property
    def n_electrons(self) -> int:
        return self.n_up + self.n_down

    @property
    def n_nuclei(self) -> int:
        return len(self.charges)

    @property
    def total_charge(self) -> int:
        return int(self.charges.sum()) - self.n_electrons

    @property
    def closed_shell(self) -> bool:
        return self.n_up == self.n_down


@dataclass(frozen=True)
class Geometry:
    """Nuclear positions, shape (M, 3), bohr."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (M, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("non-finite nuclear coordinates")
        if len(pos) > 1:
            d = np.linalg.norm(pos[:, None] - pos[None, :], axis=-1)
            d = d + np.eye(len(pos))
            if d.min() <= MIN_NUCLEAR_SEPARATION:
                raise ValueError("coincident nuclei")
        object.__setattr__(self, "positions", pos)


@dataclass(frozen=True)
class Frame:
    """A proper rotation fixing the model's working coordinate axes."""

    rotation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        if rot.shape != (3, 3):
            raise ValueError("frame rotation must be 3x3")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-10):
            raise ValueError("frame is not orthogonal")
        if np.linalg.det(rot) < 0:
            raise ValueError("frame is not a proper rotation")
        object.__setattr__(self, "rotation", rot)


def identity_frame() -> Frame:
    return Frame(np.eye(3))


@dataclass(frozen=True)
class GeometryDomain:
    """A box of named parameters with a deterministic map to geometries."""

    names: tuple
    lower: np.ndarray
    upper: np.ndarray
    walk_scales: np.ndarray
    builder: Callable = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        for attr in ("lower", "upper", "walk_scales"):
            object.__setattr__(self, attr, np.asarray(getattr(self, attr), dtype=np.float64))
        if not (len(self.names) == len(self.lower) == len(self.upper) == len(self.walk_scales)):
            raise ValueError("domain arrays must align with parameter names")
        if np.any(self.upper < self.lower):
            raise ValueError("empty parameter interval")

    @property
    def n_params(self) -> int:
        return len(self.names)

    def contains(self, params) -> bool:
        p = np.asarray(params, dtype=np.float64)
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))

    def build(self, params) -> Geometry:
        p = np.asarray(params, dtype=np.float64)
        if p.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {p.shape}")
        return self.builder(p)

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def free_mask(self) -> np.ndarray:
        return self.upper > self.lower


def reflect_into_interval(x, lo, hi):
    """Fold a real value into [lo, hi] by mirror reflection at both ends."""
    if hi == lo:
        return lo
    width = hi - lo
    y = np.mod(x - lo, 2.0 * width)
    if y > width:
        y = 2.0 * width - y
    return lo + y


def geometry_walk(domain: GeometryDomain, current, rng: Rng):
    """One Gaussian random-walk step in parameter space, reflected at the box."""
    p = np.asarray(current, dtype=np.float64)
    if not domain.contains(p):
        raise ValueError(f"current parameters {p} outside the domain box")
    step = domain.walk_scales * rng.gen.standard_normal(domain.n_params)
    raw = p + step
    out = np.array(
        [
            reflect_into_interval(raw[i], domain.lower[i], domain.upper[i])
            for i in range(domain.n_params)
        ]
    )
    return out


def nuclear_repulsion(geometry: Geometry, charges) -> float:
    """Pairwise Coulomb repulsion of the nuclei, in hartree.

    Pair contributions are summed in sorted order so the result is
    independent of nucleus numbering.
    """
    pos = geometry.positions
    z = np.asarray(charges, dtype=np.float64)
    m = len(pos)
    if m < 2:
        return 0.0
    terms = []
    for a in range(m):
        for b in range(a + 1, m):
            d = np.linalg.norm(pos[a] - pos[b])
            if d <= MIN_NUCLEAR_SEPARATION:
                raise ValueError("coincident nuclei")
            terms.append(z[a] * z[b] / d)
    return float(np.sum(np.sort(np.asarray(terms))))


def canonical_frame(geometry: Geometry, charges) -> Frame:
    """Principal-axis frame of the charge-weighted nuclear distribution.

    Signs are fixed by the charge-weighted third moment along each axis;
    degenerate cases (single atoms, symmetric or collinear arrangements)
    fall back to the identity.
    """
    pos = geometry.positions
    z = np.asarray(charges, dtype=np.float64)
    if len(pos) < 2:
        return identity_frame()
    w = z / z.sum()
    center = (w[:, None] * pos).sum(axis=0)
    rel = pos - center
    cov = (w[:, None, None] * rel[:, :, None] * rel[:, None, :]).sum(axis=0)
    evals, evecs = np.linalg.eigh(cov)
    scale = max(float(evals[-1]), 1e-12)
    gaps = np.diff(evals)
    if np.any(gaps < 1e-8 * scale):
        return identity_frame()
    skews = np.einsum("m,mk->k", w, (rel @ evecs) ** 3)
    decisive = np.abs(skews) > 1e-10 * scale**1.5
    # one sign may stay ambiguous (e.g. the plane normal of a 3-atom
    # geometry); right-handedness resolves it.  Two or more ambiguities
    # mean a genuinely symmetric arrangement.
    if int(decisive.sum()) < 2:
        return identity_frame()
    evecs = evecs * np.where(decisive, np.sign(skews), 1.0)
    if np.linalg.det(evecs) < 0:
        if decisive.all():
            k = int(np.argmin(np.abs(skews)))
        else:
            k = int(np.argmin(decisive))
        evecs[:, k] = -evecs[:, k]
    return Frame(evecs)


# ---------------------------------------------------------------------------
# built-in systems


def _diatomic_builder(charges):
    def build(p):
        r = float(p[0])
        pos = np.array([[0.0, 0.0, -r / 2], [0.0, 0.0, r / 2]])
        return Geometry(pos)

    return build


def _h4_circle_builder(radius=3.2843):
    # four hydrogens on a circle; the central angle theta opens the rectangle
    def build(p):
        half = np.deg2rad(float(p[0])) / 2.0
        x, y = radius * np.cos(half), radius * np.sin(half)
        pos = np.array([[x, y, 0.0], [x, -y, 0.0], [-x, y, 0.0], [-x, -y, 0.0]])
        return Geometry(pos)

    return build


def _chain_builder(n_atoms):
    def build(p):
        a = float(p[0])
        zs = (np.arange(n_atoms) - (n_atoms - 1) / 2.0) * a
        pos = np.zeros((n_atoms, 3))
        pos[:, 2] = zs
        return Geometry(pos)

    return build


def _h2hf_builder():
    m_h, m_f = _MASSES[1], _MASSES[9]

    def build(p):
        r1, r2, big_r, th1, th2, phi = [float(v) for v in p]
        t1, t2, ph = np.deg2rad(th1), np.deg2rad(th2), np.deg2rad(phi)
        u1 = np.array([np.sin(t1), 0.0, np.cos(t1)])
        u2 = np.array([np.sin(t2) * np.cos(ph), np.sin(t2) * np.sin(ph), np.cos(t2)])
        com = np.array([0.0, 0.0, big_r])
        h_a = -0.5 * r1 * u1
        h_b = 0.5 * r1 * u1
        h_c = com + (m_f / (m_h + m_f)) * r2 * u2
        f = com - (m_h / (m_h + m_f)) * r2 * u2
        return Geometry(np.stack([h_a, h_b, h_c, f]))

    return build


def _scaled_builder(base_positions):
    base = np.asarray(base_positions, dtype=np.float64)
    centroid = base.mean(axis=0)

    def build(p):
        return Geometry(centroid + float(p[0]) * (base - centroid))

    return build


def _grid(lo, hi, n):
    return np.linspace(lo, hi, n)[:, None]


def build_dataset(system_name: str, geometry_file=None, grid_file=None):
    """Molecule, training domain, and evaluation grid for a named system.

    ``custom-from-file`` reads the molecule from ``geometry_file`` (plain
    text; see :func:`read_geometry_file`) and exposes a uniform breathing
    parameter ``scale`` about the loaded structure.  An optional
    ``grid_file`` (CSV, one named column per domain parameter) overrides
    the evaluation grid for any system.
    """
    name = system_name.strip()
    key = name.lower()
    if key == "h2":
        mol = Molecule([1, 1], 1, 1)
        dom = GeometryDomain(("r",), [1.0], [2.4], [0.1], _diatomic_builder((1, 1)))
        grid = _grid(1.0, 2.4, 16)
    elif key == "li2":
        mol = Molecule([3, 3], 3, 3)
        dom = GeometryDomain(("r",), [3.5], [14.0], [0.3], _diatomic_builder((3, 3)))
        grid = _grid(3.5, 14.0, 32)
    elif key == "n2":
        mol = Molecule([7, 7], 7, 7)
        dom = GeometryDomain(("r",), [1.7], [4.2], [0.1], _diatomic_builder((7, 7)))
        grid = _grid(1.7, 4.2, 16)
    elif key == "h4":
        mol = Molecule([1, 1, 1, 1], 2, 2)
        dom = GeometryDomain(("theta",), [85.0], [95.0], [0.5], _h4_circle_builder())
        grid = _grid(85.0, 95.0, 16)
    elif key == "h4+":
        mol = Molecule([1, 1, 1, 1], 2, 1)
        dom = GeometryDomain(("theta",), [85.0], [95.0], [0.5], _h4_circle_builder())
        grid = _grid(85.0, 95.0, 16)
    elif key == "h10":
        mol = Molecule([1] * 10, 5, 5)
        dom = GeometryDomain(("a",), [1.2], [3.6], [0.1], _chain_builder(10))
        grid = _grid(1.2, 3.6, 13)
    elif key == "h2-hf":
        mol = Molecule([1, 1, 1, 9], 6, 6)
        dom = GeometryDomain(
            ("r1", "r2", "R", "theta1", "theta2", "phi"),
            [1.2, 1.2, 3.0, 0.0, 0.0, 0.0],
            [1.8, 1.8, 8.0, 180.0, 180.0, 180.0],
            [0.05, 0.05, 0.25, 10.0, 10.0, 10.0],
            _h2hf_builder(),
        )
        # 64 regular grid points over the six-dimensional box: two levels
        # per dimension at 1/4 and 3/4 of each interval
        lo, hi = dom.lower, dom.upper
        levels = [np.array([l + 0.25 * (h - l), l + 0.75 * (h - l)]) for l, h in zip(lo, hi)]
        mesh = np.meshgrid(*levels, indexing="ij")
        grid = np.stack([m.ravel() for m in mesh], axis=-1)
    elif key == "custom-from-file":
        if geometry_file is None:
            raise ValueError("custom-from-file requires a geometry file")
        charges, positions, spins = read_geometry_file(geometry_file)
        if spins is None:
            n_elec = int(np.sum(charges))
            spins = ((n_elec + 1) // 2, n_elec // 2)
        mol = Molecule(charges, *spins)
        dom = GeometryDomain(("scale",), [0.8], [1.2], [0.02], _scaled_builder(positions))
        grid = _grid(0.8, 1.2, 9)
    else:
        raise ValueError(f"unknown system name: {system_name!r}")

    if grid_file is not None:
        grid = read_param_grid_csv(grid_file, dom)
    return mol, dom, np.asarray(grid, dtype=np.float64)


# ---------------------------------------------------------------------------
# file formats


def read_geometry_file(path):
    """Plain-text geometry: first line M, then M lines ``symbol-or-Z x y z``.

    Coordinates are bohr.  An optional trailing line ``spins n_up n_down``
    sets the electron counts.  Returns (charges, positions, spins-or-None).
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty geometry file")
    try:
        m = int(lines[0])
    except ValueError as exc:
        raise ValueError(f"{path}: first line must be the atom count") from exc
    if m < 1:
        raise ValueError(f"{path}: atom count must be positive")
    body = lines[1:]
    spins = None
    if len(body) == m + 1:
        tail = body[-1].split()
        if len(tail) != 3 or tail[0].lower() != "spins":
            raise ValueError(f"{path}: malformed trailing spin line")
        spins = (int(tail[1]), int(tail[2]))
        body = body[:-1]
    if len(body) != m:
        raise ValueError(f"{path}: expected {m} atom lines, found {len(body)}")
    charges, positions = [], []
    for i, ln in enumerate(body):
        tokens = ln.split()
        if len(tokens) != 4:
            raise ValueError(f"{path}: atom line {i + 1} must be 'symbol-or-Z x y z'")
        sym = tokens[0]
        if sym in _SYMBOLS:
            charges.append(_SYMBOLS[sym])
        else:
            try:
                charges.append(int(sym))
            except ValueError as exc:
                raise ValueError(f"{path}: unknown element {sym!r}") from exc
        try:
            positions.append([float(t) for t in tokens[1:]])
        except ValueError as exc:
            raise ValueError(f"{path}: bad coordinates on atom line {i + 1}") from exc
    pos = np.asarray(positions)
    Geometry(pos)  # validates separation and finiteness
    return np.asarray(charges, dtype=int), pos, spins


def write_geometry_file(path, charges, positions, spins=None):
    charges = np.asarray(charges, dtype=int)
    positions = np.asarray(positions, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write(f"{len(charges)}\n")
        for z, xyz in zip(charges, positions):
            sym = _NUMBERS.get(int(z), str(int(z)))
            coords = " ".join(repr(float(v)) for v in xyz)
            fh.write(f"{sym} {coords}\n")
        if spins is not None:
            fh.write(f"spins {spins[0]} {spins[1]}\n")


def read_param_grid_csv(path, domain: GeometryDomain):
    """CSV with exactly one named column per domain parameter (strict)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty grid file")
        header = [h.strip() for h in reader.fieldnames]
        unknown = set(header) - set(domain.names)
        if unknown:
            raise ValueError(f"{path}: unknown grid columns {sorted(unknown)}")
        missing = set(domain.names) - set(header)
        if missing:
            raise ValueError(f"{path}: missing grid columns {sorted(missing)}")
        rows = []
        for i, row in enumerate(reader):
            try:
                rows.append([float(row[name]) for name in domain.names])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: bad value in grid row {i + 1}") from exc
    if not rows:
        return np.zeros((0, domain.n_params))
    return np.asarray(rows, dtype=np.float64)


def write_param_grid_csv(path, domain: GeometryDomain, grid):
    grid = np.asarray(grid, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(domain.names)
        for row in grid:
            writer.writerow([repr(float(v)) for v in row])
