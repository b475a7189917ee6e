import numpy as np
import pytest

from vmcsurf.molecule import (
    Frame,
    Geometry,
    GeometryDomain,
    Molecule,
    build_dataset,
    canonical_frame,
    geometry_walk,
    nuclear_repulsion,
    read_geometry_file,
    read_param_grid_csv,
    reflect_into_interval,
    write_geometry_file,
    write_param_grid_csv,
)
from vmcsurf.numerics import Rng


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# ---------------------------------------------------------------------------
# datasets


def test_li2_grid_spec():
    mol, dom, grid = build_dataset("Li2")
    assert mol.n_up == mol.n_down == 3
    assert grid.shape == (32, 1)
    assert grid[0, 0] == 3.5 and grid[-1, 0] == 14.0
    assert np.all(np.diff(grid[:, 0]) > 0)
    steps = np.diff(grid[:, 0])
    np.testing.assert_allclose(steps, steps[0], rtol=1e-12)


def test_h2hf_domain_bounds():
    mol, dom, grid = build_dataset("H2-HF")
    assert mol.n_electrons == 12 and mol.closed_shell
    by_name = dict(zip(dom.names, zip(dom.lower, dom.upper)))
    assert by_name["r1"] == (1.2, 1.8)
    assert by_name["r2"] == (1.2, 1.8)
    assert by_name["R"] == (3.0, 8.0)
    for angle in ("theta1", "theta2", "phi"):
        assert by_name[angle] == (0.0, 180.0)
    assert grid.shape == (64, 6)
    for p in grid[:5]:
        geo = dom.build(p)
        assert geo.positions.shape == (4, 3)


def test_h2_sixteen_point_grid_on_z_axis():
    mol, dom, grid = build_dataset("H2")
    assert grid.shape == (16, 1)
    assert grid[0, 0] == 1.0 and grid[-1, 0] == 2.4
    for r in grid[:, 0]:
        geo = dom.build([r])
        np.testing.assert_allclose(geo.positions[:, :2], 0.0, atol=1e-15)
        np.testing.assert_allclose(
            np.linalg.norm(geo.positions[0] - geo.positions[1]), r, rtol=1e-14
        )


def test_datasets_are_deterministic():
    g1 = build_dataset("H4")[2]
    g2 = build_dataset("H4")[2]
    np.testing.assert_array_equal(g1, g2)


def test_unknown_system_rejected():
    with pytest.raises(ValueError, match="unknown system"):
        build_dataset("He3")


def test_custom_from_file_round_trip(tmp_path):
    path = tmp_path / "geom.txt"
    charges = [1, 9]
    pos = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.7325]])
    write_geometry_file(path, charges, pos, spins=(5, 5))
    mol, dom, grid = build_dataset("custom-from-file", geometry_file=path)
    assert mol.n_up == mol.n_down == 5
    np.testing.assert_array_equal(mol.charges, charges)
    geo = dom.build([1.0])
    np.testing.assert_allclose(geo.positions, pos, atol=1e-15)

    grid_path = tmp_path / "grid.csv"
    write_param_grid_csv(grid_path, dom, np.array([[0.9], [1.1]]))
    grid2 = read_param_grid_csv(grid_path, dom)
    np.testing.assert_allclose(grid2, [[0.9], [1.1]])


def test_malformed_custom_files(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("2\nH 0 0 0\n")
    with pytest.raises(ValueError, match="expected 2 atom lines"):
        read_geometry_file(bad)
    bad.write_text("2\nH 0 0 0\nXx 0 0 1\n")
    with pytest.raises(ValueError, match="unknown element"):
        read_geometry_file(bad)
    bad.write_text("x\nH 0 0 0\n")
    with pytest.raises(ValueError, match="atom count"):
        read_geometry_file(bad)


def test_grid_csv_rejects_unknown_columns(tmp_path):
    _, dom, _ = build_dataset("H2")
    path = tmp_path / "grid.csv"
    path.write_text("r,extra\n1.0,2.0\n")
    with pytest.raises(ValueError, match="unknown grid columns"):
        read_param_grid_csv(path, dom)


# ---------------------------------------------------------------------------
# geometry walk


def test_walk_zero_scale_is_identity():
    _, dom, _ = build_dataset("H2")
    frozen = GeometryDomain(dom.names, dom.lower, dom.upper, [0.0], dom.builder)
    p = np.array([1.7])
    out = geometry_walk(frozen, p, Rng(0))
    np.testing.assert_array_equal(out, p)


def test_reflection_rule_concrete():
    # raw step 0.95 + 0.10 = 1.05 reflects about 1 back to 0.95
    assert reflect_into_interval(1.05, 0.0, 1.0) == pytest.approx(0.95, abs=1e-15)
    assert reflect_into_interval(-0.2, 0.0, 1.0) == pytest.approx(0.2, abs=1e-15)
    assert reflect_into_interval(2.3, 0.0, 1.0) == pytest.approx(0.3, abs=1e-14)


def test_walk_outside_box_rejected():
    _, dom, _ = build_dataset("H2")
    with pytest.raises(ValueError, match="outside the domain"):
        geometry_walk(dom, np.array([5.0]), Rng(0))


def test_walk_never_leaves_box():
    dom = GeometryDomain(("a", "b"), [0.0, -1.0], [1.0, 1.0], [0.3, 0.7], lambda p: None)
    rng = Rng(1)
    n_chains, n_steps = 100, 10_000
    p = np.tile(dom.center(), (n_chains, 1))
    lo, hi = dom.lower, dom.upper
    for _ in range(n_steps // 100):
        for _ in range(100):
            step = dom.walk_scales * rng.gen.standard_normal(p.shape)
            raw = p + step
            width = hi - lo
            y = np.mod(raw - lo, 2 * width)
            y = np.where(y > width, 2 * width - y, y)
            p = lo + y
        assert np.all(p >= lo) and np.all(p <= hi)
    # spot-check the scalar path agrees with the vectorized fold
    r2 = Rng(2)
    q = dom.center()
    for _ in range(2000):
        q = geometry_walk(dom, q, r2)
        assert dom.contains(q)


def test_walk_histogram_covers_every_decile():
    dom = GeometryDomain(("x",), [0.0], [1.0], [0.1], lambda p: None)
    rng = Rng(3)
    n_steps = 100_000
    samples = np.empty(n_steps)
    p = np.array([0.5])
    for i in range(n_steps):
        p = geometry_walk(dom, p, rng)
        samples[i] = p[0]
    edges = np.linspace(0, 1, 11)
    freqs = np.histogram(samples, bins=edges)[0] / n_steps
    # batch-means error bars absorb the walk's autocorrelation
    n_batches = 50
    batch = samples.reshape(n_batches, -1)
    batch_freqs = np.stack(
        [np.histogram(b, bins=edges)[0] / b.size for b in batch]
    )
    sigma = batch_freqs.std(axis=0, ddof=1) / np.sqrt(n_batches)
    assert np.all(np.abs(freqs - 0.1) < 3 * sigma + 1e-12)


# ---------------------------------------------------------------------------
# frames


def test_single_atom_frame_is_identity():
    geo = Geometry(np.array([[1.0, 2.0, 3.0]]))
    np.testing.assert_array_equal(canonical_frame(geo, [6]).rotation, np.eye(3))


def test_aligned_geometry_gets_identity_frame():
    # asymmetric planar molecule already on its principal axes
    pos = np.array(
        [[2.0, 0.0, 0.0], [-1.0, 0.6, 0.0], [-0.5, -1.2, 0.3], [0.1, 0.4, -1.9]]
    )
    charges = [8, 1, 1, 6]
    geo = Geometry(pos)
    frame = canonical_frame(geo, charges)
    aligned = Geometry(pos @ frame.rotation)
    frame2 = canonical_frame(aligned, charges)
    np.testing.assert_allclose(frame2.rotation, np.eye(3), atol=1e-10)


def test_rotated_copy_maps_to_same_frame_coordinates():
    rng = np.random.default_rng(7)
    pos = np.array([[0.0, 0.0, 0.0], [1.8, 0.0, 0.0], [0.4, 1.3, 0.2]])
    charges = [8, 1, 1]
    w = np.asarray(charges, dtype=float)
    w = w / w.sum()
    for _ in range(10):
        rot = random_rotation(rng)
        shift = rng.normal(size=3)
        a = Geometry(pos)
        b = Geometry(pos @ rot.T + shift)
        fa = canonical_frame(a, charges)
        fb = canonical_frame(b, charges)
        za = (a.positions - (w[:, None] * a.positions).sum(0)) @ fa.rotation
        zb = (b.positions - (w[:, None] * b.positions).sum(0)) @ fb.rotation
        np.testing.assert_allclose(za, zb, atol=1e-8)


def test_canonical_frame_is_always_proper_rotation():
    rng = np.random.default_rng(8)
    for _ in range(50):
        pos = rng.normal(size=(4, 3)) * 2.0
        charges = rng.integers(1, 9, size=4)
        frame = canonical_frame(Geometry(pos), charges)
        rot = frame.rotation
        np.testing.assert_allclose(rot.T @ rot, np.eye(3), atol=1e-10)
        assert np.linalg.det(rot) > 0
        assert abs(np.linalg.det(rot) - 1.0) < 1e-10


def test_frame_validation():
    with pytest.raises(ValueError, match="orthogonal"):
        Frame(np.ones((3, 3)))
    with pytest.raises(ValueError, match="proper"):
        Frame(np.diag([1.0, 1.0, -1.0]))


# ---------------------------------------------------------------------------
# nuclear repulsion


def test_repulsion_single_nucleus_zero():
    assert nuclear_repulsion(Geometry(np.zeros((1, 3))), [7]) == 0.0


def test_repulsion_two_protons():
    geo = Geometry(np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]]))
    assert nuclear_repulsion(geo, [1, 1]) == pytest.approx(0.5, rel=1e-15)


def test_repulsion_unit_triangle():
    pos = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, np.sqrt(3) / 2, 0.0]])
    # independent brute-force pair sum
    brute = sum(
        1.0 / np.linalg.norm(pos[a] - pos[b])
        for a in range(3)
        for b in range(a + 1, 3)
    )
    assert brute == pytest.approx(3.0, rel=1e-12)
    assert nuclear_repulsion(Geometry(pos), [1, 1, 1]) == pytest.approx(3.0, rel=1e-12)


def test_repulsion_invariances():
    rng = np.random.default_rng(9)
    pos = rng.normal(size=(5, 3)) * 3.0
    charges = np.array([1, 1, 6, 1, 8])
    base = nuclear_repulsion(Geometry(pos), charges)
    # permutation of nuclei is exactly invariant (sorted pair reduction)
    perm = rng.permutation(5)
    assert nuclear_repulsion(Geometry(pos[perm]), charges[perm]) == base
    # rigid motions agree to round-off
    rot = random_rotation(rng)
    moved = pos @ rot.T + rng.normal(size=3)
    assert nuclear_repulsion(Geometry(moved), charges) == pytest.approx(base, rel=1e-12)


def test_molecule_and_geometry_validation():
    with pytest.raises(ValueError, match="n_up >= n_down"):
        Molecule([1, 1], 0, 2)
    with pytest.raises(ValueError, match="coincident"):
        Geometry(np.zeros((2, 3)))
    with pytest.raises(ValueError, match="non-finite"):
        Geometry(np.array([[0.0, 0.0, np.nan]]))
    mol = Molecule([3, 3], 3, 3)
    assert mol.total_charge == 0
    assert Molecule([1, 1, 1, 1], 2, 1).total_charge == 1
