import numpy as np
import pytest

from vmcsurf.metagnn import MetaGnn, MetaGnnConfig, ParamAdaptation, bessel_rbf
from vmcsurf.molecule import Geometry, Molecule, build_dataset
from vmcsurf.numerics import Rng, tree_items, tree_map
from vmcsurf.wavefunction import WaveFunction, WfConfig

GNN_SMALL = MetaGnnConfig(node_dim=16, message_dim=8)
WF_SMALL = WfConfig(
    single_width=16,
    pair_width=8,
    n_layers=2,
    n_determinants=4,
    n_jastrow_layers=2,
    jastrow_width=8,
    nuclei_embed_dim=8,
)


def setup(seed=0, mol=None, dtype=np.float64):
    mol = mol or Molecule([1, 1, 1, 1], 2, 2)
    gnn = MetaGnn(GNN_SMALL, WF_SMALL, mol)
    params = gnn.init_params(Rng(seed), dtype=dtype)
    return gnn, params


def randomize_heads(params, rng, scale=0.1):
    streams = iter(rng.split(64))
    params = tree_map(lambda x: np.array(x, copy=True), params)
    params["heads"] = tree_map(
        lambda x: x + scale * next(streams).gen.standard_normal(x.shape),
        params["heads"],
    )
    return params


def test_translation_invariance():
    gnn, params = setup()
    params = randomize_heads(params, Rng(1))
    pos = np.array([[0.0, 0, 0], [1.8, 0, 0], [0.4, 1.3, 0.2], [-0.6, 0.5, 1.1]])
    a = gnn.forward(params, Geometry(pos))
    b = gnn.forward(params, Geometry(pos + np.array([3.7, -2.1, 0.9])))
    np.testing.assert_allclose(a.z, b.z, rtol=1e-12, atol=1e-12)
    for name in a.envelope_pi:
        np.testing.assert_allclose(
            a.envelope_pi[name], b.envelope_pi[name], rtol=1e-12, atol=1e-12
        )
    np.testing.assert_allclose(a.det_weights, b.det_weights, rtol=1e-12, atol=1e-12)


def test_identical_nucleus_permutation_equivariance_is_exact():
    gnn, params = setup(seed=2)
    params = randomize_heads(params, Rng(3))
    pos = np.array([[0.0, 0, 0], [2.0, 0, 0], [0.5, 1.7, 0.0], [-0.4, 0.6, 1.4]])
    a = gnn.forward(params, Geometry(pos))
    perm = [2, 1, 0, 3]  # swap two hydrogens
    b = gnn.forward(params, Geometry(pos[perm]))
    np.testing.assert_array_equal(b.z, a.z[perm])
    for name in a.envelope_pi:
        np.testing.assert_array_equal(b.envelope_pi[name], a.envelope_pi[name][:, :, perm])
        np.testing.assert_array_equal(b.envelope_sigma[name], a.envelope_sigma[name][:, :, perm])
    np.testing.assert_array_equal(b.det_weights, a.det_weights)
    np.testing.assert_array_equal(b.orbital_bias["eq"], a.orbital_bias["eq"])


def test_single_atom_depends_only_on_charge():
    mol = Molecule([3], 2, 1)
    gnn = MetaGnn(GNN_SMALL, WfConfig(**{**WF_SMALL.__dict__, "restricted": False}), mol)
    params = randomize_heads(gnn.init_params(Rng(4), dtype=np.float64), Rng(5))
    a = gnn.forward(params, Geometry(np.array([[0.0, 0, 0]])))
    b = gnn.forward(params, Geometry(np.array([[5.0, -3.0, 2.0]])))
    np.testing.assert_array_equal(a.z, b.z)
    np.testing.assert_array_equal(a.det_weights, b.det_weights)


def test_heads_start_inert():
    gnn, params = setup(seed=6)
    geo = Geometry(np.array([[0.0, 0, 0], [2.0, 0, 0], [0.5, 1.7, 0.0], [-0.4, 0.6, 1.4]]))
    adapt = gnn.forward(params, geo)
    np.testing.assert_array_equal(adapt.z, np.zeros_like(adapt.z))
    np.testing.assert_array_equal(adapt.det_weights, np.zeros_like(adapt.det_weights))
    for name in adapt.envelope_pi:
        np.testing.assert_array_equal(adapt.envelope_pi[name], 0 * adapt.envelope_pi[name])


def test_apply_adaptation_semantics():
    gnn, params = setup(seed=7)
    mol = gnn.mol
    wf = WaveFunction(WF_SMALL, mol)
    base = wf.init_params(Rng(8), dtype=np.float64)
    geo = Geometry(np.array([[0.0, 0, 0], [2.0, 0, 0], [0.5, 1.7, 0.0], [-0.4, 0.6, 1.4]]))

    zero = gnn.forward(params, geo)
    adapted = gnn.apply_adaptation(base, zero)
    np.testing.assert_array_equal(adapted["z"], np.zeros_like(base["z"]))
    np.testing.assert_array_equal(adapted["det_weights"], base["det_weights"])
    np.testing.assert_array_equal(adapted["orbitals"]["eq"]["pi"], base["orbitals"]["eq"]["pi"])

    rng = Rng(9)
    delta = ParamAdaptation(
        z=rng.gen.standard_normal(base["z"].shape),
        envelope_pi={k: rng.gen.standard_normal(v["pi"].shape) for k, v in base["orbitals"].items()},
        envelope_sigma={k: rng.gen.standard_normal(v["sigma"].shape) for k, v in base["orbitals"].items()},
        orbital_bias={k: rng.gen.standard_normal(v["b"].shape) for k, v in base["orbitals"].items()},
        det_weights=rng.gen.standard_normal(base["det_weights"].shape),
    )
    once = gnn.apply_adaptation(base, delta)
    twice = gnn.apply_adaptation(once, delta)
    np.testing.assert_allclose(
        twice["orbitals"]["eq"]["pi"] - base["orbitals"]["eq"]["pi"],
        2 * delta.envelope_pi["eq"],
        rtol=1e-12,
    )
    # sigma stays positive after the transform for any real offset
    for off in (-100.0, -5.0, 30.0):
        shifted = gnn.apply_adaptation(
            base,
            ParamAdaptation(
                z=np.zeros_like(base["z"]),
                envelope_pi={k: np.zeros_like(v["pi"]) for k, v in base["orbitals"].items()},
                envelope_sigma={k: np.full_like(v["sigma"], off) for k, v in base["orbitals"].items()},
                orbital_bias={k: np.zeros_like(v["b"]) for k, v in base["orbitals"].items()},
                det_weights=np.zeros_like(base["det_weights"]),
            ),
        )
        sig = np.logaddexp(0.0, shifted["orbitals"]["eq"]["sigma"])
        assert np.all(sig > 0)


def test_zero_init_adaptation_reproduces_base_wavefunction():
    mol, dom, _ = build_dataset("H4")
    geo_a = dom.build([87.0])
    geo_b = dom.build([93.0])
    gnn = MetaGnn(GNN_SMALL, WF_SMALL, mol)
    gparams = gnn.init_params(Rng(10), dtype=np.float64)
    wf = WaveFunction(WF_SMALL, mol)
    base = wf.init_params(Rng(11), dtype=np.float64)
    rng = Rng(12)
    elec = rng.gen.standard_normal((4, mol.n_electrons, 3))
    for geo in (geo_a, geo_b):
        adapted = gnn.adapt(gparams, base, geo)
        _, log_adapted = wf.log_psi(adapted, elec, geo)
        _, log_base = wf.log_psi(base, elec, geo)
        np.testing.assert_allclose(log_adapted, log_base, rtol=1e-12)


def test_rbf_smooth_cutoff():
    vals = bessel_rbf(np.array([0.5, 10.0, 23.999, 24.0, 30.0]), 6, 24.0)
    assert np.all(np.isfinite(vals))
    assert np.all(vals[-2:] == 0.0)
    assert np.abs(vals[2]).max() < 1e-8  # smooth approach to zero


def test_config_validation():
    with pytest.raises(ValueError):
        MetaGnnConfig(n_rbf=0)


def test_adaptation_shape_mismatch_rejected():
    gnn, params = setup(seed=13)
    wf = WaveFunction(WF_SMALL, gnn.mol)
    base = wf.init_params(Rng(14), dtype=np.float64)
    geo = Geometry(np.array([[0.0, 0, 0], [2.0, 0, 0], [0.5, 1.7, 0.0], [-0.4, 0.6, 1.4]]))
    adapt = gnn.forward(params, geo)
    adapt.envelope_pi = {k: v[:, :, :1] for k, v in adapt.envelope_pi.items()}
    with pytest.raises(ValueError, match="shape mismatch"):
        gnn.apply_adaptation(base, adapt)


def test_scores_flow_through_adaptation():
    """Joint gradients (wave function + adaptation network) match FD."""
    import sys

    sys.path.insert(0, "tests")
    from test_autodiff import fd_param_grads

    mol = Molecule([1, 1], 1, 1)
    wf_cfg = WfConfig(
        single_width=4, pair_width=3, n_layers=1, n_determinants=2,
        n_jastrow_layers=2, jastrow_width=3, nuclei_embed_dim=3,
    )
    gnn_cfg = MetaGnnConfig(node_dim=4, message_dim=3, mlp_depth=2)
    wf = WaveFunction(wf_cfg, mol)
    gnn = MetaGnn(gnn_cfg, wf_cfg, mol)
    base = wf.init_params(Rng(15), dtype=np.float64)
    gparams = gnn.init_params(Rng(16), dtype=np.float64)
    # non-zero heads so the adaptation actually matters
    gparams = randomize_heads(gparams, Rng(17), scale=0.05)
    geo = Geometry(np.array([[0.0, 0.0, -0.7], [0.0, 0.0, 0.7]]))
    elec = Rng(18).gen.standard_normal((3, 2, 3))

    from vmcsurf.numerics import Tape

    joint = {"wf": base, "gnn": gparams}
    tape = Tape(sample_size=3)
    wrapped = tape.wrap_params(joint)
    adapted = gnn.adapt(wrapped["gnn"], wrapped["wf"], geo)
    _, out = wf.log_psi(adapted, tape.input(elec, sample=True), geo)
    per_sample = tape.backward(out)

    def total(p):
        adapted_p = gnn.adapt(p["gnn"], p["wf"], geo)
        return float(np.sum(wf.log_psi(adapted_p, elec, geo)[1]))

    fd = fd_param_grads(total, joint, h=1e-6)
    got = np.concatenate(
        [np.asarray(per_sample[path]).sum(axis=0).reshape(-1) for path, _ in tree_items(joint)]
    )
    np.testing.assert_allclose(got, fd, rtol=5e-5, atol=1e-7)
