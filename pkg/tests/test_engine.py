import numpy as np
import pytest

from vmcsurf.engine import (
    HydrogenGroundState,
    HydrogenicProvider,
    IsotropicGaussianDensity,
    WalkerState,
    center_scores,
    centered_deltas,
    clip_local_energies,
    evaluate_energy,
    fisher_matvec,
    local_energy,
    mcmc_step,
    natural_gradient_update,
    potential_energy,
    thermalize,
    transform_electrons,
    vmc_gradient,
)
from vmcsurf.molecule import Geometry, Molecule, build_dataset
from vmcsurf.numerics import Rng


# ---------------------------------------------------------------------------
# potential and local energy


def test_potential_hydrogen_atom():
    geo = Geometry(np.zeros((1, 3)))
    e = np.array([[[1.0, 0.0, 0.0]]])
    np.testing.assert_allclose(potential_energy(e, geo, [1]), [-1.0], rtol=1e-15)


def test_potential_helium_like():
    geo = Geometry(np.zeros((1, 3)))
    e = np.array([[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]])
    np.testing.assert_allclose(potential_energy(e, geo, [2]), [-3.5], rtol=1e-15)


def test_potential_brute_force_oracle_h4():
    mol, dom, _ = build_dataset("H4")
    geo = dom.build([91.0])
    rng = np.random.default_rng(0)
    e = rng.normal(size=(6, 4, 3)) * 2.0

    def brute(sample):
        v = 0.0
        for i in range(4):
            for j in range(i + 1, 4):
                v += 1.0 / np.linalg.norm(sample[i] - sample[j])
        for i in range(4):
            for m in range(4):
                v -= 1.0 / np.linalg.norm(sample[i] - geo.positions[m])
        for a in range(4):
            for b in range(a + 1, 4):
                v += 1.0 / np.linalg.norm(geo.positions[a] - geo.positions[b])
        return v

    ref = np.array([brute(s) for s in e])
    np.testing.assert_allclose(potential_energy(e, geo, mol.charges), ref, rtol=1e-12)


def test_potential_coincident_particles_sentinel():
    geo = Geometry(np.zeros((1, 3)))
    e = np.array([[[0.0, 0.0, 0.0]]])
    assert np.isinf(potential_energy(e, geo, [1]))[0] if np.ndim(potential_energy(e, geo, [1])) else True
    assert not np.isfinite(potential_energy(e, geo, [1])).any()


def test_local_energy_hydrogen_hook_is_exact():
    hook = HydrogenGroundState()
    rng = Rng(1)
    e = hook.init_electrons(1000, rng)
    el = hook.local_energy(e)
    np.testing.assert_allclose(el, -0.5, rtol=0, atol=1e-8)


def test_local_energy_gaussian_trial_at_unit_point():
    # log psi = -r^2/2 around a proton: E_L(r=(1,0,0)) = -1/2(-3 + 1) - 1 = 0
    geo = Geometry(np.zeros((1, 3)))
    e = np.array([[[1.0, 0.0, 0.0]]])
    grad = -e.reshape(1, 1, 3)
    lap = np.array([-3.0])
    el = local_energy((None, grad, lap), e, geo, [1])
    np.testing.assert_allclose(el, [0.0], atol=1e-14)


def test_local_energy_matches_finite_difference_hamiltonian():
    from vmcsurf.numerics import Rng as _R
    from vmcsurf.wavefunction import WaveFunction, WfConfig

    mol, dom, _ = build_dataset("H2")
    geo = dom.build(dom.center())
    cfg = WfConfig(
        single_width=16, pair_width=8, n_layers=2, n_determinants=4,
        n_jastrow_layers=2, jastrow_width=8, nuclei_embed_dim=8,
    )
    wf = WaveFunction(cfg, mol)
    params = wf.init_params(_R(2), dtype=np.float64)
    rng = np.random.default_rng(3)
    elec = rng.normal(size=(4, 2, 3))

    derivs = wf.log_psi_derivatives(params, elec, geo)
    el = local_energy(derivs, elec, geo, mol.charges)

    h = 1e-4
    sign0, log0 = wf.log_psi(params, elec, geo)
    kin_fd = np.zeros(4)
    for i in range(2):
        for k in range(3):
            dp = elec.copy()
            dm = elec.copy()
            dp[:, i, k] += h
            dm[:, i, k] -= h
            sp, lp = wf.log_psi(params, dp, geo)
            sm, lm = wf.log_psi(params, dm, geo)
            rp = sp * sign0 * np.exp(lp - log0)
            rm = sm * sign0 * np.exp(lm - log0)
            kin_fd += -0.5 * (rp + rm - 2.0) / h**2
    ref = kin_fd + potential_energy(elec, geo, mol.charges)
    np.testing.assert_allclose(el, ref, rtol=1e-4)


# ---------------------------------------------------------------------------
# MCMC


def test_mcmc_zero_step_always_accepts_and_preserves_state():
    hook = IsotropicGaussianDensity()
    rng = Rng(4)
    x = hook.init_electrons(64, rng)
    w = WalkerState(x, 0.0, np.zeros(0))
    w2, rate = mcmc_step(hook.log_abs, w, 5, rng)
    assert rate == 1.0
    np.testing.assert_array_equal(w2.electrons, x)


def test_mcmc_reproduces_unit_gaussian_moments():
    hook = IsotropicGaussianDensity(n_particles=1)
    rng = Rng(5)
    w = WalkerState(hook.init_electrons(1000, rng), 0.5, np.zeros(0))
    w, _ = thermalize(hook.log_abs, w, 200, rng)
    kept = []
    for _ in range(1000):
        w, _ = mcmc_step(hook.log_abs, w, 1, rng)
        kept.append(w.electrons.reshape(-1, 3))
    samples = np.concatenate(kept)  # 1e6 kept samples
    var = samples.var(axis=0)
    np.testing.assert_allclose(var, 1.0, rtol=0.02)


def test_mcmc_acceptance_settles_into_window():
    hook = IsotropicGaussianDensity(n_particles=2)
    rng = Rng(6)
    w = WalkerState(hook.init_electrons(512, rng), 0.02, np.zeros(0))
    w, _ = thermalize(hook.log_abs, w, 600, rng, block=10)
    rates = []
    for _ in range(10):
        w, rate = mcmc_step(hook.log_abs, w, 20, rng)
        rates.append(rate)
    assert 0.4 <= np.mean(rates) <= 0.6


def test_mcmc_two_state_flow_balance():
    hook = IsotropicGaussianDensity(n_particles=1)
    rng = Rng(7)
    n_walkers = 100
    w = WalkerState(hook.init_electrons(n_walkers, rng), 1.0, np.zeros(0))
    w, _ = thermalize(hook.log_abs, w, 200, rng)
    # two-state partition on the first coordinate, deliberately asymmetric
    prev = w.electrons[:, 0, 0] < 0.3
    n_ab = n_ba = 0
    for _ in range(10_000):
        w, _ = mcmc_step(hook.log_abs, w, 1, rng)
        cur = w.electrons[:, 0, 0] < 0.3
        n_ab += int(np.sum(prev & ~cur))
        n_ba += int(np.sum(~prev & cur))
        prev = cur
    sigma = np.sqrt(n_ab + n_ba)
    assert abs(n_ab - n_ba) < 3 * sigma


# ---------------------------------------------------------------------------
# transform


def test_transform_identity_geometry_is_exact():
    rng = np.random.default_rng(8)
    geo = Geometry(rng.normal(size=(3, 3)) * 3)
    e = rng.normal(size=(5, 4, 3))
    out = transform_electrons(e, geo, geo)
    np.testing.assert_array_equal(out, e)


def test_transform_single_nucleus_shifts_everything():
    rng = np.random.default_rng(9)
    old = Geometry(np.zeros((1, 3)))
    d = np.array([0.3, -1.1, 0.7])
    new = Geometry(d[None, :])
    e = rng.normal(size=(4, 3, 3))
    out = transform_electrons(e, new, old)
    np.testing.assert_array_equal(out, e + d)


def test_transform_concrete_example():
    old = Geometry(np.array([[0.0, 0, 0], [4.0, 0, 0]]))
    new = Geometry(np.array([[0.0, 0, 1.0], [4.0, 0, 0]]))
    e = np.array([[[0.5, 0.0, 0.0]]])
    out = transform_electrons(e, new, old)
    np.testing.assert_array_equal(out, np.array([[[0.5, 0.0, 1.0]]]))


def test_transform_tie_breaks_to_lowest_index():
    old = Geometry(np.array([[0.0, 0, 0], [4.0, 0, 0]]))
    new = Geometry(np.array([[0.0, 0, 2.0], [4.0, 0, -2.0]]))
    e = np.array([[[2.0, 0.0, 0.0]]])  # exactly equidistant
    out = transform_electrons(e, new, old)
    np.testing.assert_array_equal(out, np.array([[[2.0, 0.0, 2.0]]]))


def test_transform_preserves_distance_to_carrier_nucleus():
    rng = np.random.default_rng(10)
    for _ in range(100):
        old_pos = rng.normal(size=(3, 3)) * 3
        new_pos = old_pos + rng.normal(size=(3, 3))
        e = rng.normal(size=(10, 5, 3)) * 4
        old, new = Geometry(old_pos), Geometry(new_pos)
        d_old = np.linalg.norm(e[..., None, :] - old_pos[None, None], axis=-1)
        nearest = np.argmin(d_old, axis=-1)
        before = np.take_along_axis(d_old, nearest[..., None], axis=-1)[..., 0]
        out = transform_electrons(e, new, old)
        after = np.linalg.norm(
            np.take_along_axis(
                out[..., None, :] - new_pos[None, None], nearest[..., None, None], axis=2
            )[..., 0, :],
            axis=-1,
        )
        assert np.max(np.abs(after - before)) < 5e-14


# ---------------------------------------------------------------------------
# clipping and gradient estimator


def test_clip_constant_batch_unchanged():
    e = np.full((2, 6), 1.37)
    np.testing.assert_array_equal(clip_local_energies(e, 5.0), e)


def test_clip_infinite_scale_is_identity():
    rng = np.random.default_rng(11)
    e = rng.normal(size=(3, 8))
    np.testing.assert_array_equal(clip_local_energies(e, np.inf), e)


def test_clip_median_mad_rule():
    e = np.array([[0.0, 0.0, 0.0, 0.0, 10.0]])
    out = clip_local_energies(e, 1.0)
    # median 0, mean absolute deviation 2, so the outlier clips to 2
    np.testing.assert_allclose(out, [[0.0, 0.0, 0.0, 0.0, 2.0]])


def test_vmc_gradient_constant_energies_vanish():
    rng = np.random.default_rng(12)
    scores = rng.normal(size=(2, 16, 5))

    def score_fn(c, electrons):
        return scores[c]

    walkers = [WalkerState(np.zeros((16, 1, 3)), 0.1, np.zeros(0)) for _ in range(2)]
    e = np.full((2, 16), -3.7)
    grad = vmc_gradient(score_fn, e, walkers)
    np.testing.assert_allclose(grad, np.zeros(5), atol=1e-14)


def test_vmc_gradient_offset_invariance_is_exact():
    rng = np.random.default_rng(13)
    scores = rng.normal(size=(2, 16, 5))
    e = rng.normal(size=(2, 16))

    def score_fn(c, electrons):
        return scores[c]

    walkers = [WalkerState(np.zeros((16, 1, 3)), 0.1, np.zeros(0)) for _ in range(2)]
    g1 = vmc_gradient(score_fn, e, walkers)
    shifted = e.copy()
    shifted[0] += 100.0
    g2 = vmc_gradient(score_fn, shifted, walkers)
    np.testing.assert_allclose(g1, g2, rtol=0, atol=1e-10)


def test_vmc_gradient_matches_reweighted_finite_difference():
    # psi_a(x) = exp(-a x^2) with H = -1/2 d^2/dx^2 + 1/2 x^2 on frozen samples
    a0, n = 0.7, 40_000
    rng = np.random.default_rng(14)
    x = rng.normal(scale=np.sqrt(1.0 / (4 * a0)), size=n)

    def e_loc(a):
        return a - 2 * a**2 * x**2 + 0.5 * x**2

    score = -(x**2)  # d log|psi_a| / da
    e0 = e_loc(a0)
    grad_est = np.mean((e0 - e0.mean()) * score)

    h = 1e-5
    def reweighted(a):
        logw = -2 * (a - a0) * x**2
        w = np.exp(logw - logw.max())
        return np.sum(w * e_loc(a)) / np.sum(w)

    fd = (reweighted(a0 + h) - reweighted(a0 - h)) / (2 * h)
    # the frozen-sample discrepancy is the sample mean of dE_L/da
    resid = 1.0 - 4 * a0 * x**2
    sigma = resid.std(ddof=1) / np.sqrt(n)
    assert abs(grad_est - fd / 2.0) < 3 * sigma / 2.0 + 1e-8


# ---------------------------------------------------------------------------
# natural gradient


def test_natural_gradient_isotropic_scores():
    rng = np.random.default_rng(15)
    n, p, c = 64, 8, 2.5
    q, _ = np.linalg.qr(rng.normal(size=(n, p)))
    scores = np.sqrt(c * n) * q  # F = scores^T scores / n = c I
    grad = rng.normal(size=p)
    for damping in (0.0, 0.3):
        delta, _ = natural_gradient_update(grad, scores, 1.0, damping, lr=0.1, cg_steps=30)
        np.testing.assert_allclose(delta, 0.1 * grad / (c + damping), rtol=1e-10)


def test_natural_gradient_huge_damping_limit():
    rng = np.random.default_rng(16)
    scores = rng.normal(size=(32, 6))
    grad = rng.normal(size=6)
    damping = 1e9
    delta, _ = natural_gradient_update(grad, scores, 1.0, damping, lr=1.0, cg_steps=20)
    np.testing.assert_allclose(delta, grad / damping, rtol=1e-6)


def test_fisher_matvec_matches_dense_assembly():
    rng = np.random.default_rng(17)
    scores = rng.normal(size=(1000, 3))
    centered = center_scores(scores, 1)
    dense = centered.T @ centered / centered.shape[0]
    mv = fisher_matvec(centered)
    for _ in range(5):
        v = rng.normal(size=3)
        np.testing.assert_allclose(mv(v), dense @ v, rtol=0, atol=1e-10)


def test_center_scores_per_geometry():
    rng = np.random.default_rng(18)
    s = rng.normal(size=(6, 4))
    out = center_scores(s, 2).reshape(2, 3, 4)
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-14)


# ---------------------------------------------------------------------------
# evaluation


def test_evaluate_energy_zero_variance_on_eigenfunction():
    hook = HydrogenGroundState()
    energy, stderr = evaluate_energy(hook, 50_000, Rng(19), batch=2048, burn_in=100)
    np.testing.assert_allclose(energy, -0.5, atol=1e-9)
    assert stderr < 1e-10


class _ScaledHydrogen:
    """log psi = -kappa r: not an eigenstate, so E_L fluctuates."""

    def __init__(self, kappa):
        self.kappa = kappa
        self.hook = HydrogenGroundState()

    def log_abs(self, electrons):
        return self.kappa * self.hook.log_abs(electrons)

    def local_energy(self, electrons):
        e = np.asarray(electrons).reshape(-1, 3)
        r = np.linalg.norm(e, axis=-1)
        k = self.kappa
        return -0.5 * k * k + (k - 1.0) / r

    def init_electrons(self, batch, rng):
        return self.hook.init_electrons(batch, rng)


def test_evaluate_energy_stderr_scaling():
    model = _ScaledHydrogen(1.3)
    _, se1 = evaluate_energy(model, 40_000, Rng(20), batch=2000, burn_in=200, decorrelate=20)
    _, se4 = evaluate_energy(model, 160_000, Rng(21), batch=2000, burn_in=200, decorrelate=20)
    np.testing.assert_allclose(se1 / se4, 2.0, rtol=0.2)


def test_evaluate_variational_bound_on_non_eigenstate():
    # any trial state's energy sits above the hydrogen ground state
    model = _ScaledHydrogen(1.4)
    energy, stderr = evaluate_energy(model, 60_000, Rng(22), batch=2000, burn_in=200)
    assert energy > -0.5
    exact = 0.5 * 1.4**2 - 1.4  # analytic <H> for exp(-1.4 r)
    np.testing.assert_allclose(energy, exact, atol=6 * max(stderr, 1e-4))


# ---------------------------------------------------------------------------
# pretraining


def test_hydrogenic_provider_h2_reference():
    mol, dom, _ = build_dataset("H2")
    geo = dom.build([1.4])
    provider = HydrogenicProvider(mol)
    rng = np.random.default_rng(23)
    e = rng.normal(size=(3, 2, 3))
    ref = provider.reference_matrix(e, geo)
    assert ref.shape == (3, 2, 2)
    for b in range(3):
        for j, col in enumerate(e[b]):
            expected = sum(np.exp(-np.linalg.norm(col - rm)) for rm in geo.positions)
            row = 0 if j < 1 else 1
            np.testing.assert_allclose(ref[b, row, j], expected, rtol=1e-12)
    # off-diagonal spin blocks are zero
    np.testing.assert_array_equal(ref[:, 0, 1] * 0, ref[:, 1, 0] * 0)


def test_pretrain_zero_loss_on_matching_targets():
    from vmcsurf.numerics import AdamWState, tree_items
    from vmcsurf.wavefunction import WaveFunction, WfConfig

    mol, dom, _ = build_dataset("H2")
    geo = dom.build(dom.center())
    cfg = WfConfig(
        single_width=8, pair_width=4, n_layers=1, n_determinants=2,
        n_jastrow_layers=2, jastrow_width=4, nuclei_embed_dim=4,
    )
    wf = WaveFunction(cfg, mol)
    params = wf.init_params(Rng(24), dtype=np.float64)
    rng = np.random.default_rng(25)
    elec = rng.normal(size=(5, 2, 3))

    class SelfProvider:
        def reference_matrix(self, electrons, geometry):
            from vmcsurf.molecule import identity_frame

            h, r_en = wf.final_embeddings(params, electrons, geometry, identity_frame())
            return np.asarray(wf.build_orbitals(params, h, r_en))[:, 0]

    from vmcsurf.engine import pretrain_step

    # make all determinants identical so every determinant matches the target
    p2 = {k: v for k, v in params.items()}
    state = AdamWState.init(params)
    new_params, _, loss = pretrain_step(wf, params, SelfProvider(), geo, elec, state, lr=0.1)
    if cfg.n_determinants == 1:
        assert loss < 1e-20
        for (pa, a), (_, b) in zip(tree_items(params), tree_items(new_params)):
            np.testing.assert_array_equal(a, b)
    else:
        assert loss >= 0.0


def test_pretraining_descends_on_fixed_batch():
    from vmcsurf.numerics import AdamWState
    from vmcsurf.engine import pretrain_step
    from vmcsurf.wavefunction import WaveFunction, WfConfig

    mol, dom, _ = build_dataset("H2")
    geo = dom.build(dom.center())
    cfg = WfConfig(
        single_width=8, pair_width=4, n_layers=1, n_determinants=2,
        n_jastrow_layers=2, jastrow_width=4, nuclei_embed_dim=4,
    )
    wf = WaveFunction(cfg, mol)
    params = wf.init_params(Rng(26), dtype=np.float64)
    provider = HydrogenicProvider(mol)
    rng = np.random.default_rng(27)
    elec = geo.positions.mean(0) + rng.normal(size=(64, 2, 3))
    state = AdamWState.init(params)
    losses = []
    for _ in range(50):
        params, state, loss = pretrain_step(wf, params, provider, geo, elec, state, lr=3e-3)
        losses.append(loss)
    assert losses[-1] < losses[0]
