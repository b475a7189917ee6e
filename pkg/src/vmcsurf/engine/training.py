"""The joint optimization loop: geometry proposals, electron transform,
MCMC, local energies, clipping, natural-gradient update, and the online
surrogate block, in that order every iteration."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..metagnn import MetaGnn
from ..molecule import GeometryDomain, canonical_frame, geometry_walk
from ..numerics import (
    Rng,
    tree_all_finite,
    tree_flatten,
    tree_spec,
    tree_unflatten,
)
from ..wavefunction import WaveFunction
from .gradients import (
    center_scores,
    centered_deltas,
    clip_local_energies,
    natural_gradient_update,
)
from .hamiltonian import local_energy
from .pretrain import grads_to_tree
from .sampling import WalkerState, init_electrons, mcmc_step, thermalize, transform_electrons


class DivergenceError(RuntimeError):
    """Too many consecutive aborted steps; the run cannot continue."""


@dataclass
class EnergyStats:
    """Per-geometry mean local energy and its spread estimate."""

    e_mean: np.ndarray  # (C,)
    sigma: np.ndarray  # (C,)


def batch_stats(energies) -> EnergyStats:
    """Mean and sigma-hat per geometry: sigma = sqrt(sum (E - mean)^2) / B."""
    e = np.asarray(energies, dtype=np.float64)
    mean = e.mean(axis=-1)
    sigma = np.sqrt(np.sum((e - mean[..., None]) ** 2, axis=-1)) / e.shape[-1]
    return EnergyStats(mean, sigma)


@dataclass(frozen=True)
class TrainSettings:
    iterations: int = 60000
    batch_size: int = 4096  # electron configurations per step, all geometries
    n_geometries: int = 16
    mcmc_steps: int = 40
    clip_scale: float = 5.0
    cg_steps: int = 100
    damping_base: float = 1e-4
    damping_floor: float = 0.0
    lr0: float = 0.1
    lr_decay: float = 1000.0
    init_step_size: float = 0.02
    burn_in: int = 400
    max_consecutive_aborts: int = 10

    @property
    def batch_per_geometry(self) -> int:
        if self.batch_size % self.n_geometries:
            raise ValueError("batch_size must divide evenly across geometries")
        return self.batch_size // self.n_geometries

    def learning_rate(self, t: int) -> float:
        return self.lr0 / (1.0 + t / self.lr_decay)


@dataclass
class TrainState:
    wf_params: dict
    gnn_params: dict
    walkers: list
    t: int
    rng: Rng
    abort_streak: int = 0


@dataclass
class TrainingSetup:
    """Static pieces shared by every step."""

    wf: WaveFunction
    gnn: MetaGnn
    domain: GeometryDomain
    settings: TrainSettings
    frame_mode: str = "identity"
    joint_spec: object = field(default=None)
    _score_buf: np.ndarray = field(default=None, repr=False)

    def frame_for(self, geometry):
        if self.frame_mode == "canonical":
            return canonical_frame(geometry, self.wf.mol.charges)
        return None

    def spec_for(self, state: TrainState):
        if self.joint_spec is None:
            self.joint_spec = tree_spec(
                {"gnn": state.gnn_params, "wf": state.wf_params}
            )
        return self.joint_spec

    def score_buffer(self, n_rows, spec):
        if self._score_buf is None or self._score_buf.shape != (n_rows, spec.size):
            self._score_buf = np.empty((n_rows, spec.size), dtype=np.float32)
        return self._score_buf


def _param_dtype(tree):
    leaf = tree
    while isinstance(leaf, dict):
        leaf = leaf[sorted(leaf)[0]]
    return np.asarray(leaf).dtype


def init_walkers(setup: TrainingSetup, wf_params, gnn_params, rng: Rng):
    """Uniform walker geometries over the domain; thermalized electrons."""
    st = setup.settings
    dom = setup.domain
    dtype = _param_dtype(wf_params)
    r_geo, *r_elec = rng.split(1 + st.n_geometries)
    walkers = []
    for c in range(st.n_geometries):
        p = dom.lower + (dom.upper - dom.lower) * r_geo.gen.random(dom.n_params)
        geo = dom.build(p)
        elec = init_electrons(setup.wf.mol, geo, st.batch_per_geometry, r_elec[c], dtype=dtype)
        walkers.append(WalkerState(elec, st.init_step_size, p))
    return thermalize_walkers(setup, wf_params, gnn_params, walkers, rng)


def thermalize_walkers(setup, wf_params, gnn_params, walkers, rng: Rng):
    st = setup.settings
    out = []
    streams = rng.split(len(walkers))
    for c, w in enumerate(walkers):
        geo = setup.domain.build(w.geom_params)
        theta = setup.gnn.adapt(gnn_params, wf_params, geo)
        frame = setup.frame_for(geo)

        def log_abs(x, _theta=theta, _geo=geo, _frame=frame):
            return setup.wf.log_psi(_theta, x, _geo, _frame)[1]

        w, _ = thermalize(log_abs, w.invalidate(), st.burn_in, streams[c])
        out.append(w)
    return out


def score_rows(setup, wf_params, gnn_params, geometry, electrons, spec, out_rows=None):
    """Per-sample joint score matrix rows (B, P) for one geometry."""
    from ..numerics import Tape

    elec = np.asarray(electrons)
    tape = Tape(sample_size=elec.shape[0])
    wrapped = tape.wrap_params({"gnn": gnn_params, "wf": wf_params})
    theta = setup.gnn.adapt(wrapped["gnn"], wrapped["wf"], geometry)
    frame = setup.frame_for(geometry)
    _, out = setup.wf.log_psi(theta, tape.input(elec, sample=True), geometry, frame)
    grads = tape.backward(out)
    b = elec.shape[0]
    rows = np.empty((b, spec.size), dtype=np.float32) if out_rows is None else out_rows
    for path, shape, offset in zip(spec.paths, spec.shapes, spec.offsets):
        size = int(np.prod(shape, dtype=int))
        rows[:, offset : offset + size] = grads[path].reshape(b, size)
    return rows


def train_step(state: TrainState, setup: TrainingSetup, surrogate=None):
    """One full optimization step.

    Returns ``(state, stats, row)`` where ``row`` is the training-log
    record.  Non-finite energies abort the parameter update and
    re-thermalize the walkers.
    """
    st = setup.settings
    wf, gnn, dom = setup.wf, setup.gnn, setup.domain
    spec = setup.spec_for(state)
    c_geo = st.n_geometries
    b = st.batch_per_geometry
    streams = state.rng.split(2 * c_geo)

    lr = st.learning_rate(state.t)
    energies = np.empty((c_geo, b))
    walkers = []
    thetas = []
    geometries = []
    acc_total = 0.0
    for c in range(c_geo):
        w = state.walkers[c]
        old_geo = dom.build(w.geom_params)
        new_params = geometry_walk(dom, w.geom_params, streams[2 * c])
        geo = dom.build(new_params)
        elec = transform_electrons(w.electrons, geo, old_geo)
        w = WalkerState(elec, w.step_size, new_params)

        theta = gnn.adapt(state.gnn_params, state.wf_params, geo)
        frame = setup.frame_for(geo)

        def log_abs(x, _theta=theta, _geo=geo, _frame=frame):
            return wf.log_psi(_theta, x, _geo, _frame)[1]

        w, acc = mcmc_step(log_abs, w, st.mcmc_steps, streams[2 * c + 1])
        acc_total += acc

        derivs = wf.log_psi_derivatives(theta, w.electrons, geo, frame)
        energies[c] = local_energy(derivs, w.electrons, geo, wf.mol.charges)
        walkers.append(w)
        thetas.append(theta)
        geometries.append(geo)

    stats = batch_stats(energies)
    row = {
        "t": state.t,
        "E": stats.e_mean,
        "sigma": stats.sigma,
        "acceptance": acc_total / c_geo,
        "lr": lr,
        "cg_residual": np.nan,
        "surr_loss": None,
        "gamma": None,
        "aborted": False,
    }

    if not np.all(np.isfinite(energies)):
        state = replace(
            state,
            walkers=_rethermalized(setup, state),
            t=state.t + 1,
            abort_streak=state.abort_streak + 1,
        )
        row["aborted"] = True
        if state.abort_streak > st.max_consecutive_aborts:
            raise DivergenceError(
                f"{state.abort_streak} consecutive aborted steps at t={state.t}"
            )
        return state, stats, row

    e_clip = clip_local_energies(energies, st.clip_scale)
    deltas = centered_deltas(e_clip)

    scores = setup.score_buffer(c_geo * b, spec)
    for c in range(c_geo):
        score_rows(
            setup,
            state.wf_params,
            state.gnn_params,
            geometries[c],
            walkers[c].electrons,
            spec,
            out_rows=scores[c * b : (c + 1) * b],
        )
    grad_flat = (scores.T @ deltas.reshape(-1).astype(np.float32)) / float(c_geo * b)

    # the whole natural-gradient solve stays in the score dtype (float32 by
    # default); mixing in float64 here would force per-iteration upcasts of
    # the score matrix; centering happens in place on the reused buffer
    sigma_t = float(stats.sigma.mean())
    damping_scale = max(sigma_t, st.damping_floor)
    view = scores.reshape(c_geo, b, spec.size)
    view -= view.mean(axis=1, keepdims=True)
    delta_flat, cg_residual = natural_gradient_update(
        grad_flat,
        scores,
        st.damping_base,
        damping_scale,
        lr,
        st.cg_steps,
    )
    row["cg_residual"] = cg_residual

    joint = {"gnn": state.gnn_params, "wf": state.wf_params}
    flat, _ = tree_flatten(joint, spec)
    new_joint = tree_unflatten(spec, flat - delta_flat.astype(flat.dtype))
    new_wf, new_gnn = new_joint["wf"], new_joint["gnn"]

    if not (tree_all_finite(new_wf) and tree_all_finite(new_gnn)):
        state = replace(
            state,
            walkers=_rethermalized(setup, state),
            t=state.t + 1,
            abort_streak=state.abort_streak + 1,
        )
        row["aborted"] = True
        if state.abort_streak > st.max_consecutive_aborts:
            raise DivergenceError(
                f"{state.abort_streak} consecutive aborted steps at t={state.t}"
            )
        return state, stats, row

    if surrogate is not None:
        surr_loss, gamma = surrogate.update(geometries, stats, state.t)
        row["surr_loss"] = surr_loss
        row["gamma"] = gamma

    new_state = TrainState(
        wf_params=_cast_like(new_wf, state.wf_params),
        gnn_params=_cast_like(new_gnn, state.gnn_params),
        walkers=[w.invalidate() for w in walkers],
        t=state.t + 1,
        rng=state.rng,
        abort_streak=0,
    )
    return new_state, stats, row


def _cast_like(tree, template):
    from ..numerics import tree_map

    return tree_map(lambda x, t: np.asarray(x, dtype=t.dtype), tree, template)


def _rethermalized(setup, state: TrainState):
    st = setup.settings
    fresh = []
    streams = state.rng.split(st.n_geometries)
    for c, w in enumerate(state.walkers):
        geo = setup.domain.build(w.geom_params)
        elec = init_electrons(
            setup.wf.mol, geo, st.batch_per_geometry, streams[c],
            dtype=_param_dtype(state.wf_params),
        )
        fresh.append(WalkerState(elec, st.init_step_size, w.geom_params))
    return thermalize_walkers(setup, state.wf_params, state.gnn_params, fresh, state.rng)
