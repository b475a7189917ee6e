"""End-to-end runs built from the library pieces: pretraining, joint
training with logging and checkpoints, and the evaluation paths."""

from __future__ import annotations

import logging
import os
import time

import numpy as np

from ..engine import (
    DivergenceError,
    GtoFileProvider,
    HydrogenGroundState,
    HydrogenicProvider,
    TrainSettings,
    TrainState,
    TrainingSetup,
    evaluate_energy,
    init_walkers,
    run_pretraining,
)
from ..engine.sampling import WalkerState
from ..metagnn import MetaGnn, MetaGnnConfig
from ..molecule import GeometryDomain, build_dataset, canonical_frame
from ..numerics import Rng, tree_astype
from ..surrogate import (
    SurrogateConfig,
    SurrogateHyper,
    SurrogateModel,
    SurrogateTrainerState,
    TrainingAdapter,
)
from ..wavefunction import WaveFunction, WfConfig
from . import checkpoint as ckpt
from .config import dtype_of
from .records import DiagnosticsWriter, EnergyRecord, TrainingLogWriter, write_records_csv

log = logging.getLogger("vmcsurf")

_WF_KEYS = (
    "single_width", "pair_width", "n_layers", "n_determinants", "n_jastrow_layers",
    "jastrow_width", "nuclei_embed_dim", "restricted", "dense_orbitals", "activation",
    "activation_rescale", "zero_bias_init", "envelope_sigma_init",
)
_GNN_KEYS = ("n_message_passes", "node_dim", "message_dim", "n_rbf", "n_sbf", "mlp_depth", "cutoff")
_SURR_KEYS = (
    "cutoff", "n_rbf", "n_sbf", "n_blocks", "basis_embed", "interaction_dim", "out_dim",
    "n_layers_before_skip", "n_layers_after_skip", "n_layers_out",
)
_HYPER_KEYS = (
    "gamma_base", "gamma_high", "zeta", "ema_decay", "lr0", "lr_decay",
    "weight_decay", "sigma_floor", "init_reference",
)


class Workspace:
    """Everything derivable from a resolved configuration."""

    def __init__(self, config: dict):
        self.config = config
        sysc = config["system"]
        self.molecule, domain, self.grid = build_dataset(
            sysc["name"], sysc.get("geometry_file"), sysc.get("grid_file")
        )
        self.domain = _apply_fixed_params(domain, sysc.get("fix_params") or {})
        self.wf_config = WfConfig(**{k: config["wavefunction"][k] for k in _WF_KEYS})
        self.frame_mode = config["wavefunction"]["frame"]
        self.wf = WaveFunction(self.wf_config, self.molecule)
        self.gnn_config = MetaGnnConfig(**{k: config["metagnn"][k] for k in _GNN_KEYS})
        self.gnn = MetaGnn(self.gnn_config, self.wf_config, self.molecule)
        self.surrogate_config = SurrogateConfig(**{k: config["surrogate"][k] for k in _SURR_KEYS})
        self.surrogate_model = SurrogateModel(self.surrogate_config, self.molecule.charges)
        opt = config["optimization"]
        self.settings = TrainSettings(
            iterations=config["run"]["iterations"],
            batch_size=opt["batch_size"],
            n_geometries=opt["n_geometry_walkers"],
            mcmc_steps=config["mcmc"]["steps_between_updates"],
            clip_scale=opt["clip_scale"],
            cg_steps=opt["cg_steps"],
            damping_base=opt["damping_base"],
            damping_floor=opt["damping_floor"],
            lr0=opt["lr0"],
            lr_decay=opt["lr_decay"],
            init_step_size=config["mcmc"]["init_step_size"],
            burn_in=config["mcmc"]["burn_in"],
            max_consecutive_aborts=opt["max_consecutive_aborts"],
        )
        self.dtype = dtype_of(config)

    def training_setup(self) -> TrainingSetup:
        return TrainingSetup(
            wf=self.wf, gnn=self.gnn, domain=self.domain,
            settings=self.settings, frame_mode=self.frame_mode,
        )

    def pretrain_provider(self):
        pc = self.config["pretraining"]
        if pc["provider"] == "file":
            if not pc.get("orbital_file"):
                raise ValueError("file pretraining provider needs an orbital_file")
            return GtoFileProvider(pc["orbital_file"], self.molecule)
        return HydrogenicProvider(self.molecule)

    def surrogate_hyper(self) -> SurrogateHyper:
        sc = self.config["surrogate"]
        return SurrogateHyper(
            n_inner=sc["n_inner"], **{k: sc[k] for k in _HYPER_KEYS}
        )

    def frame_for(self, geometry):
        if self.frame_mode == "canonical":
            return canonical_frame(geometry, self.molecule.charges)
        return None


def _apply_fixed_params(domain: GeometryDomain, fixed: dict) -> GeometryDomain:
    if not fixed:
        return domain
    unknown = set(fixed) - set(domain.names)
    if unknown:
        raise ValueError(f"fix_params name(s) {sorted(unknown)} not in domain {domain.names}")
    lower = domain.lower.copy()
    upper = domain.upper.copy()
    scales = domain.walk_scales.copy()
    for name, value in fixed.items():
        i = domain.names.index(name)
        lower[i] = upper[i] = float(value)
        scales[i] = 0.0
    return GeometryDomain(domain.names, lower, upper, scales, domain.builder)


class GeometryModel:
    """The neural wave function pinned to one geometry, for evaluation."""

    def __init__(self, workspace: Workspace, theta, geometry):
        from ..engine.hamiltonian import local_energy as _local_energy

        self.ws = workspace
        self.theta = theta
        self.geometry = geometry
        self.frame = workspace.frame_for(geometry)
        self._local_energy = _local_energy

    def log_abs(self, electrons):
        return self.ws.wf.log_psi(self.theta, electrons, self.geometry, self.frame)[1]

    def local_energy(self, electrons):
        derivs = self.ws.wf.log_psi_derivatives(self.theta, electrons, self.geometry, self.frame)
        return self._local_energy(derivs, electrons, self.geometry, self.ws.molecule.charges)

    def init_electrons(self, batch, rng):
        from ..engine.sampling import init_electrons

        return init_electrons(self.ws.molecule, self.geometry, batch, rng)


# ---------------------------------------------------------------------------
# training


def run_pretrain_phase(ws: Workspace, rng: Rng, dtype):
    pc = ws.config["pretraining"]
    wf_params = ws.wf.init_params(rng.split(1)[0], dtype=dtype)
    if pc["iterations"] < 1:
        return wf_params, []
    provider = ws.pretrain_provider()
    geometry = ws.domain.build(ws.domain.center())
    wf_params, losses = run_pretraining(
        ws.wf,
        wf_params,
        provider,
        geometry,
        rng,
        iterations=pc["iterations"],
        lr=pc["learning_rate"],
        batch=pc["batch"],
        mcmc_steps=pc["mcmc_steps"],
    )
    log.info("pretraining done: loss %.3g -> %.3g", losses[0], losses[-1])
    return wf_params, losses


def _walkers_to_arrays(walkers):
    return {
        "walker_electrons": np.stack([w.electrons for w in walkers]),
        "walker_geom_params": np.stack([w.geom_params for w in walkers]),
        "walker_steps": np.array([w.step_size for w in walkers]),
    }


def _walkers_from_arrays(extra):
    walkers = []
    for elec, p, step in zip(
        extra["walker_electrons"], extra["walker_geom_params"], extra["walker_steps"]
    ):
        walkers.append(WalkerState(elec.copy(), float(step), p.copy()))
    return walkers


def save_joint_checkpoint(path, ws: Workspace, state: TrainState, surrogate_state):
    trees = {"wf": state.wf_params, "gnn": state.gnn_params}
    scalars = {"abort_streak": state.abort_streak}
    if surrogate_state is not None:
        trees["surr_live"] = surrogate_state.params_live
        trees["surr_merged"] = surrogate_state.params_merged
        trees["surr_m"] = surrogate_state.opt.m
        trees["surr_v"] = surrogate_state.opt.v
        scalars["surrogate"] = {
            "opt_step": surrogate_state.opt.step,
            "loss_smooth": surrogate_state.loss_smooth,
            "mad_smooth": surrogate_state.mad_smooth,
            "gamma": surrogate_state.gamma,
            "n_updates": surrogate_state.n_updates,
        }
    ckpt.save_checkpoint(
        path,
        kind="joint",
        config=ws.config,
        t=state.t,
        rng_state=state.rng.state_dict(),
        trees=trees,
        extra_arrays=_walkers_to_arrays(state.walkers),
        scalars=scalars,
    )


def load_joint_checkpoint(path):
    from ..numerics import AdamWState

    meta, trees, extra = ckpt.load_checkpoint(path, expect_kind="joint")
    ws = Workspace(meta["config"])
    state = TrainState(
        wf_params=trees["wf"],
        gnn_params=trees["gnn"],
        walkers=_walkers_from_arrays(extra),
        t=meta["t"],
        rng=Rng.from_state_dict(meta["rng"]),
        abort_streak=meta["scalars"].get("abort_streak", 0),
    )
    surrogate_state = None
    if "surr_merged" in trees:
        s = meta["scalars"]["surrogate"]
        surrogate_state = SurrogateTrainerState(
            model=ws.surrogate_model,
            hyper=ws.surrogate_hyper(),
            params_live=trees["surr_live"],
            params_merged=trees["surr_merged"],
            opt=AdamWState(m=trees["surr_m"], v=trees["surr_v"], step=s["opt_step"]),
            loss_smooth=s["loss_smooth"],
            mad_smooth=s["mad_smooth"],
            gamma=s["gamma"] if s["gamma"] is not None else float("nan"),
            n_updates=s["n_updates"],
        )
    return ws, state, surrogate_state


def run_training(config: dict, resume: str | None = None, surrogate_enabled=None) -> str:
    """The full command: pretraining, burn-in, joint loop, artifacts.

    Returns the output directory.  Raises DivergenceError if the run
    cannot continue.
    """
    from ..engine import train_step

    if resume:
        ws, state, surrogate_state = load_joint_checkpoint(resume)
        config = ws.config
        surrogate_on = surrogate_state is not None
    else:
        ws = Workspace(config)
        surrogate_on = config["surrogate"]["enabled"]
        if surrogate_enabled is not None:
            surrogate_on = surrogate_enabled
        root = Rng(config["run"]["seed"])
        r_pre, r_gnn, r_surr, r_walk, r_train = root.split(5)
        dtype = ws.dtype
        wf_params, _ = run_pretrain_phase(ws, r_pre, dtype)
        gnn_params = ws.gnn.init_params(r_gnn, dtype=dtype)
        setup0 = ws.training_setup()
        walkers = init_walkers(setup0, wf_params, gnn_params, r_walk)
        state = TrainState(wf_params, gnn_params, walkers, t=0, rng=r_train)
        surrogate_state = None
        if surrogate_on:
            sparams = ws.surrogate_model.init_params(r_surr)
            surrogate_state = SurrogateTrainerState.init(
                ws.surrogate_model, sparams, ws.surrogate_hyper()
            )

    out_dir = config["run"]["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    from .config import dump_config
    from .records import atomic_write

    atomic_write(os.path.join(out_dir, "config.json"), dump_config(config) + "\n")
    setup = ws.training_setup()
    adapter = TrainingAdapter(surrogate_state) if surrogate_state is not None else None

    iterations = config["run"]["iterations"]
    ckpt_every = config["run"]["checkpoint_interval"]
    diag_every = config["run"]["diagnostics_interval"]
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    log_path = os.path.join(out_dir, "training_log.csv")
    diag_path = os.path.join(out_dir, "diagnostics.csv")

    t_start = time.time()
    with TrainingLogWriter(log_path, setup.settings.n_geometries) as writer, DiagnosticsWriter(
        diag_path
    ) as diag:
        while state.t < iterations:
            state, stats, row = train_step(state, setup, adapter)
            writer.write(row)
            if row["aborted"]:
                log.warning("step %d aborted (non-finite energies); walkers re-thermalized", row["t"])
            if state.t % diag_every == 0 or state.t == iterations:
                frac = _dead_fraction(ws, state)
                diag.write(state.t, frac)
            if state.t % ckpt_every == 0 or state.t == iterations:
                path = os.path.join(ckpt_dir, f"ckpt_{state.t:06d}.npz")
                surr = adapter.state if adapter else None
                save_joint_checkpoint(path, ws, state, surr)
    surr = adapter.state if adapter else None
    save_joint_checkpoint(os.path.join(out_dir, "final.npz"), ws, state, surr)
    log.info("training finished: %d iterations in %.1f min", state.t, (time.time() - t_start) / 60)
    return out_dir


def _dead_fraction(ws: Workspace, state: TrainState) -> float:
    w = state.walkers[0]
    geo = ws.domain.build(w.geom_params)
    theta = ws.gnn.adapt(state.gnn_params, state.wf_params, geo)
    batch = w.electrons[: min(256, len(w.electrons))]
    return ws.wf.dead_neuron_fraction(theta, batch, geo, ws.frame_for(geo))


def run_pretrain_only(config: dict) -> str:
    ws = Workspace(config)
    root = Rng(config["run"]["seed"])
    r_pre = root.split(1)[0]
    wf_params, losses = run_pretrain_phase(ws, r_pre, ws.dtype)
    out_dir = config["run"]["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "pretrained.npz")
    ckpt.save_checkpoint(
        path,
        kind="pretrain",
        config=config,
        t=0,
        trees={"wf": wf_params},
        scalars={"final_loss": losses[-1] if losses else None},
    )
    return path


# ---------------------------------------------------------------------------
# evaluation


def _resolve_grid(ws: Workspace, grid_file):
    from ..molecule import read_param_grid_csv

    if grid_file:
        return read_param_grid_csv(grid_file, ws.domain)
    return ws.grid


def run_eval_vmc(checkpoint_path, grid_file, n_samples, seed, out_dir, precision="f32"):
    meta, trees, extra = ckpt.load_checkpoint(checkpoint_path)
    if meta["kind"] == "hook":
        return _eval_hook(meta, n_samples, seed, out_dir)
    if meta["kind"] not in ("joint", "pretrain"):
        raise ckpt.CheckpointError(f"cannot evaluate checkpoint kind {meta['kind']!r}")
    ws = Workspace(meta["config"])
    wf_params = trees["wf"]
    gnn_params = trees.get("gnn")
    if precision == "f64":
        wf_params = tree_astype(wf_params, np.float64)
        gnn_params = tree_astype(gnn_params, np.float64) if gnn_params else None
    grid = _resolve_grid(ws, grid_file)
    ev = ws.config["evaluation"]
    n = int(n_samples or ev["n_samples"])
    rng = Rng(seed if seed is not None else ws.config["run"]["seed"] + 1)
    records = []
    for i, point in enumerate(np.atleast_2d(grid)):
        geometry = ws.domain.build(point)
        theta = (
            ws.gnn.adapt(gnn_params, wf_params, geometry) if gnn_params else wf_params
        )
        model = GeometryModel(ws, theta, geometry)
        child = rng.split(1)[0]
        energy, stderr = evaluate_energy(
            model, n, child, batch=ev["batch"], burn_in=ev["burn_in"], decorrelate=ev["decorrelate"]
        )
        records.append(EnergyRecord(tuple(point), energy, stderr, "vmc"))
        log.info("vmc %d/%d: E=%.6f +- %.1e", i + 1, len(grid), energy, stderr)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "records_vmc.csv")
    write_records_csv(path, ws.domain.names, records)
    return path


def _eval_hook(meta, n_samples, seed, out_dir):
    hook = HydrogenGroundState()
    rng = Rng(seed if seed is not None else 0)
    n = int(n_samples or 100_000)
    energy, stderr = evaluate_energy(hook, n, rng, batch=2048, burn_in=200)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "records_vmc.csv")
    write_records_csv(path, (), [EnergyRecord((), energy, stderr, "vmc")])
    return path


def run_eval_surrogate(checkpoint_path, grid_file, out_dir):
    meta, trees, extra = ckpt.load_checkpoint(checkpoint_path, expect_kind="joint")
    if "surr_merged" not in trees:
        raise ckpt.CheckpointError("checkpoint carries no surrogate parameters")
    ws = Workspace(meta["config"])
    params = tree_astype(trees["surr_merged"], np.float64)
    grid = _resolve_grid(ws, grid_file)
    grid = np.atleast_2d(grid) if np.size(grid) else np.zeros((0, ws.domain.n_params))
    records = []
    elapsed = 0.0
    if len(grid):
        positions = np.stack([ws.domain.build(p).positions for p in grid])
        t0 = time.perf_counter()
        energies = ws.surrogate_model.energy(params, positions)
        elapsed = time.perf_counter() - t0
        records = [
            EnergyRecord(tuple(p), float(e), None, "surrogate")
            for p, e in zip(grid, energies)
        ]
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "records_surrogate.csv")
    write_records_csv(path, ws.domain.names, records)
    latency_ms = (elapsed / len(grid) * 1e3) if len(grid) else 0.0
    log.info("surrogate: %d points, %.4f ms/point", len(grid), latency_ms)
    return path, latency_ms


def run_find_min(checkpoint_path, resolution, out_dir):
    from .records import atomic_write
    from .scan import find_minimum

    meta, trees, extra = ckpt.load_checkpoint(checkpoint_path, expect_kind="joint")
    if "surr_merged" not in trees:
        raise ckpt.CheckpointError("checkpoint carries no surrogate parameters")
    ws = Workspace(meta["config"])
    params = tree_astype(trees["surr_merged"], np.float64)

    def energy_fn(param_batch):
        positions = np.stack([ws.domain.build(p).positions for p in np.atleast_2d(param_batch)])
        return ws.surrogate_model.energy(params, positions)

    minima, energy = find_minimum(energy_fn, ws.domain, resolution)
    os.makedirs(out_dir, exist_ok=True)
    lines = [",".join(ws.domain.names) + ",energy"]
    for m in minima:
        lines.append(",".join(repr(float(v)) for v in m) + f",{energy!r}")
    atomic_write(os.path.join(out_dir, "minimum.csv"), "\n".join(lines) + "\n")
    return minima, energy
