"""Command-line entry points.

Heavy imports happen after thread environment variables are set, so
``--threads`` takes effect before the numerics stack loads.  Exit codes:
0 success, 1 usage or configuration error, 2 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

LOG_ENV = "PLANET_VMC_LOG"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vmcsurf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--precision", choices=["f32", "f64"], default=None)
        p.add_argument("--output-dir", default=None)

    p_train = sub.add_parser("train", help="pretrain, burn in, and run the joint loop")
    common(p_train)
    p_train.add_argument("--iterations", type=int, default=None)
    p_train.add_argument("--resume", default=None, help="resume from a joint checkpoint")
    p_train.add_argument("--no-surrogate", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_pre = sub.add_parser("pretrain", help="supervised orbital pretraining only")
    common(p_pre)
    p_pre.add_argument("--iterations", type=int, default=None)
    p_pre.set_defaults(func=cmd_pretrain)

    p_ev = sub.add_parser("eval-vmc", help="Monte Carlo energies over a geometry grid")
    common(p_ev, config=False)
    p_ev.add_argument("--checkpoint", required=True)
    p_ev.add_argument("--grid-file", default=None)
    p_ev.add_argument("--n-samples", type=int, default=None)
    p_ev.set_defaults(func=cmd_eval_vmc)

    p_es = sub.add_parser("eval-surrogate", help="millisecond energies from the surrogate")
    common(p_es, config=False)
    p_es.add_argument("--checkpoint", required=True)
    p_es.add_argument("--grid-file", default=None)
    p_es.set_defaults(func=cmd_eval_surrogate)

    p_fm = sub.add_parser("find-min", help="dense 64-bit scan plus quadratic refinement")
    common(p_fm, config=False)
    p_fm.add_argument("--checkpoint", required=True)
    p_fm.add_argument("--resolution", type=float, required=True)
    p_fm.set_defaults(func=cmd_find_min)

    p_rep = sub.add_parser("report", help="summarize a completed run directory")
    p_rep.add_argument("run_dir")
    p_rep.set_defaults(func=cmd_report)
    return parser


def _setup_environment(args):
    threads = getattr(args, "threads", None)
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)
    level = os.environ.get(LOG_ENV, "info").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )


def _load_config(args):
    from .config import load_config_file

    config = load_config_file(args.config)
    run = config["run"]
    if getattr(args, "seed", None) is not None:
        run["seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        run["iterations"] = args.iterations
    if getattr(args, "output_dir", None) is not None:
        run["output_dir"] = args.output_dir
    if getattr(args, "precision", None) is not None:
        run["precision"] = args.precision
    if getattr(args, "threads", None) is not None:
        run["threads"] = args.threads
    return config


def cmd_train(args) -> int:
    from .pipeline import run_training

    config = _load_config(args)
    surrogate_enabled = False if args.no_surrogate else None
    out = run_training(config, resume=args.resume, surrogate_enabled=surrogate_enabled)
    print(out)
    return 0


def cmd_pretrain(args) -> int:
    from .pipeline import run_pretrain_only

    config = _load_config(args)
    path = run_pretrain_only(config)
    print(path)
    return 0


def cmd_eval_vmc(args) -> int:
    from .pipeline import run_eval_vmc

    out_dir = args.output_dir or os.path.dirname(os.path.abspath(args.checkpoint))
    path = run_eval_vmc(
        args.checkpoint, args.grid_file, args.n_samples, args.seed, out_dir,
        precision=args.precision or "f32",
    )
    print(path)
    return 0


def cmd_eval_surrogate(args) -> int:
    from .pipeline import run_eval_surrogate

    out_dir = args.output_dir or os.path.dirname(os.path.abspath(args.checkpoint))
    path, latency_ms = run_eval_surrogate(args.checkpoint, args.grid_file, out_dir)
    print(path)
    print(f"per-point latency: {latency_ms:.4f} ms")
    return 0


def cmd_find_min(args) -> int:
    from .pipeline import run_find_min

    out_dir = args.output_dir or os.path.dirname(os.path.abspath(args.checkpoint))
    minima, energy = run_find_min(args.checkpoint, args.resolution, out_dir)
    print(json.dumps({"minima": [m.tolist() for m in minima], "energy": energy}))
    return 0


def cmd_report(args) -> int:
    from .reports import generate_report

    summary = generate_report(args.run_dir)
    print(json.dumps(summary))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_environment(args)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 0
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # classify for the contracted exit codes
        from ..engine import DivergenceError

        logging.getLogger("vmcsurf").error("%s", exc)
        if isinstance(exc, DivergenceError):
            return 2
        if _is_user_error(exc):
            return 1
        raise


def _is_user_error(exc) -> bool:
    from .checkpoint import CheckpointError
    from .config import ConfigError

    return isinstance(exc, (ConfigError, CheckpointError, ValueError, FileNotFoundError, OSError))


if __name__ == "__main__":
    sys.exit(main())
