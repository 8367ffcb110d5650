"""Command-line entry point: ingest, simulate-abc, train, rollout, validate, compare.

Every command writes a ``.meta`` sidecar next to its main output recording
the resolved configuration and seed. A sidecar can be passed back through
``--config`` to reproduce the outputs byte for byte.
"""

from __future__ import annotations

import argparse
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, metrics
from .burst_coast import BurstCoastModel, InteractionParams, KickDistributions
from .core import ArenaSpec
from .dli import DLIRegressor, file_digest, train
from .engine import RolloutConfig, rollout
from .ingest import IngestPipeline, chunk, normalize, split
from .trajio import (TrajectoryFormatError, load_csv, read_kv, read_segments,
                     sidecar_path, write_csv, write_kv)

# Flags that never influence output bytes and are left out of sidecars.
_UNRECORDED = {"config", "force", "jobs", "func", "command", "verbose"}


class CLIError(Exception):
    pass


def sub_seed(seed, name):
    """Named sub-stream of the master seed, as a plain integer."""
    ss = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _positive_int(text):
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _flag(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text}")


def _arena_args(p):
    p.add_argument("--radius", type=_positive_float, default=25.0, help="arena radius in cm")
    p.add_argument("--dt", type=_positive_float, default=0.12, help="tick length in s")


def build_parser():
    parser = argparse.ArgumentParser(prog="fishinteract", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--config", help="key = value file; flags given on the command line win")
    common.add_argument("--jobs", type=_positive_int, default=1, help="worker processes across runs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="clean, resample and store raw recordings")
    p.add_argument("--input", required=True, help="directory of raw t,agent,x,y CSV files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--bl", type=_positive_float, default=3.5, help="body length in cm")
    _arena_args(p)
    p.add_argument("--source-dt", type=_positive_float, default=0.04)
    p.add_argument("--max-gap", type=int, default=5)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("simulate-abc", parents=[common], help="burst-and-coast pair simulation")
    p.add_argument("--steps", type=_positive_int, default=500_000)
    _arena_args(p)
    p.add_argument("--params", help="interaction parameter file (key = value)")
    p.add_argument("--kicks", help="kick table CSV l_cm,tau_s,weight")
    p.add_argument("--out", required=True, help="output trajectory CSV")
    p.set_defaults(func=cmd_simulate_abc)

    p = sub.add_parser("train", parents=[common], help="train the acceleration network")
    p.add_argument("--data", required=True, help="trajectory CSV or directory of CSVs")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--ablation", choices=("dli", "mli"), default="dli")
    p.add_argument("--epochs", type=_positive_int, default=45)
    p.add_argument("--batch-size", type=_positive_int, default=512)
    p.add_argument("--lr", type=_positive_float, default=1e-4)
    p.add_argument("--decay", type=float, default=1e-4)
    p.add_argument("--chunk", type=_positive_int, default=500, help="segment chunk length for splitting")
    _arena_args(p)
    p.add_argument("--log", help="training log CSV (default: <out stem>.log.csv)")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout", parents=[common], help="closed-loop rollout of a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--steps", type=_positive_int, default=500_000)
    p.add_argument("--agents", type=int, default=2)
    p.add_argument("--containment", choices=("reflect", "clamp"), default="reflect")
    p.add_argument("--strict-paper-noise", type=_flag, nargs="?", const=True, default=False,
                   help="scale the y noise by sigma_x, as the printed update literally reads")
    _arena_args(p)
    p.add_argument("--out", required=True, help="output trajectory CSV")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("validate", parents=[common], help="observable battery for one dataset")
    p.add_argument("--input", required=True, help="trajectory CSV or directory of CSVs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--radius", type=_positive_float, default=25.0)
    p.add_argument("--max-lag", type=_positive_float, default=25.0, help="longest correlation lag in s")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("compare", parents=[common], help="total-variation table between two datasets")
    p.add_argument("a", nargs="?", help="validate output directory or trajectory CSV/directory")
    p.add_argument("b", nargs="?")
    p.add_argument("--radius", type=_positive_float, default=25.0)
    p.add_argument("--out", help="report file (key = value)")
    p.set_defaults(func=cmd_compare)
    return parser


def _apply_config(parser, argv):
    """Parse ``argv``; values from ``--config`` fill in flags not given explicitly."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((tok for tok in argv if tok in choices), None)
    if not known.config or command is None:
        return parser.parse_args(argv)
    path = Path(known.config)
    if not path.is_file():
        raise CLIError(f"config file not found: {path}")
    conf = read_kv(path)
    cmd = conf.pop("command", command)
    if cmd != command:
        raise CLIError(f"{path} is a config for '{cmd}', not '{command}'")
    subparser = choices[command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, text in conf.items():
        if key.startswith("info.") or key == "version":
            continue
        dest = key.replace("-", "_")
        if dest not in actions or dest in _UNRECORDED:
            raise CLIError(f"{path}: unknown key '{key}' for '{command}'")
        action = actions[dest]
        if text == "None":
            defaults[dest] = None
        elif isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = _flag(text)
        elif action.type is not None:
            try:
                defaults[dest] = action.type(text)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise CLIError(f"{path}: bad value for '{key}': {exc}") from None
        else:
            defaults[dest] = text
        action.required = False
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _record(args, **info):
    out = {"command": args.command, "version": __version__}
    for key, value in sorted(vars(args).items()):
        if key not in _UNRECORDED:
            out[key] = value
    for key, value in info.items():
        out[f"info.{key}"] = value
    return out


def _check_outputs(paths, force):
    for p in paths:
        if Path(p).exists() and not force:
            raise CLIError(f"{p} exists; pass --force to overwrite")


def _csv_files(path):
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise CLIError(f"no CSV files in {path}")
        return files
    if path.is_file():
        return [path]
    raise CLIError(f"no such file or directory: {path}")


def _load_segments(path):
    segments = []
    for f in _csv_files(path):
        segments.extend(read_segments(f))
    return segments


def _ingest_one(path, params):
    pipe = IngestPipeline(**params)
    return pipe.clean_run(load_csv(path))


def cmd_ingest(args):
    src = Path(args.input)
    if not src.is_dir():
        raise CLIError(f"input directory not found: {src}")
    files = _csv_files(src)
    out = Path(args.out)
    targets = [out / f.name for f in files]
    meta = out / "ingest.meta"
    _check_outputs(targets + [meta], args.force)
    params = dict(body_length=args.bl, radius=args.radius, dt=args.dt, source_dt=args.source_dt,
                  max_gap=args.max_gap, seed=args.seed)
    IngestPipeline(**params).fit()
    if args.jobs > 1 and len(files) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_ingest_one, files, [params] * len(files)))
    else:
        results = [_ingest_one(f, params) for f in files]
    totals = {"frames_in": 0, "out": 0, "removed_inactive": 0, "removed_leap": 0, "boundary_dropped": 0}
    all_segments = []
    for segs, counts in results:
        all_segments.extend(segs)
        for key in totals:
            totals[key] += counts[key]
    # raises if any cleaned frame sits outside the arena
    normalize(all_segments, args.radius, ArenaSpec(args.radius, args.bl, args.dt))
    out.mkdir(parents=True, exist_ok=True)
    for target, (segs, _) in zip(targets, results):
        write_csv(target, segs)
    totals["segments"] = len(all_segments)
    write_kv(meta, _record(args, scale=args.radius, files=len(files), **totals))
    for key, value in totals.items():
        print(f"{key} = {value}")
    return 0


def cmd_simulate_abc(args):
    out = Path(args.out)
    _check_outputs([out, sidecar_path(out)], args.force)
    params = InteractionParams.load(args.params) if args.params else InteractionParams()
    kwargs = {"radius": args.radius}
    if args.kicks:
        kwargs["distributions"] = KickDistributions.from_csv(args.kicks)
    model = BurstCoastModel.from_params(params, **kwargs)
    traj = model.trajectory(args.steps, args.dt, seed=sub_seed(args.seed, "simulate"))
    _finite(traj.positions, "simulation")
    write_csv(out, traj)
    info = {f"param.{k}": v for k, v in vars(params).items()}
    write_kv(sidecar_path(out), _record(args, **info))
    return 0


def _finite(array, what):
    if not np.all(np.isfinite(array)):
        raise CLIError(f"{what} produced non-finite values")


def cmd_train(args):
    out = Path(args.out)
    log = Path(args.log) if args.log else out.with_name(out.stem + ".log.csv")
    _check_outputs([out, log, sidecar_path(out)], args.force)
    segments = _load_segments(args.data)
    dataset = chunk(normalize(segments, args.radius, ArenaSpec(args.radius, dt=args.dt)), args.chunk)
    tr, va, te = split(dataset, (0.8, 0.15, 0.05), seed=sub_seed(args.seed, "split"))
    model = DLIRegressor(ablation=args.ablation, epochs=args.epochs, batch_size=args.batch_size,
                         lr=args.lr, decay=args.decay, seed=sub_seed(args.seed, "train"),
                         verbose=args.verbose)
    train(model, tr, va)
    _finite(np.array([h[1:] for h in model.history_]), "training")
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    model.write_log(log)
    digests = ",".join(file_digest(f) for f in _csv_files(args.data))
    write_kv(sidecar_path(out), _record(args, data_sha256=digests, best_epoch=model.best_epoch_,
                                        checkpoint_sha256=file_digest(out),
                                        segments=f"{len(tr.segments)},{len(va.segments)},{len(te.segments)}"))
    return 0


def cmd_rollout(args):
    out = Path(args.out)
    _check_outputs([out, sidecar_path(out)], args.force)
    if not Path(args.model).is_file():
        raise CLIError(f"model not found: {args.model}")
    model = DLIRegressor.load(args.model)
    config = RolloutConfig(steps=args.steps, dt=args.dt, seed=sub_seed(args.seed, "rollout"),
                           containment=args.containment, n_agents=args.agents,
                           strict_paper_noise=args.strict_paper_noise, radius=args.radius)
    traj, info = rollout(model, config)
    _finite(traj.positions, "rollout")
    write_csv(out, traj)
    write_kv(sidecar_path(out), _record(args, model_sha256=file_digest(args.model), **info))
    print(f"containment_interventions = {info['containment_interventions']}")
    return 0


def cmd_validate(args):
    out = Path(args.out)
    _check_outputs([out / "report.txt", out / "validate.meta"], args.force)
    segments = _load_segments(args.input)
    results = metrics.validate(segments, out, radius=args.radius, max_lag_s=args.max_lag)
    for name, res in results.items():
        values = res.density if isinstance(res, metrics.Histogram) else res.values
        _finite(values, name)
    write_kv(out / "validate.meta", _record(args, frames=sum(s.n_frames for s in segments)))
    return 0


def _pdfs_for(path, radius):
    path = Path(path)
    if path.is_dir() and (path / "pdf_V.csv").is_file():
        return {name: metrics.read_histogram_csv(path / f"pdf_{name}.csv", metrics.DEFAULT_BINS[name])
                for name in metrics.OBSERVABLES}
    pdfs = metrics.instantaneous_pdfs(_load_segments(path), radius, roles=False)
    return {name: pdfs[name] for name in metrics.OBSERVABLES}


def cmd_compare(args):
    if args.a is None or args.b is None:
        raise CLIError("compare needs two inputs")
    if args.out:
        _check_outputs([args.out, sidecar_path(args.out)], args.force)
    a = _pdfs_for(args.a, args.radius)
    b = _pdfs_for(args.b, args.radius)
    table = {f"tv.{name}": metrics.compare(a[name], b[name]) for name in metrics.OBSERVABLES}
    for key, value in table.items():
        print(f"{key:12s} {value:.6f}")
    if args.out:
        write_kv(args.out, {"a": args.a, "b": args.b, **table})
        write_kv(sidecar_path(args.out), _record(args))
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except (CLIError, TrajectoryFormatError, FileExistsError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
