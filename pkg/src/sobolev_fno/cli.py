"""Command-line driver: gen-data, train, sweep, export-figures and replay.

Every command writes a JSON run manifest next to its outputs. A flat
``key = value`` file passed with ``--config`` supplies defaults for any flag;
flags given on the command line win. Relative output paths are resolved
under ``$SOBOLEV_FNO_OUTPUT_ROOT`` when that variable is set.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .burgers import SolverConfig
from .container import ContainerError, sha256_file
from .datagen import DatasetBuildError, SamplerConfig, build_dataset, load_dataset, save_dataset
from .fno import FnoConfig, load_checkpoint
from .scaling import (
    DEFAULT_CONFIGS,
    fit_power_law,
    parse_config,
    read_records,
    run_sweep,
    scaling_report,
    write_records,
    write_report,
)
from .train import LearningCurve, TrainConfig, export_qualitative, train

log = logging.getLogger("sobolev_fno")

TOOL = "sobolev-fno"
ENV_OUTPUT_ROOT = "SOBOLEV_FNO_OUTPUT_ROOT"
MANIFEST_NAME = "manifest.json"
FIGURE_FILES = ("fig1_qualitative.csv", "fig2_learning_curves.csv", "fig3_long_runs.csv",
                "fig4_error_vs_params.csv")


class UsageError(Exception):
    """Bad flag values or combinations (exit status 2)."""


class RunError(Exception):
    """Missing inputs or failed runs (exit status 1)."""


def output_path(p) -> Path:
    p = Path(p)
    root = os.environ.get(ENV_OUTPUT_ROOT)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p.resolve()


def input_path(p, what: str) -> Path:
    if p is None:
        raise UsageError(f"missing required input: {what}")
    p = Path(p).resolve()
    if not p.exists():
        raise RunError(f"required {what} not found: {p}")
    return p


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def write_manifest(path: Path, command: str, args: argparse.Namespace, seeds: dict,
                   inputs, outputs, started: str) -> Path:
    """Record everything needed to regenerate ``outputs`` (see ``replay``)."""
    config = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    missing = [str(p) for p in outputs if not Path(p).is_file()]
    if missing:
        raise RunError(f"outputs were not written: {missing}")
    manifest = {
        "tool": TOOL,
        "version": __version__,
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "started": started,
        "finished": _now(),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# config file ---------------------------------------------------------------

def read_config_file(path) -> dict[str, str]:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (t.strip() for t in line.split("=", 1))
            values[key.lstrip("-").replace("-", "_")] = value
    return values


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def apply_config_file(sub: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, text in values.items():
        if key not in actions:
            raise UsageError(f"unknown config key {key!r} for this command")
        a = actions[key]
        try:
            if isinstance(a, argparse._StoreTrueAction):
                defaults[key] = _parse_bool(text)
            else:
                defaults[key] = a.type(text) if a.type else text
        except ValueError as exc:
            raise UsageError(f"config key {key!r}: {exc}") from exc
    sub.set_defaults(**defaults)


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    return [int(t) for t in _csv_list(text)]


# gen-data ------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    started = _now()
    if args.n_train < 0 or args.n_test < 0 or args.n_train + args.n_test == 0:
        raise UsageError("need --n-train >= 0, --n-test >= 0 and at least one sample")
    try:
        solver = SolverConfig(nu=args.nu, t_final=args.t_final, dt=args.dt, n=args.grid)
        sampler = SamplerConfig(radius=args.radius, k_max=args.k_max, decay=args.decay,
                                seed=args.seed, n=args.grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = output_path(args.out)
    args.out = str(out)
    try:
        ds = build_dataset(sampler, solver, args.n_train, args.n_test)
    except DatasetBuildError as exc:
        raise RunError(str(exc)) from exc
    save_dataset(ds, out)
    load_dataset(out).check()
    write_manifest(out.with_name(out.name + ".manifest.json"), "gen-data", args,
                   {"data": args.seed}, [], [out], started)
    log.info("wrote %d train / %d test pairs to %s", args.n_train, args.n_test, out)
    return 0


# train ---------------------------------------------------------------------

def _fno_config(args) -> FnoConfig:
    try:
        return FnoConfig(args.modes, args.width, activation=args.activation)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _train_config(args, seed=None) -> TrainConfig:
    try:
        return TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size,
                           seed=args.seed if seed is None else seed,
                           checkpoint_every=args.checkpoint_every)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load(path: Path):
    try:
        return load_dataset(path)
    except ContainerError as exc:
        raise RunError(f"cannot read dataset {path}: {exc}") from exc


def cmd_train(args) -> int:
    started = _now()
    data_path = input_path(args.data, "dataset (--data)")
    cfg = _fno_config(args)
    tc = _train_config(args)
    ds = _load(data_path)
    try:
        cfg.check_grid(ds.n)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if tc.batch_size > len(ds.train_u0):
        raise UsageError(f"--batch-size {tc.batch_size} exceeds {len(ds.train_u0)} training samples")
    out_dir = output_path(args.out_dir or f"runs/{cfg.label}")
    args.data, args.out_dir = str(data_path), str(out_dir)
    result = train(ds, cfg, tc, out_dir=out_dir)
    outputs = sorted(p for p in out_dir.iterdir() if p.suffix in (".csv", ".sfno"))
    for p in outputs:
        if p.suffix == ".sfno":
            load_checkpoint(p)
    write_manifest(out_dir / MANIFEST_NAME, "train", args,
                   {"train": tc.seed, "init": tc.seed, "data": ds.sampler.seed},
                   [data_path], outputs, started)
    curve = result.curve
    if curve.aborted:
        raise RunError(f"training aborted: {curve.abort_reason}")
    log.info("%s: best test loss %.3e at epoch %s, final %.3e", cfg.label,
             curve.best_test_loss, curve.best_epoch, curve.final_test_loss)
    return 0


# sweep ---------------------------------------------------------------------

def _write_reports(records, out_dir: Path, s: float, d: int) -> list[Path]:
    written = []
    for which in ("best", "final"):
        try:
            rep = scaling_report(records, which, s=s, d=d)
        except ValueError as exc:
            raise RunError(f"{which}-epoch fit rejected: {exc}") from exc
        written += write_report(rep, out_dir / f"report_{which}.json", out_dir / f"report_{which}.csv")
        fit = rep["fit"]
        print(f"{which}-epoch fit: C = {fit['C']:.4g}, alpha = {fit['alpha']:.4f}, "
              f"r^2 = {fit['r_squared']:.4f}, benchmark s/d = {rep['benchmark_exponent']:g}, "
              f"U-shape = {rep['u_shape']}")
    return written


def cmd_sweep(args) -> int:
    started = _now()
    out_dir = output_path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    args.out_dir = str(out_dir)
    if args.fit_only:
        src = input_path(args.fit_only, "sweep records file (--fit-only)")
        args.fit_only = str(src)
        try:
            records = read_records(src)
        except (KeyError, ValueError) as exc:
            raise UsageError(f"cannot parse records in {src}: {exc}") from exc
        outputs = _write_reports(records, out_dir, args.s, args.d)
        write_manifest(out_dir / MANIFEST_NAME, "sweep", args, {}, [src], outputs, started)
        return 0

    data_path = input_path(args.data, "dataset (--data)")
    args.data = str(data_path)
    try:
        configs = [parse_config(c) for c in _csv_list(args.configs)]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not configs:
        raise UsageError("--configs is empty")
    tc = _train_config(args)
    ds = _load(data_path)
    for cfg in configs:
        try:
            cfg.check_grid(ds.n)
        except ValueError as exc:
            raise UsageError(f"{cfg.label}: {exc}") from exc
    seeds = _int_list(args.seeds) if args.seeds else [tc.seed]
    records, _ = run_sweep(ds, configs, tc, out_dir=out_dir, seeds=seeds)
    rec_path = write_records(records, out_dir / "records.csv")
    outputs = [rec_path] + sorted(p for p in out_dir.glob("run_*/*") if p.suffix in (".csv", ".sfno"))
    for r in records:
        print(f"{r.modes}x{r.width}: N = {r.n_params}, best = {r.best_test_loss:.4g} "
              f"(epoch {r.best_epoch}), final = {r.final_test_loss:.4g}"
              + (" [aborted]" if r.aborted else ""))
    try:
        outputs += _write_reports(records, out_dir, args.s, args.d)
    finally:
        write_manifest(out_dir / MANIFEST_NAME, "sweep", args, {"train": seeds, "data": ds.sampler.seed},
                       [data_path], outputs, started)
    return 0


# export-figures ------------------------------------------------------------

def _run_dirs(sweep_dir: Path, records) -> dict[str, Path]:
    dirs = {}
    for r in records:
        label = f"{r.modes}x{r.width}"
        d = Path(r.run_dir) if r.run_dir else sweep_dir / f"run_{label}"
        if not (d / "curve.csv").exists():
            d = sweep_dir / f"run_{label}"
        dirs[label] = d
    return dirs


def _write_curves(path: Path, runs: dict[str, Path]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "epoch", "train_loss", "test_loss", "rel_err", "flag"])
        for name, d in runs.items():
            curve_file = d / "curve.csv"
            if not curve_file.exists():
                raise RunError(f"missing learning curve {curve_file}")
            for e, tr, te, rel, flag in LearningCurve.from_csv(curve_file).logged_rows():
                w.writerow([name, e, repr(tr), repr(te), repr(rel), int(flag)])
    return path


def cmd_export_figures(args) -> int:
    started = _now()
    sweep_dir = input_path(args.sweep_dir, "sweep directory (--sweep-dir)")
    rec_file = input_path(sweep_dir / "records.csv", "sweep records (records.csv)")
    data_path = input_path(args.data, "dataset (--data)")
    records = sorted(read_records(rec_file), key=lambda r: r.n_params)
    if not records:
        raise RunError(f"no sweep records in {rec_file}")
    runs = _run_dirs(sweep_dir, records)
    out_dir = output_path(args.out_dir or sweep_dir / "figures")
    out_dir.mkdir(parents=True, exist_ok=True)
    args.sweep_dir, args.data, args.out_dir = str(sweep_dir), str(data_path), str(out_dir)
    ds = _load(data_path)

    label = args.fig1_config or next(iter(runs))
    if label not in runs:
        raise UsageError(f"--fig1-config {label} is not part of the sweep ({', '.join(runs)})")
    ckpt = runs[label] / "checkpoint_best.sfno"
    if not ckpt.exists():
        raise RunError(f"missing checkpoint {ckpt}")
    params, _ = load_checkpoint(ckpt)
    if not 0 <= args.sample_index < len(ds.test_u0):
        raise UsageError(f"--sample-index must be in [0, {len(ds.test_u0)})")
    i = args.sample_index
    fig1 = export_qualitative(params, ds.test_u0[i], ds.test_uT[i], out_dir / FIGURE_FILES[0])

    fig2 = _write_curves(out_dir / FIGURE_FILES[1], runs)
    if args.long_runs:
        long_runs = {Path(p).name: input_path(p, "long-run directory") for p in _csv_list(args.long_runs)}
        args.long_runs = ",".join(str(p) for p in long_runs.values())
    else:
        # the sweep's largest model stands in when no dedicated long runs are given
        biggest = list(runs)[-1]
        long_runs = {biggest: runs[biggest]}
    fig3 = _write_curves(out_dir / FIGURE_FILES[2], long_runs)

    usable = [r for r in records if not r.aborted]
    fits = {}
    for which in ("best", "final"):
        pts = [(r.n_params, getattr(r, f"{which}_test_loss")) for r in usable]
        fits[which] = fit_power_law(pts) if len(pts) >= 2 else None
    if not usable:
        raise RunError("every sweep run aborted; nothing to plot against N")
    # N^-1 benchmark line anchored at the smallest usable model
    n0, e0 = usable[0].n_params, usable[0].best_test_loss
    fig4 = out_dir / FIGURE_FILES[3]
    with open(fig4, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config", "N", "best_test_loss", "final_test_loss", "rel_err", "aborted",
                    "best_fit", "final_fit", "benchmark_N^-1"])
        for r in records:
            row = [f"{r.modes}x{r.width}", r.n_params, repr(r.best_test_loss), repr(r.final_test_loss),
                   repr(r.rel_err), int(r.aborted)]
            for which in ("best", "final"):
                f = fits[which]
                row.append(repr(float(f.predict(r.n_params))) if f else "")
            row.append(repr(e0 * n0 / r.n_params))
            w.writerow(row)

    outputs = [fig1, fig2, fig3, fig4]
    for p in outputs:
        with open(p, newline="") as fh:
            if sum(1 for _ in csv.reader(fh)) < 2:
                raise RunError(f"figure file {p} has no data rows")
    inputs = [rec_file, data_path, ckpt] + [d / "curve.csv" for d in {**runs, **long_runs}.values()]
    write_manifest(out_dir / MANIFEST_NAME, "export-figures", args, {}, inputs, outputs, started)
    return 0


# replay --------------------------------------------------------------------

def cmd_replay(args) -> int:
    path = input_path(args.manifest, "manifest (--manifest)")
    try:
        manifest = json.loads(path.read_text())
        command, config, expected = manifest["command"], manifest["config"], manifest["outputs"]
    except (ValueError, KeyError) as exc:
        raise RunError(f"malformed manifest {path}: {exc}") from exc
    if command not in COMMANDS or command == "replay":
        raise RunError(f"manifest names unknown command {command!r}")
    if manifest.get("version") != __version__:
        log.warning("manifest written by version %s, replaying with %s", manifest.get("version"), __version__)
    for src, digest in manifest.get("inputs", {}).items():
        if not Path(src).exists() or sha256_file(src) != digest:
            raise RunError(f"input {src} is missing or differs from the manifest")
    ns = argparse.Namespace(**config)
    # paths in a manifest are already resolved; do not re-root them
    env = os.environ.pop(ENV_OUTPUT_ROOT, None)
    try:
        status = COMMANDS[command](ns)
    finally:
        if env is not None:
            os.environ[ENV_OUTPUT_ROOT] = env
    bad = [p for p, digest in expected.items() if not Path(p).is_file() or sha256_file(p) != digest]
    for p in bad:
        print(f"mismatch: {p}", file=sys.stderr)
    if bad:
        raise RunError(f"{len(bad)} of {len(expected)} outputs differ from the manifest")
    print(f"replayed {command}: {len(expected)} outputs identical")
    return status


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "export-figures": cmd_export_figures,
    "replay": cmd_replay,
}


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file with defaults for any flag")
    parser = argparse.ArgumentParser(prog=TOOL, description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sp = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["gen-data"] = sp.add_parser("gen-data", parents=[common], help="sample and solve a dataset")
    p.add_argument("--n-train", type=int, default=256)
    p.add_argument("--n-test", type=int, default=64)
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--nu", type=float, default=0.01)
    p.add_argument("--radius", type=float, default=0.3)
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--decay", type=float, default=2.0)
    p.add_argument("--t-final", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data/burgers.sfd")

    def training_flags(p):
        p.add_argument("--data")
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--batch-size", type=int, default=4)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--checkpoint-every", type=int, default=0)
        p.add_argument("--activation", default="gelu")

    p = subs["train"] = sp.add_parser("train", parents=[common], help="train one FNO")
    training_flags(p)
    p.add_argument("--modes", type=int, default=8)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--out-dir", help="default runs/MODESxWIDTH")

    p = subs["sweep"] = sp.add_parser("sweep", parents=[common], help="model-size sweep and power-law fits")
    training_flags(p)
    p.add_argument("--configs", default=",".join(f"{m}x{w}" for m, w in DEFAULT_CONFIGS))
    p.add_argument("--seeds", help="comma-separated training seeds; records hold per-config medians")
    p.add_argument("--fit-only", metavar="RECORDS_CSV", help="skip training and fit existing records")
    p.add_argument("--s", type=float, default=1.0, help="Sobolev order of the benchmark rate")
    p.add_argument("--d", type=int, default=1, help="spatial dimension of the benchmark rate")
    p.add_argument("--out-dir", default="sweep")

    p = subs["export-figures"] = sp.add_parser("export-figures", parents=[common],
                                               help="columnar data for the four figures")
    p.add_argument("--sweep-dir")
    p.add_argument("--data")
    p.add_argument("--sample-index", type=int, default=0)
    p.add_argument("--fig1-config", help="MODESxWIDTH of the run used for the qualitative sample")
    p.add_argument("--long-runs", help="comma-separated run directories for the long-horizon figure")
    p.add_argument("--out-dir", help="default SWEEP_DIR/figures")

    p = subs["replay"] = sp.add_parser("replay", parents=[common], help="re-run a manifest and compare outputs")
    p.add_argument("--manifest")
    return parser, subs


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            apply_config_file(subs[args.command], read_config_file(input_path(args.config, "config file")))
            args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        subs[args.command].print_usage(sys.stderr)
        print(f"{TOOL} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (RunError, ContainerError, OSError) as exc:
        print(f"{TOOL} {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
