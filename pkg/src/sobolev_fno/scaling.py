"""Model-size sweeps and power-law fits of error against parameter count."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .datagen import Dataset
from .fno import FnoConfig, param_count
from .train import TrainConfig, TrainResult, train

log = logging.getLogger(__name__)

DEFAULT_CONFIGS = ((8, 32), (12, 48), (16, 64), (24, 96))


@dataclass
class SweepRecord:
    modes: int
    width: int
    n_params: int
    final_test_loss: float
    best_test_loss: float
    best_epoch: int | None
    rel_err: float
    aborted: bool = False
    run_dir: str | None = None

    def __post_init__(self):
        if self.n_params <= 0:
            raise ValueError("parameter count must be positive")
        if not self.aborted and self.best_test_loss > self.final_test_loss:
            raise ValueError("best test loss cannot exceed the final test loss")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PowerLawFit:
    C: float
    alpha: float
    r_squared: float
    points: tuple

    def predict(self, N) -> np.ndarray:
        return self.C * np.asarray(N, dtype=np.float64) ** (-self.alpha)

    def to_dict(self) -> dict:
        return {"C": self.C, "alpha": self.alpha, "r_squared": self.r_squared,
                "points": [list(p) for p in self.points]}


def parse_config(label: str) -> FnoConfig:
    """``"8x32"`` -> FnoConfig(modes=8, width=32)."""
    try:
        m, w = label.lower().split("x")
        return FnoConfig(int(m), int(w))
    except ValueError as exc:
        raise ValueError(f"bad config {label!r}, expected MODESxWIDTH") from exc


def default_configs() -> list[FnoConfig]:
    return [FnoConfig(m, w) for m, w in DEFAULT_CONFIGS]


def record_from_result(result: TrainResult, run_dir=None) -> SweepRecord:
    curve = result.curve
    cfg = result.config
    if not curve.records:
        return SweepRecord(cfg.modes, cfg.width, param_count(cfg), math.inf, math.inf, None,
                           math.inf, True, str(run_dir) if run_dir else None)
    best_rec = next(r for r in curve.records if r.epoch == curve.best_epoch)
    return SweepRecord(cfg.modes, cfg.width, param_count(cfg), curve.final_test_loss,
                       curve.best_test_loss, curve.best_epoch, best_rec.rel_err,
                       curve.aborted, str(run_dir) if run_dir else None)


def run_sweep(dataset: Dataset, configs: Sequence[FnoConfig], train_cfg: TrainConfig,
              out_dir=None, seeds: Sequence[int] | None = None
              ) -> tuple[list[SweepRecord], dict[str, TrainResult]]:
    """Train each configuration independently with the same data.

    With several ``seeds`` every configuration is trained once per seed and its
    record holds per-config medians over the non-aborted runs.
    """
    if not configs:
        raise ValueError("sweep needs at least one configuration")
    seeds = [train_cfg.seed] if not seeds else list(seeds)
    records, results = [], {}
    for cfg in configs:
        per_seed = []
        for seed in seeds:
            tag = cfg.label if len(seeds) == 1 else f"{cfg.label}_seed{seed}"
            run_dir = Path(out_dir) / f"run_{tag}" if out_dir is not None else None
            log.info("sweep: training %s (%d parameters)", tag, param_count(cfg))
            result = train(dataset, cfg, replace(train_cfg, seed=seed), out_dir=run_dir)
            rec = record_from_result(result, run_dir)
            if rec.aborted:
                log.warning("run %s aborted (%s); excluded from fits", tag, result.curve.abort_reason)
            per_seed.append(rec)
            results[tag] = result
        records.append(per_seed[0] if len(per_seed) == 1 else _median_record(per_seed))
    return records, results


def _median_record(recs: list[SweepRecord]) -> SweepRecord:
    ok = [r for r in recs if not r.aborted] or recs
    med = lambda key: float(np.median([getattr(r, key) for r in ok]))
    best, final = med("best_test_loss"), med("final_test_loss")
    first = ok[0]
    return SweepRecord(first.modes, first.width, first.n_params, max(final, best), best,
                       None, med("rel_err"), all(r.aborted for r in recs), None)


def fit_power_law(points: Iterable[tuple[float, float]]) -> PowerLawFit:
    """Ordinary least squares of ln(error) on ln(N): error ~ C N^-alpha."""
    pts = tuple((float(N), float(e)) for N, e in points)
    if len(pts) < 2:
        raise ValueError("power-law fit needs >= 2 points")
    N = np.array([p[0] for p in pts])
    err = np.array([p[1] for p in pts])
    if np.any(N <= 0) or np.any(err <= 0) or not np.all(np.isfinite(err)):
        raise ValueError("parameter counts and errors must be positive and finite")
    if len(np.unique(N)) != len(N):
        raise ValueError("duplicate parameter counts in power-law fit")
    x, y = np.log(N), np.log(err)
    xc = x - x.mean()
    slope = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return PowerLawFit(math.exp(intercept), -slope, r2, pts)


def benchmark_exponent(s: float, d: int = 1) -> float:
    """Rate s/d of the projection bound; only meaningful for s > d/2."""
    if d < 1 or int(d) != d:
        raise ValueError(f"dimension must be a positive integer, got {d}")
    if not s > d / 2:
        raise ValueError(f"the rate bound requires s > d/2 (got s={s}, d={d})")
    return s / d


def scaling_report(records: Sequence[SweepRecord], which: str = "best",
                   s: float = 1.0, d: int = 1) -> dict:
    """Log-log points, the least-squares fit, the N^(-s/d) benchmark line and a U-shape flag.

    The U-shape flag compares the reported errors at the two ends of the N
    range: it is set when the largest model is worse than the smallest.
    """
    if which not in ("best", "final"):
        raise ValueError("which must be 'best' or 'final'")
    usable = sorted((r for r in records if not r.aborted), key=lambda r: r.n_params)
    excluded = [f"{r.modes}x{r.width}" for r in records if r.aborted]
    if len(usable) < 2:
        raise ValueError(f"need >= 2 usable records for a fit, got {len(usable)}")
    key = "best_test_loss" if which == "best" else "final_test_loss"
    points = [(r.n_params, getattr(r, key)) for r in usable]
    fit = fit_power_law(points)
    rate = benchmark_exponent(s, d)
    N = np.array([p[0] for p in points], dtype=np.float64)
    # benchmark line anchored at the smallest model's error
    bench = points[0][1] * (N / N[0]) ** (-rate)
    u_shape = points[-1][1] > points[0][1]
    return {
        "which": which,
        "points": [{"N": int(n), "error": e, "log10_N": math.log10(n), "log10_error": math.log10(e),
                    "fit": float(fit.predict(n)), "benchmark": float(b)}
                   for (n, e), b in zip(points, bench)],
        "fit": fit.to_dict(),
        "benchmark_exponent": rate,
        "alpha_over_benchmark": fit.alpha / rate,
        "u_shape": bool(u_shape),
        "excluded": excluded,
    }


def write_report(report: dict, json_path, csv_path=None) -> list[Path]:
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    written = [json_path]
    if csv_path is not None:
        csv_path = Path(csv_path)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["N", "error", "fit", "benchmark"])
            for p in report["points"]:
                w.writerow([p["N"], repr(p["error"]), repr(p["fit"]), repr(p["benchmark"])])
        written.append(csv_path)
    return written


def write_records(records: Sequence[SweepRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(SweepRecord.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.to_dict().items()})
    return path


def read_records(path) -> list[SweepRecord]:
    """Read sweep records; only ``N`` and a loss column are required.

    Accepts either the CSV written by :func:`write_records` or a minimal
    table with columns ``N,best_test_loss[,final_test_loss]``.
    """
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            n_params = int(float(row.get("n_params") or row["N"]))
            best = float(row.get("best_test_loss") or row["final_test_loss"])
            final = float(row.get("final_test_loss") or best)
            best_epoch = row.get("best_epoch")
            out.append(SweepRecord(
                int(row.get("modes") or 0), int(row.get("width") or 0), n_params, final, best,
                int(best_epoch) if best_epoch not in (None, "", "None") else None,
                float(row.get("rel_err") or "nan"),
                str(row.get("aborted", "False")) == "True", row.get("run_dir") or None))
    return out
