"""Adam training loop for the FNO under the discrete H^1 loss."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datagen import Dataset
from .fno import FnoConfig, FnoParams, backward, forward, forward_tape, init_params, save_checkpoint
from .loss import h1_loss_gradient
from .spectral import derivative, h1_fd_norm_sq

log = logging.getLogger(__name__)

EVAL_CHUNK = 32


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0          # 0 disables periodic checkpoints
    instability_ratio: float = 10.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0:
            raise ValueError(f"learning rate must be nonnegative, got {self.lr}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros(cls, params: FnoParams) -> "AdamState":
        views = params.real_views()
        return cls([np.zeros_like(a) for a in views], [np.zeros_like(a) for a in views])


def adam_step(params: FnoParams, grads: FnoParams, state: AdamState, cfg: TrainConfig):
    """Bias-corrected Adam update in place; complex weights are updated as (re, im) pairs."""
    gviews = grads.real_views()
    for g in gviews:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient at optimizer step {state.t + 1}")
    pviews = params.real_views()
    if len(gviews) != len(pviews) or any(a.shape != b.shape for a, b in zip(gviews, pviews)):
        raise ValueError("gradient layout does not match parameters")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    step = cfg.lr / (1.0 - b1 ** state.t)
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(pviews, gviews, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= step * m / (np.sqrt(v / bc2) + cfg.eps)
    return params, state


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_loss: float
    rel_err: float
    wall_time: float = 0.0
    flagged: bool = False


@dataclass
class LearningCurve:
    records: list = field(default_factory=list)
    best_epoch: int | None = None
    best_test_loss: float = math.inf
    aborted: bool = False
    abort_reason: str = ""

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        self.records.append(rec)
        if rec.test_loss < self.best_test_loss:
            self.best_test_loss = rec.test_loss
            self.best_epoch = rec.epoch

    @property
    def final_test_loss(self) -> float:
        return self.records[-1].test_loss if self.records else math.inf

    @property
    def test_losses(self) -> np.ndarray:
        return np.array([r.test_loss for r in self.records])

    def logged_rows(self) -> list[tuple]:
        """Everything except wall-clock time, which is not reproducible."""
        return [(r.epoch, r.train_loss, r.test_loss, r.rel_err, r.flagged) for r in self.records]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "test_loss", "rel_err", "flag"])
            for e, tr, te, rel, flag in self.logged_rows():
                w.writerow([e, repr(tr), repr(te), repr(rel), int(flag)])
            if self.aborted:
                w.writerow(["# aborted", self.abort_reason, "", "", ""])
        return path

    @classmethod
    def from_csv(cls, path) -> "LearningCurve":
        curve = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["epoch"].startswith("#"):
                    curve.aborted, curve.abort_reason = True, row["train_loss"]
                    continue
                curve.append(EpochRecord(int(row["epoch"]), float(row["train_loss"]),
                                         float(row["test_loss"]), float(row["rel_err"]),
                                         flagged=bool(int(row["flag"]))))
        return curve


@dataclass
class Evaluation:
    mean_loss: float
    rel_err: float
    per_sample: np.ndarray


def predict(params: FnoParams, u0, chunk: int = EVAL_CHUNK) -> np.ndarray:
    u0 = np.atleast_2d(u0)
    return np.concatenate([forward(params, u0[i:i + chunk]) for i in range(0, len(u0), chunk)])


def evaluate(params: FnoParams, u0, uT) -> Evaluation:
    """Mean H^1 loss, global relative H^1 error and per-sample squared errors."""
    u0, uT = np.atleast_2d(u0), np.atleast_2d(uT)
    if len(u0) == 0:
        raise ValueError("cannot evaluate on an empty split")
    return evaluate_predictions(predict(params, u0), uT)


def evaluate_predictions(pred, uT) -> Evaluation:
    per = h1_fd_norm_sq(pred - uT)
    denom = float(np.sum(h1_fd_norm_sq(uT)))
    rel = math.sqrt(float(np.sum(per)) / denom) if denom > 0 else math.inf
    return Evaluation(float(np.mean(per)), rel, per)


@dataclass
class TrainResult:
    final_params: FnoParams
    best_params: FnoParams
    curve: LearningCurve
    config: FnoConfig
    train_config: TrainConfig


def train(dataset: Dataset, fno_cfg: FnoConfig, train_cfg: TrainConfig,
          out_dir=None, init: FnoParams | None = None) -> TrainResult:
    """Mini-batch Adam on the H^1 loss with full train/test evaluation after every epoch.

    When ``out_dir`` is given, best/final checkpoints (plus periodic ones at
    ``checkpoint_every``) and the curve CSV are written there.
    """
    fno_cfg.check_grid(dataset.n)
    X, Y = dataset.train_u0, dataset.train_uT
    Xt, Yt = dataset.test_u0, dataset.test_uT
    if len(X) == 0 or len(Xt) == 0:
        raise ValueError("training needs nonempty train and test splits")
    if train_cfg.batch_size > len(X):
        raise ValueError(f"batch size {train_cfg.batch_size} exceeds {len(X)} training samples")
    out_dir = Path(out_dir) if out_dir is not None else None

    params = init.copy() if init is not None else init_params(fno_cfg, train_cfg.seed)
    best = params.copy()
    state = AdamState.zeros(params)
    curve = LearningCurve()
    t_start = time.perf_counter()
    prev_test = None

    for epoch in range(1, train_cfg.epochs + 1):
        order = np.random.default_rng([train_cfg.seed, epoch]).permutation(len(X))
        try:
            for start in range(0, len(order), train_cfg.batch_size):
                idx = order[start:start + train_cfg.batch_size]
                out, tape = forward_tape(params, X[idx])
                grads = backward(params, tape, h1_loss_gradient(out, Y[idx]))
                adam_step(params, grads, state, train_cfg)
            tr = evaluate(params, X, Y)
            te = evaluate(params, Xt, Yt)
        except FloatingPointError as exc:
            curve.aborted, curve.abort_reason = True, f"epoch {epoch}: {exc}"
            log.warning("training aborted: %s", curve.abort_reason)
            break
        if not (math.isfinite(tr.mean_loss) and math.isfinite(te.mean_loss)):
            curve.aborted, curve.abort_reason = True, f"epoch {epoch}: non-finite loss"
            log.warning("training aborted: %s", curve.abort_reason)
            break
        flagged = prev_test is not None and te.mean_loss > train_cfg.instability_ratio * prev_test
        prev_test = te.mean_loss
        improved = te.mean_loss < curve.best_test_loss
        curve.append(EpochRecord(epoch, tr.mean_loss, te.mean_loss, te.rel_err,
                                 time.perf_counter() - t_start, flagged))
        log.info("%s epoch %d train %.3e test %.3e rel %.3e%s", fno_cfg.label, epoch,
                 tr.mean_loss, te.mean_loss, te.rel_err, " [unstable]" if flagged else "")
        if improved:
            best = params.copy()
            if out_dir is not None:
                save_checkpoint(best, out_dir / "checkpoint_best.sfno", epoch, te.mean_loss)
        if out_dir is not None and train_cfg.checkpoint_every and epoch % train_cfg.checkpoint_every == 0:
            save_checkpoint(params, out_dir / f"checkpoint_epoch{epoch:05d}.sfno", epoch, te.mean_loss)

    if out_dir is not None:
        last = curve.records[-1] if curve.records else None
        save_checkpoint(params, out_dir / "checkpoint_final.sfno",
                        last.epoch if last else 0, last.test_loss if last else None)
        curve.to_csv(out_dir / "curve.csv")
    return TrainResult(params, best, curve, fno_cfg, train_cfg)


def export_qualitative(params: FnoParams, u0, u_true, path) -> Path:
    """Columns x, u0, u_true, u_pred, du_true, du_pred with spectral derivatives."""
    u0 = np.asarray(u0, dtype=np.float64)
    u_true = np.asarray(u_true, dtype=np.float64)
    u_pred = forward(params, u0)
    n = u0.shape[-1]
    cols = {
        "x": np.arange(n) / n,
        "u0": u0,
        "u_true": u_true,
        "u_pred": u_pred,
        "du_true": derivative(u_true),
        "du_pred": derivative(u_pred),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in zip(*cols.values()):
            w.writerow([repr(float(v)) for v in row])
    return path


def read_columns(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]} if rows else {}
