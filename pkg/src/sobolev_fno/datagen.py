"""Random initial conditions in a bounded H^1 ball and (u0, u(., T)) datasets."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import container
from .burgers import SolverBlowupError, SolverConfig, solve
from .spectral import PeriodicGrid, hs_norm

SPLITS = {"train": 0, "test": 1}
RADIUS_SLACK = 1e-12


class DatasetBuildError(RuntimeError):
    def __init__(self, split: str, index: int, cause: Exception):
        self.split, self.index = split, index
        super().__init__(f"solver failed on {split} sample {index}: {cause}")


@dataclass(frozen=True)
class SamplerConfig:
    radius: float = 0.3
    k_max: int = 8
    decay: float = 2.0
    zero_mean: bool = True
    seed: int = 0
    n: int = 256

    def __post_init__(self):
        PeriodicGrid(self.n)
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if self.k_max < 1:
            raise ValueError(f"k_max must be >= 1, got {self.k_max}")
        if self.k_max > self.n // 3:
            raise ValueError(f"k_max = {self.k_max} exceeds the dealiasing limit n/3 = {self.n // 3}")
        if not self.decay > 0:
            raise ValueError(f"decay must be positive, got {self.decay}")

    def to_dict(self) -> dict:
        return asdict(self)


def sample_rng(seed: int, split: str, index: int) -> np.random.Generator:
    """Counter-based stream keyed on (seed, split, index)."""
    ss = np.random.SeedSequence([int(seed) % 2**64, SPLITS[split], int(index)])
    return np.random.Generator(np.random.Philox(ss))


def sample_initial_condition(cfg: SamplerConfig, draw_index: int, split: str = "train") -> np.ndarray:
    """One random trigonometric polynomial with H^1 norm in [R/2, R].

    Coefficients of cos/sin(2 pi k x) are N(0, k^(-2 decay)); the draw is then
    rescaled to r R / ||f||_{H^1} with r ~ U[0.5, 1].
    """
    rng = sample_rng(cfg.seed, split, draw_index)
    x = PeriodicGrid(cfg.n).points
    k = np.arange(1, cfg.k_max + 1)
    phase = 2 * np.pi * np.outer(k, x)
    while True:
        a = rng.standard_normal(cfg.k_max) * k ** (-cfg.decay)
        b = rng.standard_normal(cfg.k_max) * k ** (-cfg.decay)
        f = a @ np.cos(phase) + b @ np.sin(phase)
        if not cfg.zero_mean:
            f = f + rng.standard_normal()
        norm = hs_norm(f, 1)
        if norm > 0:
            break
    r = rng.uniform(0.5, 1.0)
    return f * (r * cfg.radius / norm)


@dataclass(eq=False)
class Dataset:
    sampler: SamplerConfig
    solver: SolverConfig
    train_u0: np.ndarray
    train_uT: np.ndarray
    test_u0: np.ndarray
    test_uT: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.solver.n

    @property
    def nu(self) -> float:
        return self.solver.nu

    @property
    def t_final(self) -> float:
        return self.solver.t_final

    @property
    def train_h1(self) -> np.ndarray:
        return hs_norm(self.train_u0, 1)

    @property
    def test_h1(self) -> np.ndarray:
        return hs_norm(self.test_u0, 1)

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name == "train":
            return self.train_u0, self.train_uT
        if name == "test":
            return self.test_u0, self.test_uT
        raise ValueError(f"unknown split {name!r}")

    def check(self) -> None:
        for name in ("train", "test"):
            u0, uT = self.split(name)
            if u0.shape != uT.shape or (u0.size and u0.shape[-1] != self.n):
                raise ValueError(f"{name} arrays have inconsistent shapes {u0.shape}, {uT.shape}")
            if u0.size:
                worst = float(np.max(hs_norm(u0, 1)))
                if worst > self.sampler.radius * (1 + RADIUS_SLACK):
                    raise ValueError(
                        f"{name} initial condition has H^1 norm {worst} > radius {self.sampler.radius}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.sampler == other.sampler and self.solver == other.solver
                and self.meta == other.meta
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("train_u0", "train_uT", "test_u0", "test_uT")))


def _solve_split(u0: np.ndarray, solver: SolverConfig, split: str) -> np.ndarray:
    if not len(u0):
        return np.zeros((0, solver.n))
    try:
        return solve(u0, solver)
    except SolverBlowupError as exc:
        first = int(exc.rows[0]) if exc.rows is not None and len(exc.rows) else 0
        raise DatasetBuildError(split, first, exc) from exc


def dataset_from_initial_conditions(train_u0, test_u0, sampler: SamplerConfig,
                                    solver: SolverConfig, meta: dict | None = None) -> Dataset:
    train_u0 = np.asarray(train_u0, dtype=np.float64).reshape(-1, solver.n)
    test_u0 = np.asarray(test_u0, dtype=np.float64).reshape(-1, solver.n)
    ds = Dataset(sampler, solver, train_u0, _solve_split(train_u0, solver, "train"),
                 test_u0, _solve_split(test_u0, solver, "test"), dict(meta or {}))
    ds.check()
    return ds


def build_dataset(sampler: SamplerConfig, solver: SolverConfig,
                  n_train: int = 256, n_test: int = 64) -> Dataset:
    if sampler.n != solver.n:
        raise ValueError(f"sampler grid {sampler.n} != solver grid {solver.n}")
    if n_train < 0 or n_test < 0:
        raise ValueError("split sizes must be nonnegative")
    train = [sample_initial_condition(sampler, i, "train") for i in range(n_train)]
    test = [sample_initial_condition(sampler, i, "test") for i in range(n_test)]
    meta = {"n_train": n_train, "n_test": n_test, "generator": "sobolev_fno.datagen"}
    return dataset_from_initial_conditions(train, test, sampler, solver, meta)


def save_dataset(d: Dataset, path):
    meta = {"sampler": d.sampler.to_dict(), "solver": d.solver.to_dict(), "meta": d.meta}
    arrays = {"train_u0": d.train_u0, "train_uT": d.train_uT,
              "test_u0": d.test_u0, "test_uT": d.test_uT}
    return container.write_container(path, "dataset", meta, arrays)


def load_dataset(path) -> Dataset:
    meta, arrays = container.read_container(path, kind="dataset")
    try:
        sampler = SamplerConfig(**meta["sampler"])
        solver = SolverConfig(**meta["solver"])
        return Dataset(sampler, solver, arrays["train_u0"], arrays["train_uT"],
                       arrays["test_u0"], arrays["test_uT"], meta.get("meta", {}))
    except (KeyError, TypeError) as exc:
        raise container.MalformedFileError(f"{path}: incomplete dataset metadata ({exc})") from exc
