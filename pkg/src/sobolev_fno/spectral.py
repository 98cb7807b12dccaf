"""Periodic grids on [0, 1), real Fourier transforms and discrete Sobolev norms.

Fields are plain numpy arrays whose last axis runs over the grid, so every
function here also accepts a batch of fields with shape ``(..., n)``.
Spectral coefficients use the real-transform layout (``n // 2 + 1`` bins)
with a ``1/n`` forward normalization, which makes ``coeffs[0]`` the mean.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid x_i = i/n on the unit torus."""

    n: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 4 or self.n % 2:
            raise ValueError(f"grid size must be an even integer >= 4, got {self.n!r}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n) / self.n

    @property
    def wavenumbers(self) -> np.ndarray:
        """Nonnegative wavenumbers 0..n/2 of the real-transform layout."""
        return np.arange(self.n // 2 + 1)


def check_field(f, name: str = "field") -> np.ndarray:
    """Return ``f`` as a float array after checking grid size and finiteness."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 0:
        raise ValueError(f"{name} must have at least one axis")
    PeriodicGrid(f.shape[-1])
    if not np.all(np.isfinite(f)):
        bad = np.argwhere(~np.isfinite(f))[0]
        raise ValueError(f"{name} has a non-finite value at index {tuple(bad)}")
    return f


def grid_size_from_coeffs(s: np.ndarray) -> int:
    return 2 * (s.shape[-1] - 1)


def forward_transform(f) -> np.ndarray:
    """Real-input Fourier coefficients, normalized so that ``coeffs[0]`` is the mean."""
    f = check_field(f)
    return np.fft.rfft(f, axis=-1) / f.shape[-1]


def _check_hermitian(s: np.ndarray) -> None:
    scale = 1.0 + np.max(np.abs(s), initial=0.0)
    if np.any(np.abs(s[..., 0].imag) > HERMITIAN_TOL * scale):
        raise ValueError("mean coefficient must be real")
    if np.any(np.abs(s[..., -1].imag) > HERMITIAN_TOL * scale):
        raise ValueError("Nyquist coefficient must be real")


def inverse_transform(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.complex128)
    n = grid_size_from_coeffs(s)
    PeriodicGrid(n)
    if not np.all(np.isfinite(s)):
        raise ValueError("spectral coefficients contain non-finite values")
    _check_hermitian(s)
    return np.fft.irfft(s * n, n=n, axis=-1)


def spectral_derivative(s, order: int = 1) -> np.ndarray:
    """Multiply coefficients by (2 pi i k)^order.

    For odd orders the Nyquist bin is zeroed: its derivative is not
    representable by a real grid function.
    """
    if int(order) != order or order < 1:
        raise ValueError(f"derivative order must be a positive integer, got {order!r}")
    s = np.asarray(s, dtype=np.complex128)
    n = grid_size_from_coeffs(s)
    PeriodicGrid(n)
    k = np.arange(n // 2 + 1)
    out = s * (2j * np.pi * k) ** order
    if order % 2:
        out[..., -1] = 0.0
    return out


def derivative(f, order: int = 1) -> np.ndarray:
    """Spectral derivative of a real field, returned on the grid."""
    return inverse_transform(spectral_derivative(forward_transform(f), order))


def _pair_multiplicity(n: int) -> np.ndarray:
    # interior bins stand for the conjugate pair (k, -k)
    mult = np.full(n // 2 + 1, 2.0)
    mult[0] = 1.0
    mult[-1] = 1.0
    return mult


def hs_norm(f, s: float) -> np.ndarray | float:
    """Spectral H^s norm (sum_k (1 + (2 pi k)^2)^s |f_k|^2)^(1/2) over all k in Z."""
    if s < 0:
        raise ValueError(f"Sobolev order must be nonnegative, got {s}")
    c = forward_transform(f)
    n = grid_size_from_coeffs(c)
    k = np.arange(n // 2 + 1)
    weight = _pair_multiplicity(n) * (1.0 + (2 * np.pi * k) ** 2) ** s
    return np.sqrt(np.sum(weight * np.abs(c) ** 2, axis=-1))


def l2_norm_sq(f) -> np.ndarray | float:
    """Rectangle-rule h * sum f_i^2."""
    f = np.asarray(f, dtype=np.float64)
    return np.sum(f * f, axis=-1) / f.shape[-1]


def fd_gradient(f, stencil: str = "central") -> np.ndarray:
    """Periodic finite-difference derivative.

    ``central``: (f[i+1] - f[i-1]) / 2h; ``forward``: (f[i+1] - f[i]) / h.
    """
    f = check_field(f)
    n = f.shape[-1]
    if stencil == "central":
        return (np.roll(f, -1, axis=-1) - np.roll(f, 1, axis=-1)) * (n / 2.0)
    if stencil == "forward":
        return (np.roll(f, -1, axis=-1) - f) * n
    raise ValueError(f"unknown stencil {stencil!r}")


def fd_gradient_adjoint(g, stencil: str = "central") -> np.ndarray:
    """Transpose of :func:`fd_gradient` as a linear map on R^n."""
    g = np.asarray(g, dtype=np.float64)
    n = g.shape[-1]
    if stencil == "central":
        return (np.roll(g, 1, axis=-1) - np.roll(g, -1, axis=-1)) * (n / 2.0)
    if stencil == "forward":
        return (np.roll(g, 1, axis=-1) - g) * n
    raise ValueError(f"unknown stencil {stencil!r}")


def h1_fd_norm_sq(f, stencil: str = "central") -> np.ndarray | float:
    """Discrete H^1 norm squared: h sum f^2 + h sum (D f)^2."""
    f = check_field(f)
    return l2_norm_sq(f) + l2_norm_sq(fd_gradient(f, stencil))


def project_modes(f, N: int) -> np.ndarray:
    """Fourier truncation: keep wavenumbers |k| <= N."""
    f = check_field(f)
    n = f.shape[-1]
    if int(N) != N or N < 0:
        raise ValueError(f"mode cutoff must be a nonnegative integer, got {N!r}")
    if N > n // 2:
        raise ValueError(f"mode cutoff {N} exceeds n/2 = {n // 2}")
    c = forward_transform(f)
    c[..., N + 1:] = 0.0
    return inverse_transform(c)


def random_field_with_decay(n: int, exponent: float, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean field with |f_k| = k^(-exponent) for 1 <= k < n/2 and random phases."""
    PeriodicGrid(n)
    k = np.arange(1, n // 2)
    c = np.zeros(n // 2 + 1, dtype=np.complex128)
    c[1:n // 2] = k ** (-exponent) * np.exp(2j * np.pi * rng.random(k.size))
    return inverse_transform(c)


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    lx_c = lx - lx.mean()
    return float(np.dot(lx_c, ly - ly.mean()) / np.dot(lx_c, lx_c))


def projection_decay_rate(s: float, Ns: Sequence[int], trials: int = 8,
                          rng_seed: int = 0, n: int = 512) -> float:
    """Fitted log-log slope of the mean L^2 truncation error against the cutoff N.

    Random fields have coefficient magnitudes k^-(s + 1/2 + 0.01), so they sit
    just inside H^s and the tail error should decay like N^-s.
    """
    if s <= 0:
        raise ValueError(f"regularity must be positive, got {s}")
    Ns = [int(N) for N in Ns]
    if len(set(Ns)) < 2:
        raise ValueError("need at least two distinct cutoffs for a slope")
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError("cutoffs must be strictly increasing")
    if Ns[-1] > n // 2:
        raise ValueError(f"cutoff {Ns[-1]} exceeds n/2 = {n // 2}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(rng_seed)
    errors = np.zeros(len(Ns))
    for _ in range(trials):
        f = random_field_with_decay(n, s + 0.5 + 0.01, rng)
        for i, N in enumerate(Ns):
            errors[i] += np.sqrt(l2_norm_sq(f - project_modes(f, N)))
    return loglog_slope(Ns, errors / trials)
