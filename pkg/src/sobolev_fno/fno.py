"""One-dimensional Fourier Neural Operator with hand-written reverse mode.

Channels-first layout throughout: hidden activations have shape
``(batch, width, n)``. Each Fourier layer computes

    z = irfft(pad(R * rfft(v)[:m])) + W v + b

followed by the activation (omitted after the last layer). The transform
pair uses the 1/n forward normalization, so the spectral branch is
resolution independent.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from . import container
from .spectral import PeriodicGrid, check_field

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class FnoConfig:
    modes: int
    width: int
    layers: int = 4
    fc_hidden: int = 128
    in_channels: int = 2
    out_channels: int = 1
    activation: str = "gelu"

    def __post_init__(self):
        for name in ("modes", "width", "layers", "fc_hidden", "out_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.in_channels not in (1, 2):
            raise ValueError("in_channels must be 1 (field only) or 2 (field and coordinate)")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def check_grid(self, n: int) -> None:
        PeriodicGrid(n)
        if self.modes > n // 2:
            raise ValueError(f"{self.modes} retained modes exceed n/2 = {n // 2} on a grid of {n}")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def label(self) -> str:
        return f"{self.modes}x{self.width}"


def param_count(cfg: FnoConfig) -> int:
    w, m = cfg.width, cfg.modes
    per_layer = 2 * w * w * m + w * w + w
    return (cfg.layers * per_layer + (cfg.in_channels * w + w)
            + (w * cfg.fc_hidden + cfg.fc_hidden)
            + (cfg.fc_hidden * cfg.out_channels + cfg.out_channels))


# ---- activations -----------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu(z):
    # tanh form of x * Phi(x); several times cheaper than erf on numpy
    return 0.5 * z * (1.0 + np.tanh(_GELU_C * z * (1.0 + 0.044715 * z * z)))


def _gelu_grad(z):
    z2 = z * z
    t = np.tanh(_GELU_C * z * (1.0 + 0.044715 * z2))
    return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * z2)


def _gelu_exact(z):
    return 0.5 * z * (1.0 + erf(z * _INV_SQRT2))


def _gelu_exact_grad(z):
    return 0.5 * (1.0 + erf(z * _INV_SQRT2)) + z * _INV_SQRT2PI * np.exp(-0.5 * z * z)


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z):
    return (z > 0).astype(z.dtype)


ACTIVATIONS = {
    "gelu": (_gelu, _gelu_grad),
    "gelu_exact": (_gelu_exact, _gelu_exact_grad),
    "relu": (_relu, _relu_grad),
}


# ---- parameters ------------------------------------------------------------

@dataclass(eq=False)
class FnoParams:
    """All trainable arrays. Gradients are returned in the same layout."""

    config: FnoConfig
    lift_w: np.ndarray                          # (width, in_channels)
    lift_b: np.ndarray                          # (width,)
    spectral: list = field(default_factory=list)   # L x complex (width_in, width_out, modes)
    pointwise_w: list = field(default_factory=list)  # L x (width_out, width_in)
    pointwise_b: list = field(default_factory=list)  # L x (width,)
    head1_w: np.ndarray = None                  # (fc_hidden, width)
    head1_b: np.ndarray = None
    head2_w: np.ndarray = None                  # (out_channels, fc_hidden)
    head2_b: np.ndarray = None

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = [("lift_w", self.lift_w), ("lift_b", self.lift_b)]
        for i in range(self.config.layers):
            out += [(f"spectral_{i}", self.spectral[i]),
                    (f"pointwise_w_{i}", self.pointwise_w[i]),
                    (f"pointwise_b_{i}", self.pointwise_b[i])]
        out += [("head1_w", self.head1_w), ("head1_b", self.head1_b),
                ("head2_w", self.head2_w), ("head2_b", self.head2_b)]
        return out

    def real_views(self) -> list[np.ndarray]:
        """Float64 views sharing memory with each array (complex -> interleaved re/im)."""
        return [a.view(np.float64) if np.iscomplexobj(a) else a for _, a in self.named_arrays()]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.real_views()])

    def size(self) -> int:
        return sum(v.size for v in self.real_views())

    def copy(self) -> "FnoParams":
        return FnoParams.from_named(self.config, {k: a.copy() for k, a in self.named_arrays()})

    def zeros_like(self) -> "FnoParams":
        return FnoParams.from_named(self.config, {k: np.zeros_like(a) for k, a in self.named_arrays()})

    @classmethod
    def from_named(cls, cfg: FnoConfig, arrays: dict) -> "FnoParams":
        L = cfg.layers
        return cls(cfg, arrays["lift_w"], arrays["lift_b"],
                   [arrays[f"spectral_{i}"] for i in range(L)],
                   [arrays[f"pointwise_w_{i}"] for i in range(L)],
                   [arrays[f"pointwise_b_{i}"] for i in range(L)],
                   arrays["head1_w"], arrays["head1_b"], arrays["head2_w"], arrays["head2_b"])

    def with_vector(self, vec) -> "FnoParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size():
            raise ValueError(f"vector has {vec.size} entries, parameters have {self.size()}")
        out = self.copy()
        offset = 0
        for v in out.real_views():
            v[...] = vec[offset:offset + v.size].reshape(v.shape)
            offset += v.size
        return out

    def equals(self, other: "FnoParams") -> bool:
        return self.config == other.config and all(
            np.array_equal(a, b) for (_, a), (_, b) in zip(self.named_arrays(), other.named_arrays()))


def init_params(cfg: FnoConfig, seed: int = 0) -> FnoParams:
    """Spectral weights U(-1/w^2, 1/w^2) in real and imaginary parts; affine weights
    U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero."""
    rng = np.random.default_rng(seed)
    w, m = cfg.width, cfg.modes

    def affine(fan_out, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out)

    lift_w, lift_b = affine(w, cfg.in_channels)
    c = 1.0 / (w * w)
    spectral, pw_w, pw_b = [], [], []
    for _ in range(cfg.layers):
        re = rng.uniform(-c, c, size=(w, w, m))
        im = rng.uniform(-c, c, size=(w, w, m))
        spectral.append(re + 1j * im)
        W, b = affine(w, w)
        pw_w.append(W)
        pw_b.append(b)
    head1_w, head1_b = affine(cfg.fc_hidden, w)
    head2_w, head2_b = affine(cfg.out_channels, cfg.fc_hidden)
    return FnoParams(cfg, lift_w, lift_b, spectral, pw_w, pw_b, head1_w, head1_b, head2_w, head2_b)


# ---- forward / backward ----------------------------------------------------

@dataclass
class Tape:
    """Activations recorded by :func:`forward_tape`."""

    config: FnoConfig
    n: int
    squeeze: bool
    features: np.ndarray                          # (B, in_channels, n)
    layer_inputs: list = field(default_factory=list)   # v entering each Fourier layer
    layer_coeffs: list = field(default_factory=list)   # truncated rfft(v)/n, (B, w, m)
    layer_preacts: list = field(default_factory=list)  # z of each Fourier layer
    head_in: np.ndarray = None                    # v after the last Fourier layer
    head_preact: np.ndarray = None                # head1 pre-activation
    head_act: np.ndarray = None                   # head1 activation
    output: np.ndarray = None                     # (B, n) or (n,)


def _features(u0: np.ndarray, in_channels: int) -> np.ndarray:
    B, n = u0.shape
    if in_channels == 1:
        return u0[:, None, :]
    x = np.broadcast_to(np.arange(n) / n, (B, n))
    return np.stack([u0, x], axis=1)


def _spectral_conv(v: np.ndarray, R: np.ndarray):
    n = v.shape[-1]
    m = R.shape[-1]
    c = np.fft.rfft(v, axis=-1)[..., :m] / n                    # (B, i, m)
    # mode-wise complex matmul: (m, B, i) @ (m, i, o) -> (m, B, o)
    d = np.matmul(c.transpose(2, 0, 1), R.transpose(2, 0, 1)).transpose(1, 2, 0)
    full = np.zeros(v.shape[:-1] + (n // 2 + 1,), dtype=np.complex128)
    full[..., :m] = d * n
    return np.fft.irfft(full, n=n, axis=-1), c


def _affine(W: np.ndarray, b: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.matmul(W, v) + b[:, None]


def forward_tape(p: FnoParams, u0) -> tuple[np.ndarray, Tape]:
    cfg = p.config
    u0 = check_field(u0, "input field")
    squeeze = u0.ndim == 1
    u0 = np.atleast_2d(u0)
    n = u0.shape[-1]
    cfg.check_grid(n)
    act, _ = ACTIVATIONS[cfg.activation]

    X = _features(u0, cfg.in_channels)
    tape = Tape(cfg, n, squeeze, X)
    v = _affine(p.lift_w, p.lift_b, X)
    for i in range(cfg.layers):
        tape.layer_inputs.append(v)
        s, c = _spectral_conv(v, p.spectral[i])
        z = s + _affine(p.pointwise_w[i], p.pointwise_b[i], v)
        tape.layer_coeffs.append(c)
        tape.layer_preacts.append(z)
        v = act(z) if i < cfg.layers - 1 else z
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite activation in Fourier layer {i}")
    tape.head_in = v
    tape.head_preact = _affine(p.head1_w, p.head1_b, v)
    tape.head_act = act(tape.head_preact)
    out = _affine(p.head2_w, p.head2_b, tape.head_act)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite values in the projection head")
    out = out[:, 0, :] if cfg.out_channels == 1 else out
    tape.output = out[0] if squeeze else out
    return tape.output, tape


def forward(p: FnoParams, u0) -> np.ndarray:
    return forward_tape(p, u0)[0]


def replay_head(p: FnoParams, tape: Tape) -> np.ndarray:
    """Re-evaluate the final affine map on the recorded head activation."""
    out = _affine(p.head2_w, p.head2_b, tape.head_act)
    out = out[:, 0, :] if p.config.out_channels == 1 else out
    return out[0] if tape.squeeze else out


def _sum_outer(g: np.ndarray, v: np.ndarray) -> np.ndarray:
    # sum_b g[b] @ v[b].T with a fixed reduction order
    return np.tensordot(g, v, axes=([0, 2], [0, 2]))


def backward(p: FnoParams, tape: Tape, output_cotangent) -> FnoParams:
    """Gradient of <cotangent, output> with respect to every parameter."""
    cfg = p.config
    if tape.config != cfg:
        raise ValueError("tape was recorded with a different configuration")
    g = np.asarray(output_cotangent, dtype=np.float64)
    if g.shape != np.shape(tape.output):
        raise ValueError(f"cotangent shape {g.shape} != output shape {np.shape(tape.output)}")
    if p.lift_w.shape != (cfg.width, cfg.in_channels) or len(p.spectral) != len(tape.layer_inputs):
        raise ValueError("parameters do not match the tape")
    if tape.squeeze:
        g = g[None]
    if cfg.out_channels == 1:
        g = g[:, None, :]
    _, act_grad = ACTIVATIONS[cfg.activation]
    n = tape.n
    grads = p.zeros_like()

    grads.head2_w = _sum_outer(g, tape.head_act)
    grads.head2_b = g.sum(axis=(0, 2))
    gz = np.matmul(p.head2_w.T, g) * act_grad(tape.head_preact)
    grads.head1_w = _sum_outer(gz, tape.head_in)
    grads.head1_b = gz.sum(axis=(0, 2))
    gv = np.matmul(p.head1_w.T, gz)

    # rfft bins k >= 1 stand for the pair (k, -k) when transformed back
    pair = None
    for i in reversed(range(cfg.layers)):
        gz = gv if i == cfg.layers - 1 else gv * act_grad(tape.layer_preacts[i])
        v, c, R = tape.layer_inputs[i], tape.layer_coeffs[i], p.spectral[i]
        m = R.shape[-1]
        if pair is None:
            pair = np.full(m, 2.0)
            pair[0] = 1.0
        grads.pointwise_w[i] = _sum_outer(gz, v)
        grads.pointwise_b[i] = gz.sum(axis=(0, 2))
        gv = np.matmul(p.pointwise_w[i].T, gz)

        gd = np.fft.rfft(gz, axis=-1)[..., :m] * pair                # (B, o, m)
        gd_m = gd.transpose(2, 0, 1)                                 # (m, B, o)
        grads.spectral[i] = np.ascontiguousarray(
            np.matmul(c.transpose(2, 1, 0).conj(), gd_m).transpose(1, 2, 0))
        gc = np.matmul(gd_m, R.transpose(2, 1, 0).conj()).transpose(1, 2, 0)  # (B, i, m)
        full = np.zeros(gc.shape[:-1] + (n // 2 + 1,), dtype=np.complex128)
        full[..., :m] = gc / pair
        gv = gv + np.fft.irfft(full, n=n, axis=-1)

    grads.lift_w = _sum_outer(gv, tape.features)
    grads.lift_b = gv.sum(axis=(0, 2))
    return grads


# ---- checkpoints -----------------------------------------------------------

def save_checkpoint(p: FnoParams, path, epoch: int | None = None, loss: float | None = None,
                    extra: dict | None = None) -> Path:
    meta = {"config": p.config.to_dict(), "epoch": epoch, "loss": loss, "extra": extra or {}}
    return container.write_container(path, "checkpoint", meta, dict(p.named_arrays()))


def load_checkpoint(path) -> tuple[FnoParams, dict]:
    meta, arrays = container.read_container(path, kind="checkpoint")
    try:
        cfg = FnoConfig(**meta["config"])
        return FnoParams.from_named(cfg, arrays), meta
    except (KeyError, TypeError) as exc:
        raise container.MalformedFileError(f"{path}: incomplete checkpoint ({exc})") from exc


# ---- finite-difference verification -----------------------------------------

def _check_batch(cfg: FnoConfig, seed: int, n: int, batch: int):
    rng = np.random.default_rng([seed, 1])
    x = np.arange(n) / n
    k = np.arange(1, min(4, n // 2) + 1)
    coef = rng.standard_normal((batch, 2, k.size)) / k
    phase = 2 * np.pi * np.outer(k, x)
    u0 = coef[:, 0] @ np.cos(phase) + coef[:, 1] @ np.sin(phase)
    tcoef = rng.standard_normal((batch, 2, k.size)) / k ** 2
    target = 0.1 * (tcoef[:, 0] @ np.cos(phase) + tcoef[:, 1] @ np.sin(phase))
    return u0, target


def _h1_loss_difference(out_a, out_b, target):
    # L(a) - L(b) = <a - b, a + b - 2 t>_H1 avoids cancelling two large losses
    from .spectral import fd_gradient
    diff, mid = out_a - out_b, out_a + out_b - 2.0 * target
    n = diff.shape[-1]
    inner = np.sum(diff * mid, axis=-1) + np.sum(fd_gradient(diff) * fd_gradient(mid), axis=-1)
    return float(np.mean(inner)) / n


def gradient_check(cfg: FnoConfig, seed: int = 0, n: int = 32, eps: float = 1e-6,
                   batch: int = 3, n_sampled: int = 200, floor_frac: float = 1e-3) -> float:
    """Worst relative gap between :func:`backward` and central differences.

    The loss is the H^1 training loss against random targets. Checked entries
    are a seeded subset of ``n_sampled`` parameters plus every bias. Each gap
    is |a - b| / max(|a|, |b|, floor_frac * max|grad|) so entries that are
    structurally zero are compared on the scale of the whole gradient.
    """
    from .loss import h1_loss_gradient

    cfg.check_grid(n)
    rng = np.random.default_rng([seed, 2])
    p = init_params(cfg, seed)
    for b in [p.lift_b, p.head1_b, p.head2_b, *p.pointwise_b]:
        b[...] = rng.uniform(-0.1, 0.1, size=b.shape)
    u0, target = _check_batch(cfg, seed, n, batch)

    out, tape = forward_tape(p, u0)
    analytic = backward(p, tape, h1_loss_gradient(out, target)).to_vector()

    theta = p.to_vector()
    sizes = [v.size for v in p.real_views()]
    starts = np.cumsum([0] + sizes)
    bias_idx = [np.arange(starts[j], starts[j + 1])
                for j, (name, _) in enumerate(p.named_arrays()) if name.endswith("_b") or "_b_" in name]
    subset = rng.choice(theta.size, size=min(n_sampled, theta.size), replace=False)
    idx = np.unique(np.concatenate([subset, *bias_idx]))

    numeric = np.empty(idx.size)
    for j, i in enumerate(idx):
        up, down = theta.copy(), theta.copy()
        up[i] += eps
        down[i] -= eps
        out_up = forward(p.with_vector(up), u0)
        out_down = forward(p.with_vector(down), u0)
        numeric[j] = _h1_loss_difference(out_up, out_down, target) / (2 * eps)

    a = analytic[idx]
    floor = floor_frac * np.max(np.abs(analytic))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
    return float(np.max(np.abs(a - numeric) / denom))
