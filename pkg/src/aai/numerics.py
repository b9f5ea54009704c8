"""Dense float64 tensor math with tape-based reverse-mode differentiation.

A small closed set of primitives sufficient to train a single-head
transformer regressor: matrix products, broadcast arithmetic, relu,
softmax over the last axis, layer normalization, dropout, masking, and
reductions. Every primitive validates shapes, computes in 64-bit floats,
and, when given a :class:`GradientTape`, records the pullbacks needed for
the reverse pass. Tensors are value-like; a tape is confined to one
logical thread, and independent tapes may run concurrently.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, NumericError, ShapeError


class Tensor:
    """Row-major float64 array. Finite by construction."""

    __slots__ = ("data",)

    def __init__(self, data):
        # asarray with order="C" keeps 0-d scalars 0-d (ascontiguousarray does not)
        arr = np.asarray(data, dtype=np.float64, order="C")
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite values in tensor of shape {arr.shape}")
        self.data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class GradientTape:
    """Ordered record of primitive applications for one reverse pass.

    Each record pairs an output tensor with the pullbacks of its inputs.
    The tape holds references to every traced tensor, so object identity
    is stable for the lifetime of the tape.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, list]] = []
        self._watched: list[Tensor] = []

    def watch(self, *tensors: Tensor) -> None:
        """Mark parameters whose gradients `backward` should return."""
        self._watched.extend(tensors)

    def record(self, out: Tensor, pulls: list) -> None:
        self._records.append((out, pulls))


def backward(tape: GradientTape, loss: Tensor) -> dict[Tensor, Tensor]:
    """Reverse pass from a scalar loss.

    Returns a mapping from each watched tensor to its gradient; watched
    tensors that do not influence the loss get zeros. An empty tape
    yields all-zero gradients.
    """
    if loss.data.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for out, pulls in reversed(tape._records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, pull in pulls:
            contrib = pull(g)
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
    result: dict[Tensor, Tensor] = {}
    for p in tape._watched:
        g = grads.get(id(p))
        result[p] = Tensor(g) if g is not None else Tensor(np.zeros_like(p.data))
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor, tape: GradientTape | None = None) -> Tensor:
    """Matrix product: 2-D x 2-D, 3-D x 3-D (equal batch), or 3-D x 2-D."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        ok = ad.shape[1] == bd.shape[0]
    elif ad.ndim == 3 and bd.ndim == 3:
        ok = ad.shape[0] == bd.shape[0] and ad.shape[2] == bd.shape[1]
    elif ad.ndim == 3 and bd.ndim == 2:
        ok = ad.shape[2] == bd.shape[0]
    else:
        ok = False
    if not ok:
        raise ShapeError(f"matmul dimension mismatch: {ad.shape} x {bd.shape}")
    out = Tensor(ad @ bd)
    if tape is not None:
        def pull_a(g):
            return g @ np.swapaxes(bd, -1, -2)

        def pull_b(g):
            if ad.ndim == 3 and bd.ndim == 2:
                return np.tensordot(ad, g, axes=([0, 1], [0, 1]))
            return np.swapaxes(ad, -1, -2) @ g

        tape.record(out, [(a, pull_a), (b, pull_b)])
    return out


def _broadcast_binary(a: Tensor, b: Tensor, fn, pull_a, pull_b, tape, name):
    try:
        out = Tensor(fn(a.data, b.data))
    except ValueError as exc:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from exc
    if tape is not None:
        ash, bsh = a.shape, b.shape
        tape.record(out, [
            (a, lambda g: _unbroadcast(pull_a(g), ash)),
            (b, lambda g: _unbroadcast(pull_b(g), bsh)),
        ])
    return out


def add(a: Tensor, b: Tensor, tape: GradientTape | None = None) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    return _broadcast_binary(a, b, np.add, lambda g: g, lambda g: g, tape, "add")


def sub(a: Tensor, b: Tensor, tape: GradientTape | None = None) -> Tensor:
    """Elementwise difference with numpy broadcasting."""
    return _broadcast_binary(a, b, np.subtract, lambda g: g, lambda g: -g, tape, "sub")


def mul(a: Tensor, b: Tensor, tape: GradientTape | None = None) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    ad, bd = a.data, b.data
    return _broadcast_binary(a, b, np.multiply,
                             lambda g: g * bd, lambda g: g * ad, tape, "mul")


def scale(a: Tensor, c: float, tape: GradientTape | None = None) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)
    out = Tensor(a.data * c)
    if tape is not None:
        tape.record(out, [(a, lambda g: g * c)])
    return out


def relu(a: Tensor, tape: GradientTape | None = None) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    if tape is not None:
        gate = a.data > 0.0
        tape.record(out, [(a, lambda g: g * gate)])
    return out


def softmax_rows(x: Tensor, tape: GradientTape | None = None) -> Tensor:
    """Softmax along the last axis, stabilized by row-max subtraction."""
    xd = x.data
    if xd.ndim < 1 or xd.shape[-1] == 0:
        raise ShapeError(f"softmax_rows needs a non-empty last axis, got {x.shape}")
    shifted = xd - xd.max(axis=-1, keepdims=True)
    w = np.exp(shifted)
    w /= w.sum(axis=-1, keepdims=True)
    out = Tensor(w)
    if tape is not None:
        wd = out.data

        def pull(g):
            return wd * (g - (g * wd).sum(axis=-1, keepdims=True))

        tape.record(out, [(x, pull)])
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5,
               tape: GradientTape | None = None) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be > 0, got {eps}")
    d = x.data.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must be shaped ({d},), got {gain.shape}/{bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(gain.data * xhat + bias.data)
    if tape is not None:
        gd = gain.data

        def pull_x(g):
            dxhat = g * gd
            a = dxhat.mean(axis=-1, keepdims=True)
            b = (dxhat * xhat).mean(axis=-1, keepdims=True)
            return inv * (dxhat - a - xhat * b)

        def pull_gain(g):
            return _unbroadcast(g * xhat, gain.shape)

        def pull_bias(g):
            return _unbroadcast(g, bias.shape)

        tape.record(out, [(x, pull_x), (gain, pull_gain), (bias, pull_bias)])
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator,
            tape: GradientTape | None = None) -> Tensor:
    """Inverted dropout; identity when rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    factor = keep / (1.0 - rate)
    out = Tensor(x.data * factor)
    if tape is not None:
        tape.record(out, [(x, lambda g: g * factor)])
    return out


def mask_fill(x: Tensor, keep: np.ndarray, value: float,
              tape: GradientTape | None = None) -> Tensor:
    """Replace entries where `keep` is False by a finite constant."""
    if not math.isfinite(value):
        raise NumericError("mask_fill value must be finite")
    try:
        out = Tensor(np.where(keep, x.data, value))
    except ValueError as exc:
        raise ShapeError(f"mask not broadcastable to {x.shape}") from exc
    if out.shape != x.shape:
        raise ShapeError(f"mask must broadcast to {x.shape}, got {keep.shape}")
    if tape is not None:
        tape.record(out, [(x, lambda g: g * keep)])
    return out


def transpose_last2(x: Tensor, tape: GradientTape | None = None) -> Tensor:
    """Swap the last two axes."""
    if x.data.ndim < 2:
        raise ShapeError(f"transpose_last2 needs ndim >= 2, got {x.shape}")
    out = Tensor(np.swapaxes(x.data, -1, -2))
    if tape is not None:
        tape.record(out, [(x, lambda g: np.swapaxes(g, -1, -2))])
    return out


def sum_all(x: Tensor, tape: GradientTape | None = None) -> Tensor:
    """Sum of all entries as a scalar tensor."""
    out = Tensor(x.data.sum())
    if tape is not None:
        shp = x.data.shape
        tape.record(out, [(x, lambda g: np.broadcast_to(g, shp).copy())])
    return out


def finite_diff_check(fn, params: list[Tensor], step: float) -> float:
    """Max relative error between analytic gradients and central differences.

    `fn(params, tape)` must return a scalar Tensor and be deterministic
    across calls. The analytic side runs once under tracing; the central
    differences re-evaluate `fn` untraced with one coordinate perturbed
    at a time, so the check stays independent of the reverse pass.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ConfigError(f"finite-difference step must be in [1e-7, 1e-3], got {step}")
    tape = GradientTape()
    tape.watch(*params)
    loss = fn(params, tape)
    if loss.data.ndim != 0:
        raise ShapeError(f"fn must return a scalar, got shape {loss.shape}")
    grads = backward(tape, loss)
    worst = 0.0
    for p in params:
        analytic = grads[p].data.reshape(-1)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = fn(params, None).item()
            flat[i] = orig - step
            lm = fn(params, None).item()
            flat[i] = orig
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise NumericError("non-finite loss during finite-difference evaluation")
            cd = (lp - lm) / (2.0 * step)
            rel = abs(analytic[i] - cd) / max(abs(analytic[i]), abs(cd), 1e-8)
            if rel > worst:
                worst = rel
    return worst
