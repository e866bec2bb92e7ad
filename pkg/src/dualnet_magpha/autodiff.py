"""Minimal reverse-mode differentiation over numpy arrays.

Every op builds a node holding its output array, its parents and a
vector-Jacobian closure. ``backward`` walks the graph in reverse topological
order. Leaf tensors that require gradients accumulate into ``.grad`` across
calls; intermediate gradients live only for the duration of one call.

Batched inputs are supported by the spatial ops: images are ``[c, h, w]`` or
``[batch, c, h, w]`` and dense inputs ``[n]`` or ``[batch, n]``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.fft as sfft


_FLOATS = (np.dtype(np.float64), np.dtype(np.float32))


class NumericError(FloatingPointError):
    """Raised when a forward value or gradient stops being finite."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _vjp=None, op: str = "leaf"):
        data = np.asarray(data)
        self.data = data if data.dtype in _FLOATS else data.astype(np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._vjp = _vjp
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {op}")
    live = tuple(parents)
    if any(p.requires_grad for p in live):
        return Tensor(data, True, _parents=live, _vjp=vjp, op=op)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# graph traversal


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(leaf) into every leaf with ``requires_grad``."""
    if output.data.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _is_scalar(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def add(a, b) -> Tensor:
    if _is_scalar(b):
        a, b = b, a
    if _is_scalar(a):
        b = as_tensor(b)
        return _make(b.data + a, (b,), lambda g: (g,), "add")
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        return add(a, -b)
    if _is_scalar(a):
        b = as_tensor(b)
        return _make(a - b.data, (b,), lambda g: (-g,), "sub")
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    if _is_scalar(a):
        a, b = b, a
    if _is_scalar(b):
        a = as_tensor(a)
        return _make(a.data * b, (a,), lambda g: (g * b,), "mul")
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def square(x: Tensor) -> Tensor:
    return _make(x.data**2, (x,), lambda g: (2.0 * x.data * g,), "square")


def absolute(x: Tensor) -> Tensor:
    return _make(np.abs(x.data), (x,), lambda g: (np.sign(x.data) * g,), "abs")


def sqrt_guarded(x: Tensor, floor: float = 1e-12) -> Tensor:
    """sqrt(max(x, floor)); gradient is zero where the floor is active."""
    active = x.data > floor
    y = np.sqrt(np.where(active, x.data, floor))
    return _make(y, (x,), lambda g: (np.where(active, 0.5 * g / y, 0.0),), "sqrt")


def cos(x: Tensor) -> Tensor:
    return _make(np.cos(x.data), (x,), lambda g: (-np.sin(x.data) * g,), "cos")


def sin(x: Tensor) -> Tensor:
    return _make(np.sin(x.data), (x,), lambda g: (np.cos(x.data) * g,), "sin")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: ((1.0 - y * y) * g,), "tanh")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (y * (1.0 - y) * g,), "sigmoid")


def leaky_linear(x: Tensor, negative_slope: float = 0.3) -> Tensor:
    slope = np.where(x.data >= 0, 1.0, negative_slope).astype(x.data.dtype)
    return _make(x.data * slope, (x,), lambda g: (slope * g,), "leaky_linear")


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "leaky-linear": leaky_linear,
    "abs": absolute,
    "none": lambda x: x,
}


# ---------------------------------------------------------------------------
# reductions and shape plumbing


def sum_all(x: Tensor) -> Tensor:
    return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp, "concat")


def take_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``[start:stop]`` along the channel axis (third from last)."""
    index = (Ellipsis, slice(start, stop), slice(None), slice(None))

    def vjp(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _make(x.data[index], (x,), vjp, "take_channels")


def pad_zero2d(x: Tensor, pad: int) -> Tensor:
    width = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return _make(
        np.pad(x.data, width),
        (x,),
        lambda g: (g[..., pad : g.shape[-2] - pad, pad : g.shape[-1] - pad],),
        "pad",
    )


def crop2d(x: Tensor, pad: int) -> Tensor:
    h, w = x.shape[-2:]
    width = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return _make(
        x.data[..., pad : h - pad, pad : w - pad],
        (x,),
        lambda g: (np.pad(g, width),),
        "crop",
    )


# ---------------------------------------------------------------------------
# layers


def dense(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``weights @ x + bias`` on ``[n]`` or ``[batch, n]`` inputs."""
    x, weights = as_tensor(x), as_tensor(weights)
    m, n = weights.shape
    if x.shape[-1] != n or x.ndim not in (1, 2):
        raise ValueError(f"dense: input shape {x.shape} does not match weights {weights.shape}")
    if bias is not None and bias.shape != (m,):
        raise ValueError(f"dense: bias shape {bias.shape} != ({m},)")
    y = x.data @ weights.data.T
    parents: tuple[Tensor, ...] = (x, weights)
    if bias is not None:
        y = y + bias.data
        parents = parents + (bias,)

    def vjp(g):
        gx = g @ weights.data
        gw = np.outer(g, x.data) if x.ndim == 1 else g.T @ x.data
        if bias is None:
            return gx, gw
        return gx, gw, (g if g.ndim == 1 else g.sum(axis=0))

    return _make(y, parents, vjp, "dense")


@functools.lru_cache(maxsize=None)
def _wrap_matrix(k: int, n: int) -> np.ndarray:
    """0/1 matrix folding kernel taps ``-p..p`` onto circular offsets mod n."""
    p = (k - 1) // 2
    s = np.zeros((n, k))
    for i in range(k):
        s[(i - p) % n, i] += 1.0
    return s


def circular_conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """Cross-correlation with wrap-around padding of ``(k - 1) // 2``.

    ``x`` is ``[c_in, h, w]`` or ``[batch, c_in, h, w]``; ``kernels`` is
    ``[c_out, c_in, k, k]`` with odd ``k``. The output keeps the spatial size.
    Evaluated in the Fourier domain, where circular correlation is a product.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3] or kernels.shape[2] % 2 == 0:
        raise ValueError(f"kernels must be [c_out, c_in, k, k] with odd k, got {kernels.shape}")
    unbatched = x.ndim == 3
    if x.ndim not in (3, 4):
        raise ValueError(f"input must be [c, h, w] or [b, c, h, w], got {x.shape}")
    c_out, c_in, k, _ = kernels.shape
    if x.shape[-3] != c_in:
        raise ValueError(f"input has {x.shape[-3]} channels, kernels expect {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"bias shape {bias.shape} != ({c_out},)")

    xd = x.data[None] if unbatched else x.data
    h, w = xd.shape[-2:]
    sr = _wrap_matrix(k, h).astype(kernels.data.dtype)
    sc = _wrap_matrix(k, w).astype(kernels.data.dtype)
    folded = sr @ kernels.data @ sc.T  # [o, c, h, w]

    # spatial axes lead so every per-frequency channel contraction is a contiguous matmul
    xf = sfft.rfft2(np.ascontiguousarray(xd.transpose(2, 3, 0, 1)), axes=(0, 1))  # [h, wr, b, c]
    gf = sfft.rfft2(np.ascontiguousarray(folded.transpose(2, 3, 1, 0)), axes=(0, 1))  # [h, wr, c, o]
    yf = np.matmul(xf, np.conj(gf))  # [h, wr, b, o]
    y = np.ascontiguousarray(sfft.irfft2(yf, s=(h, w), axes=(0, 1)).transpose(2, 3, 0, 1))
    if bias is not None:
        y += bias.data[:, None, None]
    if unbatched:
        y = y[0]

    parents: tuple[Tensor, ...] = (x, kernels) if bias is None else (x, kernels, bias)

    def vjp(g):
        gd = g[None] if unbatched else g
        go = sfft.rfft2(np.ascontiguousarray(gd.transpose(2, 3, 0, 1)), axes=(0, 1))  # [h, wr, b, o]
        gx = None
        if x.requires_grad:
            dxf = np.matmul(go, gf.transpose(0, 1, 3, 2))  # [h, wr, b, c]
            gx = np.ascontiguousarray(sfft.irfft2(dxf, s=(h, w), axes=(0, 1)).transpose(2, 3, 0, 1))
            if unbatched:
                gx = gx[0]
        gk = None
        if kernels.requires_grad:
            dgf = np.matmul(np.conj(go).transpose(0, 1, 3, 2), xf)  # [h, wr, o, c]
            dfold = sfft.irfft2(dgf, s=(h, w), axes=(0, 1)).transpose(2, 3, 0, 1)
            gk = sr.T @ dfold @ sc
        if bias is None:
            return gx, gk
        return gx, gk, gd.sum(axis=(0, 2, 3))

    return _make(y, parents, vjp, "circular_conv2d")


def linear_conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-size cross-correlation with zero padding."""
    p = (kernels.shape[-1] - 1) // 2
    return crop2d(circular_conv2d(pad_zero2d(as_tensor(x), p), kernels, bias), p)


# ---------------------------------------------------------------------------
# quantizers


def ssq_quantize(x: Tensor, bits: int, sharpness: float = 50.0, training: bool = True) -> Tensor:
    """Sum-of-sigmoid quantizer on inputs in (0, 1).

    Training mode returns the smooth staircase
    ``mean_i sigmoid(sharpness * (x - i / 2**bits))`` over ``i = 1 .. 2**bits - 1``;
    deployment mode rounds to the nearest of the ``2**bits`` levels
    ``{0, 1/(2**bits - 1), ..., 1}`` and is not differentiable.
    """
    if int(bits) != bits or bits < 1:
        raise ValueError(f"bits must be a positive integer, got {bits}")
    if not sharpness > 0:
        raise ValueError(f"sharpness must be positive, got {sharpness}")
    x = as_tensor(x)
    top = 2**bits - 1
    if not training:
        return Tensor(np.clip(np.rint(x.data * top), 0, top) / top)

    offsets = (np.arange(1, 2**bits) / 2**bits).astype(x.data.dtype)
    s = _sigmoid(sharpness * (x.data[..., None] - offsets))
    y = s.mean(axis=-1)
    slope = sharpness * (s * (1.0 - s)).mean(axis=-1)
    return _make(y, (x,), lambda g: (slope * g,), "ssq")


def blq_quantize(x: Tensor) -> Tensor:
    """One-bit threshold at 0.5 with a straight-through gradient on [0, 1]."""
    x = as_tensor(x)
    y = (x.data >= 0.5).astype(np.float64)
    inside = (x.data >= 0.0) & (x.data <= 1.0)
    return _make(y, (x,), lambda g: (np.where(inside, g, 0.0),), "blq")


def level_indices(values: np.ndarray, bits: int) -> np.ndarray:
    """Map quantized values on the ``2**bits`` grid to integer level indices."""
    top = 2**bits - 1
    return np.clip(np.rint(np.asarray(values) * top), 0, top).astype(np.int64)


# ---------------------------------------------------------------------------
# parameters


class ParameterStore:
    """Named trainable tensors, iterated in creation order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def count(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(values)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, t in self._params.items():
            v = np.asarray(values[k], dtype=np.float64)
            if v.shape != t.shape:
                raise ValueError(f"parameter {k}: shape {v.shape} != {t.shape}")
            t.data = v.copy()


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def gradient_check(
    f: Callable[[], Tensor] | Callable[[Tensor], Tensor],
    x: Tensor | Iterable[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients with central differences.

    ``x`` is one tensor (``f`` then takes it as its argument) or several
    tensors that ``f()`` closes over. The error is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|)`` per tensor,
    reported as the worst over all tensors. ``max_entries`` samples that many
    coordinates per tensor instead of probing every one.
    """
    if isinstance(x, Tensor):
        targets = [x]
        call = lambda: f(x)  # noqa: E731
    else:
        targets = list(x)
        call = f
    rng = rng or np.random.default_rng(0)

    for t in targets:
        t.requires_grad = True
        t.grad = None
    out = call()
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in targets]

    worst_rel = 0.0
    worst_abs = 0.0
    n = 0
    for t, a in zip(targets, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        num = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            fp = call().item()
            flat[i] = orig - eps
            fm = call().item()
            flat[i] = orig
            num[j] = (fp - fm) / (2 * eps)
        an = a.reshape(-1)[idx]
        diff = np.max(np.abs(an - num)) if idx.size else 0.0
        scale = max(np.max(np.abs(an), initial=0.0), np.max(np.abs(num), initial=0.0), 1e-300)
        worst_abs = max(worst_abs, diff)
        worst_rel = max(worst_rel, diff / scale)
        n += idx.size
        t.grad = None
    return GradCheckReport(worst_rel, worst_abs, n, tol)
