"""A small reverse-mode differentiation engine over numpy arrays.

Only the operations the two networks need are provided.  Every tensor
carries a leading batch axis; all arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidRate, ShapeError, ShapeMismatch


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape}>"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Propagate ``grad`` (default 1 for scalars) to every ancestor."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if id(p) not in seen)
        pending = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                pending[id(parent)] = pg if id(parent) not in pending else pending[id(parent)] + pg


def _node(data, parents, backward):
    return Tensor(data, _parents=tuple(parents), _backward=backward)


def conv2d(x, kernels, bias, stride=(1, 1)):
    """Valid (unpadded) cross-correlation.

    ``x``: ``(N, C_in, H, W)``; ``kernels``: ``(C_out, C_in, kH, kW)``;
    ``bias``: ``(C_out,)``.  Output ``(N, C_out, H', W')`` with
    ``H' = (H - kH) // sH + 1`` and likewise for ``W'``.
    """
    N, C, H, W = x.shape
    O, Ck, kH, kW = kernels.shape
    sH, sW = stride
    if Ck != C:
        raise ShapeError(f"kernel expects {Ck} input channels, got {C}")
    if kH > H or kW > W:
        raise ShapeError(f"kernel {kH}x{kW} larger than input {H}x{W}")
    if sH < 1 or sW < 1:
        raise ShapeError("strides must be >= 1")
    Ho, Wo = (H - kH) // sH + 1, (W - kW) // sW + 1
    win = sliding_window_view(x.data, (kH, kW), axis=(2, 3))[:, :, ::sH, ::sW]
    out = np.tensordot(win, kernels.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + bias.data[None, :, None, None]

    def backward(g):
        gb = g.sum(axis=(0, 2, 3))
        gk = np.tensordot(win, g, axes=([0, 2, 3], [0, 2, 3])).transpose(3, 0, 1, 2)
        cols = np.tensordot(g, kernels.data, axes=([1], [0]))   # N Ho Wo C kH kW
        gx = np.zeros_like(x.data)
        if Ho * Wo <= kH * kW:
            for i in range(Ho):
                for j in range(Wo):
                    gx[:, :, i * sH:i * sH + kH, j * sW:j * sW + kW] += cols[:, i, j]
        else:
            for p in range(kH):
                for q in range(kW):
                    gx[:, :, p:p + sH * (Ho - 1) + 1:sH, q:q + sW * (Wo - 1) + 1:sW] += \
                        cols[:, :, :, :, p, q].transpose(0, 3, 1, 2)
        return gx, np.ascontiguousarray(gk), gb

    return _node(out, (x, kernels, bias), backward)


def dense(x, weights, bias):
    """Affine map ``x @ weights.T + bias`` with ``x``: ``(N, n)``, ``weights``: ``(m, n)``."""
    if x.shape[-1] != weights.shape[1] or weights.shape[0] != bias.shape[0]:
        raise ShapeMismatch(f"dense: input {x.shape}, weights {weights.shape}, bias {bias.shape}")
    out = x.data @ weights.data.T + bias.data

    def backward(g):
        return g @ weights.data, g.T @ x.data, g.sum(axis=0)

    return _node(out, (x, weights, bias), backward)


def relu(x):
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def dropout(x, rate, rng=None, training=False):
    """Inverted dropout; the identity in evaluation mode."""
    if not 0 <= rate < 1:
        raise InvalidRate(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _node(x.data * mask, (x,), lambda g: (g * mask,))


def flatten(x):
    shape = x.shape
    return _node(x.data.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),))


def concat(tensors, axis=1):
    if not tensors:
        raise ShapeMismatch("concat needs at least one tensor")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def split(x, sizes, axis=1):
    """Inverse of :func:`concat` for parts of the given ``sizes``."""
    if sum(sizes) != x.shape[axis]:
        raise ShapeMismatch(f"sizes {sizes} do not add up to {x.shape[axis]}")
    parts = []
    start = 0
    for size in sizes:
        index = [slice(None)] * x.data.ndim
        index[axis] = slice(start, start + size)
        index = tuple(index)

        def backward(g, index=index):
            full = np.zeros_like(x.data)
            full[index] = g
            return (full,)

        parts.append(_node(x.data[index], (x,), backward))
        start += size
    return parts


def log_softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(np.asarray(z, dtype=np.float64)))


def softmax_cross_entropy(logits, targets):
    """Mean over the batch of ``-log softmax(logits)[target]``."""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    N, C = logits.shape
    if len(targets) != N:
        raise ShapeMismatch(f"{len(targets)} targets for {N} rows")
    if C < 2 or targets.min(initial=0) < 0 or targets.max(initial=0) >= C:
        raise ShapeMismatch(f"targets must lie in [0, {C})")
    logp = log_softmax(logits.data)
    loss = -logp[np.arange(N), targets].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[np.arange(N), targets] -= 1.0
        return (grad * (g / N),)

    return _node(np.array(loss), (logits,), backward)


# --- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_init(params):
    return AdamState([np.zeros_like(p.data) for p in params],
                     [np.zeros_like(p.data) for p in params])


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on ``params[i].data``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and state differ in length")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient {g.shape} for parameter {p.data.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# --- finite-difference checking ----------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)   # tensor name -> max relative error
    tolerance: float = 1e-4
    coordinates: int = 0

    @property
    def max_rel_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        lines = [f"{status} max relative error {self.max_rel_error:.3e} (tolerance {self.tolerance:g}, "
                 f"{self.coordinates} coordinates)"]
        lines += [f"  {name}: {err:.3e}" for name, err in self.errors.items()]
        return "\n".join(lines)


def grad_check(fn, tensors, h=1e-4, tolerance=1e-4, max_coords=None, seed=0):
    """Compare backward against central differences for every tensor in ``tensors``.

    ``fn()`` recomputes the forward pass from the tensors' current data.  The
    output is contracted with a fixed random weight pattern so non-scalar
    outputs are checked too.  The error per tensor is the largest absolute
    deviation divided by the largest gradient magnitude of that tensor.
    ``max_coords`` limits the number of probed entries per tensor.
    """
    gen = np.random.default_rng(seed)
    for t in tensors:
        t.zero_grad()
    out = fn()
    weights = gen.standard_normal(out.shape) if out.data.size > 1 else np.ones(out.shape)
    out.backward(weights)
    report = GradCheckReport(tolerance=tolerance)
    for n, t in enumerate(tensors):
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(gen.choice(flat.size, max_coords, replace=False))
        numeric = np.empty(len(coords))
        for i, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + h
            fp = float(np.sum(fn().data * weights))
            flat[c] = orig - h
            fm = float(np.sum(fn().data * weights))
            flat[c] = orig
            numeric[i] = (fp - fm) / (2 * h)
        a = analytic.reshape(-1)[coords]
        scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-300)
        name = t.name or f"tensor{n}"
        report.errors[name] = float(np.abs(a - numeric).max(initial=0.0) / scale)
        report.coordinates += len(coords)
    return report
