"""A small reverse-mode differentiation engine over numpy arrays.

Only the operators needed by the losses and the tiny networks are provided.
Image-like tensors are laid out as ``(channels, height, width)``; most
elementwise ops accept any shape and follow numpy broadcasting.

Piecewise ops (``abs``, ``leaky_relu``, ``bilinear_warp``) route their branch
decisions through a tape so that :func:`grad_check` can evaluate finite
differences on the same smooth piece the analytic gradient refers to.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteValue, NotScalar, ShapeMismatch

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()
BOX3 = np.full((3, 3), 1.0 / 9.0)


class _BranchTape(threading.local):
    def __init__(self):
        self.mode = None
        self.items = []
        self.pos = 0


_tape = _BranchTape()


def _branch(value):
    """Record, replay or pass through a branch decision of a piecewise op."""
    if _tape.mode == "record":
        _tape.items.append(value)
    elif _tape.mode == "replay":
        value = _tape.items[_tape.pos]
        _tape.pos += 1
    return value


@contextmanager
def _branch_mode(mode, items=None):
    prev = (_tape.mode, _tape.items, _tape.pos)
    _tape.mode = mode
    _tape.items = [] if items is None else items
    _tape.pos = 0
    try:
        yield _tape.items
    finally:
        _tape.mode, _tape.items, _tape.pos = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: mul(self, -1.0)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(a, b):
    """Wrap operands; bare Python numbers adopt the dtype of the other side."""
    if isinstance(a, (int, float)) and isinstance(b, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    return as_tensor(a), as_tensor(b)


def _result(data, parents, backward_fn):
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue("operation produced NaN or Inf")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar, got shape {loss.shape}")
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _pair(a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _pair(a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _pair(a, b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def scale(a, s):
    return mul(a, float(s))


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def abs(a):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    sign = _branch(np.sign(a.data))
    # evaluating through the recorded sign keeps replayed graphs on one piece
    return _result(sign * a.data, (a,), lambda g: (g * sign,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _result(out, (a,), lambda g: (g / a.data,))


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(a, slope=0.1):
    a = as_tensor(a)
    positive = _branch(a.data > 0)
    factor = np.where(positive, 1.0, slope).astype(a.dtype)
    return _result(a.data * factor, (a,), lambda g: (g * factor,))


def reshape(a, shape):
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                   lambda g: tuple(np.split(g, sizes, axis=axis)))


# ----------------------------------------------------------------- reductions

def sum(a):  # noqa: A001
    a = as_tensor(a)
    out = np.asarray(np.sum(a.data, dtype=np.float64), dtype=a.dtype)
    return _result(out, (a,), lambda g: (np.full(a.shape, g, dtype=a.dtype),))


def mean(a):
    a = as_tensor(a)
    n = a.data.size
    out = np.asarray(np.sum(a.data, dtype=np.float64) / n, dtype=a.dtype)
    return _result(out, (a,), lambda g: (np.full(a.shape, g / n, dtype=a.dtype),))


def masked_mean(a, mask):
    """Mean of ``a`` over entries where ``mask`` is true; 0 if the mask is empty."""
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    n = int(mask.sum())
    if n == 0:
        return _result(np.zeros((), dtype=a.dtype), (a,),
                       lambda g: (np.zeros_like(a.data),))
    out = np.asarray(np.sum(a.data[mask], dtype=np.float64) / n, dtype=a.dtype)
    w = mask.astype(a.dtype) / n
    return _result(out, (a,), lambda g: (g * w,))


def bce_with_logits(logits, target, mask):
    """Mean binary cross-entropy of ``sigmoid(logits)`` against 0/1 ``target``
    over ``mask`` (0 when the mask is empty)."""
    logits = as_tensor(logits)
    z = logits.data
    t = np.asarray(target, dtype=z.dtype)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
    n = int(mask.sum())
    if n == 0:
        return _result(np.zeros((), dtype=z.dtype), (logits,), lambda g: (np.zeros_like(z),))
    # softplus(z) - t*z, written to avoid overflow
    per = np.maximum(z, 0) - t * z + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(np.sum(per[mask], dtype=np.float64) / n, dtype=z.dtype)
    p = 0.5 * (1.0 + np.tanh(0.5 * z))
    return _result(out, (logits,), lambda g: (g * (p - t) * mask / n,))


def avg_pool_global(a):
    """``(C, H, W) -> (C, 1, 1)`` spatial mean."""
    a = as_tensor(a)
    c, h, w = a.shape
    out = (np.sum(a.data, axis=(1, 2), dtype=np.float64) / (h * w)).astype(a.dtype)
    return _result(out.reshape(c, 1, 1), (a,),
                   lambda g: (np.broadcast_to(g / (h * w), a.shape).astype(a.dtype),))


# ---------------------------------------------------------------- spatial ops

def _edge_pad(x, p):
    return np.pad(x, ((0, 0), (p, p), (p, p)), mode="edge")


def _edge_pad_backward(gp, p):
    """Fold gradient of an edge-padded array back onto the unpadded one."""
    if p == 0:
        return gp
    g = gp[:, p:-p, :].copy()
    g[:, 0, :] += gp[:, :p, :].sum(axis=1)
    g[:, -1, :] += gp[:, -p:, :].sum(axis=1)
    out = g[:, :, p:-p].copy()
    out[:, :, 0] += g[:, :, :p].sum(axis=2)
    out[:, :, -1] += g[:, :, -p:].sum(axis=2)
    return out


def _as_chw(x):
    if x.ndim == 2:
        return x[None]
    if x.ndim != 3:
        raise ShapeMismatch(f"expected (C, H, W) or (H, W), got {x.shape}")
    return x


def conv2d(x, weight, bias=None, stride=1):
    """Same-size (before striding) 2D cross-correlation with edge padding.

    ``x``: (C, H, W); ``weight``: (O, C, k, k) with odd k; ``bias``: (O,).
    Output is (O, ceil(H/stride), ceil(W/stride)).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 3 or weight.data.ndim != 4 or weight.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"conv2d: input {x.shape} vs weight {weight.shape}")
    o, c, k, _ = weight.shape
    p = k // 2
    _, h, w = x.shape
    xp = _edge_pad(x.data, p)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)
    wmat = weight.data.reshape(o, -1)
    out = wmat @ cols
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[:, None]
        parents = parents + (bias,)
    out = out.reshape(o, ho, wo)

    def _bw(g):
        g2 = g.reshape(o, -1)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(c, k, k, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
            gx = _edge_pad_backward(gxp, p)
        grads = (gx, gw)
        if bias is not None:
            grads = grads + (g2.sum(axis=1),)
        return grads

    return _result(out, parents, _bw)


def filter2d(x, kernel):
    """Apply one fixed odd-sized kernel to every channel, edge padded, same size."""
    x = as_tensor(x)
    orig_shape = x.shape
    xd = _as_chw(x.data)
    kernel = np.asarray(kernel, dtype=xd.dtype)
    k = kernel.shape[0]
    p = k // 2
    _, h, w = xd.shape
    xp = _edge_pad(xd, p)
    out = np.zeros_like(xd)
    for i in range(k):
        for j in range(k):
            if kernel[i, j] != 0:
                out += kernel[i, j] * xp[:, i:i + h, j:j + w]

    def _bw(g):
        g = _as_chw(g)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                if kernel[i, j] != 0:
                    gxp[:, i:i + h, j:j + w] += kernel[i, j] * g
        return (_edge_pad_backward(gxp, p).reshape(orig_shape),)

    return _result(out.reshape(orig_shape), (x,), _bw)


def sobel_x(x):
    return filter2d(x, SOBEL_X)


def sobel_y(x):
    return filter2d(x, SOBEL_Y)


def box3(x):
    return filter2d(x, BOX3)


def upsample2x(x):
    """Nearest-neighbour upsampling of a (C, H, W) tensor by 2 in both axes."""
    x = as_tensor(x)
    out = x.data.repeat(2, axis=1).repeat(2, axis=2)
    c, h, w = x.shape
    return _result(out, (x,),
                   lambda g: (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),))


def crop(x, h, w):
    """Keep the top-left ``h`` x ``w`` window of a (C, H, W) tensor."""
    x = as_tensor(x)

    def _bw(g):
        gx = np.zeros_like(x.data)
        gx[:, :h, :w] = g
        return (gx,)

    return _result(x.data[:, :h, :w].copy(), (x,), _bw)


def bilinear_warp(image, disparity):
    """Sample ``image`` at ``(x - disparity, y)`` with linear interpolation.

    Sampling positions are clamped to the image extent. Both operands receive
    gradients. ``image`` is (C, H, W) or (H, W); ``disparity`` is (H, W) or
    (1, H, W) and is shared across channels.
    """
    image, disparity = as_tensor(image), as_tensor(disparity)
    img = _as_chw(image.data)
    c, h, w = img.shape
    d = disparity.data.reshape(h, w)
    xs = np.arange(w, dtype=d.dtype)[None, :] - d
    inside = _branch((xs >= 0) & (xs <= w - 1))
    xc = np.where(inside, xs, np.clip(xs, 0, w - 1))
    x0 = _branch(np.clip(np.floor(xc), 0, w - 2).astype(np.intp))
    frac = xc - x0
    rows = np.arange(h)[:, None]
    v0 = img[:, rows, x0]
    v1 = img[:, rows, x0 + 1]
    out = v0 + frac * (v1 - v0)

    def _bw(g):
        g = _as_chw(g)
        gimg = None
        if image.requires_grad:
            gimg = np.zeros_like(img)
            flat = gimg.reshape(c, -1)
            idx0 = (rows * w + x0).ravel()
            for ch in range(c):
                np.add.at(flat[ch], idx0, (g[ch] * (1.0 - frac)).ravel())
                np.add.at(flat[ch], idx0 + 1, (g[ch] * frac).ravel())
            gimg = gimg.reshape(image.shape)
        gd = None
        if disparity.requires_grad:
            # d(sample)/d(disp) = -(v1 - v0) where the position is not clamped
            gd = -(g * (v1 - v0)).sum(axis=0) * inside
            gd = gd.reshape(disparity.shape)
        return gimg, gd

    return _result(out.reshape(image.shape) if image.data.ndim == 3 else out[0], (image, disparity), _bw)


# ------------------------------------------------------------------ optimiser

@dataclass
class Adam:
    """Bias-corrected Adam over a list of parameter tensors (updated in place)."""

    params: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        self.params = list(self.params)
        if not self.m:
            self.m = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]
            self.v = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, grads=None):
        grads = [p.grad for p in self.params] if grads is None else list(grads)
        if len(grads) != len(self.params):
            raise ShapeMismatch("one gradient per parameter is required")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ShapeMismatch(f"gradient {g.shape} vs parameter {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g, dtype=np.float64)
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.dtype)


# ---------------------------------------------------------------- grad checks

@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    entries_checked: int


@dataclass
class GradCheckReport:
    results: list
    tol: float

    @property
    def max_rel_error(self):
        return max((r.max_rel_error for r in self.results), default=0.0)

    @property
    def passed(self):
        return all(r.max_rel_error < self.tol for r in self.results)

    def failures(self):
        return [r for r in self.results if r.max_rel_error >= self.tol]

    def lines(self):
        return [f"{r.name}: max_rel_error={r.max_rel_error:.3e} over {r.entries_checked} entries"
                for r in self.results]


def grad_check(f, params, eps=1e-3, tol=1e-4, max_entries=None, seed=0, freeze_branches=True):
    """Compare analytic gradients against central finite differences.

    ``f`` takes no arguments and rebuilds the scalar loss from ``params``
    (tensors with ``requires_grad``). Parameters are promoted to float64 for
    the duration of the check. The error for a parameter is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|)`` over the
    checked entries. With ``freeze_branches`` the perturbed evaluations reuse
    the branch decisions of the base evaluation, so kinks of piecewise ops do
    not pollute the difference quotient.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(p.name or f"param{i}", p) for i, p in enumerate(params)]
    saved = [(p.data, p.grad) for _, p in named]
    rng = np.random.default_rng(seed)
    results = []
    try:
        for _, p in named:
            p.data = p.data.astype(np.float64)
            p.grad = np.zeros_like(p.data)
        with _branch_mode("record") as branches:
            loss = f()
        backward(loss)
        branches = list(branches)

        def evaluate():
            if freeze_branches:
                with _branch_mode("replay", branches):
                    return float(f().data)
            return float(f().data)

        for name, p in named:
            analytic = p.grad.copy()
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            numeric = np.empty(len(idx))
            for n, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                fp = evaluate()
                flat[i] = orig - eps
                fm = evaluate()
                flat[i] = orig
                numeric[n] = (fp - fm) / (2 * eps)
            a = analytic.reshape(-1)[idx]
            scale_ = max(np.max(np.abs(a)), np.max(np.abs(numeric)))
            err = 0.0 if scale_ == 0 else float(np.max(np.abs(a - numeric)) / scale_)
            results.append(GradCheckResult(name, err, len(idx)))
    finally:
        for (_, p), (data, grad) in zip(named, saved):
            p.data, p.grad = data, grad
    return GradCheckReport(results, tol)
