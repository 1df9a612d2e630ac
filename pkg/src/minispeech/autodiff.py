"""Dense-tensor math with reverse-mode differentiation on numpy arrays.

Float64 throughout by default (finite-difference checks need the headroom);
float32 exists for the throughput benchmark only. Broadcasting is restricted
to a leading batch dimension: operands must have identical shapes, or the
second operand's shape must equal the first's trailing dims. Anything else
raises ShapeError naming the offending shapes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    pass


_grad_enabled = True


class no_grad:
    """Context manager: ops built inside record no graph edges."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A dense array plus, when requested, its reverse-mode gradient."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Constant copy of this value: no gradient flows through it."""
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate .grad for every requires_grad tensor reachable from this scalar.

        Grads are freshly zero-initialized per call, so repeated calls on an
        identical graph produce bit-identical results.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar loss, got shape {self.shape}")
        order = _toposort(self)
        for node in order:
            if node.requires_grad:
                node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.requires_grad:
                node._backward()

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division unsupported; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen, stack = [], set(), [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        t.grad += g


def _check_dtypes(a: Tensor, b: Tensor, op: str):
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


def _broadcast_kind(a: Tensor, b: Tensor, op: str) -> str:
    """'same', 'scalar' (b is 0-d), or 'trail' (b.shape == a.shape[1:])."""
    if a.shape == b.shape:
        return "same"
    if b.ndim == 0:
        return "scalar"
    if a.ndim == b.ndim + 1 and b.shape == a.shape[1:]:
        return "trail"
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible "
                     "(identical, scalar, or leading-batch broadcast only)")


def _reduce_to(g: np.ndarray, kind: str, shape: tuple) -> np.ndarray:
    if kind == "same":
        return g
    if kind == "scalar":
        return g.sum().reshape(())
    return g.sum(axis=0)


# elementwise -----------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    _check_dtypes(a, b, "add")
    kind = _broadcast_kind(a, b, "add")
    out_data = a.data + b.data

    def backward():
        g = out.grad
        _accum(a, g)
        _accum(b, _reduce_to(g, kind, b.shape))

    out = _make(out_data, (a, b), backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes(a, b, "sub")
    kind = _broadcast_kind(a, b, "sub")
    out_data = a.data - b.data

    def backward():
        g = out.grad
        _accum(a, g)
        _accum(b, -_reduce_to(g, kind, b.shape))

    out = _make(out_data, (a, b), backward)
    return out


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    _check_dtypes(a, b, "mul")
    kind = _broadcast_kind(a, b, "mul")
    out_data = a.data * b.data

    def backward():
        g = out.grad
        _accum(a, g * b.data)
        _accum(b, _reduce_to(g * a.data, kind, b.shape))

    out = _make(out_data, (a, b), backward)
    return out


def log(x: Tensor) -> Tensor:
    out_data = np.log(x.data)

    def backward():
        _accum(x, out.grad / x.data)

    out = _make(out_data, (x,), backward)
    return out


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def backward():
        _accum(x, out.grad * out_data)

    out = _make(out_data, (x,), backward)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def backward():
        _accum(x, out.grad * out_data * (1.0 - out_data))

    out = _make(out_data, (x,), backward)
    return out


def swish(x: Tensor) -> Tensor:
    """x * sigmoid(x), fused."""
    s = 1.0 / (1.0 + np.exp(-x.data))
    out_data = x.data * s

    def backward():
        _accum(x, out.grad * (s + x.data * s * (1.0 - s)))

    out = _make(out_data, (x,), backward)
    return out


# reductions ------------------------------------------------------------------

def tsum(x: Tensor) -> Tensor:
    out_data = x.data.sum().reshape(())

    def backward():
        _accum(x, np.broadcast_to(out.grad, x.shape).copy())

    out = _make(out_data, (x,), backward)
    return out


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    out_data = (x.data.sum() / n).reshape(())

    def backward():
        _accum(x, np.broadcast_to(out.grad / n, x.shape).copy())

    out = _make(out_data, (x,), backward)
    return out


def masked_sum(x: Tensor, mask: np.ndarray) -> Tensor:
    """Sum of entries where the boolean mask is true; mask broadcasts over x."""
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out_data = x.data[m].sum().reshape(())

    def backward():
        _accum(x, out.grad * m.astype(x.dtype))

    out = _make(out_data, (x,), backward)
    return out


def logsumexp(x: Tensor) -> Tensor:
    """log(sum(exp(x))) over all entries, stabilized."""
    mx = x.data.max()
    e = np.exp(x.data - mx)
    s = e.sum()
    out_data = (np.log(s) + mx).reshape(())

    def backward():
        _accum(x, out.grad * (e / s))

    out = _make(out_data, (x,), backward)
    return out


# shape plumbing --------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    out_data = x.data.reshape(shape)

    def backward():
        _accum(x, out.grad.reshape(x.shape))

    out = _make(out_data, (x,), backward)
    return out


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out_data = np.transpose(x.data, axes).copy()
    inv = tuple(np.argsort(axes))

    def backward():
        _accum(x, np.transpose(out.grad, inv))

    out = _make(out_data, (x,), backward)
    return out


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = x.data[idx].copy()

    def backward():
        g = np.zeros_like(x.data)
        g[idx] = out.grad
        _accum(x, g)

    out = _make(out_data, (x,), backward)
    return out


def take(x: Tensor, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Gather along one axis with an integer index array (np.take semantics)."""
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError(f"take: indices must be integers, got {idx.dtype}")
    axis = axis % max(x.ndim, 1)
    out_data = np.take(x.data, idx, axis=axis)

    def backward():
        g = np.zeros_like(x.data)
        np.add.at(g, (slice(None),) * axis + (idx,), out.grad)
        _accum(x, g)

    out = _make(out_data, (x,), backward)
    return out


def pick(x: Tensor, indices: np.ndarray) -> Tensor:
    """Row-wise class pick: out[i] = x[i, indices[i]] for a 2-D x."""
    if x.ndim != 2:
        raise ShapeError(f"pick: expected 2-D input, got shape {x.shape}")
    idx = np.asarray(indices)
    rows = np.arange(x.shape[0])
    out_data = x.data[rows, idx].copy()

    def backward():
        g = np.zeros_like(x.data)
        np.add.at(g, (rows, idx), out.grad)
        _accum(x, g)

    out = _make(out_data, (x,), backward)
    return out


# linear algebra --------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes(a, b, "matmul")
    sa, sb = a.shape, b.shape
    if a.ndim == 2 and b.ndim == 2:
        mode = "22"
    elif a.ndim == 3 and b.ndim == 3 and sa[0] == sb[0]:
        mode = "33"
    elif a.ndim == 3 and b.ndim == 2:
        mode = "32"
    else:
        raise ShapeError(f"matmul: unsupported shapes {sa} @ {sb}")
    if sa[-1] != sb[-2]:
        raise ShapeError(f"matmul: inner dims disagree, {sa} @ {sb}")
    out_data = a.data @ b.data

    def backward():
        g = out.grad
        if mode == "22":
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)
        elif mode == "33":
            _accum(a, g @ b.data.transpose(0, 2, 1))
            _accum(b, a.data.transpose(0, 2, 1) @ g)
        else:
            _accum(a, g @ b.data.T)
            k = sa[-1]
            n = sb[-1]
            _accum(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))

    out = _make(out_data, (a, b), backward)
    return out


# normalization and attention -------------------------------------------------

def _softmax_raw(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, log-sum-exp stabilized."""
    p = _softmax_raw(x.data)

    def backward():
        g = out.grad
        _accum(x, p * (g - (g * p).sum(axis=-1, keepdims=True)))

    out = _make(p, (x,), backward)
    return out


def log_softmax(x: Tensor) -> Tensor:
    m = x.data.max(axis=-1, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    ls = z - lse

    def backward():
        g = out.grad
        _accum(x, g - np.exp(ls) * g.sum(axis=-1, keepdims=True))

    out = _make(ls, (x,), backward)
    return out


def masked_softmax(x: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to positions where mask is true.

    Rows with no allowed position come out all-zero; callers must guarantee at
    least one allowed entry per row (attention always allows the diagonal).
    """
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    neg = np.where(m, x.data, -np.inf)
    mx = neg.max(axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(x.data - mx) * m
    s = e.sum(axis=-1, keepdims=True)
    p = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def backward():
        g = out.grad
        _accum(x, p * (g - (g * p).sum(axis=-1, keepdims=True)))

    out = _make(p, (x,), backward)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs last dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data

    def backward():
        g = out.grad
        dxhat = g * gain.data
        lead = tuple(range(x.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=lead))
        _accum(bias, g.sum(axis=lead))
        mean_d = dxhat.mean(axis=-1, keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accum(x, inv * (dxhat - mean_d - xhat * mean_dx))

    out = _make(out_data, (x, gain, bias), backward)
    return out


# convolutions ----------------------------------------------------------------

def conv1d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Time-major 1-D convolution: x (T, Cin), w (K, Cin, Cout) -> (T', Cout)."""
    if x.ndim != 2 or w.ndim != 3:
        raise ShapeError(f"conv1d: expected x (T,Cin) and w (K,Cin,Cout), got {x.shape}, {w.shape}")
    T, cin = x.shape
    K, wcin, cout = w.shape
    if cin != wcin:
        raise ShapeError(f"conv1d: channel mismatch, x {x.shape} vs w {w.shape}")
    t_out = (T + 2 * padding - K) // stride + 1
    if t_out < 1:
        raise ShapeError(f"conv1d: no output frames for T={T}, K={K}, stride={stride}, padding={padding}")
    xp = np.pad(x.data, ((padding, padding), (0, 0)))
    out_data = np.zeros((t_out, cout), dtype=x.dtype)
    span = stride * (t_out - 1) + 1
    for k in range(K):
        out_data += xp[k:k + span:stride] @ w.data[k]

    def backward():
        g = out.grad
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for k in range(K):
            sl = xp[k:k + span:stride]
            gxp[k:k + span:stride] += g @ w.data[k].T
            gw[k] = sl.T @ g
        _accum(w, gw)
        _accum(x, gxp[padding:padding + T] if padding else gxp)

    out = _make(out_data, (x, w), backward)
    return out


def depthwise_conv1d(x: Tensor, w: Tensor) -> Tensor:
    """Per-channel 1-D convolution with same padding: x (T, C), w (K, C), K odd."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"depthwise_conv1d: x {x.shape} vs w {w.shape}")
    K = w.shape[0]
    if K % 2 == 0:
        raise ShapeError(f"depthwise_conv1d: kernel size must be odd, got {K}")
    T = x.shape[0]
    p = K // 2
    xp = np.pad(x.data, ((p, p), (0, 0)))
    out_data = np.zeros_like(x.data)
    for k in range(K):
        out_data += xp[k:k + T] * w.data[k]

    def backward():
        g = out.grad
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for k in range(K):
            gxp[k:k + T] += g * w.data[k]
            gw[k] = (xp[k:k + T] * g).sum(axis=0)
        _accum(w, gw)
        _accum(x, gxp[p:p + T])

    out = _make(out_data, (x, w), backward)
    return out


def interp_linear(x: Tensor, new_len: int) -> Tensor:
    """Linearly resample rows of x (T, D) to (new_len, D), endpoints pinned."""
    T = x.shape[0]
    if T < 1 or new_len < 1:
        raise ShapeError(f"interp_linear: empty input or output (T={T}, new_len={new_len})")
    if T == 1:
        pos = np.zeros(new_len)
    else:
        pos = np.linspace(0.0, T - 1.0, new_len)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, T - 1)
    frac = (pos - lo)[:, None]
    out_data = x.data[lo] * (1.0 - frac) + x.data[hi] * frac

    def backward():
        g = out.grad
        gx = np.zeros_like(x.data)
        np.add.at(gx, lo, g * (1.0 - frac))
        np.add.at(gx, hi, g * frac)
        _accum(x, gx)

    out = _make(out_data, (x,), backward)
    return out


# loss driver and gradient checking -------------------------------------------

def forward_backward(loss: Tensor) -> float:
    """Run backward on a scalar loss; returns its value. Grads land on leaves."""
    if not isinstance(loss, Tensor):
        raise TypeError("forward_backward expects a Tensor")
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    loss.backward()
    return loss.item()


@dataclass
class GradReport:
    max_relative_error: float
    per_parameter_errors: list

    def worst(self) -> str:
        name, _ = max(self.per_parameter_errors, key=lambda kv: kv[1])
        return name


def grad_check(loss_fn, params: dict, step: float = 1e-5) -> GradReport:
    """Compare autodiff gradients of loss_fn(params) against central differences.

    The per-parameter error is max|g_ad - g_fd| scaled by the larger gradient
    inf-norm (floor 1e-3, so near-zero gradients are judged absolutely).
    Non-finite losses at probe points are reported as inf errors, not skipped.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    loss = loss_fn(params)
    loss.backward()
    analytic = {k: p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for k, p in params.items()}
    errors = []
    for name, p in params.items():
        if not p.requires_grad:
            continue
        fd = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        bad_probe = False
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_fn(params).item()
            flat[i] = orig - step
            lo = loss_fn(params).item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                bad_probe = True
                break
            fd_flat[i] = (hi - lo) / (2.0 * step)
        if bad_probe:
            errors.append((name, float("inf")))
            continue
        g = analytic[name]
        scale = max(np.abs(g).max(initial=0.0), np.abs(fd).max(initial=0.0), 1e-3)
        errors.append((name, float(np.abs(g - fd).max(initial=0.0) / scale)))
    max_err = max((e for _, e in errors), default=0.0)
    return GradReport(max_relative_error=max_err, per_parameter_errors=errors)
