"""Dense tensors with reverse-mode autodiff, a splittable PRNG, and a
finite-difference gradient oracle.

The op set is deliberately small: matmul, transpose, add/sub/mul, scalar
ops, relu, gelu (tanh form), row softmax, layer norm, embedding gather,
reshape, sum/mean, cross-entropy-with-logits, mse. Everything runs on
contiguous float64 arrays by default; float32 is selectable per run.
Single-threaded execution order is the determinism baseline.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class ShapeError(ValueError):
    """Operand shapes violate an op contract."""


class GraphError(ValueError):
    """Autodiff graph misuse (non-scalar loss, detached node, ...)."""


def _as_array(data, dtype):
    arr = np.asarray(data, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor data must be finite (got NaN/Inf)")
    return arr


class Tensor:
    """N-d float array plus an optional gradient slot.

    Ops record a backward closure and parent links; `backward()` walks the
    implicit graph in reverse topological order exactly once per node.
    """

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False, dtype=np.float64):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._prev = ()

    @classmethod
    def _from_op(cls, data, prev, backward):
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in prev)
        out.grad = None
        if out.requires_grad:
            out._prev = tuple(prev)
            out._backward = backward
        else:
            out._prev = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise GraphError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate .grad on every requires_grad tensor reachable from here.

        The loss must be scalar. Each node's closure runs exactly once, in
        reverse topological order, so repeated subexpressions accumulate
        correctly and replays are bit-identical.
        """
        if self.data.size != 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("backward() on a tensor with no graph (requires_grad=False)")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"

    # operator sugar; the real kernels are module functions below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _unbroadcast(grad, shape):
    """Sum a broadcasted gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _coerce(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), requires_grad=False, dtype=like.dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with batched leading dims; dA = dC·Bᵀ, dB = Aᵀ·dC."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def _bw():
        g = out.grad
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    out = Tensor._from_op(out_data, (a, b), _bw)
    return out


def transpose(t: Tensor, ax1=-2, ax2=-1) -> Tensor:
    out_data = np.swapaxes(t.data, ax1, ax2)

    def _bw():
        t._accumulate(np.swapaxes(out.grad, ax1, ax2))

    out = Tensor._from_op(out_data, (t,), _bw)
    return out


def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    out_data = a.data + b.data

    def _bw():
        g = out.grad
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    out = Tensor._from_op(out_data, (a, b), _bw)
    return out


def sub(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    out_data = a.data - b.data

    def _bw():
        g = out.grad
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    out = Tensor._from_op(out_data, (a, b), _bw)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def _bw():
        g = out.grad
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    out = Tensor._from_op(out_data, (a, b), _bw)
    return out


def scale(t: Tensor, c: float) -> Tensor:
    c = float(c)
    out_data = t.data * c

    def _bw():
        t._accumulate(out.grad * c)

    out = Tensor._from_op(out_data, (t,), _bw)
    return out


def relu(t: Tensor) -> Tensor:
    out_data = np.maximum(t.data, 0)

    def _bw():
        t._accumulate(out.grad * (t.data > 0))

    out = Tensor._from_op(out_data, (t,), _bw)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(t: Tensor) -> Tensor:
    """Tanh-approximation gelu: 0.5·x·(1 + tanh(c·(x + 0.044715·x³)))."""
    x = t.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + th)

    def _bw():
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        dx = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * d_inner
        t._accumulate(out.grad * dx)

    out = Tensor._from_op(out_data, (t,), _bw)
    return out


def softmax(t: Tensor) -> Tensor:
    """Row softmax over the last axis, stabilized by max subtraction."""
    z = t.data - t.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def _bw():
        g = out.grad
        y = out_data
        t._accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    out = Tensor._from_op(out_data, (t,), _bw)
    return out


def layer_norm(t: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine part)."""
    x = t.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x - mu) * inv

    def _bw():
        g = out.grad
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        t._accumulate(inv * (g - gm - y * gym))

    out = Tensor._from_op(y, (t,), _bw)
    return out


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of `table` by integer ids; backward scatter-adds."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError(f"embedding ids must be integers, got dtype {ids.dtype}")
    out_data = table.data[ids]

    def _bw():
        g = np.zeros_like(table.data)
        np.add.at(g, ids.reshape(-1), out.grad.reshape(-1, table.data.shape[-1]))
        table._accumulate(g)

    out = Tensor._from_op(out_data, (table,), _bw)
    return out


def reshape(t: Tensor, shape) -> Tensor:
    out_data = t.data.reshape(shape)

    def _bw():
        t._accumulate(out.grad.reshape(t.data.shape))

    out = Tensor._from_op(out_data, (t,), _bw)
    return out


def tsum(t: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = t.data.sum(axis=axis, keepdims=keepdims)
    if axis is None and not keepdims:
        out_data = np.asarray(out_data)

    def _bw():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        t._accumulate(np.broadcast_to(g, t.data.shape).copy())

    out = Tensor._from_op(out_data, (t,), _bw)
    return out


def tmean(t: Tensor) -> Tensor:
    n = t.data.size
    return scale(tsum(t), 1.0 / n)


def mse(pred: Tensor, target) -> Tensor:
    """Mean over all elements of (pred − target)²."""
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if tgt.shape != pred.data.shape:
        raise ShapeError(f"mse shapes disagree: {pred.shape} vs {tgt.shape}")
    diff = pred.data - tgt
    n = diff.size
    out_data = np.asarray((diff * diff).sum() / n)

    def _bw():
        pred._accumulate(out.grad * (2.0 / n) * diff)

    out = Tensor._from_op(out_data, (pred,), _bw)
    return out


def cross_entropy_logits(logits: Tensor, ids) -> Tensor:
    """Mean NLL of integer class ids given (n, C) logits, via log-sum-exp."""
    ids = np.asarray(ids)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy_logits needs (n, C) logits, got {logits.shape}")
    if ids.shape != (logits.data.shape[0],):
        raise ShapeError(f"targets shape {ids.shape} does not match logits {logits.shape}")
    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    se = e.sum(axis=-1, keepdims=True)
    lse = np.log(se) + zmax
    n = z.shape[0]
    picked = z[np.arange(n), ids]
    out_data = np.asarray((lse[:, 0] - picked).sum() / n)

    def _bw():
        p = e / se
        p[np.arange(n), ids] -= 1.0
        logits._accumulate(out.grad * p / n)

    out = Tensor._from_op(out_data, (logits,), _bw)
    return out


def frobenius_norm(t: Tensor | np.ndarray) -> float:
    """sqrt of the sum of squares of all elements."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    return float(np.sqrt((arr * arr).sum()))


def sgd_step(params, eta: float, grads=None):
    """In-place θ ← θ − η·g for each param; grads are consumed (zeroed).

    `grads` defaults to each param's .grad; a param with no grad is left
    untouched (its gradient is zero).
    """
    if eta < 0:
        raise ValueError(f"step size must be >= 0, got {eta}")
    params = list(params)
    if grads is None:
        grads = [p.grad for p in params]
    else:
        grads = list(grads)
        if len(grads) != len(params):
            raise ShapeError(f"{len(params)} params vs {len(grads)} grads")
    for p, g in zip(params, grads):
        if g is None:
            continue
        g = g.data if isinstance(g, Tensor) else g
        if g.shape != p.data.shape:
            raise ShapeError(f"grad shape {g.shape} does not match param {p.data.shape}")
        p.data -= eta * g
        p.grad = None


class MomentumSgd:
    """Velocity-carrying SGD: v <- mu*v + g, theta <- theta - eta*v.

    mu=0 reproduces sgd_step exactly. Velocity is in-memory state only; a
    run resumed from a checkpoint restarts it (the bit-exact resume
    contract is for plain SGD).
    """

    def __init__(self, momentum: float = 0.0):
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.momentum = momentum
        self._velocity = {}

    def step(self, params, eta: float):
        if self.momentum == 0.0:
            sgd_step(params, eta)
            return
        if eta < 0:
            raise ValueError(f"step size must be >= 0, got {eta}")
        for p in params:
            g = p.grad
            if g is None:
                continue
            v = self._velocity.get(id(p))
            v = g if v is None else self.momentum * v + g
            self._velocity[id(p)] = v
            p.data -= eta * v
            p.grad = None


def finite_diff_gradient(f, theta: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient oracle: (f(θ+εe) − f(θ−εe)) / 2ε per coordinate.

    `f` must be a deterministic closure over `theta` returning a float.
    theta.data is perturbed in place and restored exactly.
    """
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    flat = theta.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f())
        flat[i] = orig - eps
        fm = float(f())
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad.reshape(theta.data.shape)


# ----------------------------------------------------------------------
# PRNG: splitmix-style 64-bit generator. Same seed => same stream on all
# platforms; reference vectors are pinned in the test suite.
# ----------------------------------------------------------------------


def _mix(z):
    """Finalizer of the splitmix step, vectorized over uint64 arrays."""
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """Splittable deterministic generator over a single 64-bit state."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def _raw(self, n: int) -> np.ndarray:
        """Next n raw 64-bit outputs; advances state by n increments."""
        with np.errstate(over="ignore"):
            idx = np.arange(1, n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + idx * np.uint64(_GAMMA)
            out = _mix(z)
        self.state = (self.state + n * _GAMMA) & MASK64
        return out

    def next_u64(self) -> int:
        return int(self._raw(1)[0])

    def uniform(self, shape=()) -> np.ndarray:
        """iid uniforms in [0, 1) with 53-bit resolution."""
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape) if shape else u[0]

    def gaussian(self, shape=()) -> np.ndarray:
        """iid standard normals via Box-Muller on the uniform stream.

        Consumes 2·ceil(n/2) raw draws for n samples.
        """
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        raw = self._raw(2 * m)
        u1 = ((raw[:m] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53  # (0, 1]
        u2 = (raw[m:] >> np.uint64(11)).astype(np.float64) * 2.0**-53  # [0, 1)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.empty(2 * m, dtype=np.float64)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        z = z[:n]
        return z.reshape(shape) if shape else z[0]

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) via multiply-shift."""
        if n <= 0:
            raise ValueError(f"randint needs n >= 1, got {n}")
        return (self.next_u64() * n) >> 64

    def randint_array(self, n: int, size: int) -> np.ndarray:
        return np.array([self.randint(n) for _ in range(size)], dtype=np.int64)

    def split(self) -> "Rng":
        """Child generator seeded from one draw of this stream."""
        return Rng(self.next_u64())
