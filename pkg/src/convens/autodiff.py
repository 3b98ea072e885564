"""Reverse-mode autodiff on dense float64 arrays.

A small eager engine sized for convolutional sequence models: each op
computes its forward value immediately and, when any input tracks
gradients, records a closure that propagates the output adjoint to its
inputs. `backward()` walks the recorded graph in reverse topological
order. Gradients accumulate into `.grad`; callers zero them between
steps.

All values are float64. Shapes are validated where ops have shape
contracts; no op broadcasts except where documented.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

_local = threading.local()


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


class no_grad:
    """Context manager: ops executed inside do not record backward closures."""

    def __enter__(self):
        self._prev = grad_enabled()
        _local.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _local.grad_enabled = self._prev
        return False


class Tensor:
    """A dense float64 array plus optional gradient buffer and graph links."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; all dispatch to the module-level ops.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Forward ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; shapes may broadcast (grads are summed back down)."""
    data = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bwd)


def scale(a: Tensor, alpha: float) -> Tensor:
    data = a.data * alpha

    def bwd(g):
        _accum(a, g * alpha)

    return _make(data, (a,), bwd)


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    """Strict same-shape elementwise `mul` or `add`."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"elementwise shapes differ: {a.data.shape} vs {b.data.shape}")
    if kind == "mul":
        return mul(a, b)
    if kind == "add":
        return add(a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map along the last axis: out = x . weight^T + bias.

    weight: (n_out, n_in); x: (..., n_in); bias: (n_out,).
    """
    n_out, n_in = weight.data.shape
    if x.data.shape[-1] != n_in:
        raise ValueError(f"linear: input last dim {x.data.shape[-1]} != n_in {n_in}")
    if bias.data.shape != (n_out,):
        raise ValueError(f"linear: bias shape {bias.data.shape} != ({n_out},)")
    data = x.data @ weight.data.T + bias.data

    def bwd(g):
        if x.requires_grad:
            _accum(x, g @ weight.data)
        if weight.requires_grad:
            _accum(weight, g.reshape(-1, n_out).T @ x.data.reshape(-1, n_in))
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, n_out).sum(axis=0))

    return _make(data, (x, weight, bias), bwd)


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor, padding: str) -> Tensor:
    """1-D cross-correlation along the time axis (axis -2).

    x: (..., w, c_in); kernel: (c_out, c_in, k); bias: (c_out,).
    `same`: symmetric zero padding of (k-1)/2, k must be odd.
    `causal`: zero padding of k-1 before the first observation only, so
    output at position t depends only on inputs at positions <= t.
    Output length equals input length in both modes.
    """
    c_out, c_in, k = kernel.data.shape
    if x.data.shape[-1] != c_in:
        raise ValueError(f"conv1d: input channels {x.data.shape[-1]} != c_in {c_in}")
    if bias.data.shape != (c_out,):
        raise ValueError(f"conv1d: bias shape {bias.data.shape} != ({c_out},)")
    if padding == "same":
        if k % 2 == 0:
            raise ValueError("conv1d: `same` padding requires odd kernel size")
        left = right = (k - 1) // 2
    elif padding == "causal":
        left, right = k - 1, 0
    else:
        raise ValueError(f"conv1d: unknown padding {padding!r}")

    w = x.data.shape[-2]
    pad_spec = [(0, 0)] * (x.data.ndim - 2) + [(left, right), (0, 0)]
    xp = np.pad(x.data, pad_spec)
    data = np.broadcast_to(bias.data, x.data.shape[:-1] + (c_out,)).copy()
    for j in range(k):
        data += xp[..., j : j + w, :] @ kernel.data[:, :, j].T

    def bwd(g):
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, c_out).sum(axis=0))
        if kernel.requires_grad:
            gk = np.empty_like(kernel.data)
            g_flat = g.reshape(-1, c_out)
            for j in range(k):
                gk[:, :, j] = g_flat.T @ xp[..., j : j + w, :].reshape(-1, c_in)
            _accum(kernel, gk)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[..., j : j + w, :] += g @ kernel.data[:, :, j]
            end = gxp.shape[-2] - right
            _accum(x, gxp[..., left:end, :])

    return _make(data, (x, kernel, bias), bwd)


def sigmoid(x: Tensor) -> Tensor:
    data = expit(x.data)

    def bwd(g):
        _accum(x, g * data * (1.0 - data))

    return _make(data, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def bwd(g):
        _accum(x, g * (1.0 - data * data))

    return _make(data, (x,), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis with max-subtraction stabilization."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accum(x, data * (g - dot))

    return _make(data, (x,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _make(data, (a, b), bwd)


def transpose_last2(x: Tensor) -> Tensor:
    data = np.swapaxes(x.data, -1, -2)

    def bwd(g):
        _accum(x, np.swapaxes(g, -1, -2))

    return _make(data, (x,), bwd)


def tsum(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    data = np.asarray(x.data.sum())

    def bwd(g):
        _accum(x, np.full_like(x.data, float(g)))

    return _make(data, (x,), bwd)


def sq_error(a: Tensor, b: Tensor, reduce: str) -> Tensor:
    """Squared L2 difference with the requested reduction.

    `sum` and `mean` produce scalars; `per_row` sums over the last axis
    only, yielding one value per time step.
    """
    if a.data.shape != b.data.shape:
        raise ValueError(f"sq_error shapes differ: {a.data.shape} vs {b.data.shape}")
    d = a.data - b.data
    if reduce == "sum":
        data = np.asarray((d * d).sum())

        def bwd(g):
            base = 2.0 * float(g) * d
            _accum(a, base)
            _accum(b, -base)

    elif reduce == "mean":
        data = np.asarray((d * d).mean())
        inv = 1.0 / d.size

        def bwd(g):
            base = 2.0 * float(g) * inv * d
            _accum(a, base)
            _accum(b, -base)

    elif reduce == "per_row":
        data = (d * d).sum(axis=-1)

        def bwd(g):
            base = 2.0 * g[..., None] * d
            _accum(a, base)
            _accum(b, -base)

    else:
        raise ValueError(f"sq_error: unknown reduce {reduce!r}")

    return _make(data, (a, b), bwd)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(t) into `.grad` of every tensor reachable from
    `loss` that requires gradients. Gradients accumulate; callers zero
    parameter grads between steps."""
    if loss.data.ndim != 0:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    # Iterative post-order DFS; insertion order of ops is already topological,
    # but re-deriving it here keeps backward independent of creation bookkeeping.
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grads(params) -> None:
    """Zero (allocating if needed) the grad buffer of every tensor given.

    Accepts any iterable of tensors or a name->Tensor mapping.
    """
    values = params.values() if hasattr(params, "values") else params
    for t in values:
        t.zero_grad()


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Adam moment buffers keyed like the parameter set they update."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, t in params.items():
        state.m[name] = np.zeros_like(t.data)
        state.v[name] = np.zeros_like(t.data)
    return state


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update, in place. Gradients are left untouched."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient buffer")
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    worst_index: tuple
    per_param: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def grad_check(build_fn, params: dict[str, Tensor], tolerance: float = 1e-4,
               step: float = 1e-5, max_coords_per_tensor: int | None = None,
               seed: int = 0) -> GradCheckReport:
    """Compare reverse-mode gradients of `build_fn()` against central finite
    differences at the current parameter point.

    `build_fn` must rebuild the loss from `params` on every call. All
    coordinates are checked unless `max_coords_per_tensor` caps the sample
    (drawn with a seeded generator). Relative error uses
    |ad - fd| / max(|ad|, |fd|, 1e-6).
    """
    rng = np.random.default_rng(seed)
    zero_grads(params)
    loss = build_fn()
    backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    per_param: dict[str, float] = {}
    worst = (0.0, "", ())
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            n = flat.size
            if max_coords_per_tensor is not None and n > max_coords_per_tensor:
                coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
            else:
                coords = np.arange(n)
            worst_here = 0.0
            for c in coords:
                orig = flat[c]
                flat[c] = orig + step
                f_plus = float(build_fn().data)
                flat[c] = orig - step
                f_minus = float(build_fn().data)
                flat[c] = orig
                fd = (f_plus - f_minus) / (2.0 * step)
                ad = analytic[name].reshape(-1)[c]
                rel = abs(ad - fd) / max(abs(ad), abs(fd), 1e-6)
                if rel > worst_here:
                    worst_here = rel
                if rel > worst[0]:
                    worst = (rel, name, np.unravel_index(int(c), p.data.shape))
            per_param[name] = worst_here

    return GradCheckReport(
        max_rel_err=worst[0],
        worst_param=worst[1],
        worst_index=worst[2],
        per_param=per_param,
        tolerance=tolerance,
    )
