"""Dense matrix algebra with reverse-mode differentiation.

Everything in the library is a 2-D float64 matrix; scalars are 1x1. A
:class:`Var` pairs a value with an accumulated gradient and a closure that
pushes gradients to its parents. Calling ``backward()`` on a scalar node
walks the graph once in reverse topological order, so a node that is used
twice receives the sum of both contributions.

Every operation validates that its output is finite and raises
:class:`NonFiniteError` otherwise; log-det losses are supposed to fail
loudly, never silently clamp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf entries."""


class PositiveDefiniteError(ValueError):
    """Cholesky factorization failed: the matrix is not positive definite."""


def _as_value(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def _checked(value: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(value).all():
        raise NonFiniteError(f"{op} produced non-finite entries")
    return value


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    for axis in (0, 1):
        if shape[axis] == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Var:
    """A node in the differentiation graph: matrix value plus gradient."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, _parents: tuple = (), _backward=None):
        self.value = _checked(_as_value(value), "Var")
        self.grad = np.zeros_like(self.value)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ValueError(f"item() on non-scalar of shape {self.shape}")
        return float(self.value[0, 0])

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into every node reachable from self."""
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar (1x1) node")
        order: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
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
        self.grad[...] += 1.0
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Var(shape={self.shape})"

    # Operator sugar; constants are wrapped on the fly.
    def __add__(self, other):
        return add(self, as_var(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_var(other))

    def __rsub__(self, other):
        return sub(as_var(other), self)

    def __mul__(self, other):
        return mul(self, as_var(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, as_var(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_var(other))


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def add(a: Var, b: Var) -> Var:
    value = _checked(a.value + b.value, "add")

    def backward(g):
        a.grad += _unbroadcast(g, a.shape)
        b.grad += _unbroadcast(g, b.shape)

    return Var(value, (a, b), backward)


def sub(a: Var, b: Var) -> Var:
    value = _checked(a.value - b.value, "sub")

    def backward(g):
        a.grad += _unbroadcast(g, a.shape)
        b.grad -= _unbroadcast(g, b.shape)

    return Var(value, (a, b), backward)


def mul(a: Var, b: Var) -> Var:
    value = _checked(a.value * b.value, "mul")

    def backward(g):
        a.grad += _unbroadcast(g * b.value, a.shape)
        b.grad += _unbroadcast(g * a.value, b.shape)

    return Var(value, (a, b), backward)


def div(a: Var, b: Var) -> Var:
    value = _checked(a.value / b.value, "div")

    def backward(g):
        a.grad += _unbroadcast(g / b.value, a.shape)
        b.grad += _unbroadcast(-g * a.value / b.value**2, b.shape)

    return Var(value, (a, b), backward)


def neg(a: Var) -> Var:
    def backward(g):
        a.grad -= g

    return Var(-a.value, (a,), backward)


def matmul(a: Var, b: Var) -> Var:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    value = _checked(a.value @ b.value, "matmul")

    def backward(g):
        a.grad += g @ b.value.T
        b.grad += a.value.T @ g

    return Var(value, (a, b), backward)


def transpose(a: Var) -> Var:
    def backward(g):
        a.grad += g.T

    return Var(a.value.T.copy(), (a,), backward)


def sum_all(a: Var) -> Var:
    value = np.array([[a.value.sum()]])

    def backward(g):
        a.grad += g[0, 0]

    return Var(_checked(value, "sum_all"), (a,), backward)


def mean_all(a: Var) -> Var:
    return div(sum_all(a), Var(float(a.value.size)))


def concat_rows(a: Var, b: Var) -> Var:
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"column mismatch in concat_rows: {a.shape} vs {b.shape}")
    value = np.vstack([a.value, b.value])
    split = a.shape[0]

    def backward(g):
        a.grad += g[:split]
        b.grad += g[split:]

    return Var(value, (a, b), backward)


def column(a: Var, j: int) -> Var:
    """Single column as an m x 1 node."""
    if not 0 <= j < a.shape[1]:
        raise ValueError(f"column {j} out of range for shape {a.shape}")
    value = a.value[:, j : j + 1].copy()

    def backward(g):
        a.grad[:, j : j + 1] += g

    return Var(value, (a,), backward)


ACTIVATION_KINDS = ("elu", "relu", "leaky_relu")


def activation(x: Var, kind: str, slope: float = 0.2) -> Var:
    """Elementwise nonlinearity. ELU uses alpha=1 and has derivative 1 at 0."""
    v = x.value
    if kind == "elu":
        value = np.where(v > 0, v, np.expm1(np.minimum(v, 0.0)))
        deriv = np.where(v > 0, 1.0, np.exp(np.minimum(v, 0.0)))
    elif kind == "relu":
        value = np.maximum(v, 0.0)
        deriv = (v > 0).astype(np.float64)
    elif kind == "leaky_relu":
        value = np.where(v > 0, v, slope * v)
        deriv = np.where(v > 0, 1.0, slope)
    else:
        raise ValueError(f"unknown activation kind {kind!r}; expected one of {ACTIVATION_KINDS}")

    def backward(g):
        x.grad += g * deriv

    return Var(_checked(value, kind), (x,), backward)


def row_normalize(z: Var, min_norm: float = 1e-12) -> Var:
    """Scale each row to unit L2 norm.

    The backward pass projects the incoming gradient onto the tangent space
    of the unit sphere at each row.
    """
    norms = np.linalg.norm(z.value, axis=1, keepdims=True)
    if norms.min() < min_norm:
        row = int(np.argmin(norms[:, 0]))
        raise ValueError(f"row {row} has near-zero norm {norms[row, 0]:.3e}; cannot normalize")
    y = z.value / norms

    def backward(g):
        z.grad += (g - (g * y).sum(axis=1, keepdims=True) * y) / norms

    return Var(_checked(y, "row_normalize"), (z,), backward)


def second_moment(z: Var) -> Var:
    """Uncentered second moment Z'Z/m, symmetrized so the output is exact."""
    m = z.shape[0]
    if m < 1:
        raise ValueError("second_moment needs at least one row")
    raw = z.value.T @ z.value
    value = (raw + raw.T) / (2.0 * m)

    def backward(g):
        z.grad += z.value @ (g + g.T) / m

    return Var(_checked(value, "second_moment"), (z,), backward)


def logdet_spd(m: Var, jitter: float = 1e-10) -> Var:
    """Log-determinant of a symmetric positive definite matrix via Cholesky.

    One retry with ``jitter * I`` is permitted; a second failure raises, since
    inputs of the form I + alpha * Sigma are SPD unless something upstream
    already went wrong.
    """
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"logdet_spd needs a square matrix, got {m.shape}")
    # treat the input as symmetric: the value ignores any (tiny) asymmetry
    # and the gradient is the symmetrized inverse
    v = (m.value + m.value.T) / 2.0
    try:
        chol = np.linalg.cholesky(v)
    except np.linalg.LinAlgError:
        try:
            chol = np.linalg.cholesky(v + jitter * np.eye(v.shape[0]))
        except np.linalg.LinAlgError:
            raise PositiveDefiniteError(
                f"Cholesky failed for {v.shape} matrix even with jitter {jitter:g}"
            ) from None
    value = np.array([[2.0 * np.log(np.diag(chol)).sum()]])

    def backward(g):
        inv = scipy.linalg.cho_solve((chol, True), np.eye(v.shape[0]))
        m.grad += g[0, 0] * (inv + inv.T) / 2.0

    return Var(_checked(value, "logdet_spd"), (m,), backward)


def _softmax_rows(u: np.ndarray) -> np.ndarray:
    shifted = u - u.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def gumbel_softmax(
    logits: Var,
    temperature: float = 1.0,
    rng: np.random.Generator | None = None,
    train_mode: bool = True,
) -> Var:
    """Soft categorical samples, rows summing to 1.

    Training mode perturbs the logits with Gumbel(0,1) noise and divides by
    the temperature before the softmax; the samples stay soft (no
    straight-through), so the result is differentiable in the logits. Eval
    mode is a plain, deterministic softmax.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if train_mode:
        if rng is None:
            raise ValueError("train-mode gumbel_softmax needs an rng")
        u = (logits.value + rng.gumbel(size=logits.shape)) / temperature
        scale = temperature
    else:
        u = logits.value
        scale = 1.0
    y = _softmax_rows(u)

    def backward(g):
        gu = y * (g - (g * y).sum(axis=1, keepdims=True))
        logits.grad += gu / scale

    return Var(_checked(y, "gumbel_softmax"), (logits,), backward)


@dataclass
class AdamState:
    """Per-parameter moment estimates for Adam."""

    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, Var], **kwargs) -> "AdamState":
        return cls(
            first_moment={k: np.zeros_like(p.value) for k, p in params.items()},
            second_moment={k: np.zeros_like(p.value) for k, p in params.items()},
            **kwargs,
        )


def adam_step(
    params: dict[str, Var],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> tuple[dict[str, Var], AdamState]:
    """One Adam update with bias correction and decoupled weight decay."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps_stab)
        p.value = _checked(
            p.value - lr * update - lr * weight_decay * p.value, "adam_step"
        )
    return params, state


def zero_grads(params: dict[str, Var]) -> None:
    for p in params.values():
        p.zero_grad()


def finite_diff_check(
    loss_fn,
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    max_coords: int = 25,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between backward gradients and central differences.

    ``loss_fn`` maps a dict of Vars to a scalar Var and must be deterministic
    (freeze any noise source inside it). Up to ``max_coords`` coordinates per
    parameter are probed; small parameters are probed exhaustively.
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    rng = rng or np.random.default_rng(0)
    base = {k: _as_value(v).copy() for k, v in params.items()}

    nodes = {k: Var(v) for k, v in base.items()}
    loss_fn(nodes).backward()
    analytic = {k: nodes[k].grad for k in base}

    def eval_at(name, idx, delta):
        arrays = {k: v for k, v in base.items()}
        pert = base[name].copy()
        pert.flat[idx] += delta
        arrays[name] = pert
        return loss_fn({k: Var(v) for k, v in arrays.items()}).item()

    worst = 0.0
    for name, v in base.items():
        if v.size <= max_coords:
            coords = range(v.size)
        else:
            coords = sorted(rng.choice(v.size, size=max_coords, replace=False))
        for idx in coords:
            fd = (eval_at(name, idx, h) - eval_at(name, idx, -h)) / (2.0 * h)
            an = float(analytic[name].flat[idx])
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            worst = max(worst, err)
    return worst
