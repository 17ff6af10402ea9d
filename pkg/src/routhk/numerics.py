"""Exact forward-mode differentiation, grid stencils, and small dense solves.

Dual2 numbers carry a value together with first and (optionally) second
derivatives along a fixed set of active directions, so one evaluation of a
user function yields machine-precision gradients and Hessians.  The payloads
are numpy arrays, and the value slot may itself be an array: seeding a batch
of evaluation points as array-valued duals differentiates a whole grid in a
single vectorized pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import GridError, NewtonDivergence, NumericalFailure, SingularMatrix

FD_STEP = 1e-5  # default central-difference cross-check step


# ---------------------------------------------------------------------------
# second-order dual numbers
# ---------------------------------------------------------------------------

class Dual2:
    """Second-order forward-mode scalar.

    Attributes:
        val: value, a float or ndarray.
        d1:  first derivatives, shape (m,) + shape(val)-broadcastable.
        d2:  second derivatives, shape (m, m) + ... , symmetric in the two
             leading axes, or None when only first derivatives are tracked.
    """

    __slots__ = ("val", "d1", "d2")

    def __init__(self, val, d1, d2=None):
        self.val = val
        self.d1 = d1
        self.d2 = d2

    def __repr__(self):
        return f"Dual2({self.val!r})"

    # -- helpers ------------------------------------------------------------

    def _outer(self, a, b):
        # symmetric part handled by callers; plain a_i b_j over the batch
        return a[:, None, ...] * b[None, :, ...]

    def _chain(self, f, df, ddf):
        v = f(self.val)
        d1 = df(self.val) * self.d1
        d2 = None
        if self.d2 is not None:
            d2 = df(self.val) * self.d2 + ddf(self.val) * self._outer(self.d1, self.d1)
        return Dual2(v, d1, d2)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual2):
            d2 = None
            if self.d2 is not None and other.d2 is not None:
                d2 = self.d2 + other.d2
            return Dual2(self.val + other.val, self.d1 + other.d1, d2)
        return Dual2(self.val + other, self.d1, self.d2)

    __radd__ = __add__

    def __neg__(self):
        return Dual2(-self.val, -self.d1, None if self.d2 is None else -self.d2)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Dual2) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual2):
            d1 = self.d1 * other.val + other.d1 * self.val
            d2 = None
            if self.d2 is not None and other.d2 is not None:
                d2 = (self.d2 * other.val + other.d2 * self.val
                      + self._outer(self.d1, other.d1) + self._outer(other.d1, self.d1))
            return Dual2(self.val * other.val, d1, d2)
        return Dual2(self.val * other, self.d1 * other,
                     None if self.d2 is None else self.d2 * other)

    __rmul__ = __mul__

    def _reciprocal(self):
        v = 1.0 / self.val
        d1 = -self.d1 * v * v
        d2 = None
        if self.d2 is not None:
            d2 = -self.d2 * v * v + 2.0 * self._outer(self.d1, self.d1) * v * v * v
        return Dual2(v, d1, d2)

    def __truediv__(self, other):
        if isinstance(other, Dual2):
            return self * other._reciprocal()
        return self * (1.0 / np.asarray(other))

    def __rtruediv__(self, other):
        return self._reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, Dual2):
            return (self.log() * p).exp()
        if p == 2:
            return self * self
        return self._chain(lambda v: v ** p,
                           lambda v: p * v ** (p - 1),
                           lambda v: p * (p - 1) * v ** (p - 2))

    def __rpow__(self, base):
        return (self * np.log(base)).exp()

    # comparisons act on values, e.g. for pivot selection
    def __lt__(self, other):
        return self.val < (other.val if isinstance(other, Dual2) else other)

    def __gt__(self, other):
        return self.val > (other.val if isinstance(other, Dual2) else other)

    # -- elementary functions -------------------------------------------------

    def sin(self):
        return self._chain(np.sin, np.cos, lambda v: -np.sin(v))

    def cos(self):
        return self._chain(np.cos, lambda v: -np.sin(v), lambda v: -np.cos(v))

    def sinh(self):
        return self._chain(np.sinh, np.cosh, np.sinh)

    def cosh(self):
        return self._chain(np.cosh, np.sinh, np.cosh)

    def exp(self):
        return self._chain(np.exp, np.exp, np.exp)

    def log(self):
        return self._chain(np.log, lambda v: 1.0 / v, lambda v: -1.0 / (v * v))

    def sqrt(self):
        return self._chain(np.sqrt,
                           lambda v: 0.5 / np.sqrt(v),
                           lambda v: -0.25 / (v * np.sqrt(v)))


def value_of(x):
    """Plain value of a float, ndarray, or Dual2."""
    return x.val if isinstance(x, Dual2) else x


# math dispatch usable on floats, arrays, and duals alike
def sin(x):
    return x.sin() if isinstance(x, Dual2) else np.sin(x)


def cos(x):
    return x.cos() if isinstance(x, Dual2) else np.cos(x)


def sinh(x):
    return x.sinh() if isinstance(x, Dual2) else np.sinh(x)


def cosh(x):
    return x.cosh() if isinstance(x, Dual2) else np.cosh(x)


def exp(x):
    return x.exp() if isinstance(x, Dual2) else np.exp(x)


def log(x):
    return x.log() if isinstance(x, Dual2) else np.log(x)


def sqrt(x):
    return x.sqrt() if isinstance(x, Dual2) else np.sqrt(x)


def seed_duals(x, dirs, order=2):
    """Seed coordinates x (shape (n,) or (n, N) for batches) along directions.

    dirs has shape (m, n).  Returns a list of n Dual2 scalars whose payloads
    broadcast against the batch shape of x.
    """
    x = np.asarray(x, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    m = dirs.shape[0]
    batch_ndim = x.ndim - 1
    tail = (1,) * batch_ndim
    out = []
    for j in range(x.shape[0]):
        d1 = dirs[:, j].reshape((m,) + tail)
        d2 = np.zeros((m, m) + tail) if order == 2 else None
        out.append(Dual2(x[j], d1, d2))
    return out


def unpack_dual(y, m, order, batch_shape=()):
    """Extract (value, first, second) arrays from a function result.

    Constant results (plain numbers) get zero derivatives.
    """
    if isinstance(y, Dual2):
        val = np.broadcast_to(np.asarray(y.val, dtype=float), batch_shape).copy() \
            if batch_shape else float(np.asarray(y.val))
        d1 = np.broadcast_to(y.d1, (m,) + batch_shape).copy()
        d2 = None
        if order == 2:
            d2 = np.broadcast_to(y.d2, (m, m) + batch_shape).copy()
        return val, d1, d2
    val = np.broadcast_to(np.asarray(y, dtype=float), batch_shape).copy() \
        if batch_shape else float(y)
    d1 = np.zeros((m,) + batch_shape)
    d2 = np.zeros((m, m) + batch_shape) if order == 2 else None
    return val, d1, d2


def directional_derivs(f, x, dirs, order=2):
    """Exact first and second directional derivatives of a scalar function.

    f takes a sequence of coordinate scalars (floats or Dual2) and returns a
    scalar.  Returns (value, first, second) where first[r] is the derivative
    along dirs[r] and second[r, s] pairs directions r and s.  second is None
    when order == 1.

    Raises NumericalFailure when any output entry is non-finite.
    """
    x = np.asarray(x, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    if dirs.ndim == 1:
        dirs = dirs[None, :]
    if not np.all(np.isfinite(dirs)):
        raise NumericalFailure(f"non-finite directions {dirs!r}")
    seeds = seed_duals(x, dirs, order=order)
    y = f(seeds)
    val, d1, d2 = unpack_dual(y, dirs.shape[0], order)
    pieces = [np.asarray(val), d1] + ([] if d2 is None else [d2])
    if not all(np.all(np.isfinite(p)) for p in pieces):
        raise NumericalFailure(f"non-finite derivative at x={x.tolist()}")
    return val, d1, d2


def gradient(f, x, order=1):
    """Gradient (and Hessian for order=2) of f along the coordinate axes."""
    n = len(np.asarray(x, dtype=float))
    return directional_derivs(f, x, np.eye(n), order=order)


def vector_jacobian(fn, x, step=FD_STEP):
    """Value and Jacobian of an array-valued map of one point.

    Tries exact dual evaluation first (fn receives an object vector of Dual2
    seeds); falls back to central differences with the given step.  Returns
    (value, jac) with jac of shape value.shape + (n,).
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    try:
        seeds = seed_duals(x, np.eye(n), order=1)
        xo = np.empty(n, dtype=object)
        for i, s in enumerate(seeds):
            xo[i] = s
        out = fn(xo)
        arr = np.asarray(out, dtype=object)
        val = np.empty(arr.shape)
        jac = np.zeros(arr.shape + (n,))
        for idx in np.ndindex(arr.shape):
            e = arr[idx]
            if isinstance(e, Dual2):
                val[idx] = float(e.val)
                jac[idx] = np.asarray(e.d1, dtype=float).reshape(n)
            else:
                val[idx] = float(e)
        if not (np.all(np.isfinite(val)) and np.all(np.isfinite(jac))):
            raise NumericalFailure("non-finite dual Jacobian")
        return val, jac
    except NumericalFailure:
        raise
    except Exception:
        pass
    f0 = np.asarray(fn(x), dtype=float)
    jac = np.zeros(f0.shape + (n,))
    for j in range(n):
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        jac[..., j] = (np.asarray(fn(xp), dtype=float)
                       - np.asarray(fn(xm), dtype=float)) / (2.0 * step)
    return f0, jac


# ---------------------------------------------------------------------------
# grids and finite differences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid over a box in parameter space R^k."""

    lo: tuple
    hi: tuple
    counts: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        counts = tuple(int(v) for v in np.atleast_1d(self.counts))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "counts", counts)
        if not (len(lo) == len(hi) == len(counts)):
            raise GridError("lo, hi, counts must share the axis count")
        if any(c < 3 for c in counts):
            raise GridError(f"every axis needs at least 3 nodes, got {counts}")
        if any(h <= l for l, h in zip(lo, hi)):
            raise GridError("hi must exceed lo on every axis")

    @classmethod
    def box(cls, k, lo=-1.0, hi=1.0, count=21):
        return cls((lo,) * k, (hi,) * k, (count,) * k)

    @property
    def k(self):
        return len(self.counts)

    @property
    def shape(self):
        return self.counts

    @property
    def spacing(self):
        return np.array([(h - l) / (c - 1)
                         for l, h, c in zip(self.lo, self.hi, self.counts)])

    def axis(self, a):
        return np.linspace(self.lo[a], self.hi[a], self.counts[a])

    def node_point(self, node):
        node = tuple(node)
        return np.array([self.axis(a)[node[a]] for a in range(self.k)])

    def points(self):
        """All node coordinates, shape (k,) + grid shape, C-ordered nodes."""
        mesh = np.meshgrid(*[self.axis(a) for a in range(self.k)], indexing="ij")
        return np.stack(mesh)

    def interior(self):
        """Slice tuple selecting interior nodes on every axis."""
        return tuple(slice(1, c - 1) for c in self.counts)

    def interior_shape(self):
        return tuple(c - 2 for c in self.counts)


def fd_partial(field, component, axis, node):
    """Second-order partial derivative of one field component at one node.

    Central differences at interior nodes, one-sided second-order stencils at
    the boundary.  `field` is a FieldSample-like object with .grid and
    .values (grid shape + (n,)).
    """
    grid = field.grid
    values = field.values
    node = tuple(int(i) for i in node)
    for a, i in enumerate(node):
        if not 0 <= i < grid.counts[a]:
            raise IndexError(f"node {node} outside grid of shape {grid.shape}")
    h = grid.spacing[axis]
    i = node[axis]
    c = grid.counts[axis]

    def at(j):
        idx = list(node)
        idx[axis] = j
        return values[tuple(idx) + (component,)]

    if 0 < i < c - 1:
        return (at(i + 1) - at(i - 1)) / (2.0 * h)
    if i == 0:
        return (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
    return (3.0 * at(c - 1) - 4.0 * at(c - 2) + at(c - 3)) / (2.0 * h)


def grid_partial(values, axis, h):
    """Vectorized counterpart of fd_partial over a whole array."""
    return np.gradient(values, h, axis=axis, edge_order=2)


# ---------------------------------------------------------------------------
# dense linear algebra
# ---------------------------------------------------------------------------

def solve_dense(A, b):
    """Solve A x = b by LU with partial pivoting.

    Raises SingularMatrix when a pivot falls below 1e-12 * ||A||_inf.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise SingularMatrix(f"matrix is not square: shape {A.shape}")
    norm = np.abs(A).sum(axis=1).max() if A.size else 0.0
    lu, piv = lu_factor(A, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.size and pivots.min() <= 1e-12 * norm:
        raise SingularMatrix(
            f"pivot {pivots.min():.3e} below 1e-12 * ||A||_inf = {1e-12 * norm:.3e}")
    return lu_solve((lu, piv), b)


def min_pivot(A):
    """Smallest pivot magnitude of the partially pivoted LU of A."""
    A = np.asarray(A, dtype=float)
    lu, _ = lu_factor(A, check_finite=True)
    d = np.abs(np.diag(lu))
    return float(d.min()) if d.size else 0.0


def dual_solve(A, b):
    """Gaussian elimination for small systems whose entries may be Dual2.

    A is an (n, n) nested list / object array, b an (n,) sequence; pivoting
    compares plain values.  Used where connection forms must stay exactly
    differentiable through a linear solve.
    """
    n = len(b)
    M = [[A[i][j] for j in range(n)] + [b[i]] for i in range(n)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(float(np.max(np.atleast_1d(
            np.abs(value_of(M[r][col])))))))
        if abs(float(np.max(np.atleast_1d(np.abs(value_of(M[piv][col])))))) == 0.0:
            raise SingularMatrix("zero pivot in dual solve")
        M[col], M[piv] = M[piv], M[col]
        inv = 1.0 / M[col][col] if not isinstance(M[col][col], Dual2) \
            else M[col][col]._reciprocal()
        for j in range(col, n + 1):
            M[col][j] = M[col][j] * inv
        for r in range(n):
            if r != col:
                factor = M[r][col]
                for j in range(col, n + 1):
                    M[r][j] = M[r][j] - factor * M[col][j]
    return [M[i][n] for i in range(n)]


# ---------------------------------------------------------------------------
# Newton iteration with exact Jacobians
# ---------------------------------------------------------------------------

def newton_solve(fun, jac, x0, tol=1e-10, max_iter=50, max_backtracks=30):
    """Damped Newton iteration on a flat vector.

    fun(x) -> residual (n,), jac(x) -> (n, n).  Steps are halved while the
    max-norm of the residual fails to decrease.  Raises NewtonDivergence on
    stagnation, iteration exhaustion, or a singular Jacobian.
    """
    x = np.array(x0, dtype=float)
    r = np.asarray(fun(x), dtype=float)
    for _ in range(max_iter):
        nr = np.abs(r).max() if r.size else 0.0
        if nr <= tol:
            return x
        try:
            step = solve_dense(jac(x), -r)
        except SingularMatrix as exc:
            raise NewtonDivergence(f"singular Jacobian: {exc}") from exc
        t = 1.0
        for _ in range(max_backtracks):
            x_new = x + t * step
            r_new = np.asarray(fun(x_new), dtype=float)
            if np.all(np.isfinite(r_new)) and (np.abs(r_new).max() < nr or nr <= tol):
                break
            t *= 0.5
        else:
            raise NewtonDivergence(f"backtracking stalled at residual {nr:.3e}")
        x, r = x_new, r_new
    if np.abs(r).max() <= tol:
        return x
    raise NewtonDivergence(
        f"no convergence after {max_iter} iterations, residual {np.abs(r).max():.3e}")
