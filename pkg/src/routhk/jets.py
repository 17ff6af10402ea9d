"""Elements of the k-velocity and k-covelocity bundles, sampled fields, and
first prolongation.

Everything lives in a single global chart: configurations are plain length-n
arrays, velocity/momentum blocks are (n, k) arrays whose column a belongs to
parameter direction a.  Flattened (i, a) indices are a-major with i fastest,
matching the printed block layout of the elasticity Hessian.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import BasePointMismatch, GridError
from .numerics import Grid, grid_partial

BASE_POINT_TOL = 1e-12


@dataclass(frozen=True)
class KJet:
    """A configuration point with one velocity column per parameter direction."""

    q: np.ndarray  # (n,)
    v: np.ndarray  # (n, k)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if v.ndim != 2 or v.shape[0] != q.shape[0]:
            raise ValueError(f"velocity block {v.shape} does not match q {q.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v))):
            raise ValueError("jet entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def k(self):
        return self.v.shape[1]


@dataclass(frozen=True)
class KCojet:
    """A configuration point with one momentum column per parameter direction."""

    q: np.ndarray  # (n,)
    p: np.ndarray  # (n, k)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 2 or p.shape[0] != q.shape[0]:
            raise ValueError(f"momentum block {p.shape} does not match q {q.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("cojet entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def k(self):
        return self.p.shape[1]


def pairing(alpha: KCojet, v: KJet) -> float:
    """Natural pairing sum_a sum_i p_i^a v^i_a at a shared base point."""
    if alpha.n != v.n or alpha.k != v.k:
        raise BasePointMismatch(
            f"shape mismatch: cojet ({alpha.n},{alpha.k}) vs jet ({v.n},{v.k})")
    if np.abs(alpha.q - v.q).max() > BASE_POINT_TOL:
        raise BasePointMismatch(
            f"base points differ by {np.abs(alpha.q - v.q).max():.3e}")
    return float(np.sum(alpha.p * v.v))


class FieldSample:
    """A field phi: R^k -> R^n sampled on a uniform grid.

    values has shape grid.shape + (n,).  exact_jet, when present, maps a
    parameter point t (shape (k,) or a batch (k, N)) to (phi, dphi) of shapes
    ((n,), (n, k)) or ((n, N), (n, k, N)).
    """

    def __init__(self, grid: Grid, values: np.ndarray, exact_jet=None):
        values = np.asarray(values, dtype=float)
        if values.shape[:-1] != grid.shape:
            raise GridError(
                f"values shape {values.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise GridError("field values must be finite")
        self.grid = grid
        self.values = values
        self.exact_jet = exact_jet
        if exact_jet is not None:
            self._check_exact_jet()

    @property
    def n(self):
        return self.values.shape[-1]

    @classmethod
    def from_function(cls, grid: Grid, fn, exact_jet=None):
        """Sample fn (t -> (n,) values) on the grid; fn may be vectorized."""
        pts = grid.points().reshape(grid.k, -1)
        try:
            vals = np.asarray(fn(pts), dtype=float)
            if vals.ndim != 2 or vals.shape[1] != pts.shape[1]:
                raise ValueError
        except Exception:
            vals = np.stack([np.atleast_1d(np.asarray(fn(pts[:, j]), dtype=float))
                             for j in range(pts.shape[1])], axis=1)
        values = vals.T.reshape(grid.shape + (vals.shape[0],))
        return cls(grid, values, exact_jet=exact_jet)

    @classmethod
    def from_exact_jet(cls, grid: Grid, exact_jet):
        """Sample the value part of an exact jet evaluator on the grid."""
        phi, _ = _eval_exact_jet(exact_jet, grid.points().reshape(grid.k, -1))
        values = phi.T.reshape(grid.shape + (phi.shape[0],))
        return cls(grid, values, exact_jet=exact_jet)

    def _check_exact_jet(self, max_nodes=256, tol=1e-12):
        rng = np.random.default_rng(0)
        total = int(np.prod(self.grid.shape))
        flat = np.arange(total) if total <= max_nodes else \
            rng.choice(total, size=max_nodes, replace=False)
        pts = self.grid.points().reshape(self.grid.k, -1)[:, flat]
        phi, _ = _eval_exact_jet(self.exact_jet, pts)
        sampled = self.values.reshape(-1, self.n)[flat].T
        gap = np.abs(phi - sampled).max()
        if gap > tol:
            raise GridError(f"exact_jet disagrees with samples by {gap:.3e}")

    def node_value(self, node):
        return self.values[tuple(int(i) for i in node)]

    def jets_grid(self):
        """Values and first derivatives at every node.

        Returns (phi, dphi) with shapes grid.shape + (n,) and
        grid.shape + (n, k); derivatives come from the exact jet when
        available, else from second-order stencils.
        """
        g = self.grid
        if self.exact_jet is not None:
            pts = g.points().reshape(g.k, -1)
            phi, dphi = _eval_exact_jet(self.exact_jet, pts)
            return (phi.T.reshape(g.shape + (self.n,)),
                    np.moveaxis(dphi, -1, 0).reshape(g.shape + (self.n, g.k)))
        h = g.spacing
        dphi = np.stack([grid_partial(self.values, a, h[a]) for a in range(g.k)],
                        axis=-1)
        return self.values, dphi

    def to_csv(self, path):
        g = self.grid
        pts = g.points().reshape(g.k, -1)
        vals = self.values.reshape(-1, self.n)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"t{a + 1}" for a in range(g.k)]
                       + [f"phi{i + 1}" for i in range(self.n)])
            for j in range(pts.shape[1]):
                w.writerow([repr(float(x)) for x in pts[:, j]]
                           + [repr(float(x)) for x in vals[j]])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, data = rows[0], rows[1:]
        k = sum(1 for name in header if name.startswith("t"))
        n = len(header) - k
        arr = np.array([[float(x) for x in row] for row in data])
        axes = [np.unique(arr[:, a]) for a in range(k)]
        counts = tuple(len(ax) for ax in axes)
        grid = Grid(tuple(ax[0] for ax in axes), tuple(ax[-1] for ax in axes), counts)
        values = arr[:, k:].reshape(counts + (n,))
        return cls(grid, values)


def _eval_exact_jet(exact_jet, pts):
    """Evaluate an exact jet on a (k, N) batch, falling back to a loop."""
    k, N = pts.shape
    try:
        phi, dphi = exact_jet(pts)
        phi = np.asarray(phi, dtype=float)
        dphi = np.asarray(dphi, dtype=float)
        if phi.ndim == 2 and phi.shape[1] == N and dphi.shape[-1] == N:
            return phi, dphi
    except Exception:
        pass
    phis, dphis = [], []
    for j in range(N):
        phi, dphi = exact_jet(pts[:, j])
        phis.append(np.atleast_1d(np.asarray(phi, dtype=float)))
        dphis.append(np.asarray(dphi, dtype=float))
    return np.stack(phis, axis=-1), np.stack(dphis, axis=-1)


def prolong(field: FieldSample, node) -> KJet:
    """First prolongation of the field at a grid node: (phi(t), dphi/dt^a)."""
    g = field.grid
    node = tuple(int(i) for i in node)
    for a, i in enumerate(node):
        if not 0 <= i < g.counts[a]:
            raise IndexError(f"node {node} outside grid of shape {g.shape}")
    if field.exact_jet is not None:
        phi, dphi = field.exact_jet(g.node_point(node))
        return KJet(np.atleast_1d(np.asarray(phi, dtype=float)),
                    np.asarray(dphi, dtype=float).reshape(field.n, g.k))
    from .numerics import fd_partial
    q = field.node_value(node)
    v = np.array([[fd_partial(field, i, a, node) for a in range(g.k)]
                  for i in range(field.n)])
    return KJet(q, v)
