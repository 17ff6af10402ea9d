"""Flatness checking and abelian reconstruction by quadrature.

The flatness (consistency) test is the abelian coordinate expression of the
curvature criterion for lifting reduced solutions: the group-direction
velocities prescribed along a reduced solution must have equal mixed
partials.  Only this abelian test is implemented; the nonabelian analogue
(curvature with bracket terms) is out of scope, and reconstruction_rhs stops
at the data a group-valued PDE integrator would consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InconsistentConstraints
from .jets import FieldSample, KJet
from .numerics import grid_partial


def _constraint_grids(constraints, field: FieldSample):
    """Sample the constraints along the field: array grid shape + (g, k)."""
    g = field.grid
    phi, dphi = field.jets_grid()
    pts = g.points()
    first = np.asarray(constraints(pts.reshape(g.k, -1)[:, 0],
                                   KJet(phi.reshape(-1, field.n)[0],
                                        dphi.reshape(-1, field.n, g.k)[0])),
                       dtype=float)
    gdim = first.shape[0]
    out = np.zeros(g.shape + (gdim, g.k))
    flat_phi = phi.reshape(-1, field.n)
    flat_dphi = dphi.reshape(-1, field.n, g.k)
    flat_out = out.reshape(-1, gdim, g.k)
    flat_pts = pts.reshape(g.k, -1)
    for j in range(flat_pts.shape[1]):
        flat_out[j] = np.asarray(
            constraints(flat_pts[:, j], KJet(flat_phi[j], flat_dphi[j])),
            dtype=float)
    return out


@dataclass
class ConsistencyResult:
    """Mixed-partial gaps of prescribed group velocities."""

    max_gap: float
    gaps: dict          # (a, b) -> (g,) max gap per component over interior
    tolerance: float

    @property
    def consistent(self):
        return self.max_gap <= self.tolerance


def default_consistency_tol(w, spacing, floor=1e-12):
    """Stencil-error scale for accepting flatness: 10 h^2 x curvature estimate.

    w is the sampled constraint array (grid shape + (g, k)); the curvature
    estimate is the largest second-difference magnitude along any axis.
    """
    k = len(spacing)
    est = 0.0
    for a in range(k):
        h = spacing[a]
        second = np.diff(w, n=2, axis=a) / (h * h)
        if second.size:
            est = max(est, float(np.abs(second).max()))
    hmax = float(np.max(spacing))
    return max(floor, 10.0 * hmax * hmax * est)


def consistency_check(constraints, field: FieldSample,
                      tol=None) -> ConsistencyResult:
    """Max mixed-partial gap |d_b w^i_a - d_a w^i_b| over interior nodes.

    constraints(t, reduced_jet) -> (g, k) prescribes the group-direction
    velocities; derivatives are grid stencils on the sampled constraint
    grids.  All axis pairs are checked for k > 2.
    """
    g = field.grid
    w = _constraint_grids(constraints, field)
    if tol is None:
        tol = default_consistency_tol(w, g.spacing)
    interior = g.interior()
    gaps = {}
    worst = 0.0
    for a in range(g.k):
        for b in range(a + 1, g.k):
            da = grid_partial(w[..., b], a, g.spacing[a])
            db = grid_partial(w[..., a], b, g.spacing[b])
            gap = (db - da)[interior]
            per_comp = np.abs(gap).reshape(-1, w.shape[-2]).max(axis=0)
            gaps[(a, b)] = per_comp
            worst = max(worst, float(per_comp.max()) if per_comp.size else 0.0)
    return ConsistencyResult(worst, gaps, float(tol))


def reconstruct_abelian(constraints, field: FieldSample, anchor_value,
                        anchor_node=None, tol=None, axis_order=None,
                        check=True) -> FieldSample:
    """Integrate group-direction velocities and append the group coordinates.

    Trapezoid quadrature axis by axis from the anchor node (default the low
    corner): the first axis fills the anchor line, each further axis sweeps
    the previously filled block.  Path independence up to O(h^2) is
    guaranteed by the flatness precondition, which is enforced unless
    check=False.  Returns a FieldSample whose components are the reduced
    field followed by the reconstructed group coordinates.
    """
    g = field.grid
    result = consistency_check(constraints, field, tol=tol)
    if check and not result.consistent:
        raise InconsistentConstraints(
            f"mixed-partial gap {result.max_gap:.3e} exceeds "
            f"tolerance {result.tolerance:.3e}")
    w = _constraint_grids(constraints, field)
    gdim = w.shape[-2]
    anchor_value = np.broadcast_to(np.asarray(anchor_value, dtype=float),
                                   (gdim,))
    anchor = tuple(0 for _ in range(g.k)) if anchor_node is None \
        else tuple(int(i) for i in anchor_node)
    order = list(range(g.k)) if axis_order is None else list(axis_order)

    G = np.zeros(g.shape + (gdim,))
    G[anchor] = anchor_value
    done = []
    for ax in order:
        h = g.spacing[ax]

        def line_index(j):
            idx = [slice(None) if a in done else anchor[a] for a in range(g.k)]
            idx[ax] = j
            return tuple(idx)

        i0 = anchor[ax]
        for j in range(i0 + 1, g.counts[ax]):
            G[line_index(j)] = G[line_index(j - 1)] + 0.5 * h * (
                w[line_index(j - 1) + (slice(None), ax)]
                + w[line_index(j) + (slice(None), ax)])
        for j in range(i0 - 1, -1, -1):
            G[line_index(j)] = G[line_index(j + 1)] - 0.5 * h * (
                w[line_index(j + 1) + (slice(None), ax)]
                + w[line_index(j) + (slice(None), ax)])
        done.append(ax)

    values = np.concatenate([field.values, G], axis=-1)
    return FieldSample(g, values)


def reconstruction_rhs(conn, X, lifted_field: FieldSample) -> np.ndarray:
    """Right-hand side of the reconstruction equation along a lifted field.

    X(t, q) -> (k, n) gives the k-vector field components along the
    horizontally lifted field; the result evaluates the connection on them,
    shape grid shape + (m, k).  These are the data a group-valued PDE
    integrator would consume.
    """
    g = lifted_field.grid
    pts = g.points().reshape(g.k, -1)
    vals = lifted_field.values.reshape(-1, lifted_field.n)
    out = np.zeros((pts.shape[1], conn.m, g.k))
    for j in range(pts.shape[1]):
        A = np.asarray(conn.matrix(vals[j]), dtype=float)
        vecs = np.asarray(X(pts[:, j], vals[j]), dtype=float)
        out[j] = A @ vecs.T
    return out.reshape(g.shape + (conn.m, g.k))
