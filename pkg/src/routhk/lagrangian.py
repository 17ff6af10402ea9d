"""Lagrangian field theory: Legendre transform, energy, regularity, field
equation residuals, and the Lagrangian polysymplectic forms.

Sign convention.  The canonical forms derive from omega_Q = -d(theta_Q) with
theta_Q = p_i dq^i, so omega^a = dq^i wedge dp_i^a.  Pulling back through the
Legendre transform gives the coordinate matrix used here:

    W^a[q_r, q_s]      = L_{q^s v^r_a} - L_{q^r v^s_a}
    W^a[q_r, v^j_b]    = + L_{v^j_b v^r_a}      (and the antisymmetric partner)
    W^a[v, v]          = 0

This is the unique assembly for which the residual sum_a Gamma_a . W^a - dE_L
vanishes on the flat-metric second-order field (dq-part = v, dv-part = 0),
which pins the orientation the source equations leave implicit.

Velocity flattening is a-major with i fastest: flat(i, a) = a*n + i.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import GridError, NumericalFailure
from .jets import FieldSample, KCojet, KJet, _eval_exact_jet
from .numerics import (FD_STEP, grid_partial, min_pivot, seed_duals,
                       unpack_dual)

_CHUNK = 1 << 15


@dataclass(frozen=True)
class LagrangianSystem:
    """A Lagrangian on the k-velocity bundle of an n-dimensional configuration.

    L is a callable L(q, v) -> scalar where q is a length-n sequence and v an
    (n, k) indexable block; entries may be floats, numpy arrays (batched
    evaluation), or Dual2 scalars.  Write L with the math functions from
    routhk.numerics (sin, cos, ...) so that all three work.
    """

    n: int
    k: int
    L: object
    label: str = ""

    def value(self, jet: KJet) -> float:
        val, _, _ = eval_lagrangian(self, jet.q, jet.v, wrt="v", order=None)
        return float(val)


def vflat_index(i, a, n):
    return a * n + i


def _flatten_v(v):
    """(n, k) + batch -> (n*k,) + batch with flat(i, a) = a*n + i."""
    return np.concatenate([v[:, a] for a in range(v.shape[1])], axis=0)


def _unflatten_v(flat, n, k):
    """(n*k,) + batch -> (n, k) + batch."""
    return np.stack([flat[a * n:(a + 1) * n] for a in range(k)], axis=1)


def _object_vector(entries):
    out = np.empty(len(entries), dtype=object)
    for i, e in enumerate(entries):
        out[i] = e
    return out


def _object_block(entries, n, k):
    out = np.empty((n, k), dtype=object)
    for a in range(k):
        for i in range(n):
            out[i, a] = entries[a * n + i]
    return out


def _threads():
    try:
        return max(1, int(os.environ.get("ROUTHK_THREADS", "1")))
    except ValueError:
        return 1


def eval_lagrangian(sys, q, v, wrt="v", order=1):
    """Evaluate L with exact derivatives along the requested coordinates.

    q: (n,) or (n, N); v: (n, k) or (n, k, N).  wrt is "v" (momenta only) or
    "qv" (configuration and velocity).  order None skips derivatives, 1 gives
    the gradient, 2 adds the Hessian.  Returns (value, d1, d2) with the flat
    direction ordering [q_0..q_{n-1}] + [v flat] for "qv".
    Large batches are evaluated in chunks (parallelizable via ROUTHK_THREADS).
    """
    n, k = sys.n, sys.k
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    batch = q.shape[1:]
    if batch and batch[0] > _CHUNK:
        return _eval_chunked(sys, q, v, wrt, order)
    vflat = _flatten_v(v)
    if order is None:
        qo = _object_vector(list(q))
        vo = _object_block(list(vflat), n, k)
        y = sys.L(qo, vo)
        val, _, _ = unpack_dual(y, 0, None if order is None else order, batch)
        return val, None, None
    if wrt == "v":
        m = n * k
        seeds = seed_duals(vflat, np.eye(m), order=order)
        qo = _object_vector(list(q))
        vo = _object_block(seeds, n, k)
    elif wrt == "qv":
        m = n + n * k
        coords = np.concatenate([q, vflat], axis=0)
        seeds = seed_duals(coords, np.eye(m), order=order)
        qo = _object_vector(seeds[:n])
        vo = _object_block(seeds[n:], n, k)
    else:
        raise ValueError(f"unknown wrt {wrt!r}")
    y = sys.L(qo, vo)
    val, d1, d2 = unpack_dual(y, m, order, batch)
    pieces = [np.asarray(val), d1] + ([] if d2 is None else [d2])
    if not all(np.all(np.isfinite(p)) for p in pieces):
        raise NumericalFailure(f"non-finite Lagrangian derivatives ({sys.label})")
    return val, d1, d2


def _eval_chunked(sys, q, v, wrt, order):
    N = q.shape[1]
    spans = [(s, min(s + _CHUNK, N)) for s in range(0, N, _CHUNK)]

    def run(span):
        s, e = span
        return eval_lagrangian(sys, q[:, s:e], v[:, :, s:e], wrt, order)

    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, spans))
    else:
        parts = [run(sp) for sp in spans]
    val = np.concatenate([p[0] for p in parts], axis=-1)
    d1 = None if order is None else np.concatenate([p[1] for p in parts], axis=-1)
    d2 = None if order in (None, 1) else \
        np.concatenate([p[2] for p in parts], axis=-1)
    return val, d1, d2


# ---------------------------------------------------------------------------
# pointwise operations
# ---------------------------------------------------------------------------

def legendre(sys: LagrangianSystem, jet: KJet) -> KCojet:
    """Fiber derivative: p_i^a = dL/dv^i_a, exactly."""
    _, d1, _ = eval_lagrangian(sys, jet.q, jet.v, wrt="v", order=1)
    return KCojet(jet.q, _unflatten_v(d1, sys.n, sys.k))


def legendre_fd_gap(sys: LagrangianSystem, jet: KJet, step=FD_STEP) -> float:
    """Relative gap between exact momenta and central differences of L."""
    p = legendre(sys, jet).p
    fd = np.zeros_like(p)
    for a in range(sys.k):
        for i in range(sys.n):
            vp = jet.v.copy()
            vm = jet.v.copy()
            vp[i, a] += step
            vm[i, a] -= step
            lp, _, _ = eval_lagrangian(sys, jet.q, vp, order=None)
            lm, _, _ = eval_lagrangian(sys, jet.q, vm, order=None)
            fd[i, a] = (lp - lm) / (2.0 * step)
    return float(np.abs(p - fd).max() / (1.0 + np.abs(p).max()))


def energy(sys: LagrangianSystem, jet: KJet) -> float:
    """E_L = <FL(v), v> - L(v)."""
    val, d1, _ = eval_lagrangian(sys, jet.q, jet.v, wrt="v", order=1)
    return float(np.sum(d1 * _flatten_v(jet.v)) - val)


def hessian(sys: LagrangianSystem, jet: KJet) -> np.ndarray:
    """Exact (nk, nk) velocity Hessian, flat index a*n + i."""
    _, _, d2 = eval_lagrangian(sys, jet.q, jet.v, wrt="v", order=2)
    return d2


@dataclass(frozen=True)
class RegularityCertificate:
    regular: bool
    min_pivot: float
    worst_jet: int = -1

    def __bool__(self):
        return self.regular


def is_regular(sys: LagrangianSystem, jets, tol: float) -> RegularityCertificate:
    """Certify full rank of the velocity Hessian on a finite jet sample."""
    if not jets:
        raise ValueError("need at least one sample jet")
    worst, arg = np.inf, -1
    for idx, jet in enumerate(jets):
        piv = min_pivot(hessian(sys, jet))
        if piv < worst:
            worst, arg = piv, idx
    return RegularityCertificate(bool(worst > tol), float(worst), arg)


# ---------------------------------------------------------------------------
# field equation residuals
# ---------------------------------------------------------------------------

@dataclass
class ResidualGrid:
    """Residual components at the interior nodes of a grid."""

    grid: object
    values: np.ndarray  # interior shape + (m,)

    @property
    def max_abs(self):
        return float(np.abs(self.values).max())

    def interior_points(self):
        g = self.grid
        return g.points()[(slice(None),) + g.interior()].reshape(g.k, -1)

    def to_csv(self, path, prefix="r"):
        pts = self.interior_points()
        m = self.values.shape[-1]
        flat = self.values.reshape(-1, m)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"t{a + 1}" for a in range(self.grid.k)]
                       + [f"{prefix}{i + 1}" for i in range(m)])
            for j in range(pts.shape[1]):
                w.writerow([repr(float(x)) for x in pts[:, j]]
                           + [repr(float(x)) for x in flat[j]])


def divergence_of_momenta(field: FieldSample, momentum_fn, k, width,
                          fd_step=FD_STEP):
    """sum_a d/dt^a of a momentum-like map along the field, at interior nodes.

    momentum_fn(phi (n, N), dphi (n, k, N)) -> (width, k, N) evaluates the
    exact inner quantity.  With an exact jet the outer derivative is a small
    off-grid central difference of the composed map; otherwise it is the grid
    stencil applied to node samples.  Returns (width, M) over interior nodes.
    """
    g = field.grid
    interior = g.interior()
    if field.exact_jet is not None:
        pts = g.points()[(slice(None),) + interior].reshape(g.k, -1)
        M = pts.shape[1]
        div = np.zeros((width, M))
        for a in range(k):
            for s in (1.0, -1.0):
                probe = pts.copy()
                probe[a] += s * fd_step
                phi, dphi = _eval_exact_jet(field.exact_jet, probe)
                div += s * momentum_fn(phi, dphi)[:, a, :] / (2.0 * fd_step)
        return div
    phi, dphi = field.jets_grid()
    flat_phi = phi.reshape(-1, field.n).T
    flat_dphi = np.moveaxis(dphi.reshape(-1, field.n, g.k), 0, -1)
    mom = momentum_fn(flat_phi, flat_dphi)  # (width, k, N)
    h = g.spacing
    div = np.zeros(g.shape + (width,))
    for a in range(k):
        arr = mom[:, a, :].T.reshape(g.shape + (width,))
        div += grid_partial(arr, a, h[a])
    return div[interior].reshape(-1, width).T


def el_residual(sys: LagrangianSystem, field: FieldSample,
                fd_step=FD_STEP) -> ResidualGrid:
    """Euler-Lagrange residual r_i = sum_a d_a(dL/dv^i_a) - dL/dq^i.

    Inner derivatives of L are exact; the outer parameter derivative follows
    the rules of divergence_of_momenta.
    """
    g = field.grid
    if field.n != sys.n or g.k != sys.k:
        raise GridError(f"field shape ({field.n},{g.k}) does not match "
                        f"system ({sys.n},{sys.k})")
    n, k = sys.n, sys.k

    def momenta(phi, dphi):
        _, d1, _ = eval_lagrangian(sys, phi, dphi, wrt="v", order=1)
        return _unflatten_v(d1, n, k)

    div = divergence_of_momenta(field, momenta, k, n, fd_step)
    pts = g.points()[(slice(None),) + g.interior()].reshape(g.k, -1)
    phi_i, dphi_i = _field_jets_at(field, pts)
    _, d1, _ = eval_lagrangian(sys, phi_i, dphi_i, wrt="qv", order=1)
    r = div - d1[:n]
    return ResidualGrid(g, r.T.reshape(g.interior_shape() + (n,)))


def _field_jets_at(field: FieldSample, pts):
    """Jets of a field at given parameter points (exact or node lookup)."""
    if field.exact_jet is not None:
        return _eval_exact_jet(field.exact_jet, pts)
    phi, dphi = field.jets_grid()
    g = field.grid
    idx = []
    for a in range(g.k):
        frac = (pts[a] - g.lo[a]) / g.spacing[a]
        idx.append(np.rint(frac).astype(int))
    sel = tuple(idx)
    return phi[sel].T, np.moveaxis(dphi[sel], 0, -1)


# ---------------------------------------------------------------------------
# polysymplectic structure
# ---------------------------------------------------------------------------

def lag_polysymplectic_forms(sys: LagrangianSystem, jet: KJet) -> np.ndarray:
    """Coordinate matrices of all k forms omega^a_{Q,L}, shape (k, N, N)."""
    n, k = sys.n, sys.k
    N = n + n * k
    _, _, d2 = eval_lagrangian(sys, jet.q, jet.v, wrt="qv", order=2)
    W = np.zeros((k, N, N))
    for a in range(k):
        rows = [n + a * n + i for i in range(n)]
        qq = d2[np.ix_(range(n), rows)]  # L_{q^r v^i_a} with r row, i col
        W[a, :n, :n] = qq.T - qq
        vv = d2[np.ix_(rows, range(n, N))]  # L_{v^i_a v^j_b}
        W[a, :n, n:] = vv
        W[a, n:, :n] = -vv.T
    return W


def lag_polysymplectic_form(sys: LagrangianSystem, jet: KJet, a: int) -> np.ndarray:
    """Coordinate matrix of omega^a_{Q,L} in the basis (dq^i, dv^j_b)."""
    return lag_polysymplectic_forms(sys, jet)[a]


def energy_differential(sys: LagrangianSystem, jet: KJet) -> np.ndarray:
    """Exact dE_L in the (q, v) chart, length n + nk."""
    n, k = sys.n, sys.k
    _, d1, d2 = eval_lagrangian(sys, jet.q, jet.v, wrt="qv", order=2)
    vflat = _flatten_v(jet.v)
    dE = np.empty(n + n * k)
    dE[:n] = d2[:n, n:] @ vflat - d1[:n]
    dE[n:] = d2[n:, n:] @ vflat
    return dE


@dataclass
class KVectorFieldOnJets:
    """A k-vector field on the jet bundle in chart coordinates.

    evaluator(jet) returns an array of shape (k, n + n*k): for each a, the
    dq components followed by the flattened dv components.
    """

    evaluator: object

    def __call__(self, jet: KJet) -> np.ndarray:
        out = np.asarray(self.evaluator(jet), dtype=float)
        N = jet.n + jet.n * jet.k
        if out.shape != (jet.k, N):
            raise ValueError(f"k-vector field returned {out.shape}, "
                             f"expected ({jet.k}, {N})")
        return out


def sopde_field(coeff_fn):
    """SOPDE with dq-part v and dv-part from coeff_fn(jet) -> (k, n, k)."""

    def evaluator(jet):
        n, k = jet.n, jet.k
        out = np.zeros((k, n + n * k))
        coeffs = np.asarray(coeff_fn(jet), dtype=float)
        for a in range(k):
            out[a, :n] = jet.v[:, a]
            out[a, n:] = _flatten_v(coeffs[a])
        return out

    return KVectorFieldOnJets(evaluator)


def ksym_residual(sys: LagrangianSystem, gamma, jet: KJet) -> np.ndarray:
    """Residual of the k-symplectic field equations at one jet.

    residual = sum_a Gamma_a . omega^a_{Q,L} - dE_L; it vanishes exactly when
    the k-vector field solves the equations there.
    """
    gam = gamma(jet) if isinstance(gamma, KVectorFieldOnJets) \
        else KVectorFieldOnJets(gamma)(jet)
    W = lag_polysymplectic_forms(sys, jet)
    res = -energy_differential(sys, jet)
    for a in range(sys.k):
        res = res + gam[a] @ W[a]
    return res
