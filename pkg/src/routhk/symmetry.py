"""Symmetry models, the Lagrangian momentum map, Noether divergence,
per-component momentum constancy, and the G-regularity solve.

Structure constants are stored as c[alpha, beta, gamma], the e_gamma
coefficient of [e_alpha, e_beta].  Infinitesimal generators follow the
left-action convention: the coordinate bracket of two generators closes on
minus the structure constants.  Invariance of a user k-vector field under the
isotropy group cannot be checked from a single field sample and is recorded
as an assumption of each registered example.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure
from .jets import FieldSample, KJet
from .lagrangian import (LagrangianSystem, ResidualGrid, _field_jets_at,
                         _flatten_v, _object_vector, _unflatten_v,
                         divergence_of_momenta, eval_lagrangian)
from .numerics import Dual2, newton_solve, seed_duals


@dataclass(frozen=True)
class MomentumValue:
    """A stack of k algebra covectors, mu[beta, a]."""

    mu: np.ndarray

    def __post_init__(self):
        mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        if not np.all(np.isfinite(mu)):
            raise ValueError("momentum entries must be finite")
        object.__setattr__(self, "mu", mu)

    @property
    def m(self):
        return self.mu.shape[0]

    @property
    def k(self):
        return self.mu.shape[1]


class SymmetryModel:
    """Lie algebra data plus the infinitesimal generators on configurations.

    generators is a list of m callables q -> (n,) component arrays; they
    should accept Dual2 or batched array entries.
    """

    def __init__(self, m, structure, generators, labels=None):
        self.m = int(m)
        self.structure = np.asarray(structure, dtype=float)
        if self.structure.shape != (self.m, self.m, self.m):
            raise ValueError("structure constants must be (m, m, m)")
        self.generators = list(generators)
        if len(self.generators) != self.m:
            raise ValueError("need one generator per algebra basis element")
        self.labels = list(labels) if labels else [f"e{i+1}" for i in range(self.m)]

    def generator_matrix(self, q):
        """Rows Lambda_beta(q); object matrix when q carries duals/batches."""
        rows = [np.asarray(g(q)) for g in self.generators]
        if all(r.dtype != object for r in rows):
            return np.stack([r.astype(float) for r in rows])
        out = np.empty((self.m, len(rows[0])), dtype=object)
        for b, r in enumerate(rows):
            for i in range(len(r)):
                out[b, i] = r[i]
        return out

    def generator_batch(self, q):
        """Lambda at a batch of points, shape (m, n) + batch."""
        q = np.asarray(q, dtype=float)
        cols = []
        for g in self.generators:
            row = np.asarray(g(q), dtype=float)
            cols.append(np.broadcast_to(row, (q.shape[0],) + q.shape[1:]))
        return np.stack(cols)

    def antisymmetry_gap(self):
        return float(np.abs(self.structure + np.swapaxes(self.structure, 0, 1)).max())

    def jacobi_gap(self):
        c = self.structure
        # sum over cyclic permutations of [[a,b],g]
        term = np.einsum("abd,dge->abge", c, c)
        total = term + np.einsum("bgd,dae->abge", c, c) \
            + np.einsum("gad,dbe->abge", c, c)
        return float(np.abs(total).max())

    def closure_gap(self, points):
        """Max mismatch of [xi_a, xi_b] + c^g_ab xi_g at sample points."""
        from .numerics import vector_jacobian
        worst = 0.0
        for q in points:
            q = np.asarray(q, dtype=float)
            lam = np.asarray(self.generator_matrix(q), dtype=float)
            jac = [vector_jacobian(self.generators[b], q)[1] for b in range(self.m)]
            for a in range(self.m):
                for b in range(self.m):
                    br = jac[b] @ lam[a] - jac[a] @ lam[b]
                    expected = -np.einsum("g,gi->i", self.structure[a, b], lam)
                    worst = max(worst, float(np.abs(br - expected).max()))
        return worst


def translation_symmetry(n, indices):
    """Abelian translations along the given configuration coordinates."""
    m = len(indices)

    def make(idx):
        def gen(q):
            arr = np.asarray(q)
            if arr.dtype == object:
                row = np.empty(len(arr), dtype=object)
                for i in range(len(arr)):
                    row[i] = 1.0 if i == idx else 0.0
                return row
            base = np.zeros((n,) + arr.shape[1:])
            base[idx] = 1.0
            return base
        return gen

    return SymmetryModel(m, np.zeros((m, m, m)), [make(i) for i in indices])


def lagrangian_momentum(sys: LagrangianSystem, sym: SymmetryModel,
                        jet: KJet) -> MomentumValue:
    """J_L = J after the Legendre transform: mu[beta, a] = sum_i p_i^a Lambda^i_beta."""
    from .hamiltonian import cotangent_momentum
    from .lagrangian import legendre
    return cotangent_momentum(sym, legendre(sys, jet))


def momentum_batch(sys, sym, phi, dphi):
    """J values along a batch of jets: (m, k, N)."""
    _, d1, _ = eval_lagrangian(sys, phi, dphi, wrt="v", order=1)
    p = _unflatten_v(d1, sys.n, sys.k)  # (n, k, N)
    lam = sym.generator_batch(phi)      # (m, n, N)
    return np.einsum("bi...,ia...->ba...", lam, p)


def noether_divergence(sys: LagrangianSystem, sym: SymmetryModel,
                       field: FieldSample) -> ResidualGrid:
    """sum_a d/dt^a (J^a_beta along the prolonged field), per interior node."""

    def momenta(phi, dphi):
        return momentum_batch(sys, sym, phi, dphi)

    div = divergence_of_momenta(field, momenta, sys.k, sym.m)
    g = field.grid
    return ResidualGrid(g, div.T.reshape(g.interior_shape() + (sym.m,)))


@dataclass
class ConstancyReport:
    """Pointwise and worst-case deviation of J from a fixed momentum value."""

    deviations: np.ndarray      # (m, k) max over nodes
    pointwise: np.ndarray       # grid shape + (m, k)
    mu: MomentumValue

    @property
    def max_abs(self):
        return float(self.deviations.max())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["beta", "a", "max_abs_deviation"])
            m, k = self.deviations.shape
            for b in range(m):
                for a in range(k):
                    w.writerow([b + 1, a + 1, repr(float(self.deviations[b, a]))])


def momentum_constancy(sys: LagrangianSystem, sym: SymmetryModel,
                       field: FieldSample, mu: MomentumValue) -> ConstancyReport:
    """Deviation |J^a_beta along the field - mu| per component, over all nodes."""
    g = field.grid
    pts = g.points().reshape(g.k, -1)
    phi, dphi = _field_jets_at(field, pts)
    J = momentum_batch(sys, sym, phi, dphi)  # (m, k, N)
    dev = np.abs(J - mu.mu[:, :, None])
    pointwise = np.moveaxis(dev, -1, 0).reshape(g.shape + (sym.m, sys.k))
    return ConstancyReport(dev.max(axis=-1), pointwise, mu)


def apply_algebra_shift(sym: SymmetryModel, jet: KJet, xi) -> KJet:
    """Shift the jet's velocities by generator columns: v_a += xi[., a]_Q(q)."""
    xi = np.asarray(xi, dtype=float).reshape(sym.m, jet.k)
    lam = np.asarray(sym.generator_matrix(jet.q), dtype=float)
    return KJet(jet.q, jet.v + np.einsum("ba,bi->ia", xi, lam))


def solve_g_regularity(sys: LagrangianSystem, sym: SymmetryModel, jet: KJet,
                       mu: MomentumValue, tol=1e-10, max_iter=50) -> np.ndarray:
    """Algebra coefficients xi (m, k) with J_L(jet + xi_Q) = mu.

    Newton iteration from xi = 0 with the exact Jacobian assembled from the
    velocity Hessian of L; steps are damped by halving when the residual
    grows.  NewtonDivergence signals G-regularity failure near this jet.
    """
    from .lagrangian import hessian
    m, k, n = sym.m, sys.k, sys.n
    lam = np.asarray(sym.generator_matrix(jet.q), dtype=float)
    target = mu.mu

    def lifted(xi_flat):
        return apply_algebra_shift(sym, jet, xi_flat.reshape(m, k))

    def fun(xi_flat):
        J = lagrangian_momentum(sys, sym, lifted(xi_flat)).mu
        return (J - target).ravel()

    def jac(xi_flat):
        H = hessian(sys, lifted(xi_flat)).reshape(k, n, k, n)
        return np.einsum("bi,aicj,gj->bagc", lam, H, lam).reshape(m * k, m * k)

    xi = newton_solve(fun, jac, np.zeros(m * k), tol=tol, max_iter=max_iter)
    return xi.reshape(m, k)
