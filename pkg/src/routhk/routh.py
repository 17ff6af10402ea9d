"""The Routhian, its restriction to a momentum level set, magnetic terms, and
the reduced field-equation residual.

A reduced system is built from a full Lagrangian with symmetry, a principal
connection, a momentum value, and a coordinate section of the quotient.  The
reduced velocity gradient is exact: on the level set the generator-direction
sensitivity of R = L - sum_a <mu_a, A(v_a)> vanishes (that is what membership
in J_L^{-1}(mu) means), so dR/dvbar pairs the shifted momenta with the
horizontalized section frame.  Base-point gradients use central differences
(step 1e-5), which are exactly zero for the base-independent Routhians of
the registered examples.

The magnetic force enters the reduced residual as r -= sum_a B_{mu_a} dpsi/dt^a.
This sign matches the k=1 mechanical Routh equations; no example with a
nonvanishing magnetic term exists in the sources, so the convention is
provisional.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalFailure
from .hamiltonian import ConnectionOneForm, connection_pairing
from .jets import FieldSample, KJet
from .lagrangian import (LagrangianSystem, ResidualGrid, _field_jets_at,
                         divergence_of_momenta, eval_lagrangian, legendre)
from .numerics import FD_STEP, vector_jacobian
from .symmetry import MomentumValue, SymmetryModel, apply_algebra_shift, \
    solve_g_regularity


def routhian_full(sys: LagrangianSystem, conn: ConnectionOneForm,
                  mu: MomentumValue, jet: KJet) -> float:
    """R = L - sum_a <mu_a, A(v_a)> evaluated exactly at a full-space jet."""
    val, _, _ = eval_lagrangian(sys, jet.q, jet.v, order=None)
    total = float(val)
    for a in range(sys.k):
        row = np.asarray(connection_pairing(conn, mu.mu[:, a], jet.q), dtype=float)
        total -= float(row @ jet.v[:, a])
    return total


@dataclass
class ReductionSetup:
    """Everything needed to restrict and reduce a symmetric Lagrangian."""

    system: LagrangianSystem
    symmetry: SymmetryModel
    connection: ConnectionOneForm
    mu: MomentumValue
    section: object        # callable base point (base_n,) -> (n,)
    base_n: int

    def frame(self, qbar):
        """Section point and horizontalized section frame at a base point.

        Returns (q, hor) with hor of shape (base_n, n): row i is the
        horizontal lift of the i-th base coordinate direction.
        """
        qbar = np.atleast_1d(np.asarray(qbar, dtype=float))
        q, jac = vector_jacobian(self.section, qbar)  # (n,), (n, base_n)
        lam = np.asarray(self.symmetry.generator_matrix(q), dtype=float)
        A = np.asarray(self.connection.matrix(q), dtype=float)
        hor = np.zeros((self.base_n, self.system.n))
        for i in range(self.base_n):
            u = jac[:, i]
            hor[i] = u - lam.T @ (A @ u)
        return q, hor

    def lift(self, reduced_jet: KJet):
        """Lift a reduced jet to the mu-level set.

        Returns (full jet, xi) where xi are the algebra coefficients found by
        the G-regularity solve on top of the horizontal lift.
        """
        q, hor = self.frame(reduced_jet.q)
        v0 = hor.T @ reduced_jet.v  # (n, k)
        jet0 = KJet(q, v0)
        xi = solve_g_regularity(self.system, self.symmetry, jet0, self.mu)
        return apply_algebra_shift(self.symmetry, jet0, xi), xi


def reduced_routhian(setup: ReductionSetup, reduced_jet: KJet) -> float:
    """Value of the reduced Routhian at a reduced jet (lift, then evaluate)."""
    lifted, _ = setup.lift(reduced_jet)
    return routhian_full(setup.system, setup.connection, setup.mu, lifted)


def reduced_v_gradient(setup: ReductionSetup, reduced_jet: KJet) -> np.ndarray:
    """Exact dR/dvbar (base_n, k): shifted momenta against the frame."""
    q, hor = setup.frame(reduced_jet.q)
    lifted, _ = setup.lift(reduced_jet)
    p = legendre(setup.system, lifted).p  # (n, k)
    out = np.zeros((setup.base_n, setup.system.k))
    for a in range(setup.system.k):
        shifted = p[:, a] - np.asarray(
            connection_pairing(setup.connection, setup.mu.mu[:, a], q), dtype=float)
        out[:, a] = hor @ shifted
    return out


def reduced_q_gradient(setup: ReductionSetup, reduced_jet: KJet,
                       step=FD_STEP) -> np.ndarray:
    """dR/dqbar by central differences of the lifted Routhian value."""
    out = np.zeros(setup.base_n)
    for i in range(setup.base_n):
        qp, qm = reduced_jet.q.copy(), reduced_jet.q.copy()
        qp[i] += step
        qm[i] -= step
        out[i] = (reduced_routhian(setup, KJet(qp, reduced_jet.v))
                  - reduced_routhian(setup, KJet(qm, reduced_jet.v))) / (2.0 * step)
    return out


def magnetic_term(conn: ConnectionOneForm, mu_a, base_point, frame,
                  step=FD_STEP) -> np.ndarray:
    """Exterior derivative of <mu_a, A(.)> contracted with a base frame.

    frame is an (f, n) array of coordinate vectors treated as constant; the
    result is the antisymmetric (f, f) matrix d(A_mu)(frame_r, frame_s) by
    central differences of the connection components.
    """
    base_point = np.asarray(base_point, dtype=float)
    frame = np.atleast_2d(np.asarray(frame, dtype=float))
    f = frame.shape[0]

    def amu_along(direction, point):
        return float(np.asarray(connection_pairing(conn, mu_a, point),
                                dtype=float) @ direction)

    B = np.zeros((f, f))
    for r in range(f):
        for s in range(r + 1, f):
            d_rs = (amu_along(frame[s], base_point + step * frame[r])
                    - amu_along(frame[s], base_point - step * frame[r])) \
                / (2.0 * step)
            d_sr = (amu_along(frame[r], base_point + step * frame[s])
                    - amu_along(frame[r], base_point - step * frame[s])) \
                / (2.0 * step)
            B[r, s] = d_rs - d_sr
            B[s, r] = -B[r, s]
    return B


@dataclass
class RouthSystem:
    """A reduced Lagrangian-side system on the quotient base.

    routhian, v_gradient, and q_gradient all take a reduced KJet; they return
    the Routhian value, its velocity gradient (base_n, k), and its base
    gradient (base_n,).  magnetic is a list of k callables qbar ->
    (base_n, base_n) antisymmetric matrices, or None when the force vanishes.
    """

    base_n: int
    k: int
    routhian: object
    v_gradient: object
    q_gradient: object
    mu: MomentumValue
    magnetic: object = None
    label: str = ""

    def magnetic_at(self, qbar):
        if self.magnetic is None:
            return np.zeros((self.k, self.base_n, self.base_n))
        mats = np.stack([np.asarray(B(qbar), dtype=float) for B in self.magnetic])
        gap = np.abs(mats + np.swapaxes(mats, -1, -2)).max()
        if gap > 1e-12:
            raise NumericalFailure(f"magnetic term not antisymmetric ({gap:.3e})")
        return mats

    def quadratic_coefficients(self, qbar=None):
        """Constant, linear, and quadratic parts of the Routhian in vbar.

        Exact for velocity-quadratic systems (every registered example).
        """
        qbar = np.zeros(self.base_n) if qbar is None else \
            np.atleast_1d(np.asarray(qbar, dtype=float))
        nk = self.base_n * self.k
        zero = KJet(qbar, np.zeros((self.base_n, self.k)))
        const = float(self.routhian(zero))
        lin = self.v_gradient(zero).ravel(order="F")  # flat a-major, i fastest
        quad = np.zeros((nk, nk))
        for a in range(self.k):
            for i in range(self.base_n):
                v = np.zeros((self.base_n, self.k))
                v[i, a] = 1.0
                col = self.v_gradient(KJet(qbar, v)).ravel(order="F") - lin
                quad[:, a * self.base_n + i] = col
        return {"const": const, "linear": lin, "quadratic": quad}

    def to_json(self, qbar=None):
        coeff = self.quadratic_coefficients(qbar)
        return json.dumps({
            "label": self.label,
            "base_n": self.base_n,
            "k": self.k,
            "mu": [[float(x) for x in row] for row in self.mu.mu],
            "coefficients": {
                "const": coeff["const"],
                "linear": [float(x) for x in coeff["linear"]],
                "quadratic": [[float(x) for x in row] for row in coeff["quadratic"]],
            },
        }, indent=2)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        base_n, k = int(data["base_n"]), int(data["k"])
        coeff = data["coefficients"]
        const = float(coeff["const"])
        lin = np.asarray(coeff["linear"], dtype=float)
        quad = np.asarray(coeff["quadratic"], dtype=float)

        def flat(v):
            return np.concatenate([[v[i, a] for i in range(base_n)]
                                   for a in range(k)])

        def routhian(jet_or_q, vbar=None):
            jet = jet_or_q if vbar is None else KJet(jet_or_q, vbar)
            x = flat(jet.v)
            return const + float(lin @ x) + 0.5 * float(x @ quad @ x)

        def v_gradient(jet):
            x = flat(jet.v)
            g = lin + quad @ x
            return np.stack([g[a * base_n:(a + 1) * base_n]
                             for a in range(k)], axis=1)

        def q_gradient(jet):
            return np.zeros(base_n)

        return cls(base_n, k, routhian, v_gradient, q_gradient,
                   MomentumValue(np.asarray(data["mu"], dtype=float)),
                   None, data.get("label", ""))


def make_reduced_system(setup: ReductionSetup, label="") -> RouthSystem:
    """Wire a RouthSystem from a reduction setup."""

    def routhian(jet):
        return reduced_routhian(setup, jet)

    def v_gradient(jet):
        return reduced_v_gradient(setup, jet)

    def q_gradient(jet):
        return reduced_q_gradient(setup, jet)

    def make_magnetic(a):
        def B(qbar):
            q, hor = setup.frame(qbar)
            return magnetic_term(setup.connection, setup.mu.mu[:, a], q, hor)
        return B

    magnetic = [make_magnetic(a) for a in range(setup.system.k)]
    return RouthSystem(setup.base_n, setup.system.k, routhian, v_gradient,
                       q_gradient, setup.mu, magnetic, label)


def reduced_el_residual(rsys: RouthSystem, field: FieldSample,
                        fd_step=FD_STEP) -> ResidualGrid:
    """Residual of the reduced field equations on the quotient base.

    r_i = sum_a d_a(dR/dvbar^i_a) - dR/dqbar^i - sum_a (B_{mu_a} dpsi/dt^a)_i
    at interior nodes.
    """
    g = field.grid
    if field.n != rsys.base_n or g.k != rsys.k:
        raise NumericalFailure(
            f"field shape ({field.n},{g.k}) does not match reduced system "
            f"({rsys.base_n},{rsys.k})")

    def momenta(phi, dphi):
        N = phi.shape[-1]
        out = np.zeros((rsys.base_n, rsys.k, N))
        for j in range(N):
            out[:, :, j] = rsys.v_gradient(KJet(phi[:, j], dphi[:, :, j]))
        return out

    div = divergence_of_momenta(field, momenta, rsys.k, rsys.base_n, fd_step)
    pts = g.points()[(slice(None),) + g.interior()].reshape(g.k, -1)
    phi, dphi = _field_jets_at(field, pts)
    M = pts.shape[1]
    r = np.zeros((rsys.base_n, M))
    for j in range(M):
        jet = KJet(phi[:, j], dphi[:, :, j])
        r[:, j] = div[:, j] - rsys.q_gradient(jet)
        B = rsys.magnetic_at(jet.q)
        for a in range(rsys.k):
            r[:, j] -= B[a] @ jet.v[:, a]
    return ResidualGrid(g, r.T.reshape(g.interior_shape() + (rsys.base_n,)))
