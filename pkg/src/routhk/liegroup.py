"""Matrix-free Lie-algebra computations: brackets, isotropy subalgebras,
locked inertia, the mechanical connection, Killing residuals, Christoffel
symbols, and invariant-metric Routhians on coadjoint orbits.

Only the structure constants and the generator vector fields are ever used;
group elements never appear.  Coadjoint orbit points are supplied by callers.
Left invariance is what the Killing checks certify; bi-invariance claims of
specific examples are remarks, not tested properties.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import NewtonDivergence, SingularMatrix
from .hamiltonian import ConnectionOneForm
from .numerics import (FD_STEP, Dual2, dual_solve, min_pivot, newton_solve,
                       seed_duals, solve_dense, unpack_dual, vector_jacobian)


@dataclass(frozen=True)
class LieAlgebraModel:
    """Structure constants c[alpha, beta, gamma] with basis labels."""

    m: int
    structure: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.structure, dtype=float)
        if c.shape != (self.m, self.m, self.m):
            raise ValueError("structure constants must be (m, m, m)")
        object.__setattr__(self, "structure", c)
        labels = tuple(self.labels) if self.labels else \
            tuple(f"e{i+1}" for i in range(self.m))
        object.__setattr__(self, "labels", labels)

    def antisymmetry_gap(self):
        return float(np.abs(self.structure
                            + np.swapaxes(self.structure, 0, 1)).max())

    def jacobi_gap(self):
        c = self.structure
        total = np.einsum("abd,dge->abge", c, c) \
            + np.einsum("bgd,dae->abge", c, c) \
            + np.einsum("gad,dbe->abge", c, c)
        return float(np.abs(total).max())

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(int(data["m"]), np.asarray(data["structure"], dtype=float),
                   tuple(data.get("labels", ())))

    def to_json(self):
        return json.dumps({
            "m": self.m,
            "structure": self.structure.tolist(),
            "labels": list(self.labels),
        }, indent=2)


def bracket(alg: LieAlgebraModel, xi, eta) -> np.ndarray:
    """(ad_xi eta)^gamma = c^gamma_{alpha beta} xi^alpha eta^beta."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return np.einsum("abg,a,b->g", alg.structure, xi, eta)


def isotropy_algebra(alg: LieAlgebraModel, nu, tol=1e-10) -> np.ndarray:
    """Orthonormal basis (rows) of the isotropy subalgebra of nu.

    xi belongs iff <nu, [xi, .]> = 0, i.e. xi lies in the kernel of the map
    xi -> xi^T M with M[alpha, beta] = sum_gamma nu_gamma c[alpha, beta, gamma].
    The kernel comes from pivoted Gaussian elimination with pivot tolerance
    tol, then QR orthonormalization.
    """
    nu = np.asarray(nu, dtype=float)
    M = np.einsum("abg,g->ab", alg.structure, nu)
    R = M.T.copy()  # kernel of M^T xi = 0
    m = alg.m
    pivots = []
    row = 0
    for col in range(m):
        piv = row + int(np.argmax(np.abs(R[row:, col]))) if row < m else row
        if row >= m or np.abs(R[piv, col]) <= tol:
            continue
        R[[row, piv]] = R[[piv, row]]
        R[row] /= R[row, col]
        for r in range(m):
            if r != row:
                R[r] -= R[r, col] * R[row]
        pivots.append(col)
        row += 1
    free = [c for c in range(m) if c not in pivots]
    basis = []
    for c in free:
        vec = np.zeros(m)
        vec[c] = 1.0
        for r, pc in enumerate(pivots):
            vec[pc] = -R[r, c]
        basis.append(vec)
    if not basis:
        return np.zeros((0, m))
    Q, _ = np.linalg.qr(np.stack(basis, axis=1))
    return Q.T


@dataclass
class InvariantMetricModel:
    """An invariant metric on configurations acted on by a Lie group.

    metric(q) -> (n, n) coordinate matrix (Dual2-friendly); generators are
    the m infinitesimal generator callables; algebra_gram optionally caches
    the constant Gram matrix of the generators when it is base-independent.
    """

    algebra: LieAlgebraModel
    metric: object
    generators: list
    algebra_gram: np.ndarray = None

    @property
    def m(self):
        return self.algebra.m

    def generator_matrix(self, q):
        rows = [np.asarray(g(q)) for g in self.generators]
        if all(r.dtype != object for r in rows):
            return np.stack([r.astype(float) for r in rows])
        out = np.empty((self.m, len(rows[0])), dtype=object)
        for b, r in enumerate(rows):
            for i in range(len(r)):
                out[b, i] = r[i]
        return out


def locked_inertia(met: InvariantMetricModel, q) -> np.ndarray:
    """Gram matrix of the generators under the metric at q.

    Raises SingularMatrix when the matrix is not invertible (the action is
    not locally free there).
    """
    q = np.asarray(q, dtype=float)
    lam = np.asarray(met.generator_matrix(q), dtype=float)
    g = np.asarray(met.metric(q), dtype=float)
    I = lam @ g @ lam.T
    norm = np.abs(I).sum(axis=1).max()
    if min_pivot(I) <= 1e-12 * norm:
        raise SingularMatrix("locked inertia tensor is singular at this point")
    return I


def mechanical_connection(met: InvariantMetricModel, q, v) -> np.ndarray:
    """A(v) = I_q^{-1} (G(v, E_beta(q)))_beta; the metric-orthogonal connection."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    lam = np.asarray(met.generator_matrix(q), dtype=float)
    g = np.asarray(met.metric(q), dtype=float)
    return solve_dense(locked_inertia(met, q), lam @ g @ v)


def mechanical_connection_form(met: InvariantMetricModel) -> ConnectionOneForm:
    """The mechanical connection as a coordinate one-form, Dual2-friendly."""

    def A(q):
        q_arr = np.asarray(q)
        if q_arr.dtype != object:
            qf = q_arr.astype(float)
            lam = np.asarray(met.generator_matrix(qf), dtype=float)
            g = np.asarray(met.metric(qf), dtype=float)
            rhs = lam @ g  # (m, n)
            I = locked_inertia(met, qf)
            return np.stack([solve_dense(I, rhs[:, i]) for i in range(rhs.shape[1])],
                            axis=1)
        lam = met.generator_matrix(q_arr)
        g = met.metric(q_arr)
        m, n = met.m, len(q_arr)
        rhs = [[sum(lam[b][i] * g[i][j] for i in range(n)) for j in range(n)]
               for b in range(m)]
        I = [[sum(rhs[b][j] * lam[c][j] for j in range(n)) for c in range(m)]
             for b in range(m)]
        out = np.empty((m, n), dtype=object)
        for j in range(n):
            col = dual_solve(I, [rhs[b][j] for b in range(m)])
            for b in range(m):
                out[b, j] = col[b]
        return out

    return ConnectionOneForm(met.m, A)


def killing_residual(metric_fn, generator_fn, q, step=FD_STEP) -> np.ndarray:
    """Residual of the Killing equation for one generator at one point.

    K[k, i] = Lambda^j dg_ki/dq^j + g_ji dLambda^j/dq^k + g_kj dLambda^j/dq^i,
    with all derivatives by central differences of the given step.
    """
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    g0 = np.asarray(metric_fn(q), dtype=float)
    lam0 = np.asarray(generator_fn(q), dtype=float)
    dg = np.zeros((n, n, n))   # dg[k, i, j] = dg_ki/dq^j
    dlam = np.zeros((n, n))    # dlam[j, k] = dLambda^j/dq^k
    for j in range(n):
        qp, qm = q.copy(), q.copy()
        qp[j] += step
        qm[j] -= step
        dg[:, :, j] = (np.asarray(metric_fn(qp), dtype=float)
                       - np.asarray(metric_fn(qm), dtype=float)) / (2.0 * step)
        dlam[:, j] = (np.asarray(generator_fn(qp), dtype=float)
                      - np.asarray(generator_fn(qm), dtype=float)) / (2.0 * step)
    K = np.einsum("j,kij->ki", lam0, dg) \
        + np.einsum("ji,jk->ki", g0, dlam) + np.einsum("kj,ji->ki", g0, dlam)
    return K


def christoffel(metric_fn, q) -> np.ndarray:
    """Christoffel symbols Gamma^i_{jk} of a coordinate metric at q.

    Metric derivatives come from exact dual evaluation when the metric
    function supports it, otherwise central differences.
    """
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    g0, dg = vector_jacobian(metric_fn, q)  # dg[i, j, l] = dg_ij/dq^l
    # low[l, j, k] = (d_j g_lk + d_k g_lj - d_l g_jk) / 2
    low = 0.5 * (dg.transpose(0, 2, 1) + dg - dg.transpose(2, 0, 1))
    out = np.zeros((n, n, n))
    for j in range(n):
        for k in range(n):
            out[:, j, k] = solve_dense(g0, low[:, j, k])
    return out


def orbit_routhian(alg: LieAlgebraModel, ell, nu, tol=1e-10) -> float:
    """Routhian on a k-coadjoint orbit point for a Lie-group Lagrangian.

    ell is a reduced Lagrangian on stacked algebra columns: callable taking an
    (m, k) block (Dual2-friendly entries) and returning a scalar.  nu is the
    orbit point, an (m, k) stack of covectors.  Solves the fiber-derivative
    equation Fl(xi) = nu by Newton with the exact Hessian of ell and returns
    ell(xi) - sum_a <nu_a, xi_a>.
    """
    nu = np.atleast_2d(np.asarray(nu, dtype=float))
    m, k = nu.shape
    if m != alg.m:
        raise ValueError(f"orbit point has {m} rows, algebra dimension is {alg.m}")

    def eval_ell(xi_flat, order):
        seeds = seed_duals(xi_flat, np.eye(m * k), order=order)
        block = np.empty((m, k), dtype=object)
        for a in range(k):
            for b in range(m):
                block[b, a] = seeds[a * m + b]
        val, d1, d2 = unpack_dual(ell(block), m * k, order)
        return val, d1, d2

    nu_flat = np.concatenate([nu[:, a] for a in range(k)])

    def fun(xi_flat):
        _, d1, _ = eval_ell(xi_flat, 1)
        return d1 - nu_flat

    def jac(xi_flat):
        _, _, d2 = eval_ell(xi_flat, 2)
        return d2

    xi = newton_solve(fun, jac, np.zeros(m * k), tol=tol)
    val, _, _ = eval_ell(xi, 1)
    return float(val - nu_flat @ xi)


def a410_algebra() -> LieAlgebraModel:
    """The four-dimensional algebra with brackets [e_x,e_y] = -2 e_z,
    [e_x,e_th] = e_y, [e_y,e_th] = -e_x (basis order x, y, z, theta)."""
    c = np.zeros((4, 4, 4))
    x, y, z, th = 0, 1, 2, 3
    c[x, y, z], c[y, x, z] = -2.0, 2.0
    c[x, th, y], c[th, x, y] = 1.0, -1.0
    c[y, th, x], c[th, y, x] = -1.0, 1.0
    return LieAlgebraModel(4, c, ("x", "y", "z", "theta"))
