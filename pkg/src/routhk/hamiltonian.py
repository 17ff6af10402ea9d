"""Canonical structures on the k-covelocity bundle: canonical forms, the
cotangent momentum map, the momentum shift, the shifted-form identity, and
the Hamiltonian field-equation residual.

Charts are global: a cojet tangent vector is a flat array over
(q^1..q^n, p-flat) with the momentum block flattened a-major, i fastest.

The quotient-level reduction hypotheses on abstract level sets admit no
finite check and are treated as standing assumptions of each example; the
library verifies their computable consequences (the shift identity, level-set
mapping, tangency) instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure
from .jets import KCojet
from .lagrangian import _flatten_v, _object_block, _object_vector, _unflatten_v
from .numerics import FD_STEP, Dual2, seed_duals, unpack_dual, value_of


@dataclass(frozen=True)
class HamiltonianSystem:
    """A Hamiltonian on the k-covelocity bundle.

    H is a callable H(q, p) -> scalar with q a length-n sequence and p an
    (n, k) indexable momentum block; entries may be floats, arrays, or Dual2.
    """

    n: int
    k: int
    H: object
    label: str = ""

    def value(self, alpha: KCojet) -> float:
        qo = _object_vector(list(alpha.q))
        po = _object_block(list(_flatten_v(alpha.p)), self.n, self.k)
        return float(value_of(self.H(qo, po)))


@dataclass(frozen=True)
class ConnectionOneForm:
    """Algebra-valued connection one-form in coordinates.

    A is a callable q -> (m, n) matrix of components A^beta_i; it should
    accept Dual2 entries (returning an object matrix) so that exact
    derivatives of the connection are available.
    """

    m: int
    A: object

    def matrix(self, q):
        out = self.A(q)
        if isinstance(out, np.ndarray) and out.dtype != object:
            return np.asarray(out, dtype=float)
        return out

    def reproduction_gap(self, generator_matrix, q) -> float:
        """max |A(q) Lambda^T - I| over the algebra; zero for a connection."""
        A = np.asarray(self.matrix(q), dtype=float)
        lam = np.asarray(generator_matrix(q), dtype=float)
        return float(np.abs(A @ lam.T - np.eye(self.m)).max())


def canonical_form(n: int, k: int, a: int) -> np.ndarray:
    """Constant matrix of omega^a = dq^i wedge dp_i^a in the (q, p) chart."""
    N = n + n * k
    W = np.zeros((N, N))
    for i in range(n):
        col = n + a * n + i
        W[i, col] = 1.0
        W[col, i] = -1.0
    return W


def canonical_forms(n: int, k: int) -> np.ndarray:
    return np.stack([canonical_form(n, k, a) for a in range(k)])


def cotangent_momentum(sym, alpha: KCojet):
    """Momentum of the lifted action: mu[beta, a] = sum_i p_i^a Lambda^i_beta."""
    from .symmetry import MomentumValue
    lam = np.asarray(sym.generator_matrix(alpha.q), dtype=float)  # (m, n)
    return MomentumValue(lam @ alpha.p)


def connection_pairing(conn: ConnectionOneForm, mu_a, q):
    """Components of the one-form <mu_a, A(.)> at q, length n."""
    A = conn.matrix(q)
    mu_a = np.asarray(mu_a, dtype=float)
    if isinstance(A, np.ndarray) and A.dtype != object:
        return mu_a @ A
    m, n = len(A), len(A[0])
    return np.array([sum(mu_a[b] * A[b][i] for b in range(m)) for i in range(n)],
                    dtype=object)


def momentum_shift(conn: ConnectionOneForm, mu, alpha: KCojet) -> KCojet:
    """Shift alpha^a -> alpha^a - <mu_a, A(.)>, one covector per direction."""
    mu = np.asarray(getattr(mu, "mu", mu), dtype=float)
    p = alpha.p.copy()
    for a in range(alpha.k):
        p[:, a] -= np.asarray(connection_pairing(conn, mu[:, a], alpha.q),
                              dtype=float)
    return KCojet(alpha.q, p)


def _pairing_jacobian_exact(conn, mu_a, q):
    """Jacobian of q -> <mu_a, A(q)> via duals, FD fallback (step 1e-6)."""
    n = len(q)
    try:
        seeds = seed_duals(q, np.eye(n), order=1)
        row = connection_pairing(conn, mu_a, _object_vector(seeds))
        jac = np.zeros((n, n))
        for i in range(n):
            e = row[i]
            jac[i] = np.asarray(e.d1, dtype=float).reshape(n) \
                if isinstance(e, Dual2) else 0.0
        return jac
    except Exception:
        step = 1e-6
        jac = np.zeros((n, n))
        for j in range(n):
            qp, qm = np.array(q, float), np.array(q, float)
            qp[j] += step
            qm[j] -= step
            jac[:, j] = (np.asarray(connection_pairing(conn, mu_a, qp), float)
                         - np.asarray(connection_pairing(conn, mu_a, qm), float)) \
                / (2.0 * step)
        return jac


def shift_identity_residual(conn: ConnectionOneForm, mu, alpha: KCojet,
                            u, w, fd_step=FD_STEP) -> np.ndarray:
    """Both sides of the shifted-form identity evaluated on (u, w), per a.

    Left side: canonical form pulled back through the momentum shift, with the
    shift's Jacobian from exact derivatives of the connection.  Right side:
    canonical form plus the numerically differentiated exterior derivative of
    the momentum-paired connection form (central differences, step fd_step).
    Returns left - right for each a.
    """
    mu = np.asarray(getattr(mu, "mu", mu), dtype=float)
    n, k = alpha.n, alpha.k
    N = n + n * k
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if u.shape != (N,) or w.shape != (N,):
        raise NumericalFailure(f"tangent vectors must have length {N}")
    jac = [_pairing_jacobian_exact(conn, mu[:, a], alpha.q) for a in range(k)]

    def push(t):
        out = t.copy()
        for a in range(k):
            out[n + a * n: n + (a + 1) * n] -= jac[a] @ t[:n]
        return out

    pu, pw = push(u), push(w)
    uq, wq = u[:n], w[:n]
    res = np.zeros(k)
    for a in range(k):
        W = canonical_form(n, k, a)
        lhs = pu @ W @ pw

        def amu_along(direction, point):
            return float(np.asarray(
                connection_pairing(conn, mu[:, a], point), float) @ direction)

        # dA_mu(uq, wq) = D_uq(A_mu . wq) - D_wq(A_mu . uq), central FD
        d_uw = (amu_along(wq, alpha.q + fd_step * uq)
                - amu_along(wq, alpha.q - fd_step * uq)) / (2.0 * fd_step)
        d_wu = (amu_along(uq, alpha.q + fd_step * wq)
                - amu_along(uq, alpha.q - fd_step * wq)) / (2.0 * fd_step)
        rhs = u @ W @ w + (d_uw - d_wu)
        res[a] = lhs - rhs
    return res


def eval_hamiltonian(sys: HamiltonianSystem, q, p, order=1):
    """Exact gradient (and Hessian) of H over the (q, p-flat) chart."""
    n, k = sys.n, sys.k
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    batch = q.shape[1:]
    pflat = _flatten_v(p)
    m = n + n * k
    coords = np.concatenate([q, pflat], axis=0)
    seeds = seed_duals(coords, np.eye(m), order=order)
    qo = _object_vector(seeds[:n])
    po = _object_block(seeds[n:], n, k)
    y = sys.H(qo, po)
    val, d1, d2 = unpack_dual(y, m, order, batch)
    if not (np.all(np.isfinite(np.asarray(val))) and np.all(np.isfinite(d1))):
        raise NumericalFailure(f"non-finite Hamiltonian derivatives ({sys.label})")
    return val, d1, d2


def kham_residual(sys: HamiltonianSystem, X, alpha: KCojet) -> np.ndarray:
    """Residual sum_a X_a . omega^a - dH at one cojet; zero iff X solves the
    Hamiltonian field equations there."""
    n, k = sys.n, sys.k
    N = n + n * k
    vecs = np.asarray(X(alpha), dtype=float)
    if vecs.shape != (k, N):
        raise NumericalFailure(f"k-vector field returned {vecs.shape}, "
                               f"expected ({k}, {N})")
    _, dH, _ = eval_hamiltonian(sys, alpha.q, alpha.p, order=1)
    res = -dH
    for a in range(k):
        res = res + vecs[a] @ canonical_form(n, k, a)
    return res


def legendre_pushforward(sys_lagrangian, jet, gamma_vectors):
    """Push k-vector-field values at a jet through the Legendre transform.

    gamma_vectors has shape (k, n + n*k) in the (q, v) chart; the result is in
    the (q, p) chart at FL(jet): dq' = dq, dp^a = L_va,q dq + L_va,v dv.
    """
    from .lagrangian import eval_lagrangian
    n, k = sys_lagrangian.n, sys_lagrangian.k
    _, _, d2 = eval_lagrangian(sys_lagrangian, jet.q, jet.v, wrt="qv", order=2)
    out = np.zeros_like(np.asarray(gamma_vectors, dtype=float))
    for a in range(k):
        g = gamma_vectors[a]
        out[a, :n] = g[:n]
        out[a, n:] = d2[n:, :n] @ g[:n] + d2[n:, n:] @ g[n:]
    return out
