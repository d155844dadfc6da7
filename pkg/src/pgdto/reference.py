"""Brute-force projection by enumerating active sets, for testing small instances."""
from __future__ import annotations

import itertools

import numpy as np

from .exceptions import DomainError
from .projection import ConstraintLinearization

MAX_VARIABLES = 12
MAX_CONSTRAINTS = 3


def _box_patterns(n):
    # 0 = at lower bound, 1 = free, 2 = at upper bound
    return np.array(list(itertools.product((0, 1, 2), repeat=n)), dtype=np.int8).reshape(-1, n)


def reference_projection_oracle(rho_tilde, lin: ConstraintLinearization, l=0.0, u=1.0, tol=1e-9):
    """Exact projection of ``rho_tilde`` onto ``{l <= rho_tilde + delta <= u, A delta <= g_hat}``.

    Every combination of box activity (3^N) and constraint activity (2^m) is
    solved as an equality-constrained least-squares problem; candidates that
    satisfy all KKT sign conditions are kept and the shortest one is returned.
    Returns ``None`` when no candidate is feasible (empty feasible set).
    """
    rho_tilde = np.asarray(rho_tilde, dtype=float)
    A = lin.grad_g
    m, n = A.shape
    if n > MAX_VARIABLES or m > MAX_CONSTRAINTS:
        raise DomainError(f"oracle limited to N <= {MAX_VARIABLES}, m <= {MAX_CONSTRAINTS}")
    lo = l - rho_tilde
    hi = u - rho_tilde
    if np.any(lo > hi):
        raise DomainError("empty box")
    g_hat = lin.g_hat
    eq = lin.is_equality
    scale = 1.0 + np.abs(A).max() + np.abs(g_hat).max() + np.abs(lo).max() + np.abs(hi).max()
    eps = tol * scale

    pats = _box_patterns(n)
    free = pats == 1
    fixed_val = np.where(pats == 0, lo, np.where(pats == 2, hi, 0.0))

    best, best_norm = None, np.inf
    for k in range(m + 1):
        for S in itertools.combinations(range(m), k):
            S = list(S)
            if any(eq[j] for j in range(m) if j not in S):
                continue
            if k == 0:
                delta = fixed_val.copy()
                z = np.zeros_like(delta)
                y = np.zeros((len(pats), 0))
            else:
                AS = A[S]
                M = np.einsum("pi,ji,ki->pjk", free, AS, AS)
                rhs = g_hat[S][None, :] - fixed_val @ AS.T
                y = np.einsum("pjk,pk->pj", np.linalg.pinv(M), rhs)
                z = y @ AS
                delta = np.where(free, z, fixed_val)
            ok = np.ones(len(pats), dtype=bool)
            ok &= np.all(~free | ((delta >= lo - eps) & (delta <= hi + eps)), axis=1)
            ok &= np.all((pats != 0) | (z <= lo + eps), axis=1)
            ok &= np.all((pats != 2) | (z >= hi - eps), axis=1)
            if k:
                ineq_S = ~eq[S]
                ok &= np.all(~ineq_S | (y <= eps), axis=1)
            r = delta @ A.T - g_hat
            active = np.zeros(m, dtype=bool)
            active[S] = True
            ok &= np.all(np.where(active, np.abs(r) <= eps, r <= eps), axis=1)
            if not np.any(ok):
                continue
            norms = np.einsum("pi,pi->p", delta[ok], delta[ok])
            i = int(np.argmin(norms))
            if norms[i] < best_norm:
                best_norm, best = norms[i], delta[ok][i].copy()
    return best
