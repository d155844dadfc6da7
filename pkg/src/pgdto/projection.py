"""Euclidean projection onto a box intersected with linearized constraints.

The subproblem at design ``rho_t`` after the trial step ``rho_tilde = rho_t - step`` is::

    min_delta  1/2 ||delta||^2 + C/2 ||s||^2
    s.t.       l <= rho_tilde + delta <= u
               delta . a_j <= g_hat_j + s_j,   s_j >= 0

with ``a_j = grad g_j(rho_t)`` and ``g_hat_j = G_j - g_j(rho_t) + step . a_j``.
Every solution has the form ``delta(y) = clip(A^T y, l - rho_tilde, u - rho_tilde)``
for a dual vector ``y`` with ``y <= 0`` on inequality rows, so all solvers here
search over the ``m`` duals instead of the ``N`` primal variables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .exceptions import DomainError, InfeasibleLinearizationError, ProjectionError

PATH_SINGLE = "single_binary"
PATH_INDEPENDENT = "independent_binary"
PATH_NEWTON = "newton"

MAX_HALVINGS = 200
POLISH_STEPS = 2
ZERO_GRADIENT = 1e-300


@dataclass
class ConstraintLinearization:
    """First-order model of the constraints around the current design.

    ``g_hat`` is derived from the other fields unless given explicitly.
    """

    grad_g: np.ndarray
    g_values: np.ndarray
    bounds_G: np.ndarray
    gd_step: np.ndarray
    g_hat: np.ndarray | None = None
    is_equality: np.ndarray | None = None
    independence_partition: list | None = None

    def __post_init__(self):
        self.grad_g = np.atleast_2d(np.asarray(self.grad_g, dtype=float))
        m, n = self.grad_g.shape
        self.g_values = np.broadcast_to(np.asarray(self.g_values, dtype=float), (m,)).copy()
        self.bounds_G = np.broadcast_to(np.asarray(self.bounds_G, dtype=float), (m,)).copy()
        self.gd_step = np.broadcast_to(np.asarray(self.gd_step, dtype=float), (n,))
        if self.g_hat is None:
            self.g_hat = self.bounds_G - self.g_values + self.grad_g @ self.gd_step
        else:
            self.g_hat = np.broadcast_to(np.asarray(self.g_hat, dtype=float), (m,)).copy()
        if self.is_equality is None:
            self.is_equality = np.zeros(m, dtype=bool)
        else:
            self.is_equality = np.broadcast_to(np.asarray(self.is_equality, dtype=bool), (m,)).copy()
        if self.independence_partition is not None:
            self.independence_partition = [np.asarray(b, dtype=np.int64) for b in self.independence_partition]

    @classmethod
    def from_halfspaces(cls, A, b, is_equality=None, independence_partition=None):
        """Constraints ``A delta <= b`` directly on the correction (no step term)."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls(A, 0.0, b, np.zeros(A.shape[1]), is_equality=is_equality,
                   independence_partition=independence_partition)

    @property
    def m(self) -> int:
        return self.grad_g.shape[0]

    @property
    def n(self) -> int:
        return self.grad_g.shape[1]

    def row(self, j: int) -> "ConstraintLinearization":
        return ConstraintLinearization(
            self.grad_g[j:j + 1], self.g_values[j:j + 1], self.bounds_G[j:j + 1], self.gd_step,
            g_hat=self.g_hat[j:j + 1], is_equality=self.is_equality[j:j + 1],
        )

    def block_slices(self):
        """The partition as slices when every block is a contiguous, increasing range, else ``None``."""
        out = []
        for b in self.independence_partition:
            if b.size == 0 or b[-1] - b[0] != b.size - 1 or not (b[1:] > b[:-1]).all():
                return None
            out.append(slice(int(b[0]), int(b[-1]) + 1))
        return out

    def validate_partition(self):
        """Check the partition; returns contiguous block slices when available (see :meth:`block_slices`)."""
        blocks = self.independence_partition
        if blocks is None:
            raise DomainError("no independence partition given")
        if len(blocks) != self.m:
            raise DomainError(f"partition has {len(blocks)} blocks for {self.m} constraints")
        slices = self.block_slices()
        if slices is not None:
            bounds = sorted((s.start, s.stop) for s in slices)
            if bounds[0][0] < 0 or bounds[-1][1] > self.n:
                raise DomainError(f"partition indexes outside [0, {self.n})")
            if any(prev[1] > nxt[0] for prev, nxt in zip(bounds, bounds[1:])):
                raise DomainError("partition blocks overlap")
            for j, s in enumerate(slices):
                row = self.grad_g[j]
                if row[:s.start].any() or row[s.stop:].any():
                    raise DomainError(f"constraint {j} has gradient support outside its block")
            return slices
        idx = np.concatenate(blocks) if blocks else np.zeros(0, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise DomainError(f"partition indexes outside [0, {self.n})")
        if np.any(np.bincount(idx, minlength=self.n) > 1):
            raise DomainError("partition blocks overlap")
        rows = np.repeat(np.arange(self.m), [b.size for b in blocks])
        outside = self.grad_g.copy()
        outside[rows, idx] = 0.0
        if np.any(outside):
            j = int(np.flatnonzero(outside.any(axis=1))[0])
            raise DomainError(f"constraint {j} has gradient support outside its block")
        return None


@dataclass
class ProjectionResult:
    delta: np.ndarray
    y: np.ndarray
    slacks: np.ndarray
    path: str
    newton_iters: int = 0
    bisection_iters: int = 0
    residual: float = 0.0
    converged: bool = True
    rho: np.ndarray | None = field(default=None, repr=False)

    @property
    def iterations(self) -> int:
        return self.newton_iters if self.path == PATH_NEWTON else self.bisection_iters


def _clip(x, lo, hi):
    # np.minimum/np.maximum skip the dispatch overhead of np.clip on small arrays
    return np.minimum(np.maximum(x, lo), hi)


def _bounds(rho_tilde, l, u):
    rho_tilde = np.asarray(rho_tilde, dtype=float)
    return rho_tilde, l - rho_tilde, u - rho_tilde


def delta_of_y(y, lin: ConstraintLinearization, rho_tilde, l=0.0, u=1.0) -> np.ndarray:
    """Correction ``clip(A^T y, l - rho_tilde, u - rho_tilde)`` for dual ``y``."""
    _, lo, hi = _bounds(rho_tilde, l, u)
    return _clip(np.asarray(y, dtype=float) @ lin.grad_g, lo, hi)


def project_point(rho_tilde, delta, l=0.0, u=1.0) -> np.ndarray:
    """``rho_tilde + delta`` with the box enforced exactly (guards rounding at the bounds)."""
    return _clip(np.asarray(rho_tilde) + delta, l, u)


def constraint_residual_h(y, lin: ConstraintLinearization, rho_tilde, l=0.0, u=1.0, C=1e12) -> np.ndarray:
    """``h_j(y) = delta(y) . a_j + y_j / C - g_hat_j``; ``h <= 0`` means row ``j`` holds."""
    y = np.asarray(y, dtype=float)
    delta = delta_of_y(y, lin, rho_tilde, l, u)
    return lin.grad_g @ delta + y / C - lin.g_hat


def jacobian_h(y, lin: ConstraintLinearization, rho_tilde, l=0.0, u=1.0, C=1e12) -> np.ndarray:
    """``A D(y) A^T + I / C`` with ``D`` the indicator of unclipped coordinates."""
    _, lo, hi = _bounds(rho_tilde, l, u)
    z = np.asarray(y, dtype=float) @ lin.grad_g
    free = (z >= lo) & (z <= hi)
    Af = lin.grad_g[:, free]
    return Af @ Af.T + np.eye(lin.m) / C


# -- single constraint -------------------------------------------------------

ROW_OK, ROW_INFEASIBLE, ROW_ZERO_GRADIENT = 0, 1, 2


@njit(cache=True)
def _row_residual(a, lo, hi, g_hat, y):  # pragma: no cover - compiled
    r = -g_hat
    for i in range(a.size):
        z = y * a[i]
        if z < lo[i]:
            z = lo[i]
        elif z > hi[i]:
            z = hi[i]
        r += z * a[i]
    return r


@njit(cache=True)
def _bisect_kernel(a, lo, hi, g_hat, tol_B, equality, max_halvings):  # pragma: no cover - compiled
    """Returns ``(y, iterations, status)`` for one row; see :func:`_bisect_row`."""
    r0 = _row_residual(a, lo, hi, g_hat, 0.0)
    if r0 <= 0.0 and not (equality and r0 < 0.0):
        return 0.0, 0, ROW_OK
    # dual value beyond which every coordinate is clipped, on the side that lowers r
    down = r0 > 0.0
    end = 0.0
    found = False
    for i in range(a.size):
        if abs(a[i]) < ZERO_GRADIENT:
            continue
        q1 = lo[i] / a[i]
        q2 = hi[i] / a[i]
        if down:
            q = min(q1, q2)
            end = q if (not found or q < end) else end
        else:
            q = max(q1, q2)
            end = q if (not found or q > end) else end
        found = True
    if not found:
        return 0.0, 0, ROW_ZERO_GRADIENT
    if down:
        end = min(end, 0.0)
        y_lo, y_hi = end, 0.0
        if _row_residual(a, lo, hi, g_hat, y_lo) > 0.0:
            return end, 0, ROW_INFEASIBLE
    else:
        end = max(end, 0.0)
        y_lo, y_hi = 0.0, end
        if _row_residual(a, lo, hi, g_hat, y_hi) < 0.0:
            return end, 0, ROW_INFEASIBLE
    y_mid = 0.5 * (y_lo + y_hi)
    iters = 0
    while abs(y_hi - y_lo) > tol_B and iters < max_halvings:
        if _row_residual(a, lo, hi, g_hat, y_mid) > 0.0:
            y_hi = y_mid
        else:
            y_lo = y_mid
        y_mid = 0.5 * (y_lo + y_hi)
        iters += 1
    return y_mid, iters, ROW_OK


def _bisect_row(a, g_hat, lo, hi, tol_B, equality=False):
    """Find the dual of one constraint by bisection on its monotone residual.

    The residual ``sum_i clip(y a_i, lo_i, hi_i) a_i - g_hat`` is
    non-decreasing in ``y``. Returns ``(y, iterations, feasible)``.
    ``feasible`` is False when even the fully clipped correction leaves the
    constraint violated; ``y`` is then the bracket end, which minimizes the
    violation.
    """
    y, iters, status = _bisect_kernel(np.ascontiguousarray(a, dtype=np.float64),
                                      np.ascontiguousarray(lo, dtype=np.float64),
                                      np.ascontiguousarray(hi, dtype=np.float64),
                                      float(g_hat), float(tol_B), bool(equality), MAX_HALVINGS)
    if status == ROW_ZERO_GRADIENT:
        r0 = float(_clip(0.0, lo, hi) @ a) - g_hat
        raise InfeasibleLinearizationError(
            f"constraint gradient vanishes but the linearized residual is {r0:.3e}"
        )
    if not math.isfinite(y):
        raise ProjectionError("bisection produced a non-finite dual")
    return y, int(iters), status == ROW_OK


def project_single_binary_search(rho_tilde, lin: ConstraintLinearization, l=0.0, u=1.0,
                                 tol_B=1e-8, row=None) -> ProjectionResult:
    """Project with a single constraint (``lin`` has one row, or pick ``row``)."""
    if row is not None:
        lin = lin.row(row)
    if lin.m != 1:
        raise DomainError(f"single-constraint projection given {lin.m} rows")
    rho_tilde, lo, hi = _bounds(rho_tilde, l, u)
    a = lin.grad_g[0]
    y, iters, feasible = _bisect_row(a, lin.g_hat[0], lo, hi, tol_B, lin.is_equality[0])
    delta = _clip(y * a, lo, hi)
    r = float(delta @ a - lin.g_hat[0])
    return ProjectionResult(
        delta=delta, y=np.array([y]), slacks=np.array([max(r, 0.0)]), path=PATH_SINGLE,
        bisection_iters=iters, residual=abs(r) if (y != 0 or lin.is_equality[0]) else max(r, 0.0),
        converged=feasible, rho=project_point(rho_tilde, delta, l, u),
    )


def project_independent(rho_tilde, lin: ConstraintLinearization, l=0.0, u=1.0,
                        tol_B=1e-8) -> ProjectionResult:
    """Constraints acting on disjoint variable blocks: one bisection per block."""
    blocks = lin.validate_partition() or lin.independence_partition
    rho_tilde, lo, hi = _bounds(rho_tilde, l, u)
    delta = _clip(0.0, lo, hi)
    y = np.zeros(lin.m)
    r = np.empty(lin.m)
    iters = np.zeros(lin.m, dtype=np.int64)
    feasible = np.ones(lin.m, dtype=bool)
    for j, block in enumerate(blocks):
        a, lo_b, hi_b = lin.grad_g[j, block], lo[block], hi[block]
        y[j], iters[j], feasible[j] = _bisect_row(a, lin.g_hat[j], lo_b, hi_b, tol_B,
                                                  lin.is_equality[j])
        d = _clip(y[j] * a, lo_b, hi_b)
        delta[block] = d
        r[j] = d @ a - lin.g_hat[j]
    slacks = np.maximum(r, 0.0)
    tight = (y != 0) | lin.is_equality
    worst = float(np.max(np.where(tight, np.abs(r), slacks), initial=0.0))
    return ProjectionResult(delta, y, slacks, PATH_INDEPENDENT,
                            bisection_iters=int(iters.max(initial=0)), residual=worst,
                            converged=bool(np.all(feasible)),
                            rho=project_point(rho_tilde, delta, l, u))


# -- general multi-constraint solver ------------------------------------------

def ncp_residual(y, h, is_equality):
    """``min(-y, -h)`` on inequality rows, ``h`` on equality rows."""
    return np.where(is_equality, h, np.minimum(-y, -h))


def ncp_jacobian(y, h, Jh, is_equality):
    """Generalized Jacobian of :func:`ncp_residual`; ties pick the ``-y`` branch."""
    J = -Jh.copy()
    pick_y = (~is_equality) & (-y <= -h)
    J[pick_y] = 0.0
    J[pick_y, np.flatnonzero(pick_y)] = -1.0
    J[is_equality] = Jh[is_equality]
    return J


def _row_feasible(delta, lin, tol):
    r = lin.grad_g @ delta - lin.g_hat
    viol = np.where(lin.is_equality, np.abs(r), r)
    return bool(np.all(viol <= tol))


def _dual_objective(y, z, lo, hi, g_hat, C):
    """Convex dual function whose gradient is ``h(y)`` (up to a constant)."""
    q = np.where(z < lo, lo * z - 0.5 * lo**2, np.where(z > hi, hi * z - 0.5 * hi**2, 0.5 * z**2))
    return float(q.sum() + 0.5 * (y @ y) / C - g_hat @ y)


def project_general_newton(rho_tilde, lin: ConstraintLinearization, l=0.0, u=1.0, C=1e12,
                           tol_N=1e-6, maxiter=50, tol_B=1e-8, c1=1e-4, c2=0.9,
                           stage_one=True, min_step=2.0**-30) -> ProjectionResult:
    """Regularized projection: single-active-row candidates, then semismooth Newton.

    Stage 1 bisects each row alone (others' duals at zero) and returns the first
    candidate that satisfies every row within ``tol_N``. Stage 2 solves
    ``Phi(y) = 0`` from ``y = 0``; each Newton step is backtracked by halving
    until ``M = 1/2 ||Phi||^2`` passes the Armijo test with ``c1``. The
    curvature test with ``c2`` is recorded but never rejects a step.

    When more rows are active than free coordinates the Newton direction points
    along a near-null space of ``J_h`` where ``M`` barely moves, and the
    accepted steps shrink towards a kink without crossing it. Once a step below
    ``min_step`` would be needed, the solver switches to projected Newton on the
    convex dual function (gradient ``h``, ``y <= 0`` on inequality rows) with an
    exact line search; its minimizers are exactly the roots of ``Phi``.
    """
    rho_tilde, lo, hi = _bounds(rho_tilde, l, u)
    m = lin.m
    bis_iters = 0
    if stage_one:
        for j in range(m):
            a = lin.grad_g[j]
            try:
                yj, it, ok = _bisect_row(a, lin.g_hat[j], lo, hi, tol_B, lin.is_equality[j])
            except InfeasibleLinearizationError:
                continue
            bis_iters += it
            if not ok:
                continue
            delta = _clip(yj * a, lo, hi)
            if _row_feasible(delta, lin, tol_N):
                y = np.zeros(m)
                y[j] = yj
                res = lin.grad_g @ delta - lin.g_hat
                return ProjectionResult(
                    delta, y, np.maximum(res, 0.0), PATH_NEWTON, newton_iters=0,
                    bisection_iters=bis_iters, residual=0.0, converged=True,
                    rho=project_point(rho_tilde, delta, l, u),
                )

    eq = lin.is_equality
    A = lin.grad_g
    g_hat = lin.g_hat

    def evaluate(y):
        z = y @ A
        delta = _clip(z, lo, hi)
        h = A @ delta + y / C - g_hat
        return delta, h, ncp_residual(y, h, eq), z

    y = np.zeros(m)
    delta, h, phi, z = evaluate(y)
    k = 0
    curvature_ok = True
    dual_steps = 0
    use_dual = False
    while np.max(np.abs(phi), initial=0.0) > tol_N and k < maxiter + (dual_steps > 0) * maxiter:
        Jh = _jh(A, z, lo, hi, C)
        if use_dual:
            y_new = _dual_newton_step(y, h, Jh, z, A, lo, hi, g_hat, C, eq)
            dual_steps += 1
        else:
            J = ncp_jacobian(y, h, Jh, eq)
            try:
                step = np.linalg.solve(J, phi)
            except np.linalg.LinAlgError as exc:
                raise ProjectionError(
                    f"singular Newton matrix at iteration {k} (C={C:g}, m={m}, "
                    f"free coordinates={int(((z >= lo) & (z <= hi)).sum())})"
                ) from exc
            merit = 0.5 * float(phi @ phi)
            slope = -2.0 * merit  # dM/dgamma at gamma = 0 along -step
            gamma = 1.0
            while gamma >= min_step:
                y_new = y - gamma * step
                trial = evaluate(y_new)
                if 0.5 * float(trial[2] @ trial[2]) <= merit + c1 * gamma * slope:
                    break
                gamma *= 0.5
            else:
                use_dual = True
                continue
            J_new = ncp_jacobian(y_new, trial[1], _jh(A, trial[3], lo, hi, C), eq)
            curvature_ok &= float(-(J_new.T @ trial[2]) @ step) >= c2 * slope
        if np.array_equal(y_new, y):
            break
        y = y_new
        delta, h, phi, z = evaluate(y)
        k += 1

    # the system is piecewise linear: once the pattern has settled a full
    # step lands on the root, so a couple of extra steps buy exactness cheaply
    for _ in range(POLISH_STEPS if np.max(np.abs(phi), initial=0.0) <= tol_N else 0):
        if not np.any(phi):
            break
        J = ncp_jacobian(y, h, _jh(A, z, lo, hi, C), eq)
        try:
            y_new = y - np.linalg.solve(J, phi)
        except np.linalg.LinAlgError:
            break
        trial = evaluate(y_new)
        if not np.max(np.abs(trial[2])) < np.max(np.abs(phi)):
            break
        y = y_new
        delta, h, phi, z = trial
        k += 1

    residual = float(np.max(np.abs(phi), initial=0.0))
    result = ProjectionResult(
        delta, y, -y / C, PATH_NEWTON, newton_iters=k, bisection_iters=bis_iters,
        residual=residual, converged=residual <= tol_N,
        rho=project_point(rho_tilde, delta, l, u),
    )
    result.safeguard_steps = dual_steps
    result.curvature_ok = curvature_ok
    return result


def _dual_slope(gamma, y, p, z, dz, lo, hi, g_hat, C):
    # derivative of the dual function along y + gamma p
    zz = _clip(z + gamma * dz, lo, hi)
    return float(dz @ zz + (y + gamma * p) @ p / C - g_hat @ p)


def _dual_newton_step(y, h, Jh, z, A, lo, hi, g_hat, C, eq):
    """Projected Newton step on the dual function with exact line search.

    Rows sitting on ``y_j = 0`` whose gradient pushes outward are held fixed;
    the rest take the Newton direction (steepest descent if that fails). The
    dual function is convex and piecewise quadratic along any line, so the
    minimizer over the feasible segment is found by scanning its breakpoints.
    """
    at_zero = (~eq) & (y >= 0.0)
    held = at_zero & (h < 0.0)
    while True:
        free = ~held
        p = np.zeros_like(y)
        if np.any(free):
            try:
                p[free] = np.linalg.solve(Jh[np.ix_(free, free)], -h[free])
            except np.linalg.LinAlgError:
                p[free] = -h[free]
        blocking = at_zero & free & (p > 0)
        if not np.any(blocking):
            break
        held |= blocking
    if not float(h @ p) < 0.0:
        p = np.where(at_zero & (h < 0.0), 0.0, -h)
        if not float(h @ p) < 0.0:
            return y
    # longest step keeping inequality duals nonpositive
    up = (~eq) & (p > 0)
    gmax = float(np.min(-y[up] / p[up])) if np.any(up) else np.inf
    gmax = max(gmax, 0.0)
    dz = p @ A
    with np.errstate(divide="ignore", invalid="ignore"):
        cand = np.concatenate([(lo - z) / dz, (hi - z) / dz])
    cand = cand[np.isfinite(cand) & (cand > 0) & (cand < gmax)]
    knots = np.unique(np.concatenate([[0.0], cand] + ([[gmax]] if np.isfinite(gmax) else [])))
    args = (y, p, z, dz, lo, hi, g_hat, C)
    slopes = np.array([_dual_slope(g, *args) for g in knots]) if len(knots) < 64 else None
    if slopes is None:
        # large N: bisection on the monotone slope
        a, b = 0.0, gmax if np.isfinite(gmax) else 1.0
        while not np.isfinite(gmax) and _dual_slope(b, *args) < 0:
            b *= 2.0
        if _dual_slope(b, *args) <= 0:
            gamma = b
        else:
            for _ in range(200):
                mid = 0.5 * (a + b)
                if _dual_slope(mid, *args) < 0:
                    a = mid
                else:
                    b = mid
            gamma = 0.5 * (a + b)
    else:
        pos = np.flatnonzero(slopes >= 0)
        if pos.size == 0:
            if np.isfinite(gmax):
                gamma = gmax
            else:
                # slope keeps decreasing beyond the last knot: the function is
                # quadratic there, solve on [last, last + 1]
                g0 = knots[-1]
                s0, s1 = slopes[-1], _dual_slope(g0 + 1.0, *args)
                gamma = g0 + (-s0 / (s1 - s0) if s1 > s0 else 1.0)
        else:
            i = pos[0]
            if i == 0:
                return y
            g0, g1, s0, s1 = knots[i - 1], knots[i], slopes[i - 1], slopes[i]
            gamma = g0 + (g1 - g0) * (-s0 / (s1 - s0))
    y_new = y + gamma * p
    if np.isfinite(gmax) and gamma >= gmax:
        y_new[up & np.isclose(-y / np.where(p == 0, 1, p), gmax)] = 0.0
    return np.where(eq, y_new, np.minimum(y_new, 0.0))


def _jh(A, z, lo, hi, C):
    free = (z >= lo) & (z <= hi)
    Af = A[:, free]
    return Af @ Af.T + np.eye(A.shape[0]) / C


def project(rho_tilde, lin: ConstraintLinearization, l=0.0, u=1.0, C=1e12, tol_B=1e-8,
            tol_N=1e-6, maxiter=50) -> ProjectionResult:
    """Pick the cheapest exact solver for the constraint structure.

    One row goes to bisection, a valid independence partition to per-block
    bisection, everything else to the regularized Newton solver. A vanishing
    gradient on a violated single row also routes to Newton.
    """
    if lin.m == 1:
        try:
            return project_single_binary_search(rho_tilde, lin, l, u, tol_B)
        except InfeasibleLinearizationError:
            pass
    elif lin.independence_partition is not None:
        return project_independent(rho_tilde, lin, l, u, tol_B)
    return project_general_newton(rho_tilde, lin, l, u, C, tol_N, maxiter, tol_B)
