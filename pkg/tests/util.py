"""Helpers shared by the test modules."""
import numpy as np

from pgdto.projection import ConstraintLinearization
from pgdto.reference import reference_projection_oracle


def central_difference(fun, x, step=1e-6):
    x = np.array(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        out[i] = (fun(xp) - fun(xm)) / (2 * step)
    return out


def relative_error(approx, exact):
    """Max-norm error relative to the max-norm of the exact vector."""
    approx, exact = np.asarray(approx, float), np.asarray(exact, float)
    scale = np.abs(exact).max()
    return float(np.abs(approx - exact).max() / (scale if scale > 0 else 1.0))


def random_instance(rng, n, m, equality=None):
    rho_tilde = rng.uniform(-0.3, 1.3, n)
    A = rng.uniform(-1, 1, (m, n))
    b = rng.uniform(-0.5, 0.5, m)
    return rho_tilde, ConstraintLinearization.from_halfspaces(A, b, is_equality=equality)


def feasible_instances(seed, count, n_max, m):
    """Random instances whose feasible set the enumeration oracle confirms nonempty."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = int(rng.integers(1, n_max + 1))
        rho_tilde, lin = random_instance(rng, n, m)
        delta = reference_projection_oracle(rho_tilde, lin)
        if delta is not None:
            out.append((rho_tilde, lin, delta))
    return out
