"""Projecting a trial design back onto the feasible set.

Three small cases: one halfspace (bisection on a single dual), two coupled
halfspaces (semismooth Newton), and two contradictory constraints where the
regularized problem still returns a sensible compromise.
"""
import numpy as np

from pgdto import (
    ConstraintLinearization,
    project_general_newton,
    project_single_binary_search,
    reference_projection_oracle,
)

np.set_printoptions(precision=6, suppress=True)

print("1. mean(rho) <= 0.5 from rho_tilde = (0.8, 0.6)")
rho_tilde = np.array([0.8, 0.6])
volume = ConstraintLinearization([[0.5, 0.5]], rho_tilde.mean(), 0.5, np.zeros(2))
res = project_single_binary_search(rho_tilde, volume)
print(f"   projected design {res.rho}, dual y = {res.y[0]:.6f}, {res.bisection_iters} halvings")

print("\n2. two coupled rows, compared against brute-force enumeration")
rng = np.random.default_rng(4)
while True:
    rho_tilde = rng.uniform(-0.3, 1.3, 6)
    lin = ConstraintLinearization.from_halfspaces(rng.uniform(-1, 1, (2, 6)), rng.uniform(-0.3, 0.1, 2))
    exact = reference_projection_oracle(rho_tilde, lin)
    res = project_general_newton(rho_tilde, lin, stage_one=False)
    if exact is not None and np.all(res.y < 0):
        break
print(f"   Newton delta {res.delta}")
print(f"   oracle delta {exact}")
print(f"   {res.newton_iters} Newton steps, |Phi|_inf = {res.residual:.1e}, "
      f"max difference {np.abs(res.delta - exact).max():.1e}")

print("\n3. rho <= 0.3 and rho >= 0.6 at rho_tilde = 0.5 (no feasible point)")
lin = ConstraintLinearization([[1.0], [-1.0]], [0.5, -0.5], [0.3, -0.6], [0.0])
print(f"   enumeration finds a feasible point: {reference_projection_oracle(np.array([0.5]), lin) is not None}")
for C in (10.0, 1e3, 1e9, 1e12):
    res = project_general_newton(np.array([0.5]), lin, C=C)
    print(f"   C = {C:7.0e}: delta = {res.delta[0]: .8f}, slacks = {res.slacks}, "
          f"converged {res.converged}")
print("   with C = 10 the compromise is delta = -1/21 =", f"{-1 / 21:.8f}")
print("   At C = 1e12 the duals reach 1.5e11 and delta = y1 - y2 keeps only about five")
print("   digits, so the solver reports non-convergence and the optimizer falls back.")
