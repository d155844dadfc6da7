"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION n PASS|FAIL`` line; the lines are
repeated in the terminal summary. The benchmark runs are shared through
module-scoped fixtures, so the whole file takes a few minutes.
"""
import time

import numpy as np
import pytest

from pgdto.optimizer import PgdSettings, run_oc, run_pgd
from pgdto.problems import (
    Problem,
    centre_of_mass,
    com_constrained,
    min_compliance,
    min_volume,
    multi_material,
)
from pgdto.projection import (
    ConstraintLinearization,
    project_general_newton,
    project_independent,
    project_single_binary_search,
)
from test_problems import check_gradients
from util import feasible_instances

pytestmark = pytest.mark.slow

TOL_N = 1e-6


@pytest.fixture(scope="module")
def single_instances():
    return feasible_instances(1001, 1000, 8, 1)


@pytest.fixture(scope="module")
def pair_instances():
    return feasible_instances(1002, 500, 6, 2)


@pytest.fixture(scope="module")
def compliance_runs():
    problem = Problem(min_compliance(64, 32, volume_fraction=0.2))
    start = time.perf_counter()
    pgd = run_pgd(problem, PgdSettings(K_max=300))
    oc = run_oc(problem, k_max=300)
    return problem, pgd, oc, time.perf_counter() - start


@pytest.fixture(scope="module")
def volume_runs():
    problem = Problem(min_volume(64, 32, compliance_max=150.0))
    with_fallback = run_pgd(problem, PgdSettings(K_max=300))
    without = run_pgd(problem, PgdSettings(K_max=300, use_fallback=False))
    return with_fallback, without


@pytest.fixture(scope="module")
def multi_material_run():
    problem = Problem(multi_material(32, 16))
    captured = []
    result = run_pgd(problem, PgdSettings(K_max=300),
                     on_projection=lambda t, rho_tilde, lin, res: captured.append((rho_tilde, lin)))
    return result, captured


def test_criterion_01_projection_oracle(single_instances, pair_instances, verdict):
    start = time.perf_counter()
    worst_single = max(np.abs(project_single_binary_search(rt, lin).delta - ref).max()
                       for rt, lin, ref in single_instances)
    worst_pair = max(np.abs(project_general_newton(rt, lin).delta - ref).max()
                     for rt, lin, ref in pair_instances)
    seconds = time.perf_counter() - start
    passed = worst_single <= 1e-6 and worst_pair <= 1e-6 and seconds < 30
    verdict(1, "projection matches enumeration oracle", passed,
            f"max error single {worst_single:.2e} ({len(single_instances)} instances), "
            f"pair {worst_pair:.2e} ({len(pair_instances)} instances), {seconds:.1f}s")


def test_criterion_02_regularization_limit(single_instances, pair_instances, verdict):
    diff = slack = 0.0
    for rt, lin, _ in pair_instances:
        a = project_general_newton(rt, lin, C=1e12)
        b = project_general_newton(rt, lin, C=1e15)
        diff = max(diff, np.abs(a.delta - b.delta).max())
        slack = max(slack, np.abs(a.slacks).max(), np.abs(b.slacks).max())
    for rt, lin, _ in single_instances:
        slack = max(slack, np.abs(project_general_newton(rt, lin).slacks).max())
    verdict(2, "C=1e12 vs C=1e15 and vanishing slacks", diff <= 1e-6 and slack <= 1e-6,
            f"max delta difference {diff:.2e}, max slack {slack:.2e}")


def test_criterion_03_gradients(verdict):
    start = time.perf_counter()
    errors = {
        "min_compliance 16x8": check_gradients(Problem(min_compliance(16, 8)), 10, 31),
        "min_volume 16x8": check_gradients(Problem(min_volume(16, 8)), 10, 32),
        "multi_material 8x4x4": check_gradients(Problem(multi_material(8, 4)), 10, 33),
        "com_constrained 16x8": check_gradients(Problem(com_constrained(16, 8)), 10, 34),
    }
    seconds = time.perf_counter() - start
    worst = max(errors.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errors.items())
    verdict(3, "finite-difference gradients", worst <= 1e-4 and seconds < 60,
            f"{detail}; {seconds:.1f}s")


def test_criterion_04_linear_constraint(compliance_runs, verdict):
    _, pgd, _, _ = compliance_runs
    worst = float(pgd.violations.max())
    final_volume = float(pgd.physical.mean())
    passed = worst <= TOL_N and len(pgd.history) == 300 and 0.2 - 1e-4 <= final_volume <= 0.2 + TOL_N
    verdict(4, "volume violation at every iteration", passed,
            f"max violation over 300 iterations {worst:.2e}, final volume {final_volume:.8f}")


def _tail_monotone(objectives, window=10, tail=100):
    smooth = np.convolve(objectives, np.ones(window) / window, mode="valid")
    steps = np.diff(smooth[-tail:])
    return bool(np.all(steps <= 1e-12 * np.abs(smooth[-tail:-1]))), float(steps.max())


def test_criterion_05_oc_parity(compliance_runs, verdict):
    _, pgd, oc, seconds = compliance_runs
    c_pgd, c_oc = pgd.objectives[-1], oc.objectives[-1]
    gap = abs(c_pgd - c_oc) / c_oc
    mono_pgd, rise_pgd = _tail_monotone(pgd.objectives)
    mono_oc, rise_oc = _tail_monotone(oc.objectives)
    passed = gap <= 0.10 and mono_pgd and mono_oc and seconds < 300
    verdict(5, "PGD vs OC compliance", passed,
            f"PGD {c_pgd:.2f}, OC {c_oc:.2f}, gap {100 * gap:.1f}%; smoothed tail monotone "
            f"PGD {mono_pgd} (max rise {rise_pgd:.2e}), OC {mono_oc} (max rise {rise_oc:.2e}); "
            f"{seconds:.0f}s")


def test_criterion_06_nonlinear_constraint(volume_runs, verdict):
    with_fallback, without = volume_runs
    settings = PgdSettings()
    final_c = with_fallback.final.constraint_values[0] + 150.0
    post = slice(settings.t_warmup, None)
    viol_with = float(with_fallback.violations[post].max())
    viol_without = float(without.violations[post].max())
    oscillates = viol_without > settings.tol_N
    engaged = any(r.fallback for r in with_fallback.history[settings.t_warmup:])
    steps_with = {r.step_size for r in with_fallback.history[settings.t_warmup:]}
    steps_without = {r.step_size for r in without.history[settings.t_warmup:]}
    heuristic_ok = (not oscillates) or (engaged and viol_with < viol_without)
    passed = final_c <= 150.0 * (1 + 1e-3) and heuristic_ok
    verdict(6, "minimum volume under compliance limit", passed,
            f"final compliance {final_c:.6f} (limit {150 * 1.001:.2f}), volume "
            f"{with_fallback.final.objective:.4f}; post-warmup max violation with fallback "
            f"{viol_with:.3e} (engaged {engaged}), without {viol_without:.3e}; post-warmup step "
            f"sizes with {sorted(steps_with)}, without {sorted(steps_without)}")


def test_criterion_07_independent_path(multi_material_run, verdict):
    result, captured = multi_material_run
    worst_violation = float(result.violations.max())
    sample = np.linspace(0, len(captured) - 1, 100).round().astype(int)
    diff = 0.0
    t_indep, t_newton = [], []
    for i in sample:
        rho_tilde, lin = captured[i]
        a = project_independent(rho_tilde, lin)
        b = project_general_newton(rho_tilde, lin)
        diff = max(diff, float(np.abs(a.delta - b.delta).max()))
        for solver, times in ((project_independent, t_indep), (project_general_newton, t_newton)):
            reps = []
            for _ in range(5):
                start = time.perf_counter()
                solver(rho_tilde, lin)
                reps.append(time.perf_counter() - start)
            times.append(min(reps))
    ratio = float(np.median(t_indep) / np.median(t_newton))
    # the Newton answer carries an O(1/C) regularization bias; show how it shrinks with C
    rho_tilde, lin = captured[sample[len(sample) // 2]]
    exact = project_independent(rho_tilde, lin).delta
    bias = {C: float(np.abs(project_general_newton(rho_tilde, lin, C=C).delta - exact).max())
            for C in (1e12, 1e14, 1e16)}
    passed = worst_violation <= TOL_N and diff <= 1e-10 and ratio <= 0.25
    verdict(7, "independent binary search vs Newton", passed,
            f"max violation {worst_violation:.2e}; max delta difference {diff:.2e}; time ratio "
            f"{ratio:.3f}; bias vs C " + ", ".join(f"{C:.0e}: {v:.1e}" for C, v in bias.items()))


def test_criterion_08_coupled_constraints(verdict):
    spec = com_constrained(64, 32)
    result = run_pgd(Problem(spec), PgdSettings(K_max=300))
    g1, g2 = result.final.constraint_values
    R, _ = centre_of_mass(result.physical, spec.grid.element_centroids)
    distance = float(np.linalg.norm(R - np.asarray(spec.com_target)))
    limit = np.sqrt(spec.com_radius + 1e-4)
    passed = g1 <= 1e-6 and g2 <= 1e-4 and distance <= limit
    verdict(8, "volume and centre-of-mass constraints", passed,
            f"g1 {g1:.2e}, g2 {g2:.2e}, centre ({R[0]:.4f}, {R[1]:.4f}), distance {distance:.5f} "
            f"(limit {limit:.5f}), compliance {result.final.objective:.2f}")


def _coupled_instance(n, rng):
    """Volume-like and centroid-like rows that are both active at the projection."""
    rho_tilde = rng.uniform(0.0, 1.4, n)
    x = (np.arange(n) + 0.5) / n
    A = np.vstack([np.full(n, 1.0 / n), (x - 0.5) / n])
    b = np.array([0.3 - np.mean(rho_tilde), -0.05 - A[1] @ rho_tilde])
    return rho_tilde, ConstraintLinearization.from_halfspaces(A, b)


def test_criterion_09_projection_scaling(verdict):
    rng = np.random.default_rng(9)
    sizes = (2048, 8192, 32768)
    medians = {}
    for n in sizes:
        times = []
        for _ in range(15):
            rho_tilde, lin = _coupled_instance(n, rng)
            start = time.perf_counter()
            res = project_general_newton(rho_tilde, lin)
            times.append(time.perf_counter() - start)
            assert res.converged
        medians[n] = float(np.median(times))
    growth = medians[sizes[-1]] / medians[sizes[0]]
    allowed = 1.5 * sizes[-1] / sizes[0]
    verdict(9, "projection time scaling at m=2", growth <= allowed,
            ", ".join(f"N={n}: {1e3 * t:.2f} ms" for n, t in medians.items())
            + f"; growth {growth:.1f}x for {sizes[-1] // sizes[0]}x elements (limit {allowed:.0f}x)")


def test_criterion_10_rate_monitor(compliance_runs, verdict):
    _, pgd, _, _ = compliance_runs
    norms = np.array([r.update_norm for r in pgd.history])
    clean = np.array([not r.fallback for r in pgd.history])
    scaled = {}
    for K in (50, 100, 200, 300):
        window = norms[:K][clean[:K]]
        scaled[K] = float(window.min() * np.sqrt(K))
    values = np.array(list(scaled.values()))
    spread = float(values.max() / values.min())
    verdict(10, "min update norm times sqrt(K)", spread <= 3.0,
            ", ".join(f"K={k}: {v:.3e}" for k, v in scaled.items()) + f"; spread {spread:.2f}x")
