"""Projected gradient descent for density-based topology optimization, plus an OC baseline.

Each PGD iteration takes a conjugate-gradient step of spectral length, then
projects the trial point back onto the box intersected with the linearized
constraints. A bounded fallback step replaces the spectral one at the first
iteration and whenever constraint violation persists after a warmup period.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import ParameterError, ProjectionError, UnsupportedProblemError
from .problems import MIN_COMPLIANCE, EvaluationBundle, Problem
from .projection import (
    PATH_INDEPENDENT,
    PATH_NEWTON,
    PATH_SINGLE,
    ConstraintLinearization,
    project,
    project_general_newton,
    project_independent,
    project_point,
    project_single_binary_search,
)

PATH_OC = "oc"
PATH_NONE = "none"
PROJECTION_MODES = ("auto", PATH_SINGLE, PATH_INDEPENDENT, PATH_NEWTON)


@dataclass(frozen=True)
class PgdSettings:
    alpha_max: float = 1e2
    alpha_fallback: float = 0.2
    t_warmup: int = 50
    omega: float = 1.0
    eps_alpha: float = 1e-6
    tol: float = 0.0
    K_max: int = 300
    C: float = 1e12
    tol_B: float = 1e-8
    tol_N: float = 1e-6
    newton_maxiter: int = 50
    use_fallback: bool = True
    projection_mode: str = "auto"

    def __post_init__(self):
        for name in ("alpha_max", "alpha_fallback", "eps_alpha", "C", "tol_B", "tol_N"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if not 0 < self.omega <= 1:
            raise ParameterError("omega must lie in (0, 1]")
        if self.tol < 0:
            raise ParameterError("tol must be non-negative")
        if self.K_max < 0 or self.t_warmup < 0 or self.newton_maxiter < 1:
            raise ParameterError("K_max and t_warmup must be non-negative, newton_maxiter positive")
        if self.projection_mode not in PROJECTION_MODES:
            raise ParameterError(f"projection_mode must be one of {PROJECTION_MODES}")


@dataclass
class OptimizerState:
    rho: np.ndarray
    evaluation: EvaluationBundle
    rho_prev: np.ndarray | None = None
    grad_prev: np.ndarray | None = None
    direction_prev: np.ndarray | None = None
    alpha: float = 0.0
    iteration: int = 0
    force_fallback: bool = False

    @property
    def grad(self) -> np.ndarray:
        return self.evaluation.objective_grad

    @property
    def last_violation(self) -> np.ndarray:
        return self.evaluation.violations


@dataclass
class IterationRecord:
    """Metrics for the iterate produced by one optimizer step.

    ``objective`` and ``violations`` are evaluated at the new iterate;
    ``violations[j] = max(g_j - G_j, 0)``.
    """

    iteration: int
    objective: float
    violations: np.ndarray
    step_size: float
    relative_change: float
    projection_path: str
    projection_iters: int
    fea_seconds: float
    projection_seconds: float
    update_norm: float = 0.0
    fallback: bool = False
    projection_converged: bool = True


@dataclass
class RunResult:
    history: list
    rho: np.ndarray
    physical: np.ndarray
    initial: EvaluationBundle
    final: EvaluationBundle

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.history])

    @property
    def violations(self) -> np.ndarray:
        return np.array([r.violations for r in self.history]).reshape(len(self.history), -1)


def spectral_step_size(s, y, settings: PgdSettings) -> float:
    """Barzilai-Borwein step from the iterate change ``s`` and gradient change ``y``."""
    ny = float(np.linalg.norm(y))
    if ny == 0.0:
        return settings.alpha_max
    ns = float(np.linalg.norm(s))
    sy = float(s @ y)
    if sy <= settings.eps_alpha:
        return min(ns / ny, settings.alpha_max)
    return min(float(s @ s) / sy, 2.0 * ns / ny, settings.alpha_max)


def cg_direction(grad, grad_prev=None, direction_prev=None) -> np.ndarray:
    """Polak-Ribiere direction with restart, accumulated along the gradient (ascent) sign."""
    if grad_prev is None or direction_prev is None:
        return np.array(grad, dtype=float)
    denom = float(grad_prev @ grad_prev)
    beta = max(float(grad @ (grad - grad_prev)) / denom, 0.0) if denom > 0 else 0.0
    return grad + beta * direction_prev


def fallback_step(grad, settings: PgdSettings) -> float:
    gmax = float(np.max(np.abs(grad), initial=0.0))
    if gmax == 0.0:
        return settings.alpha_max
    return min(settings.alpha_max, settings.alpha_fallback / gmax)


def _project(rho_tilde, lin: ConstraintLinearization, problem: Problem, settings: PgdSettings):
    l, u = problem.lower, problem.upper
    mode = settings.projection_mode
    if mode == PATH_SINGLE:
        return project_single_binary_search(rho_tilde, lin, l, u, settings.tol_B)
    if mode == PATH_INDEPENDENT:
        return project_independent(rho_tilde, lin, l, u, settings.tol_B)
    if mode == PATH_NEWTON:
        return project_general_newton(rho_tilde, lin, l, u, settings.C, settings.tol_N,
                                      settings.newton_maxiter, settings.tol_B)
    return project(rho_tilde, lin, l, u, settings.C, settings.tol_B, settings.tol_N,
                   settings.newton_maxiter)


def linearize(state: OptimizerState, step: np.ndarray, problem: Problem) -> ConstraintLinearization:
    """Constraint model at ``state.rho`` for the trial point ``state.rho - step``."""
    ev = state.evaluation
    return ConstraintLinearization(
        ev.constraint_grads, ev.constraint_values, 0.0, step,
        is_equality=problem.is_equality, independence_partition=problem.independence_partition,
    )


def pgd_step(state: OptimizerState, problem: Problem, settings: PgdSettings,
             on_projection: Callable | None = None):
    """Advance one iteration. Returns ``(new_state, record)``."""
    t = state.iteration
    grad = state.grad
    violation = float(np.max(state.last_violation, initial=0.0))
    use_fallback = (
        t == 0
        or state.force_fallback
        or (settings.use_fallback and t >= settings.t_warmup and violation > settings.tol_N)
    )
    if use_fallback:
        alpha = fallback_step(grad, settings)
        direction = cg_direction(grad)
    else:
        alpha = spectral_step_size(state.rho - state.rho_prev, grad - state.grad_prev, settings)
        direction = cg_direction(grad, state.grad_prev, state.direction_prev)
    step = settings.omega * alpha * direction
    rho_tilde = state.rho - step
    lin = linearize(state, step, problem)

    start = time.perf_counter()
    try:
        result = _project(rho_tilde, lin, problem, settings)
        rho_new = result.rho
        path, iters, converged = result.path, result.iterations, result.converged
    except ProjectionError:
        result = None
        rho_new = project_point(rho_tilde, 0.0, problem.lower, problem.upper)
        path, iters, converged = PATH_NONE, 0, False
    proj_seconds = time.perf_counter() - start
    if on_projection is not None:
        on_projection(t, rho_tilde, lin, result)

    evaluation = problem.evaluate(rho_new)
    change = float(np.linalg.norm(rho_new - state.rho))
    norm_new = float(np.linalg.norm(rho_new))
    record = IterationRecord(
        iteration=t + 1,
        objective=evaluation.objective,
        violations=evaluation.violations,
        step_size=alpha,
        relative_change=change / norm_new if norm_new > 0 else (0.0 if change == 0 else np.inf),
        projection_path=path,
        projection_iters=int(iters),
        fea_seconds=evaluation.fea_seconds,
        projection_seconds=proj_seconds,
        update_norm=change,
        fallback=use_fallback,
        projection_converged=converged,
    )
    # a fallback step clears the CG memory, so the next direction is the plain gradient
    memory = np.zeros_like(direction) if use_fallback else direction
    new_state = OptimizerState(
        rho=rho_new, evaluation=evaluation, rho_prev=state.rho, grad_prev=grad,
        direction_prev=memory, alpha=alpha, iteration=t + 1, force_fallback=not converged,
    )
    return new_state, record


def run_pgd(problem: Problem, settings: PgdSettings | None = None, rho0=None,
            on_iteration: Callable | None = None, on_projection: Callable | None = None) -> RunResult:
    """Iterate :func:`pgd_step` until ``K_max`` or the relative-change stop ``tol``.

    ``on_iteration(record, state)`` is called after every step.
    """
    settings = settings or PgdSettings()
    rho = problem.initial_design() if rho0 is None else np.array(rho0, dtype=float)
    state = OptimizerState(rho=rho, evaluation=problem.evaluate(rho))
    initial = state.evaluation
    history = []
    for _ in range(settings.K_max):
        state, record = pgd_step(state, problem, settings, on_projection)
        history.append(record)
        if on_iteration is not None:
            on_iteration(record, state)
        if settings.tol > 0 and record.relative_change <= settings.tol:
            break
    return RunResult(history, state.rho, state.evaluation.physical, initial, state.evaluation)


# -- optimality criteria ------------------------------------------------------

def oc_update(rho, sensitivity, volume_weights, target, move=0.2, eta=0.5, lower=0.0, upper=1.0,
              tol=1e-9, max_bisections=200):
    """Multiplicative resizing ``rho * B**eta`` with ``B = -dc / (lam * dV)`` and move limits.

    ``lam`` is bisected in log space until ``volume_weights @ rho_new`` is within
    ``tol`` of ``target``. Returns ``(rho_new, lam, bisections)``.
    """
    lo_box = np.maximum(lower, rho - move)
    hi_box = np.minimum(upper, rho + move)
    ratio = np.maximum(-sensitivity, 0.0) / volume_weights
    base = rho * ratio**eta

    def update(lam):
        return np.clip(base / lam**eta, lo_box, hi_box)

    a, b = -60.0, 60.0  # log10 of lambda
    n = 0
    rho_new = update(10.0**a)
    while n < max_bisections:
        mid = 0.5 * (a + b)
        rho_new = update(10.0**mid)
        vol = float(volume_weights @ rho_new)
        n += 1
        if abs(vol - target) <= tol:
            break
        if vol > target:
            a = mid
        else:
            b = mid
    return rho_new, 10.0**mid, n


def run_oc(problem: Problem, k_max: int = 300, move: float = 0.2, eta: float = 0.5,
           rho0=None, on_iteration: Callable | None = None) -> RunResult:
    """Optimality criteria for compliance under one volume constraint.

    Starts from the uniform target volume so the move limit can hold the
    volume at its target from the first step.
    """
    if problem.kind != MIN_COMPLIANCE:
        raise UnsupportedProblemError(
            f"optimality criteria supports {MIN_COMPLIANCE} only, not {problem.kind}"
        )
    vf = problem.spec.volume_fraction
    rho = np.full(problem.n_design, vf) if rho0 is None else np.array(rho0, dtype=float)
    evaluation = problem.evaluate(rho)
    initial = evaluation
    weights = evaluation.constraint_grads[0]
    history = []
    for t in range(k_max):
        start = time.perf_counter()
        rho_new, _, n = oc_update(rho, evaluation.objective_grad, weights, vf, move, eta,
                                  problem.lower, problem.upper)
        secs = time.perf_counter() - start
        evaluation = problem.evaluate(rho_new)
        change = float(np.linalg.norm(rho_new - rho))
        record = IterationRecord(
            iteration=t + 1, objective=evaluation.objective, violations=evaluation.violations,
            step_size=move, relative_change=change / float(np.linalg.norm(rho_new)),
            projection_path=PATH_OC, projection_iters=n, fea_seconds=evaluation.fea_seconds,
            projection_seconds=secs, update_norm=change,
        )
        rho = rho_new
        history.append(record)
        if on_iteration is not None:
            on_iteration(record, OptimizerState(rho=rho, evaluation=evaluation, iteration=t + 1))
    return RunResult(history, rho, evaluation.physical, initial, evaluation)
