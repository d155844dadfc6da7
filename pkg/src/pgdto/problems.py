"""Benchmark problems on the cantilever: objective and constraints with raw-space gradients.

All four problems share one evaluation core: raw design -> density filter ->
SIMP compliance -> filter chain rule. Designs with ``K`` material channels are
stored channel-major, entry ``j * N + e`` being channel ``j`` of element ``e``.
Constraint values are reported as ``g_j - G_j`` so that ``<= 0`` is feasible.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateDesignError, DomainError, ParameterError
from .filtering import FilterKernel, apply_filter, build_filter, filter_chain_rule
from .mesh_fea import (
    BoundaryConditions,
    MaterialModel,
    StructuredGrid,
    cantilever,
    compliance_and_gradient,
)

MIN_COMPLIANCE = "min_compliance"
MIN_VOLUME = "min_volume"
MULTI_MATERIAL = "multi_material"
COM_CONSTRAINED = "com_constrained"
KINDS = (MIN_COMPLIANCE, MIN_VOLUME, MULTI_MATERIAL, COM_CONSTRAINED)

COM_MASS_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Problem kind, discretization and targets.

    Only the targets relevant to ``kind`` are read: ``volume_fraction`` for
    minimum compliance and the centre-of-mass problem, ``compliance_max`` for
    minimum volume, ``volume_fractions`` (one per material) for the
    multi-material problem, and ``com_target`` with ``com_radius`` for the
    centre-of-mass constraint.
    """

    kind: str
    grid: StructuredGrid
    bc: BoundaryConditions
    material: MaterialModel
    volume_fraction: float | None = None
    compliance_max: float | None = None
    volume_fractions: tuple | None = None
    com_target: tuple | None = None
    com_radius: float | None = None
    filter_radius: float = 1.5
    solver: str = "auto"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown problem kind {self.kind!r}; expected one of {KINDS}")
        need = {
            MIN_COMPLIANCE: ("volume_fraction",),
            MIN_VOLUME: ("compliance_max",),
            MULTI_MATERIAL: ("volume_fractions",),
            COM_CONSTRAINED: ("volume_fraction", "com_radius"),
        }[self.kind]
        for name in need:
            value = getattr(self, name)
            values = np.atleast_1d(np.asarray(value, dtype=float)) if value is not None else None
            if values is None or values.size == 0 or np.any(values <= 0):
                raise ParameterError(f"{self.kind} needs a positive {name}")
        if self.kind == MULTI_MATERIAL and len(self.volume_fractions) != self.material.n_materials:
            raise ParameterError(
                f"{len(self.volume_fractions)} volume fractions for {self.material.n_materials} materials"
            )
        if self.kind == COM_CONSTRAINED and (self.com_target is None or len(self.com_target) != 2):
            raise ParameterError("com_constrained needs a 2-component com_target")
        if self.kind != MULTI_MATERIAL and self.material.n_materials != 1:
            raise ParameterError(f"{self.kind} uses a single material")

    @property
    def n_channels(self) -> int:
        return self.material.n_materials


def _grid(nx, ny):
    # domain length 1 along x
    return StructuredGrid(nx, ny, element_size=1.0 / nx)


def min_compliance(nx=64, ny=32, volume_fraction=0.2, filter_radius=1.5, penalty=3.0,
                   young_modulus=1.0, force=1.0, solver="auto") -> ProblemSpec:
    grid = _grid(nx, ny)
    return ProblemSpec(MIN_COMPLIANCE, grid, cantilever(grid, force),
                       MaterialModel((young_modulus,), penalty=penalty),
                       volume_fraction=volume_fraction, filter_radius=filter_radius, solver=solver)


def min_volume(nx=64, ny=32, compliance_max=150.0, filter_radius=1.5, penalty=3.0,
               young_modulus=1.0, force=1.0, solver="auto") -> ProblemSpec:
    grid = _grid(nx, ny)
    return ProblemSpec(MIN_VOLUME, grid, cantilever(grid, force),
                       MaterialModel((young_modulus,), penalty=penalty),
                       compliance_max=compliance_max, filter_radius=filter_radius, solver=solver)


def multi_material(nx=64, ny=32, young_moduli=(1.0, 0.5, 0.25, 0.125), volume_fractions=0.05,
                   filter_radius=1.5, penalty=3.0, force=1.0, solver="auto") -> ProblemSpec:
    """Several candidate materials, each with its own volume budget (at least two materials)."""
    young_moduli = tuple(float(e) for e in young_moduli)
    if len(young_moduli) < 2:
        raise ParameterError("multi_material needs at least two materials")
    if np.isscalar(volume_fractions):
        volume_fractions = (float(volume_fractions),) * len(young_moduli)
    grid = _grid(nx, ny)
    return ProblemSpec(MULTI_MATERIAL, grid, cantilever(grid, force),
                       MaterialModel(young_moduli, penalty=penalty),
                       volume_fractions=tuple(volume_fractions), filter_radius=filter_radius,
                       solver=solver)


def com_constrained(nx=64, ny=32, volume_fraction=0.2, com_target=(0.25, 0.25), com_radius=0.01,
                    filter_radius=1.5, penalty=3.0, young_modulus=1.0, force=1.0,
                    solver="auto") -> ProblemSpec:
    grid = _grid(nx, ny)
    return ProblemSpec(COM_CONSTRAINED, grid, cantilever(grid, force),
                       MaterialModel((young_modulus,), penalty=penalty),
                       volume_fraction=volume_fraction, com_target=tuple(com_target),
                       com_radius=com_radius, filter_radius=filter_radius, solver=solver)


FACTORIES = {
    MIN_COMPLIANCE: min_compliance,
    MIN_VOLUME: min_volume,
    MULTI_MATERIAL: multi_material,
    COM_CONSTRAINED: com_constrained,
}


@dataclass
class EvaluationBundle:
    """Objective and constraints (as ``g - G``) with gradients in raw design space."""

    objective: float
    objective_grad: np.ndarray
    constraint_values: np.ndarray
    constraint_grads: np.ndarray
    physical: np.ndarray = field(repr=False)
    fea_seconds: float = 0.0

    @property
    def violations(self) -> np.ndarray:
        return np.maximum(self.constraint_values, 0.0)


class _Core:
    """Filtered densities and compliance for a raw design, shared by every problem."""

    def __init__(self, spec: ProblemSpec, kernel: FilterKernel | None = None):
        self.spec = spec
        self.kernel = kernel if kernel is not None else build_filter(spec.grid, spec.filter_radius)
        self.n = spec.grid.n_elements
        self.k = spec.n_channels

    def channels(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n * self.k,):
            raise DomainError(f"design has shape {x.shape}, expected ({self.n * self.k},)")
        return x.reshape(self.k, self.n).T

    def physical(self, x) -> np.ndarray:
        rho = self.channels(x)
        return apply_filter(self.kernel, rho[:, 0] if self.k == 1 else rho)

    def compliance(self, phys):
        start = time.perf_counter()
        c, dc = compliance_and_gradient(self.spec.grid, self.spec.bc, phys, self.spec.material,
                                        self.spec.solver)
        raw = filter_chain_rule(self.kernel, dc)
        return c, self.flat(raw), time.perf_counter() - start

    def flat(self, per_channel) -> np.ndarray:
        return np.asarray(per_channel).T.ravel() if np.ndim(per_channel) == 2 else np.asarray(per_channel)

    @property
    def volume_grad(self) -> np.ndarray:
        return self.kernel.column_sums / self.n


def eval_min_compliance(x, spec: ProblemSpec, core: _Core | None = None) -> EvaluationBundle:
    """Compliance with one volume constraint ``mean(filtered) - V_f <= 0``."""
    core = core or _Core(spec)
    phys = core.physical(x)
    c, dc, secs = core.compliance(phys)
    g = np.array([phys.mean() - spec.volume_fraction])
    return EvaluationBundle(c, dc, g, core.volume_grad[None, :].copy(), phys, secs)


def eval_min_volume(x, spec: ProblemSpec, core: _Core | None = None) -> EvaluationBundle:
    """Volume fraction with one compliance constraint ``c - C_max <= 0``."""
    core = core or _Core(spec)
    phys = core.physical(x)
    c, dc, secs = core.compliance(phys)
    return EvaluationBundle(float(phys.mean()), core.volume_grad.copy(),
                            np.array([c - spec.compliance_max]), dc[None, :], phys, secs)


def eval_multi_material(x, spec: ProblemSpec, core: _Core | None = None) -> EvaluationBundle:
    """Compliance of the material mixture with one volume budget per channel.

    Row ``j`` of the constraint Jacobian is nonzero only on channel ``j``.
    With a single channel this is exactly :func:`eval_min_compliance`.
    """
    core = core or _Core(spec)
    phys = core.physical(x)
    c, dc, secs = core.compliance(phys)
    n, k = core.n, core.k
    targets = np.asarray(spec.volume_fractions if spec.volume_fractions is not None
                         else (spec.volume_fraction,), dtype=float)
    means = phys.mean(axis=0) if k > 1 else np.array([phys.mean()])
    grads = np.zeros((k, n * k))
    for j in range(k):
        grads[j, j * n:(j + 1) * n] = core.volume_grad
    return EvaluationBundle(c, dc, means - targets, grads, phys, secs)


def centre_of_mass(phys, centroids):
    """Density-weighted centroid ``R`` and the mass used to normalize it."""
    mass = float(phys.sum())
    if not mass > 0:
        raise DegenerateDesignError("centre of mass undefined for an all-void design")
    mass = max(mass, COM_MASS_FLOOR)
    return phys @ centroids / mass, mass


def eval_com_constrained(x, spec: ProblemSpec, core: _Core | None = None) -> EvaluationBundle:
    """Compliance with constraints ordered ``[volume, centre of mass]``.

    The second row is ``||R - R_t||^2 - r_b`` where ``R`` is the centroid of
    the filtered densities over the element centres.
    """
    core = core or _Core(spec)
    phys = core.physical(x)
    centroids = spec.grid.element_centroids
    R, mass = centre_of_mass(phys, centroids)
    offset = R - np.asarray(spec.com_target, dtype=float)
    c, dc, secs = core.compliance(phys)
    g_vol = phys.mean() - spec.volume_fraction
    g_com = float(offset @ offset) - spec.com_radius
    dcom = 2.0 * ((centroids - R) @ offset) / mass
    grads = np.vstack([core.volume_grad, filter_chain_rule(core.kernel, dcom)])
    return EvaluationBundle(c, dc, np.array([g_vol, g_com]), grads, phys, secs)


EVALUATORS = {
    MIN_COMPLIANCE: eval_min_compliance,
    MIN_VOLUME: eval_min_volume,
    MULTI_MATERIAL: eval_multi_material,
    COM_CONSTRAINED: eval_com_constrained,
}


class Problem:
    """A :class:`ProblemSpec` bound to its filter, with the interface the optimizers use."""

    lower = 0.0
    upper = 1.0

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self._core = _Core(spec)
        self._evaluate = EVALUATORS[spec.kind]

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def kernel(self) -> FilterKernel:
        return self._core.kernel

    @property
    def n_elements(self) -> int:
        return self._core.n

    @property
    def n_channels(self) -> int:
        return self._core.k

    @property
    def n_design(self) -> int:
        return self._core.n * self._core.k

    @property
    def m(self) -> int:
        return {MIN_COMPLIANCE: 1, MIN_VOLUME: 1, COM_CONSTRAINED: 2}.get(self.kind, self.n_channels)

    @property
    def constraint_names(self) -> list[str]:
        if self.kind == MIN_COMPLIANCE:
            return ["volume"]
        if self.kind == MIN_VOLUME:
            return ["compliance"]
        if self.kind == COM_CONSTRAINED:
            return ["volume", "centre_of_mass"]
        return [f"volume_{j + 1}" for j in range(self.n_channels)]

    @property
    def is_equality(self) -> np.ndarray:
        return np.zeros(self.m, dtype=bool)

    @property
    def independence_partition(self):
        """Disjoint design blocks per constraint when the rows are separable, else ``None``."""
        if self.kind != MULTI_MATERIAL:
            return None
        n = self.n_elements
        return [np.arange(j * n, (j + 1) * n) for j in range(self.n_channels)]

    def initial_design(self) -> np.ndarray:
        if self.kind == MULTI_MATERIAL:
            return np.repeat(np.asarray(self.spec.volume_fractions, dtype=float), self.n_elements)
        return np.ones(self.n_design)

    def physical(self, x) -> np.ndarray:
        return self._core.physical(x)

    def evaluate(self, x) -> EvaluationBundle:
        return self._evaluate(x, self.spec, self._core)
