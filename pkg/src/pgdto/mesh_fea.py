"""Structured-grid 2-D linear elasticity with SIMP interpolation.

Elements are 4-node bilinear quads (plane stress, unit thickness). Element
``e = iy * nx + ix`` and node ``n = j * (nx + 1) + i`` are numbered row-major
with ``y`` pointing up; each node carries the DOFs ``2n`` (x) and ``2n + 1`` (y).
Element nodes are ordered counter-clockwise from the lower-left corner.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import DomainError, ParameterError, SingularSystemError

DENSE_DOF_LIMIT = 200
BACKWARD_TOL = 1e-12
SOLVER_RTOL = 1e-8


@dataclass(frozen=True)
class StructuredGrid:
    """Regular ``nx`` by ``ny`` grid of square elements with edge ``element_size``."""

    nx: int
    ny: int
    element_size: float = 1.0

    def __post_init__(self):
        if int(self.nx) < 1 or int(self.ny) < 1:
            raise ParameterError(f"grid needs nx, ny >= 1, got {self.nx}x{self.ny}")
        if not self.element_size > 0:
            raise ParameterError("element_size must be positive")

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def node_count(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.node_count

    def element_index(self, ix, iy):
        return np.asarray(iy) * self.nx + np.asarray(ix)

    def node_index(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    @cached_property
    def element_centroids(self) -> np.ndarray:
        iy, ix = np.divmod(np.arange(self.n_elements), self.nx)
        return np.column_stack([(ix + 0.5) * self.element_size, (iy + 0.5) * self.element_size])

    @cached_property
    def element_dofs(self) -> np.ndarray:
        """``(N, 8)`` global DOF indices per element."""
        iy, ix = np.divmod(np.arange(self.n_elements), self.nx)
        n0 = self.node_index(ix, iy)
        nodes = np.column_stack([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1])
        dofs = np.empty((self.n_elements, 8), dtype=np.int64)
        dofs[:, 0::2] = 2 * nodes
        dofs[:, 1::2] = 2 * nodes + 1
        return dofs


@dataclass(frozen=True)
class BoundaryConditions:
    fixed_dofs: np.ndarray
    loads: dict  # dof -> force

    def __post_init__(self):
        fixed = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        if fixed.size == 0:
            raise ParameterError("at least one DOF must be fixed")
        object.__setattr__(self, "fixed_dofs", fixed)
        clash = set(int(d) for d in self.loads) & set(fixed.tolist())
        if clash:
            raise ParameterError(f"loads applied on fixed DOFs {sorted(clash)}")

    def force_vector(self, n_dofs: int) -> np.ndarray:
        f = np.zeros(n_dofs)
        for dof, value in sorted(self.loads.items()):
            f[int(dof)] += value
        return f

    def free_dofs(self, n_dofs: int) -> np.ndarray:
        return np.setdiff1d(np.arange(n_dofs), self.fixed_dofs)


def cantilever(grid: StructuredGrid, force: float = 1.0) -> BoundaryConditions:
    """Left edge clamped, downward point load at the middle node of the right edge.

    For odd ``ny`` the load node is ``ny // 2`` (just below the geometric middle).
    """
    left = grid.node_index(0, np.arange(grid.ny + 1))
    fixed = np.concatenate([2 * left, 2 * left + 1])
    load_node = int(grid.node_index(grid.nx, grid.ny // 2))
    return BoundaryConditions(fixed_dofs=fixed, loads={2 * load_node + 1: -float(force)})


@dataclass(frozen=True)
class MaterialModel:
    young_moduli: tuple = (1.0,)
    e_min: float | None = None
    poisson: float = 0.3
    penalty: float = 3.0

    def __post_init__(self):
        moduli = tuple(float(e) for e in np.atleast_1d(self.young_moduli))
        object.__setattr__(self, "young_moduli", moduli)
        if self.e_min is None:
            object.__setattr__(self, "e_min", 1e-9 * max(moduli))
        if not self.e_min > 0 or min(moduli) <= self.e_min:
            raise ParameterError("need E_j > e_min > 0 for every material")
        if not 0 < self.poisson < 0.5:
            raise ParameterError(f"poisson ratio {self.poisson} outside (0, 0.5)")
        if self.penalty < 1:
            raise ParameterError("SIMP penalty must be >= 1")

    @property
    def n_materials(self) -> int:
        return len(self.young_moduli)


@dataclass
class LinearSystem:
    stiffness: sp.csc_matrix  # free-DOF block
    rhs: np.ndarray  # free-DOF loads
    solution: np.ndarray  # full displacement vector, zero on fixed DOFs
    free_dofs: np.ndarray
    residual: float = 0.0
    method: str = "direct"


def element_stiffness_q4(poisson: float = 0.3, element_size: float = 1.0) -> np.ndarray:
    """Unit-modulus plane-stress Q4 stiffness (exact 2x2 Gauss integration).

    The plane-stress matrix of a square element does not depend on its edge
    length, so ``element_size`` is only validated.
    """
    if not 0 < poisson < 0.5:
        raise ParameterError(f"poisson ratio {poisson} outside (0, 0.5)")
    if not element_size > 0:
        raise ParameterError("element_size must be positive")
    nu = poisson
    k = np.array([
        1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
        -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8,
    ])
    order = [
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ]
    return k[np.array(order)] / (1 - nu**2)


def _as_channels(densities) -> np.ndarray:
    rho = np.asarray(densities, dtype=float)
    return rho[:, None] if rho.ndim == 1 else rho


def interpolate_stiffness(densities, model: MaterialModel):
    """Penalized modulus per element and its derivative per material channel.

    ``densities`` is ``(N,)`` for a single material or ``(N, K)``. Returns
    ``(E, dE)`` with ``E`` of shape ``(N,)`` and ``dE`` shaped like the input.
    """
    rho = _as_channels(densities)
    if rho.shape[1] != model.n_materials:
        raise DomainError(f"{rho.shape[1]} density channels for {model.n_materials} materials")
    if rho.size and (rho.min() < -1e-12 or rho.max() > 1 + 1e-12):
        raise DomainError("densities must lie in [0, 1]")
    rho = np.clip(rho, 0.0, 1.0)
    p = model.penalty
    scale = np.asarray(model.young_moduli) - model.e_min
    moduli = model.e_min + (rho**p) @ scale
    dmoduli = p * rho ** (p - 1) * scale
    if np.ndim(densities) == 1:
        dmoduli = dmoduli[:, 0]
    return moduli, dmoduli


class _Assembler:
    """Index bookkeeping for assembling the free-DOF block, cached per (grid, bc)."""

    def __init__(self, grid: StructuredGrid, bc: BoundaryConditions):
        edof = grid.element_dofs
        self.free = bc.free_dofs(grid.n_dofs)
        reduced = np.full(grid.n_dofs, -1, dtype=np.int64)
        reduced[self.free] = np.arange(self.free.size)
        rows = np.repeat(edof, 8, axis=1).ravel()
        cols = np.tile(edof, (1, 8)).ravel()
        keep = (reduced[rows] >= 0) & (reduced[cols] >= 0)
        self.keep = keep
        self.rows = reduced[rows[keep]]
        self.cols = reduced[cols[keep]]
        self.force = bc.force_vector(grid.n_dofs)


_ASSEMBLERS: dict = {}


def _assembler(grid, bc):
    key = (grid, bc.fixed_dofs.tobytes(), tuple(sorted(bc.loads.items())))
    plan = _ASSEMBLERS.get(key)
    if plan is None:
        if len(_ASSEMBLERS) > 32:
            _ASSEMBLERS.clear()
        plan = _ASSEMBLERS[key] = _Assembler(grid, bc)
    return plan


def assemble_stiffness(grid, bc, element_moduli, poisson=0.3):
    """Free-DOF global stiffness ``K = sum_e E_e k0`` in CSC form."""
    moduli = np.asarray(element_moduli, dtype=float)
    if moduli.shape != (grid.n_elements,):
        raise DomainError(f"expected {grid.n_elements} element moduli, got {moduli.shape}")
    plan = _assembler(grid, bc)
    ke = element_stiffness_q4(poisson, grid.element_size).ravel()
    values = (moduli[:, None] * ke[None, :]).ravel()[plan.keep]
    n = plan.free.size
    return sp.csc_matrix((values, (plan.rows, plan.cols)), shape=(n, n)), plan


def assemble_and_solve(grid, bc, element_moduli, poisson=0.3, method="auto") -> LinearSystem:
    """Assemble the reduced system and solve ``K u = f``.

    ``method`` is ``"auto"`` (dense below 200 free DOFs, sparse LU otherwise),
    ``"dense"``, ``"direct"`` or ``"cg"`` (Jacobi-preconditioned CG).
    """
    K, plan = assemble_stiffness(grid, bc, element_moduli, poisson)
    f = plan.force[plan.free]
    n = plan.free.size
    if method == "auto":
        method = "dense" if n < DENSE_DOF_LIMIT else "direct"

    if not np.any(f):
        uf = np.zeros(n)
    elif method == "dense":
        try:
            uf = np.linalg.solve(K.toarray(), f)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(f"dense stiffness is singular: {exc}") from exc
    elif method == "direct":
        try:
            lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SingularSystemError(
                f"sparse factorization failed ({exc}); check boundary conditions and e_min"
            ) from exc
        uf = lu.solve(f)
        for _ in range(2):
            r = f - K @ uf
            if np.linalg.norm(r) <= SOLVER_RTOL * np.linalg.norm(f):
                break
            uf = uf + lu.solve(r)
    elif method == "cg":
        diag = K.diagonal()
        if np.any(diag <= 0):
            raise SingularSystemError("non-positive stiffness diagonal; some DOF is unsupported")
        precond = spla.LinearOperator(K.shape, matvec=lambda x: x / diag, dtype=float)
        uf, info = spla.cg(K, f, rtol=SOLVER_RTOL, atol=0.0, maxiter=10 * n, M=precond)
        if info != 0:
            raise SingularSystemError(
                f"CG stopped without reaching rtol={SOLVER_RTOL} after {10 * n} iterations; "
                "the stiffness is likely ill-conditioned (raise e_min or use method='direct')"
            )
    else:
        raise ParameterError(f"unknown solver method {method!r}")

    r = f - K @ uf
    norm_f = np.linalg.norm(f)
    residual = float(np.linalg.norm(r) / norm_f) if norm_f > 0 else 0.0
    if method == "cg":
        bad, what = residual > SOLVER_RTOL, f"relative residual {residual:.3e}"
    else:
        # void regions carry displacements ~1/e_min, so judge direct solves by backward error
        scale = spla.norm(K, np.inf) * np.abs(uf).max(initial=0.0) + np.abs(f).max(initial=0.0)
        backward = float(np.abs(r).max(initial=0.0) / scale) if scale > 0 else 0.0
        bad, what = backward > BACKWARD_TOL, f"backward error {backward:.3e}"
    if not np.isfinite(residual) or bad:
        raise SingularSystemError(f"{what} too large; the stiffness matrix is numerically singular")
    u = np.zeros(grid.n_dofs)
    u[plan.free] = uf
    return LinearSystem(K, f, u, plan.free, residual, method)


def compliance_and_gradient(grid, bc, densities, model: MaterialModel, method="auto"):
    """Compliance ``f^T u`` and its derivative with respect to each density channel.

    Derivatives are with respect to the densities passed in (the filtered,
    physical field); the caller applies the filter chain rule.
    """
    moduli, dmoduli = interpolate_stiffness(densities, model)
    system = assemble_and_solve(grid, bc, moduli, model.poisson, method)
    u = system.solution
    force = _assembler(grid, bc).force
    c = float(force @ u)
    ue = u[grid.element_dofs]
    k0 = element_stiffness_q4(model.poisson, grid.element_size)
    energy = np.einsum("ei,ij,ej->e", ue, k0, ue)
    if np.ndim(densities) == 1:
        grad = -dmoduli * energy
    else:
        grad = -dmoduli * energy[:, None]
    return c, grad
