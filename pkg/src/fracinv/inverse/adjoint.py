"""Backward-in-time adjoint solves for both systems.

Each adjoint step is the algebraic transpose of the corresponding forward
step, so summation by parts in space and time is exact:

* space system, interior unknowns with exterior values fixed to ``h``::

    (w^m - w^{m+1})/dt + [A^T (w^m ; h^m)]_I - p w^m = 0,   w^N = 0

  and ``sum_{m=1}^{N-1} dt <w^m, q^m> = - sum_{m=1}^{N-1} dt <h^m, (A u^m)_E>``.

* time system, with the right L1 table ``R`` and the boundary stencil ``S``::

    (R w)_m + A^T w_m - p_m w_m = -S^T h_Gamma^m / h,   w_N = 0

  and ``sum_{m=1}^{N-1} dt <w_m, q_m> = - sum_{m=1}^{N-1} dt <h_Gamma^m, S u_m>``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from ..domain import DomainLayout, inward_normal_stencil
from ..forward import SystemSpec, space_operators, time_operators
from ..fractime import FracOrderSpec, multiterm_table
from ..measure import MeasurementWeight
from ..nonlocal_op import KernelSpec


@dataclass(frozen=True, eq=False)
class AdjointField:
    """Adjoint values ``w[species, step, node]``; non-interior nodes carry the datum."""

    w: np.ndarray
    which: str
    h: MeasurementWeight

    def interior(self, layout: DomainLayout) -> np.ndarray:
        return self.w[:, :, layout.interior_index]


def _potential_steps(p: np.ndarray, n_species: int, layout: DomainLayout) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        p = np.broadcast_to(p, (n_species, p.size))
    if p.ndim == 2:
        p = np.broadcast_to(p[:, None, :], (n_species, layout.n_time + 1, layout.n_int))
    if p.shape != (n_species, layout.n_time + 1, layout.n_int):
        raise ValueError("potential has the wrong shape")
    return p


def solve_adjoint_space(
    p: np.ndarray,
    h: MeasurementWeight,
    layout: DomainLayout,
    kernel: KernelSpec,
    alpha: np.ndarray | None = None,
    operators: list[np.ndarray] | None = None,
) -> AdjointField:
    """Adjoint of the implicit Euler nonlocal solver with exterior datum ``h``."""
    if h.region != "accessible":
        raise ValueError("space adjoint needs a weight on the accessible region")
    h.check(layout)
    M = h.n_species
    pot = _potential_steps(p, M, layout)
    if operators is None:
        spec = SystemSpec(M, np.zeros((M, 1)), alpha=alpha, kernel=kernel)
        operators = space_operators(spec, layout)
    I, E = layout.interior_index, layout.exterior_index
    N, dt = layout.n_time, layout.dt
    w = np.zeros((M, N + 1, layout.n_nodes))
    w[:, :, E] = h.h[:, :, E]
    eye = np.eye(I.size)
    time_dep = np.ptp(pot, axis=1).max() > 0
    for i in range(M):
        At = operators[i].T
        A_II, A_IE = At[np.ix_(I, I)], At[np.ix_(I, E)]
        lu = lu_factor(eye / dt + A_II - np.diag(pot[i, N - 1]))
        for m in range(N - 1, -1, -1):
            if time_dep:
                lu = lu_factor(eye / dt + A_II - np.diag(pot[i, m]))
            rhs = w[i, m + 1, I] / dt - A_IE @ h.h[i, m, E]
            w[i, m, I] = lu_solve(lu, rhs)
    return AdjointField(w, "space", h)


def solve_adjoint_time(
    p: np.ndarray,
    h: MeasurementWeight,
    layout: DomainLayout,
    frac: FracOrderSpec,
    d: np.ndarray | float = 1.0,
    alpha: np.ndarray | None = None,
) -> AdjointField:
    """Adjoint of the L1 time-fractional solver with boundary datum ``h`` on Gamma."""
    if h.region != "gamma":
        raise ValueError("time adjoint needs a weight on Gamma")
    h.check(layout)
    M = h.n_species
    pot = _potential_steps(p, M, layout)
    spec = SystemSpec(M, np.zeros((M, 1)), alpha=alpha, d=d, frac=frac)
    ops = time_operators(spec, layout)
    S = inward_normal_stencil(layout)
    gam = layout.gamma_index
    I = layout.interior_index
    N, dt = layout.n_time, layout.dt
    eye = np.eye(I.size)
    w = np.zeros((M, N + 1, layout.n_nodes))
    bnd = np.flatnonzero(layout.node_class != 0)
    w[:, :, bnd] = h.h[:, :, bnd]
    for i in range(M):
        R = multiterm_table(frac, i, dt, N, side="right").matrix
        At = ops[i].T
        vals = np.zeros((N + 1, I.size))
        r = -(h.h[i][:, gam] @ S) / layout.h
        lu = None
        time_dep = np.ptp(pot[i], axis=0).max() > 0
        for m in range(N - 1, -1, -1):
            if lu is None or time_dep:
                lu = lu_factor(R[m, m] * eye + At - np.diag(pot[i, m]))
            hist = R[m, m + 1 :] @ vals[m + 1 :]
            vals[m] = lu_solve(lu, r[m] - hist)
        w[i, :, I] = vals.T
    return AdjointField(w, "time", h)


def pair_source_adjoint(q: np.ndarray, adj: AdjointField, layout: DomainLayout, rule: str = "trapezoid") -> np.ndarray:
    """``int int q w`` per species over interior nodes.

    ``rule='trapezoid'`` uses the trapezoid in time; ``rule='exact'`` uses the
    rectangle sum over ``m = 1..N-1`` under which the duality is exact.
    """
    wi = adj.interior(layout)
    prod = np.sum(np.asarray(q) * wi, axis=2) * layout.cell_volume
    if rule == "exact":
        return layout.dt * prod[:, 1:-1].sum(axis=1)
    tw = np.full(layout.n_time + 1, layout.dt)
    tw[0] = tw[-1] = 0.5 * layout.dt
    return prod @ tw
