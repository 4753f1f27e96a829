"""Forward solvers for the coupled space-nonlocal and time-fractional systems.

Both solvers are implicit in time with the polynomial interaction lagged inside
a Picard loop, so every linear solve uses an M-matrix and the discrete maximum
principle carries over from the continuous one.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .domain import DomainLayout, interior_laplacian
from .fractime import FracOrderSpec, multiterm_table
from .nonlocal_op import KernelSpec, assemble_drift, assemble_nonlocal

PICARD_TOL = 1e-10
MAX_PICARD = 50
BINARY_MAGIC = b"FRACINV1"


class SolverError(RuntimeError):
    """Solver failure carrying the time step and the last residual."""

    def __init__(self, message: str, step: int, residual: float):
        super().__init__(f"{message} at step {step} (residual {residual:.3e})")
        self.step = step
        self.residual = residual


class PicardError(SolverError):
    pass


# --- interaction power series ---------------------------------------------


def validate_interaction(interaction: Mapping[int, Mapping[tuple, float]], n_species: int, max_order: int) -> dict:
    """Return a normalized copy, checking every multi-index is admissible."""
    out: dict[int, dict[tuple[int, ...], float]] = {}
    for i, terms in interaction.items():
        if not 0 <= int(i) < n_species:
            raise ValueError(f"interaction species {i} out of range")
        row = {}
        for kappa, coef in terms.items():
            kappa = tuple(int(k) for k in kappa)
            if len(kappa) != n_species or min(kappa) < 0:
                raise ValueError(f"multi-index {kappa} has wrong length or negative entries")
            if sum(kappa) < 2:
                raise ValueError(f"multi-index {kappa} has total degree below 2")
            if kappa[int(i)] < 1:
                raise ValueError(f"multi-index {kappa} lacks a factor of its own species {i}")
            if sum(kappa) > max_order:
                raise ValueError(f"multi-index {kappa} exceeds max_order={max_order}")
            row[kappa] = float(coef)
        out[int(i)] = row
    return out


def evaluate_interaction(spec: "SystemSpec", u: np.ndarray, tilt: np.ndarray | None = None) -> np.ndarray:
    """Evaluate ``F_i(u) = sum F_i^k prod_j u_j^k_j`` for every species.

    ``u`` has shape ``(M,)`` or ``(M, n)``.  ``tilt`` (shape ``(M, n)``) rescales
    each coefficient by ``exp(sum_j k_j tilt_j - tilt_i)``; it defaults to the
    spec's own tilt, which is set by :func:`drift_removal`.
    """
    u = np.asarray(u, dtype=float)
    tilt = spec.interaction_tilt if tilt is None else tilt
    out = np.zeros_like(u)
    for i, terms in spec.interaction.items():
        for kappa, coef in terms.items():
            if coef == 0.0:
                continue
            term = np.full(u.shape[1:], coef)
            for j, k in enumerate(kappa):
                if k:
                    term = term * u[j] ** k
            if tilt is not None:
                term = term * np.exp(np.tensordot(np.asarray(kappa, float), tilt, axes=1) - tilt[i])
            out[i] += term
    return out


# --- data containers ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Coefficients of a coupled system.

    Attributes
    ----------
    n_species : int
    potential : ndarray
        ``(M, n_int)`` for a time-independent potential or ``(M, n_time + 1,
        n_int)``; values on interior nodes, nonpositive unless overridden.
    interaction : mapping
        ``{species: {multi_index: coefficient}}``, admissible multi-indices only.
    alpha : ndarray, shape (M, dim)
        Drift vectors.
    d : ndarray, shape (M,)
        Diffusion coefficients (time-fractional system).
    kernel : KernelSpec, optional
        Nonlocal kernel (space-nonlocal system).
    frac : FracOrderSpec, optional
        Fractional orders (time-fractional system).
    max_order : int
        Highest retained total degree of the interaction.
    interaction_tilt : ndarray, optional
        Node-wise coefficient exponents produced by :func:`drift_removal`.
    """

    n_species: int
    potential: np.ndarray
    interaction: Mapping[int, Mapping[tuple, float]] = field(default_factory=dict)
    alpha: np.ndarray | None = None
    d: np.ndarray | None = None
    kernel: KernelSpec | None = None
    frac: FracOrderSpec | None = None
    max_order: int = 3
    allow_positive_potential: bool = False
    interaction_tilt: np.ndarray | None = None
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        M = int(self.n_species)
        if M < 1:
            raise ValueError("need at least one species")
        pot = np.asarray(self.potential, dtype=float)
        if pot.ndim == 1:
            pot = pot[:, None] if pot.shape[0] == M else np.broadcast_to(pot, (M, pot.shape[0]))
        if pot.shape[0] != M:
            raise ValueError("potential must have one row per species")
        if not np.all(np.isfinite(pot)):
            raise ValueError("potential must be finite")
        if np.any(pot > 0) and not self.allow_positive_potential:
            raise ValueError("potential must be nonpositive (p <= 0)")
        object.__setattr__(self, "potential", pot)
        object.__setattr__(self, "interaction", validate_interaction(self.interaction, M, self.max_order))
        alpha = np.zeros((M, 1)) if self.alpha is None else np.asarray(self.alpha, dtype=float)
        if alpha.ndim == 1:
            alpha = alpha[:, None]
        object.__setattr__(self, "alpha", alpha)
        d = np.ones(M) if self.d is None else np.broadcast_to(np.asarray(self.d, dtype=float), (M,)).copy()
        if np.any(d <= 0):
            raise ValueError("diffusion coefficients must be positive")
        object.__setattr__(self, "d", d)
        if self.frac is not None and self.frac.n_species != M:
            raise ValueError("fractional order spec has the wrong species count")

    @property
    def has_interaction(self) -> bool:
        return any(c != 0.0 for terms in self.interaction.values() for c in terms.values())

    def linear_part(self) -> "SystemSpec":
        """Same system with the interaction removed."""
        return dataclasses.replace(self, interaction={}, interaction_tilt=None)

    def drift(self, species: int, dim: int) -> np.ndarray:
        a = self.alpha[species]
        return np.broadcast_to(a, (dim,)) if a.size == 1 else a

    def potential_at(self, layout: DomainLayout) -> np.ndarray:
        """Potential as ``(M, n_time + 1, n_int)``."""
        pot = self.potential
        n_int = layout.n_int
        if pot.ndim == 2:
            if pot.shape[1] == 1:
                pot = np.broadcast_to(pot, (self.n_species, n_int))
            if pot.shape[1] != n_int:
                raise ValueError("potential has the wrong number of nodes")
            return np.broadcast_to(pot[:, None, :], (self.n_species, layout.n_time + 1, n_int))
        if pot.shape[1:] != (layout.n_time + 1, n_int):
            raise ValueError("time-dependent potential has the wrong shape")
        return pot

    def is_time_dependent(self) -> bool:
        return self.potential.ndim == 3


@dataclass(frozen=True, eq=False)
class SourceTerm:
    """Source ``q`` on interior nodes, shape ``(M, n_time + 1, n_int)``."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 3:
            raise ValueError("source must have shape (M, n_time + 1, n_int)")
        object.__setattr__(self, "q", q)

    @property
    def n_species(self) -> int:
        return self.q.shape[0]

    @classmethod
    def zeros(cls, layout: DomainLayout, n_species: int) -> "SourceTerm":
        return cls(np.zeros((n_species, layout.n_time + 1, layout.n_int)))

    @classmethod
    def from_function(cls, layout: DomainLayout, n_species: int, fn: Callable) -> "SourceTerm":
        """``fn(x, t)`` with ``x`` of shape (n_int, dim) returns ``(M, n_int)`` values."""
        x = layout.interior_coords()
        q = np.stack([np.asarray(fn(x, t), dtype=float).reshape(n_species, -1) for t in layout.times], axis=1)
        return cls(q)

    @classmethod
    def separable(cls, layout: DomainLayout, n_species: int, species: int, phi: np.ndarray, V: np.ndarray) -> "SourceTerm":
        """``q_species(x, t) = phi(x) V(t)``, zero for the other species."""
        q = np.zeros((n_species, layout.n_time + 1, layout.n_int))
        q[species] = np.outer(np.asarray(V, float), np.asarray(phi, float))
        return cls(q)

    def __add__(self, other: "SourceTerm") -> "SourceTerm":
        return SourceTerm(self.q + other.q)

    def __mul__(self, factor: float) -> "SourceTerm":
        return SourceTerm(self.q * factor)

    __rmul__ = __mul__

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.q >= 0))


@dataclass(frozen=True, eq=False)
class StateField:
    """Solution values ``u[species, step, node]`` on the full grid."""

    u: np.ndarray
    iterations: np.ndarray
    kind: str
    layout: DomainLayout | None = None

    @property
    def n_species(self) -> int:
        return self.u.shape[0]

    def interior(self, layout: DomainLayout | None = None) -> np.ndarray:
        layout = layout or self.layout
        return self.u[:, :, layout.interior_index]

    def min_value(self) -> float:
        return float(self.u.min())

    def to_csv(self, path: str | Path, layout: DomainLayout | None = None) -> None:
        """One row per (species, step, node): species, step, t, node, coordinates, value."""
        layout = layout or self.layout
        times = layout.times
        coords = layout.coords
        with open(path, "w") as fh:
            axes = ["x", "y"][: layout.dim]
            fh.write(",".join(["species", "step", "t", "node", *axes, "value"]) + "\n")
            for s in range(self.u.shape[0]):
                for m in range(self.u.shape[1]):
                    for g in range(self.u.shape[2]):
                        xs = ",".join(f"{c:.17g}" for c in coords[g])
                        fh.write(f"{s},{m},{times[m]:.17g},{g},{xs},{self.u[s, m, g]:.17g}\n")

    def to_binary(self, path: str | Path) -> None:
        """Binary dump: 8-byte magic, int64 rank, int64 dims, little-endian f64 row-major."""
        write_binary(path, self.u)


def write_binary(path: str | Path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<q", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}q", *array.shape))
        fh.write(array.tobytes(order="C"))


def read_binary(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(8) != BINARY_MAGIC:
            raise ValueError("not a field dump")
        (ndim,) = struct.unpack("<q", fh.read(8))
        shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
        return np.frombuffer(fh.read(), dtype="<f8").reshape(shape).copy()


# --- operators ------------------------------------------------------------


def space_operators(spec: SystemSpec, layout: DomainLayout) -> list[np.ndarray]:
    """Full-grid tables of ``-L + alpha_i . grad`` per species."""
    if spec.kernel is None:
        raise ValueError("space-nonlocal system needs a kernel")
    base = assemble_nonlocal(layout, spec.kernel).full
    return [base + assemble_drift(layout, spec.drift(i, layout.dim)).full for i in range(spec.n_species)]


def time_operators(spec: SystemSpec, layout: DomainLayout, drift_scheme: str = "fitted") -> list[np.ndarray]:
    """Interior tables of ``-d_i Laplacian + alpha_i . grad`` per species.

    ``drift_scheme='fitted'`` uses the exponentially fitted stencil
    ``e^{lam.x} (-d Lap_h) e^{-lam.x} + |alpha|^2/(4d)`` with ``lam = alpha/(2d)``
    (second order, M-matrix for any drift); ``'upwind'`` adds the first-order
    upwind drift table to ``-d Lap_h``.
    """
    if drift_scheme not in ("fitted", "upwind"):
        raise ValueError(f"unknown drift scheme {drift_scheme!r}")
    lap = interior_laplacian(layout)
    I = layout.interior_index
    x = layout.interior_coords()
    ops = []
    for i in range(spec.n_species):
        op = -spec.d[i] * lap
        a = spec.drift(i, layout.dim)
        if np.any(a != 0):
            if drift_scheme == "upwind":
                op = op + assemble_drift(layout, a).full[np.ix_(I, I)]
            else:
                e = x @ (a / (2.0 * spec.d[i]))
                op = np.exp(e)[:, None] * op * np.exp(-e)[None, :]
                op[np.diag_indices_from(op)] += a @ a / (4.0 * spec.d[i])
        ops.append(op)
    return ops


def _check_source(spec: SystemSpec, source: SourceTerm, layout: DomainLayout) -> np.ndarray:
    q = source.q
    if q.shape != (spec.n_species, layout.n_time + 1, layout.n_int):
        raise ValueError(f"source shape {q.shape} does not match the system and layout")
    return q


def _picard_step(spec, solve, prev_rhs, q_m, guess, tol, max_iters, step, tilt=None):
    """Iterate ``u = solve(prev_rhs + F(u) + q_m)`` from ``guess``."""
    lag = guess
    if not spec.has_interaction:
        new = solve(prev_rhs + q_m)
        if not np.all(np.isfinite(new)):
            raise SolverError("non-finite values", step, float("nan"))
        return new, 1
    delta = np.inf
    for it in range(1, max_iters + 1):
        new = solve(prev_rhs + evaluate_interaction(spec, lag, tilt) + q_m)
        if not np.all(np.isfinite(new)):
            raise SolverError("non-finite values", step, float("nan"))
        delta = float(np.max(np.abs(new - lag)))
        scale = float(np.max(np.abs(new)))
        lag = new
        if delta <= tol * scale or scale == 0.0:
            return new, it
    raise PicardError("Picard iteration did not converge", step, delta)


def solve_space_nonlocal(
    spec: SystemSpec,
    source: SourceTerm,
    layout: DomainLayout,
    picard_tol: float = PICARD_TOL,
    max_iters: int = MAX_PICARD,
    operators: list[np.ndarray] | None = None,
) -> StateField:
    """Implicit Euler for ``u_t - Lu + alpha . grad u = p u + F(u) + q``, ``u = 0`` outside.

    Each step solves ``(I/dt - L + alpha . grad - p) u^{m+1} = u^m/dt +
    F(u^{m+1}_lag) + q^{m+1}`` with Picard iteration on the interaction.
    """
    q = _check_source(spec, source, layout)
    ops = operators if operators is not None else space_operators(spec, layout)
    I = layout.interior_index
    M, N, dt = spec.n_species, layout.n_time, layout.dt
    pot = spec.potential_at(layout)
    eye = np.eye(I.size)

    def factor(m):
        return [lu_factor(eye / dt + ops[i][np.ix_(I, I)] - np.diag(pot[i, m])) for i in range(M)]

    lus = factor(1)
    u = np.zeros((M, N + 1, layout.n_nodes))
    iters = np.zeros(N + 1, dtype=int)
    cur = np.zeros((M, I.size))
    for m in range(1, N + 1):
        if spec.is_time_dependent() and m > 1:
            lus = factor(m)

        def solve(rhs, lus=lus):
            return np.stack([lu_solve(lus[i], rhs[i]) for i in range(M)])

        cur, iters[m] = _picard_step(spec, solve, cur / dt, q[:, m], cur, picard_tol, max_iters, m)
        u[:, m, I] = cur
    return StateField(u, iters, "space", layout)


def solve_time_fractional(
    spec: SystemSpec,
    source: SourceTerm,
    layout: DomainLayout,
    picard_tol: float = PICARD_TOL,
    max_iters: int = MAX_PICARD,
    normalize: bool = True,
    drift_scheme: str = "fitted",
) -> StateField:
    """L1 stepping for ``sum_j b_j D^beta_j u - d Lap u + alpha . grad u = p u + F(u) + q``.

    With ``normalize=True`` (default) a nonzero drift is removed by
    :func:`drift_removal`, the drift-free system is solved, and the result is
    mapped back.  ``normalize=False`` discretizes the drift directly with
    ``drift_scheme`` (see :func:`time_operators`).
    """
    if spec.frac is None:
        raise ValueError("time-fractional system needs fractional orders")
    q = _check_source(spec, source, layout)
    if normalize and np.any(spec.alpha != 0):
        tspec, scaling = drift_removal(spec, layout)
        I = layout.interior_index
        inner = _solve_time_core(tspec, q * scaling[:, None, I], layout, picard_tol, max_iters, drift_scheme)
        return StateField(inner.u / scaling[:, None, :], inner.iterations, "time", layout)
    return _solve_time_core(spec, q, layout, picard_tol, max_iters, drift_scheme)


def _solve_time_core(spec, q, layout, picard_tol, max_iters, drift_scheme) -> StateField:
    I = layout.interior_index
    M, N, dt = spec.n_species, layout.n_time, layout.dt
    ops = time_operators(spec, layout, drift_scheme)
    tables = [multiterm_table(spec.frac, i, dt, N).matrix for i in range(M)]
    pot = spec.potential_at(layout)
    eye = np.eye(I.size)
    tilt = spec.interaction_tilt

    def factor(m):
        return [lu_factor(tables[i][m, m] * eye + ops[i] - np.diag(pot[i, m])) for i in range(M)]

    lus = factor(1)
    vals = np.zeros((M, N + 1, I.size))
    iters = np.zeros(N + 1, dtype=int)
    for m in range(1, N + 1):
        if spec.is_time_dependent() and m > 1:
            lus = factor(m)
        hist = np.stack([-(tables[i][m, :m] @ vals[i, :m]) for i in range(M)])

        def solve(rhs, lus=lus):
            return np.stack([lu_solve(lus[i], rhs[i]) for i in range(M)])

        vals[:, m], iters[m] = _picard_step(spec, solve, hist, q[:, m], vals[:, m - 1], picard_tol, max_iters, m, tilt)
    u = np.zeros((M, N + 1, layout.n_nodes))
    u[:, :, I] = vals
    return StateField(u, iters, "time", layout)


def drift_removal(spec: SystemSpec, layout: DomainLayout) -> tuple[SystemSpec, np.ndarray]:
    """Remove a constant drift by an exponential change of variables.

    With ``lam_i = alpha_i / (2 d_i)`` the field ``v_i = u_i exp(-lam_i . x)``
    solves the drift-free system with potential ``p_i - |alpha_i|^2 / (4 d_i)``,
    source ``q_i exp(-lam_i . x)`` and interaction coefficients tilted by the
    same exponentials.  In the rescaled coordinate ``y = x / sqrt(d_i)`` the
    exponent reads ``alpha_i . y / (2 sqrt(d_i))`` and the diffusion is unit;
    on the shared grid the coefficient ``d_i`` is kept explicitly instead.

    Returns
    -------
    tspec : SystemSpec
        Drift-free system.
    scaling : ndarray, shape (M, n_nodes)
        ``exp(-lam_i . x)``; transformed fields equal original fields times it.
    """
    if np.any(spec.d <= 0):
        raise ValueError("diffusion coefficients must be positive")
    M = spec.n_species
    alphas = np.stack([spec.drift(i, layout.dim) for i in range(M)])
    lam = alphas / (2.0 * spec.d[:, None])
    exponent = lam @ layout.coords.T  # (M, n_nodes)
    scaling = np.exp(-exponent)
    shift = np.sum(alphas**2, axis=1) / (4.0 * spec.d)
    pot = spec.potential
    pot = pot - (shift[:, None] if pot.ndim == 2 else shift[:, None, None])
    tilt_int = exponent[:, layout.interior_index]
    tilt = tilt_int if spec.interaction_tilt is None else spec.interaction_tilt + tilt_int
    tspec = dataclasses.replace(
        spec,
        potential=pot,
        alpha=np.zeros_like(alphas),
        interaction_tilt=tilt if spec.has_interaction else spec.interaction_tilt,
    )
    return tspec, scaling
