"""Discrete nonlocal diffusion, drift and nonlocal vector-calculus operators.

The operator ``Lu(x) = 2 * int (u(y) - u(x)) gamma(x, y) dy`` with the power-law
kernel ``gamma = sum_i c_i |x - y|^-(d + 2 s_i)`` is discretized on the full
grid (interior plus collar).  Each grid node ``y != x`` contributes the exact
(1D) or Gauss-quadrature (2D) kernel mass of its cell.  The singular cell around
``x`` is replaced by a second difference scaled by the kernel's second moment
over that cell, which is the symmetric pairing of ``y`` and ``2x - y``.  Kernel
mass outside every summed cell multiplies ``-u(x)`` because ``u = 0`` there.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate

from .domain import DomainLayout


@dataclass(frozen=True)
class KernelSpec:
    """Multi-order power-law kernel.

    Parameters
    ----------
    terms : sequence of (s, c)
        Orders ``0 < s_1 < ... < s_N < 1`` and positive magnitudes.
    radius : float
        Truncation radius R for explicit summation; ``inf`` sums every grid node.
    lower, upper : float, optional
        Declared bound constants; default to the smallest/largest magnitude.
    """

    terms: tuple[tuple[float, float], ...]
    radius: float = np.inf
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        terms = tuple((float(s), float(c)) for s, c in self.terms)
        object.__setattr__(self, "terms", terms)
        if not terms:
            raise ValueError("kernel needs at least one term")
        orders = [s for s, _ in terms]
        for s, c in terms:
            if not 0.0 < s < 1.0:
                raise ValueError(f"kernel order s={s} outside (0, 1)")
            if c <= 0.0:
                raise ValueError("kernel magnitudes must be positive")
        if any(b <= a for a, b in zip(orders, orders[1:])):
            raise ValueError("kernel orders must be strictly increasing")
        mags = [c for _, c in terms]
        lo = min(mags) if self.lower is None else self.lower
        hi = max(mags) if self.upper is None else self.upper
        if not 0.0 < lo <= min(mags) or max(mags) > hi:
            raise ValueError("kernel magnitudes violate the declared bounds")
        object.__setattr__(self, "lower", float(lo))
        object.__setattr__(self, "upper", float(hi))
        if self.radius <= 0:
            raise ValueError("truncation radius must be positive")

    def profile(self, r: np.ndarray, dim: int) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return sum(c * r ** (-(dim + 2.0 * s)) for s, c in self.terms)


def sphere_measure(dim: int) -> float:
    return {1: 2.0, 2: 2.0 * np.pi, 3: 4.0 * np.pi}[dim]


def tail_mass(kernel: KernelSpec, radius: float, dim: int) -> float:
    """Analytic ``2 * int_{|z| > R} gamma(z) dz``."""
    sigma = sphere_measure(dim)
    return float(sum(2.0 * c * sigma * radius ** (-2.0 * s) / (2.0 * s) for s, c in kernel.terms))


# --- per-term geometric constants on the reference cell (h = 1) ------------


@lru_cache(maxsize=None)
def _square_moment(s: float) -> float:
    """int over [-1/2, 1/2]^2 of |z|^(-2s) dz, the second moment of |z|^(-2-2s)."""
    val, _ = integrate.quad(lambda th: (2.0 * np.cos(th)) ** (-(2.0 - 2.0 * s)) / (2.0 - 2.0 * s), 0.0, np.pi / 4)
    return 8.0 * val


@lru_cache(maxsize=None)
def _square_outside_mass(s: float) -> float:
    """int over R^2 minus [-1/2, 1/2]^2 of |z|^(-2-2s) dz."""
    disk = 2.0 * np.pi * 0.5 ** (-2.0 * s) / (2.0 * s)
    corner, _ = integrate.quad(lambda th: (0.5 ** (-2.0 * s) - (2.0 * np.cos(th)) ** (2.0 * s)) / (2.0 * s), 0.0, np.pi / 4)
    return disk - 8.0 * corner


def _cell_mass_1d(kernel: KernelSpec, h: float, k: np.ndarray) -> np.ndarray:
    k = np.abs(np.asarray(k, dtype=float))
    out = np.zeros_like(k)
    for s, c in kernel.terms:
        out += c / (2 * s) * (((k - 0.5) * h) ** (-2 * s) - ((k + 0.5) * h) ** (-2 * s))
    return out


def _cell_mass_2d(kernel: KernelSpec, h: float, offsets: np.ndarray) -> np.ndarray:
    """Gauss-Legendre kernel mass of the cells at integer offsets (never 0, 0)."""
    gx, gw = np.polynomial.legendre.leggauss(8)
    out = np.zeros(offsets.shape[0])
    near = np.max(np.abs(offsets), axis=1) <= 2
    for mask, sub in ((near, 4), (~near, 1)):
        if not mask.any():
            continue
        off = offsets[mask].astype(float)
        # split each cell into sub x sub pieces, each with an 8-point rule per axis
        edges = (np.arange(sub) + 0.5) / sub - 0.5
        pts = (edges[:, None] + gx[None, :] / (2 * sub)).ravel()
        wts = np.tile(gw / (2 * sub), sub)
        px = off[:, 0, None, None] + pts[None, :, None]
        py = off[:, 1, None, None] + pts[None, None, :]
        r = np.hypot(px, py) * h
        vals = kernel.profile(r, 2) * (wts[None, :, None] * wts[None, None, :])
        out[mask] = vals.sum(axis=(1, 2)) * h**2
    return out


def _near_field(kernel: KernelSpec, h: float, dim: int) -> tuple[float, float]:
    """(mass outside the singular cell, second moment over the singular cell)."""
    if dim == 1:
        mass = sum(2 * c / (2 * s) * (h / 2) ** (-2 * s) for s, c in kernel.terms)
        moment = sum(2 * c * (h / 2) ** (2 - 2 * s) / (2 - 2 * s) for s, c in kernel.terms)
    else:
        mass = sum(c * h ** (-2 * s) * _square_outside_mass(s) for s, c in kernel.terms)
        moment = sum(c * h ** (2 - 2 * s) * _square_moment(s) for s, c in kernel.terms)
    return float(mass), float(moment)


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Dense operator table over every grid node.

    Attributes
    ----------
    kind : str
        ``'nonlocal'`` (table of -L), ``'drift'`` (table of alpha . grad) or
        ``'combined'``.
    full : ndarray, shape (n_nodes, n_nodes)
        Coefficients acting on a full-grid field.
    interior_index : ndarray
        Global indices of interior nodes.
    tail : ndarray or None
        Per-node kernel mass outside the summed cells (diagonal correction).
    weights : ndarray or None
        Symmetric pair weights W(x, y) with zero diagonal; ``-L`` without the
        tail equals ``2 * (diag(W 1) - W)``.
    """

    kind: str
    full: np.ndarray
    interior_index: np.ndarray
    tail: np.ndarray | None = None
    weights: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def table(self) -> np.ndarray:
        """Interior block, the coefficient table acting on interior unknowns."""
        i = self.interior_index
        return self.full[np.ix_(i, i)]

    def apply(self, u_full: np.ndarray) -> np.ndarray:
        return self.full @ u_full

    def __add__(self, other: "DiscreteOperator") -> "DiscreteOperator":
        return DiscreteOperator(
            kind="combined",
            full=self.full + other.full,
            interior_index=self.interior_index,
            tail=self.tail if self.tail is not None else other.tail,
            weights=self.weights if self.weights is not None else other.weights,
            meta={"parts": [self.kind, other.kind]},
        )

    def to_csv(self, path: str | Path, interior_only: bool = False) -> None:
        """Write nonzero entries as ``row,col,value`` triplets."""
        mat = self.table if interior_only else self.full
        rows, cols = np.nonzero(mat)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "value"])
            for r, c in zip(rows, cols):
                w.writerow([int(r), int(c), f"{mat[r, c]:.17g}"])


def pair_weights(layout: DomainLayout, kernel: KernelSpec) -> np.ndarray:
    """Symmetric weights W(x, y) over all grid node pairs within the radius."""
    lat = layout.lattice
    diff = lat[:, None, :] - lat[None, :, :]
    dist = np.linalg.norm(diff, axis=2) * layout.h
    if layout.dim == 1:
        k = np.abs(diff[:, :, 0])
        W = np.where(k > 0, _cell_mass_1d(kernel, layout.h, np.maximum(k, 1)), 0.0)
    else:
        span = layout.axis_count
        a = np.arange(-(span - 1), span)
        oa, ob = np.meshgrid(a, a, indexing="ij")
        offsets = np.column_stack([oa.ravel(), ob.ravel()])
        nonzero = np.any(offsets != 0, axis=1)
        table = np.zeros(offsets.shape[0])
        table[nonzero] = _cell_mass_2d(kernel, layout.h, offsets[nonzero])
        table = table.reshape(oa.shape)
        W = table[diff[:, :, 0] + span - 1, diff[:, :, 1] + span - 1]
        np.fill_diagonal(W, 0.0)
    _, moment = _near_field(kernel, layout.h, layout.dim)
    nearest = np.sum(np.abs(diff), axis=2) == 1
    W = W + nearest * (moment / (2 * layout.dim * layout.h**2))
    if np.isfinite(kernel.radius):
        if kernel.radius < layout.h:
            raise ValueError("truncation radius smaller than one cell")
        W = np.where(dist <= kernel.radius + 1e-12 * layout.h, W, 0.0)
    return 0.5 * (W + W.T)


def assemble_nonlocal(layout: DomainLayout, kernel: KernelSpec, tail: bool = True) -> DiscreteOperator:
    """Assemble the table of ``-L`` over the full grid.

    Parameters
    ----------
    layout : DomainLayout
    kernel : KernelSpec
    tail : bool
        Include the diagonal correction for kernel mass outside the summed
        cells (where the exterior value is zero).  Disable it to test that
        constants lie in the kernel.

    Returns
    -------
    DiscreteOperator
        ``kind='nonlocal'``; ``full`` holds ``-L`` and satisfies the M-matrix
        sign pattern.
    """
    W = pair_weights(layout, kernel)
    mass, moment = _near_field(kernel, layout.h, layout.dim)
    near_weight = moment / (2 * layout.dim * layout.h**2)
    explicit = W.sum(axis=1)
    # kernel mass of summed cells, without the singular-cell second difference
    steps = np.sum(np.abs(layout.lattice[:, None, :] - layout.lattice[None, :, :]), axis=2)
    n_nearest = np.sum((steps == 1) & (W > 0), axis=1)
    summed_mass = explicit - n_nearest * near_weight
    tau = 2.0 * (mass - summed_mass)
    if np.any(tau < -1e-9 * mass):
        raise ArithmeticError("negative tail mass; cell quadrature inconsistent")
    tau = np.maximum(tau, 0.0)
    full = -2.0 * W
    diag = 2.0 * explicit + (tau if tail else 0.0)
    full[np.diag_indices_from(full)] = diag
    op = DiscreteOperator(
        kind="nonlocal",
        full=full,
        interior_index=layout.interior_index,
        tail=tau if tail else np.zeros_like(tau),
        weights=W,
        meta={"near_field_weight": near_weight, "mass_outside_cell": mass},
    )
    _check_m_matrix(op.full)
    return op


def _check_m_matrix(mat: np.ndarray) -> None:
    off = mat - np.diag(np.diag(mat))
    if np.any(np.diag(mat) < 0) or np.any(off > 0):
        raise ArithmeticError("nonlocal table lost its M-matrix sign pattern")


def assemble_drift(layout: DomainLayout, alpha: float | Sequence[float]) -> DiscreteOperator:
    """First-order upwind table of ``alpha . grad`` over the full grid.

    Values beyond the outermost collar nodes are taken as zero, so rows near
    the boundary of the grid use one-sided differences consistent with the
    zero exterior value.  For several species call once per drift vector.
    """
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (layout.dim,))
    if not np.all(np.isfinite(alpha)):
        raise ValueError("drift must be finite")
    n = layout.n_nodes
    full = np.zeros((n, n))
    for g in range(n):
        base = layout.lattice[g]
        for axis, a in enumerate(alpha):
            if a == 0.0:
                continue
            step = -1 if a > 0 else 1
            nb = base.copy()
            nb[axis] += step
            j = layout.node_at(nb)
            coef = abs(a) / layout.h
            full[g, g] += coef
            if j >= 0:
                full[g, j] -= coef
    return DiscreteOperator(kind="drift", full=full, interior_index=layout.interior_index, meta={"alpha": alpha.tolist()})


def _full_field(layout: DomainLayout, u: np.ndarray, name: str) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (layout.n_nodes,):
        raise ValueError(f"{name} must carry values on every grid node including the collar")
    return u


def nonlocal_divergence_of_gradient(op: DiscreteOperator, u: np.ndarray) -> np.ndarray:
    """``D(Theta D* u)(x) = -2 sum_y W(x,y) (u(y) - u(x))`` on every node (no tail)."""
    W = op.weights
    return -2.0 * (W @ u - W.sum(axis=1) * u)


def interaction_flux(layout: DomainLayout, kernel: KernelSpec, u: np.ndarray, op: DiscreteOperator | None = None) -> np.ndarray:
    """Nonlocal flux density ``-2 sum_y W(x,y)(u(y)-u(x))`` at exterior nodes.

    Returns values ordered as ``layout.exterior_index``.  For a nonnegative
    field supported in the box the flux is nonpositive where ``u = 0``.
    """
    u = _full_field(layout, u, "u")
    op = op or assemble_nonlocal(layout, kernel)
    return nonlocal_divergence_of_gradient(op, u)[layout.exterior_index]


def green_identity_residual(
    layout: DomainLayout,
    kernel: KernelSpec,
    u: np.ndarray,
    v: np.ndarray,
    op: DiscreteOperator | None = None,
) -> float:
    """Residual of the discrete nonlocal Green identity.

    Evaluates ``| sum_Omega v D(u) - sum_{x,y} W (v_y - v_x)(u_y - u_x)
    - sum_{Omega_I} v N(u) |`` with cell volume weights, where ``N`` is the
    interaction operator ``N(u) = -D(u)`` on exterior nodes (the negative of
    :func:`interaction_flux`).
    """
    u = _full_field(layout, u, "u")
    v = _full_field(layout, v, "v")
    op = op or assemble_nonlocal(layout, kernel)
    vol = layout.cell_volume
    div = nonlocal_divergence_of_gradient(op, u)
    inner = layout.interior_index
    outer = layout.exterior_index
    lhs = vol * np.dot(v[inner], div[inner])
    dv = v[None, :] - v[:, None]
    du = u[None, :] - u[:, None]
    bilinear = vol * np.sum(op.weights * dv * du)
    boundary = vol * np.dot(v[outer], -div[outer])
    return float(abs(lhs - bilinear - boundary))
