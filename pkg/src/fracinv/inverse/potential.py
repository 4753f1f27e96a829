"""Potential reconstruction from weighted flux data by adjoint duality.

The data of source ``phi_n(x) V(t)`` equals ``-h^d <phi_n, W_V>`` with
``W_V = sum_m dt V_m w^m`` built from the adjoint field ``w``.  Expanding the
weighted adjoint fields in the basis and inserting them into the discrete
adjoint equation gives the potential node by node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..domain import DomainLayout, inward_normal_stencil
from ..forward import SystemSpec, space_operators, time_operators
from ..fractime import FracOrderSpec, multiterm_table
from ..measure import MeasurementSet, MeasurementWeight
from ..nonlocal_op import KernelSpec
from .report import ReconstructionReport, relative_l2

NOISELESS_LAMBDA = 1e-12
LCURVE_LAMBDAS = np.logspace(-8, 0, 5)
MAX_GRAM_COND = 1e12
GUARD_REL = 1e-8


@dataclass(frozen=True, eq=False)
class SourceBasis:
    """Basis members on interior nodes.

    ``members`` has shape ``(n, n_int)`` for spatial members or
    ``(n, n_time + 1, n_int)`` for space-time members.
    """

    members: np.ndarray
    tag: str

    @property
    def size(self) -> int:
        return self.members.shape[0]

    @property
    def is_spacetime(self) -> bool:
        return self.members.ndim == 3

    def matrix(self, steps: slice | None = None) -> np.ndarray:
        """Members flattened to rows (space-time members restricted to ``steps``)."""
        if self.is_spacetime:
            m = self.members[:, steps] if steps is not None else self.members
            return m.reshape(self.size, -1)
        return self.members

    def gram(self, layout: DomainLayout, steps: slice | None = None) -> np.ndarray:
        Phi = self.matrix(steps)
        w = layout.cell_volume * (layout.dt if self.is_spacetime else 1.0)
        return w * Phi @ Phi.T

    def condition_number(self, layout: DomainLayout, steps: slice | None = None) -> float:
        return float(np.linalg.cond(self.gram(layout, steps)))

    def sources(self, n_species: int, species: int, V: np.ndarray | None = None) -> list[np.ndarray]:
        """Source arrays ``(M, n_time + 1, n_int)`` for every member (times ``V`` for spatial members)."""
        out = []
        for phi in self.members:
            q = np.zeros((n_species, *(phi.shape if self.is_spacetime else (len(V), phi.size))))
            q[species] = phi if self.is_spacetime else np.outer(V, phi)
            out.append(q)
        return out


def _hat_1d(centers: np.ndarray, width: float, x: np.ndarray) -> np.ndarray:
    return np.clip(1.0 - np.abs(x[None, :] - centers[:, None]) / width, 0.0, None)


def hat_basis(layout: DomainLayout, n_per_axis: int) -> SourceBasis:
    """Tensor piecewise-linear hats on ``n_per_axis`` equispaced centres per axis.

    With ``n_per_axis == n_interior`` every hat is a nodal unit vector.
    """
    x = layout.interior_coords()
    step = 1.0 / (n_per_axis + 1)
    centers = step * np.arange(1, n_per_axis + 1)
    per_axis = [_hat_1d(centers, step, x[:, a]) for a in range(layout.dim)]
    if layout.dim == 1:
        members = per_axis[0]
    else:
        members = np.einsum("in,jn->ijn", per_axis[0], per_axis[1]).reshape(-1, x.shape[0])
    return SourceBasis(members, "hat")


def trig_basis(layout: DomainLayout, n_per_axis: int) -> SourceBasis:
    """Tensor sine modes ``sin(k pi x)``, ``k = 1..n_per_axis``."""
    x = layout.interior_coords()
    k = np.arange(1, n_per_axis + 1)
    per_axis = [np.sin(np.pi * k[:, None] * x[None, :, a]) for a in range(layout.dim)]
    if layout.dim == 1:
        members = per_axis[0]
    else:
        members = np.einsum("in,jn->ijn", per_axis[0], per_axis[1]).reshape(-1, x.shape[0])
    return SourceBasis(members, "trig")


def spacetime_hat_basis(layout: DomainLayout, n_space: int, n_levels: int) -> SourceBasis:
    """Products of spatial hats with temporal hats centred on ``n_levels`` interior time levels.

    The temporal hats sit on ``t_1 .. t_{N-1}`` when ``n_levels = n_time - 1``
    and are nodal unit vectors in time then.
    """
    space = hat_basis(layout, n_space).members
    t = layout.times
    T = layout.t_final
    step = T / (n_levels + 1)
    centers = step * np.arange(1, n_levels + 1)
    temporal = _hat_1d(centers, step, t)
    members = np.einsum("lt,sn->lstn", temporal, space).reshape(-1, t.size, space.shape[1])
    return SourceBasis(members, "hat-spacetime")


def difference_operator(n: int, order: int = 1) -> np.ndarray:
    """Finite-difference penalty matrix of the given order."""
    return np.diff(np.eye(n), n=order, axis=0)


def tikhonov_solve(G: np.ndarray, rhs: np.ndarray, lam: float, K: np.ndarray | None = None) -> np.ndarray:
    """``argmin ||G c - rhs||^2 + lam ||G||^2 ||K c||^2``."""
    K = np.eye(G.shape[1]) if K is None else K
    scale = np.linalg.norm(G, 2) ** 2
    lhs = G.T @ G + lam * scale * (K.T @ K)
    return np.linalg.solve(lhs, G.T @ rhs)


def lcurve_lambda(G: np.ndarray, rhs: np.ndarray, lambdas=LCURVE_LAMBDAS, K: np.ndarray | None = None) -> tuple[float, dict]:
    """Pick the L-curve corner (largest Menger curvature) among ``lambdas``."""
    K = np.eye(G.shape[1]) if K is None else K
    pts = []
    for lam in lambdas:
        c = tikhonov_solve(G, rhs, lam, K)
        pts.append((np.log(np.linalg.norm(G @ c - rhs) + 1e-300), np.log(np.linalg.norm(K @ c) + 1e-300)))
    pts = np.array(pts)
    curv = np.full(len(lambdas), -np.inf)
    for k in range(1, len(lambdas) - 1):
        a, b, c = pts[k - 1], pts[k], pts[k + 1]
        area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        den = np.linalg.norm(b - a) * np.linalg.norm(c - b) * np.linalg.norm(c - a)
        curv[k] = 2.0 * area / den if den > 0 else -np.inf
    best = int(np.argmax(curv))
    return float(lambdas[best]), {"lambdas": list(map(float, lambdas)), "curvature": curv.tolist(), "points": pts.tolist()}


def expand_in_basis(
    basis: SourceBasis,
    data: np.ndarray,
    layout: DomainLayout,
    lam: float | None,
    steps: slice | None = None,
    smoothing: int = 2,
) -> tuple[np.ndarray, dict]:
    """Recover the field ``W`` from ``h^d <phi_n, W> = data_n``.

    ``lam=None`` selects the parameter by the L-curve; otherwise it is used
    directly.  The penalty acts on differences of the recovered nodal field.
    """
    Phi = basis.matrix(steps)
    weight = layout.cell_volume * (layout.dt if basis.is_spacetime else 1.0)
    G = weight * Phi
    gram = G @ Phi.T
    cond = float(np.linalg.cond(gram))
    if cond > MAX_GRAM_COND:
        raise np.linalg.LinAlgError(f"Gram matrix condition number {cond:.3e} exceeds {MAX_GRAM_COND:.0e}: basis insufficient")
    # unknowns: nodal values of W in the span of the basis, W = Phi^T c
    n_nodes = Phi.shape[1]
    if basis.is_spacetime or layout.dim > 1:
        K = np.eye(n_nodes) @ Phi.T
    else:
        K = difference_operator(n_nodes, smoothing) @ Phi.T
    meta = {"gram_condition": cond}
    if lam is None:
        lam, info = lcurve_lambda(gram, data, K=K)
        meta["lcurve"] = info
    c = tikhonov_solve(gram, data, lam, K)
    meta["lambda"] = lam
    return Phi.T @ c, meta


def _guarded_divide(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    guard = GUARD_REL * np.max(np.abs(den))
    mask = np.abs(den) <= guard
    if np.all(mask):
        raise ZeroDivisionError("division guard masked every node: weighted adjoint field vanished")
    out = np.full(den.shape, np.nan)
    out[~mask] = num[~mask] / den[~mask]
    return out, mask


def backward_difference(v: np.ndarray, dt: float) -> np.ndarray:
    """``(v_m - v_{m-1}) / dt`` with a zero first entry."""
    dv = np.zeros_like(v)
    dv[1:] = np.diff(v) / dt
    return dv


def _species_values(data: MeasurementSet, species: int) -> np.ndarray:
    return data.values[:, species]


def recover_potential_space(
    data_v: MeasurementSet,
    data_dv: MeasurementSet,
    basis: SourceBasis,
    v: np.ndarray,
    h: MeasurementWeight,
    layout: DomainLayout,
    kernel: KernelSpec,
    alpha: np.ndarray | None = None,
    species: int = 0,
    lam: float | None = None,
    truth: np.ndarray | None = None,
) -> ReconstructionReport:
    """Recover a time-independent potential of the space-nonlocal system.

    Parameters
    ----------
    data_v, data_dv : MeasurementSet
        Exterior pairings for sources ``phi_n v(t)`` and ``phi_n v'(t)``,
        where ``v'`` is the backward difference of ``v``.
    v : ndarray
        Time weight on the grid with ``v(0) = 0``.
    h : MeasurementWeight
        Weight used for the data; it must vanish at the final time.
    lam : float, optional
        Tikhonov parameter; ``None`` picks it by the L-curve when the data are
        noisy and uses ``1e-12`` otherwise.

    Returns
    -------
    ReconstructionReport
        ``fields['p']`` holds the potential (NaN on guarded nodes).
    """
    v = np.asarray(v, dtype=float)
    if v[0] != 0.0:
        raise ValueError("time weight must vanish at t = 0")
    if np.any(h.h[:, -1] != 0):
        raise ValueError("measurement weight must vanish at the final time")
    if lam is None and data_v.noise_rel == 0.0 and data_dv.noise_rel == 0.0:
        lam = NOISELESS_LAMBDA
    # data = -h^d <phi, W>  =>  h^d <phi, W> = -data
    A, meta_a = expand_in_basis(basis, -_species_values(data_v, species), layout, lam)
    Bp, meta_b = expand_in_basis(basis, -_species_values(data_dv, species), layout, lam)
    M = h.n_species
    spec = SystemSpec(M, np.zeros((M, 1)), alpha=alpha, kernel=kernel)
    op = space_operators(spec, layout)[species]
    I, E = layout.interior_index, layout.exterior_index
    tw = np.full(layout.n_time + 1, layout.dt)
    tw[0] = tw[-1] = 0.0
    A_ext = (tw * v) @ h.h[species][:, E]
    At = op.T
    C = At[np.ix_(I, I)] @ A + At[np.ix_(I, E)] @ A_ext
    p, mask = _guarded_divide(Bp + C, A)
    report = ReconstructionReport(
        fields={"p": p, "A": A, "B": Bp, "C": C},
        guard_mask=mask,
        meta={"lambda_v": meta_a["lambda"], "lambda_dv": meta_b["lambda"], "gram_condition": meta_a["gram_condition"], "basis": basis.tag, "basis_size": basis.size},
    )
    if truth is not None:
        report.errors["rel_l2"] = relative_l2(p, truth, ~mask)
        report.errors["linf"] = float(np.max(np.abs(p - truth)[~mask]))
    return report


def _time_pieces(layout, frac, species, d, alpha, M):
    spec = SystemSpec(M, np.zeros((M, 1)), alpha=alpha, d=d, frac=frac)
    At = time_operators(spec, layout)[species].T
    R = multiterm_table(frac, species, layout.dt, layout.n_time, side="right").matrix
    return At, R


def recover_potential_time(
    data: MeasurementSet,
    basis: SourceBasis,
    h: MeasurementWeight,
    layout: DomainLayout,
    frac: FracOrderSpec,
    d: np.ndarray | float = 1.0,
    alpha: np.ndarray | None = None,
    species: int = 0,
    lam: float | None = None,
    truth: np.ndarray | None = None,
) -> ReconstructionReport:
    """Recover a space-time potential of the time-fractional system.

    ``basis`` must be a space-time basis; the adjoint field is rebuilt on the
    interior levels ``t_1 .. t_{N-1}`` and the potential follows from the
    discrete adjoint equation at those levels.  ``truth`` (if given) has shape
    ``(n_time + 1, n_int)`` and is compared on the same levels.
    """
    if not basis.is_spacetime:
        raise ValueError("space-time recovery needs a space-time basis")
    if np.any(h.h[:, -1] != 0):
        raise ValueError("measurement weight must vanish at the final time")
    if lam is None and data.noise_rel == 0.0:
        lam = NOISELESS_LAMBDA
    N, n = layout.n_time, layout.n_int
    inner = slice(1, N)
    W, meta = expand_in_basis(basis, -_species_values(data, species), layout, lam, steps=inner)
    w = np.zeros((N + 1, n))
    w[inner] = W.reshape(N - 1, n)
    At, R = _time_pieces(layout, frac, species, d, alpha, h.n_species)
    S = inward_normal_stencil(layout)
    r = -(h.h[species][:, layout.gamma_index] @ S) / layout.h
    num = (R @ w + w @ At.T - r)[inner]
    p, mask = _guarded_divide(num, w[inner])
    full = np.full((N + 1, n), np.nan)
    full[inner] = p
    gmask = np.zeros((N + 1, n), dtype=bool)
    gmask[inner] = mask
    report = ReconstructionReport(
        fields={"p": full, "w": w},
        guard_mask=mask,
        meta={"lambda": meta["lambda"], "gram_condition": meta["gram_condition"], "levels": [1, N - 1], "basis_size": basis.size},
    )
    if truth is not None:
        tr = np.asarray(truth, dtype=float)[inner]
        report.errors["rel_l2"] = relative_l2(p, tr, ~mask)
        report.errors["linf"] = float(np.max(np.abs(p - tr)[~mask]))
    return report


def recover_potential_time_separable(
    data_v: MeasurementSet,
    data_lv: MeasurementSet,
    basis: SourceBasis,
    v: np.ndarray,
    h: MeasurementWeight,
    layout: DomainLayout,
    frac: FracOrderSpec,
    d: np.ndarray | float = 1.0,
    alpha: np.ndarray | None = None,
    species: int = 0,
    lam: float | None = None,
    truth: np.ndarray | None = None,
) -> ReconstructionReport:
    """Recover a time-independent potential from spatial members times two time weights.

    The time weights are ``v`` and ``L v`` (the multi-term L1 derivative of
    ``v``), with ``v(0) = 0``.
    """
    v = np.asarray(v, dtype=float)
    if v[0] != 0.0:
        raise ValueError("time weight must vanish at t = 0")
    if np.any(h.h[:, -1] != 0):
        raise ValueError("measurement weight must vanish at the final time")
    if lam is None and data_v.noise_rel == 0.0 and data_lv.noise_rel == 0.0:
        lam = NOISELESS_LAMBDA
    Wv, meta = expand_in_basis(basis, -_species_values(data_v, species), layout, lam)
    Wlv, _ = expand_in_basis(basis, -_species_values(data_lv, species), layout, lam)
    At, _ = _time_pieces(layout, frac, species, d, alpha, h.n_species)
    S = inward_normal_stencil(layout)
    r = -(h.h[species][:, layout.gamma_index] @ S) / layout.h
    tw = np.full(layout.n_time + 1, layout.dt)
    tw[0] = tw[-1] = 0.0
    num = Wlv + At @ Wv - (tw * v) @ r
    p, mask = _guarded_divide(num, Wv)
    report = ReconstructionReport(
        fields={"p": p, "Wv": Wv, "Wlv": Wlv},
        guard_mask=mask,
        meta={"lambda": meta["lambda"], "gram_condition": meta["gram_condition"], "basis_size": 2 * basis.size},
    )
    if truth is not None:
        report.errors["rel_l2"] = relative_l2(p, truth, ~mask)
        report.errors["linf"] = float(np.max(np.abs(p - truth)[~mask]))
    return report
