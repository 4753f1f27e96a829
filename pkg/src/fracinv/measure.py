"""Measurement maps, weights and synthetic data generation.

Three observations are supported: the weighted exterior response of the
space-nonlocal system on the accessible region, the weighted normal flux of the
time-fractional system on the boundary portion Gamma, and the time series at
the interior observation point.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .domain import EXTERIOR_ACCESSIBLE, DomainLayout, inward_normal_stencil
from .forward import SourceTerm, StateField, SystemSpec, solve_space_nonlocal, solve_time_fractional
from .nonlocal_op import DiscreteOperator, KernelSpec, assemble_drift, assemble_nonlocal, interaction_flux


def default_time_profile(t: np.ndarray, t_final: float) -> np.ndarray:
    """``sin(pi t / T)``: nonnegative and zero at both ends of the window."""
    t = np.asarray(t, dtype=float)
    return np.where(np.isclose(t, t_final) | (t <= 0), 0.0, np.sin(np.pi * t / t_final))


@dataclass(frozen=True, eq=False)
class MeasurementWeight:
    """Weight ``h[species, step, node]`` on the full grid, supported in ``region``."""

    h: np.ndarray
    region: str

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.ndim != 3:
            raise ValueError("weight must have shape (M, n_time + 1, n_nodes)")
        if self.region not in ("accessible", "gamma"):
            raise ValueError("region must be 'accessible' or 'gamma'")
        if np.any(h < 0):
            raise ValueError("weight must be nonnegative")
        object.__setattr__(self, "h", h)

    @property
    def n_species(self) -> int:
        return self.h.shape[0]

    def support_mask(self, layout: DomainLayout) -> np.ndarray:
        if self.region == "accessible":
            return layout.node_class == EXTERIOR_ACCESSIBLE
        return layout.gamma_mask

    def check(self, layout: DomainLayout) -> None:
        if self.h.shape[1:] != (layout.n_time + 1, layout.n_nodes):
            raise ValueError("weight shape does not match the layout")
        outside = ~self.support_mask(layout)
        if np.any(self.h[:, :, outside] != 0):
            raise ValueError(f"weight support lies outside the {self.region} region")

    def is_nontrivial(self) -> bool:
        return bool(np.any(self.h > 0))

    @classmethod
    def build(
        cls,
        layout: DomainLayout,
        n_species: int,
        region: str = "accessible",
        time_profile: Callable | None = None,
        space_profile: Callable | None = None,
    ) -> "MeasurementWeight":
        """Separable weight ``space_profile(x) * time_profile(t)`` on the region.

        Defaults are ``1`` in space and ``sin(pi t / T)`` in time.
        """
        mask = (layout.node_class == EXTERIOR_ACCESSIBLE) if region == "accessible" else layout.gamma_mask
        if region not in ("accessible", "gamma"):
            raise ValueError("region must be 'accessible' or 'gamma'")
        tp = time_profile or (lambda t: default_time_profile(t, layout.t_final))
        sp = np.zeros(layout.n_nodes)
        sp[mask] = 1.0 if space_profile is None else space_profile(layout.coords[mask])
        h = np.outer(tp(layout.times), sp)
        return cls(np.broadcast_to(h, (n_species, *h.shape)).copy(), region)


def time_weights(layout: DomainLayout) -> np.ndarray:
    """Trapezoid weights on the time grid."""
    w = np.full(layout.n_time + 1, layout.dt)
    w[0] = w[-1] = 0.5 * layout.dt
    return w


def _field(u: StateField | np.ndarray) -> np.ndarray:
    return u.u if isinstance(u, StateField) else np.asarray(u, dtype=float)


def pair_lambda1(
    u: StateField | np.ndarray,
    h: MeasurementWeight,
    layout: DomainLayout,
    kernel: KernelSpec,
    alpha: np.ndarray | None = None,
    op: DiscreteOperator | None = None,
) -> np.ndarray:
    """Weighted exterior response ``int int h (-L + alpha . grad) u`` over the accessible region.

    The operator rows at accessible nodes are the full-grid tables used by the
    solver, so the drift uses the same collar stencil.  Returns one value per
    species.
    """
    if h.region != "accessible":
        raise ValueError("exterior pairing needs a weight on the accessible region")
    h.check(layout)
    uf = _field(u)
    M = uf.shape[0]
    base = (op or assemble_nonlocal(layout, kernel)).full
    acc = layout.accessible_index
    tw = time_weights(layout)
    out = np.zeros(M)
    for i in range(M):
        A = base
        if alpha is not None and np.any(np.asarray(alpha)[i] != 0):
            A = base + assemble_drift(layout, np.asarray(alpha)[i]).full
        resp = uf[i] @ A[acc].T  # (n_time+1, n_acc)
        out[i] = layout.cell_volume * np.sum(tw[:, None] * resp * h.h[i][:, acc])
    return out


def pair_lambda1_nonlocal_flux(
    u: StateField | np.ndarray,
    h: MeasurementWeight,
    layout: DomainLayout,
    kernel: KernelSpec,
    alpha: np.ndarray | None = None,
    op: DiscreteOperator | None = None,
) -> np.ndarray:
    """Weighted interaction flux over the accessible region (drift-free systems only)."""
    if alpha is not None and np.any(np.asarray(alpha) != 0):
        raise ValueError("the pure flux pairing applies to drift-free systems only")
    if h.region != "accessible":
        raise ValueError("flux pairing needs a weight on the accessible region")
    h.check(layout)
    uf = _field(u)
    op = op or assemble_nonlocal(layout, kernel)
    ext = layout.exterior_index
    tw = time_weights(layout)
    out = np.zeros(uf.shape[0])
    for i in range(uf.shape[0]):
        flux = np.stack([interaction_flux(layout, kernel, uf[i, m], op) for m in range(uf.shape[1])])
        out[i] = layout.cell_volume * np.sum(tw[:, None] * flux * h.h[i][:, ext])
    return out


def pair_lambda2(u: StateField | np.ndarray, h: MeasurementWeight, layout: DomainLayout) -> np.ndarray:
    """Weighted outward normal flux ``int int_Gamma h d_nu u`` with trapezoid in time."""
    if layout.gamma_index.size == 0:
        raise ValueError("Gamma is empty")
    if h.region != "gamma":
        raise ValueError("boundary pairing needs a weight on Gamma")
    h.check(layout)
    uf = _field(u)
    S = inward_normal_stencil(layout)
    gam = layout.gamma_index
    tw = time_weights(layout)
    surface = layout.h ** (layout.dim - 1)
    out = np.zeros(uf.shape[0])
    for i in range(uf.shape[0]):
        dnu = uf[i][:, layout.interior_index] @ S.T
        out[i] = surface * np.sum(tw[:, None] * dnu * h.h[i][:, gam])
    return out


def observe_point(u: StateField | np.ndarray, layout: DomainLayout) -> np.ndarray:
    """Series ``u(x0, t_m)`` for ``m = 1..n_time``, shape ``(M, n_time)``."""
    return _field(u)[:, 1:, layout.obs_point_index].copy()


def point_noise_floor(spec: SystemSpec, source_fn: Callable, layout_fn: Callable, n_time: int) -> float:
    """Discretization floor of the point series: sup difference between ``dt`` and ``dt/2`` runs.

    ``layout_fn(n_time)`` builds a layout and ``source_fn(layout)`` a source.
    """
    coarse = layout_fn(n_time)
    fine = layout_fn(2 * n_time)
    a = observe_point(solve_time_fractional(spec, source_fn(coarse), coarse), coarse)
    b = observe_point(solve_time_fractional(spec, source_fn(fine), fine), fine)[:, 1::2]
    return float(np.max(np.abs(a - b)))


@dataclass
class MeasurementSet:
    """Pairing values per source and species, plus optional point series."""

    values: np.ndarray  # (n_sources, M)
    series: np.ndarray | None = None  # (n_sources, M, n_time)
    times: np.ndarray | None = None
    noise_rel: float = 0.0
    seed: int | None = None
    kind: str = "lambda1"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("measurement values must be finite")

    def to_csv(self, values_path: str | Path, series_path: str | Path | None = None) -> None:
        with open(values_path, "w") as fh:
            fh.write("source_index,species,value\n")
            for n, row in enumerate(self.values):
                for i, v in enumerate(row):
                    fh.write(f"{n},{i},{v:.17g}\n")
        if series_path is not None and self.series is not None:
            with open(series_path, "w") as fh:
                fh.write("source_index,t,species,value\n")
                for n, block in enumerate(self.series):
                    for i, row in enumerate(block):
                        for t, v in zip(self.times, row):
                            fh.write(f"{n},{t:.17g},{i},{v:.17g}\n")


def apply_noise(values: np.ndarray, noise_rel: float, rng: np.random.Generator) -> np.ndarray:
    """Multiplicative relative Gaussian noise."""
    if noise_rel == 0.0:
        return np.array(values, dtype=float)
    return values * (1.0 + noise_rel * rng.standard_normal(np.shape(values)))


def synthesize_data(
    spec: SystemSpec,
    basis: Sequence[SourceTerm] | np.ndarray,
    h: MeasurementWeight | None,
    layout: DomainLayout,
    which: str = "space",
    kind: str = "lambda1",
    noise_rel: float = 0.0,
    seed: int = 0,
    linear: bool = True,
    workers: int = 1,
) -> MeasurementSet:
    """Forward-solve every basis source, pair, and add seeded relative noise.

    ``kind`` is ``'lambda1'`` (exterior response, space system), ``'lambda2'``
    (boundary flux, time system) or ``'lambda3'`` (point series).  With
    ``linear=True`` the interaction is dropped, which is the first-order
    linearized system the recovery procedures consume.
    """
    sources = [b if isinstance(b, SourceTerm) else SourceTerm(b) for b in basis]
    if not sources:
        raise ValueError("basis is empty")
    run_spec = spec.linear_part() if linear else spec
    solver = solve_space_nonlocal if which == "space" else solve_time_fractional
    op = assemble_nonlocal(layout, spec.kernel) if kind == "lambda1" else None

    def one(src: SourceTerm):
        sol = solver(run_spec, src, layout)
        if kind == "lambda1":
            return pair_lambda1(sol, h, layout, spec.kernel, spec.alpha, op), None
        if kind == "lambda2":
            return pair_lambda2(sol, h, layout), None
        if kind == "lambda3":
            return np.zeros(spec.n_species), observe_point(sol, layout)
        raise ValueError(f"unknown measurement kind {kind!r}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, sources))
    else:
        results = [one(s) for s in sources]
    rng = np.random.default_rng(seed)
    values = apply_noise(np.stack([r[0] for r in results]), noise_rel, rng)
    series = None
    if kind == "lambda3":
        series = apply_noise(np.stack([r[1] for r in results]), noise_rel, rng)
    return MeasurementSet(values, series, layout.times[1:], noise_rel, seed, kind)
