"""Recovery of interaction Taylor coefficients from higher-order linearized data.

The degree-``l`` mixed field solves the linear system with a source that is
linear in the degree-``l`` coefficients once all lower-degree coefficients are
known.  Pairing that source with the adjoint field turns every datum into one
linear equation, so the coefficients follow degree by degree from small
least-squares problems.
"""

from __future__ import annotations

from itertools import combinations, combinations_with_replacement

import numpy as np

from ..domain import DomainLayout
from ..forward import SystemSpec
from ..linearize import LinearizedBundle, SourceFamily, higher_order_source, solve_first_order, solve_order
from ..measure import MeasurementWeight, pair_lambda1, pair_lambda2
from .adjoint import pair_source_adjoint, solve_adjoint_space, solve_adjoint_time
from .report import ReconstructionReport

RANK_TOL = 1e-10


class UnresolvedCoefficientsError(ValueError):
    """Raised when the coefficient matrix of some degree is rank deficient."""

    def __init__(self, degree: int, species: int, multi_indices: list[tuple[int, ...]]):
        super().__init__(f"degree {degree}, species {species}: coefficients {multi_indices} are not resolved by the data")
        self.degree = degree
        self.species = species
        self.multi_indices = multi_indices


def admissible_indices(n_species: int, species: int, degree: int) -> list[tuple[int, ...]]:
    """All multi-indices of total ``degree`` with a factor of ``species``."""
    out = []
    for combo in combinations_with_replacement(range(n_species), degree):
        kappa = tuple(combo.count(j) for j in range(n_species))
        if kappa[species] >= 1:
            out.append(kappa)
    return sorted(out, reverse=True)


def default_label_sets(n_sources: int, max_degree: int) -> list[tuple[int, ...]]:
    """Distinct pairs for degree 2 and all multisets for degree 3 and above."""
    sets = list(combinations(range(n_sources), 2))
    for r in range(3, max_degree + 1):
        sets += list(combinations_with_replacement(range(n_sources), r))
    return sets


def pair_field(u: np.ndarray, h: MeasurementWeight, layout: DomainLayout, spec: SystemSpec, which: str) -> np.ndarray:
    """Measurement of a linearized field (exterior response or boundary flux)."""
    if which == "space":
        return pair_lambda1(u, h, layout, spec.kernel, spec.alpha)
    return pair_lambda2(u, h, layout)


def _adjoint(spec: SystemSpec, h: MeasurementWeight, layout: DomainLayout, which: str):
    if which == "space":
        return solve_adjoint_space(spec.potential_at(layout), h, layout, spec.kernel, spec.alpha)
    return solve_adjoint_time(spec.potential_at(layout), h, layout, spec.frac, spec.d, spec.alpha)


def synthesize_interaction_data(
    spec: SystemSpec,
    family: SourceFamily,
    h: MeasurementWeight,
    layout: DomainLayout,
    which: str,
    label_sets: list[tuple[int, ...]] | None = None,
    max_degree: int | None = None,
) -> dict[tuple[int, ...], np.ndarray]:
    """Pairings of the higher-order linearized fields generated by the true system."""
    max_degree = max_degree or spec.max_order
    label_sets = label_sets or default_label_sets(family.size, max_degree)
    bundle = LinearizedBundle()
    for l in range(family.size):
        bundle.fields[(l,)] = solve_first_order(spec, family.member(l), layout, which).u
    out = {}
    for labels in sorted(label_sets, key=len):
        _ensure_fields(spec, bundle, labels, layout, which)
        out[tuple(labels)] = pair_field(bundle.fields[tuple(sorted(labels))], h, layout, spec, which)
    return out


def _ensure_fields(spec, bundle, labels, layout, which, upto: int | None = None) -> None:
    """Solve for every sub-multiset of ``labels`` (sizes 2 .. ``upto``) not yet in ``bundle``."""
    labels = tuple(sorted(labels))
    upto = len(labels) if upto is None else upto
    for r in range(2, upto + 1):
        for sub in set(combinations(labels, r)):
            if sub not in bundle.fields:
                solve_order(spec, bundle, sub, layout, which)


def recover_interaction(
    spec: SystemSpec,
    data: dict[tuple[int, ...], np.ndarray],
    family: SourceFamily,
    h: MeasurementWeight,
    layout: DomainLayout,
    which: str,
    max_degree: int | None = None,
    known: dict[int, dict[tuple, float]] | None = None,
    truth: dict[int, dict[tuple, float]] | None = None,
) -> ReconstructionReport:
    """Recover interaction coefficients degree by degree.

    Parameters
    ----------
    spec : SystemSpec
        System with the potential (and kernel or fractional orders) known; its
        own interaction entries are ignored.
    data : dict
        ``{labels: pairing per species}`` for label multisets of size >= 2.
    known : dict, optional
        Coefficients fixed in advance; they are not solved for.
    truth : dict, optional
        True coefficients for error reporting.

    Returns
    -------
    ReconstructionReport
        ``fields['coefficients']`` lists values in the order of
        ``meta['multi_indices']`` (pairs of species and multi-index).
    """
    M = spec.n_species
    max_degree = max_degree or max(len(k) for k in data)
    if max_degree > spec.max_order:
        raise ValueError(f"degree {max_degree} exceeds max_order={spec.max_order}")
    known = {int(i): {tuple(k): float(c) for k, c in t.items()} for i, t in (known or {}).items()}
    recovered: dict[int, dict[tuple, float]] = {i: dict(known.get(i, {})) for i in range(M)}
    adj = _adjoint(spec, h, layout, which)
    I = layout.interior_index
    bundle = LinearizedBundle()
    for l in range(family.size):
        bundle.fields[(l,)] = solve_first_order(spec, family.member(l), layout, which).u
    residuals = {}
    for degree in range(2, max_degree + 1):
        sets = [tuple(sorted(k)) for k in data if len(k) == degree]
        if not sets:
            continue
        # lower-degree coefficients are final here; known degree-l ones enter the fixed part
        work = SystemSpec(
            M, spec.potential, interaction=recovered, alpha=spec.alpha, d=spec.d, kernel=spec.kernel,
            frac=spec.frac, max_order=spec.max_order, allow_positive_potential=True,
        )
        interior = {}
        for labels in sets:
            _ensure_fields(work, bundle, labels, layout, which, upto=degree - 1)
        interior = {k: v[:, :, I] for k, v in bundle.fields.items()}
        for i in range(M):
            unknown = [k for k in admissible_indices(M, i, degree) if k not in known.get(i, {})]
            if not unknown:
                continue
            rows, rhs = [], []
            for labels in sets:
                fixed = higher_order_source(work, interior, labels)
                fixed_pair = pair_source_adjoint(fixed, adj, layout, rule="exact")[i]
                row = []
                for kappa in unknown:
                    unit = SystemSpec(M, np.zeros((M, 1)), interaction={i: {kappa: 1.0}}, max_order=spec.max_order)
                    T = higher_order_source(unit, interior, labels)
                    row.append(-pair_source_adjoint(T, adj, layout, rule="exact")[i])
                rows.append(row)
                rhs.append(data[labels][i] + fixed_pair)
            A = np.array(rows)
            b = np.array(rhs)
            _check_rank(A, unknown, degree, i)
            coef, *_ = np.linalg.lstsq(A, b, rcond=None)
            residuals[f"degree{degree}_species{i}"] = float(np.linalg.norm(A @ coef - b))
            for kappa, c in zip(unknown, coef):
                recovered[i][kappa] = float(c)
        # fields of this degree depend on the new coefficients; rebuild lazily next round
        bundle.fields = {k: v for k, v in bundle.fields.items() if len(k) < degree}
    keys = [(i, k) for i in range(M) for k in sorted(recovered[i], key=lambda k: (sum(k), k))]
    values = np.array([recovered[i][k] for i, k in keys])
    report = ReconstructionReport(
        fields={"coefficients": values},
        residuals=residuals,
        meta={"multi_indices": [[i, list(k)] for i, k in keys], "label_sets": [list(k) for k in data], "recovered": recovered},
    )
    if truth is not None:
        errs = [abs(recovered[i][k] - truth.get(i, {}).get(k, 0.0)) for i, k in keys]
        report.errors["max_abs"] = float(max(errs)) if errs else 0.0
        for degree in range(2, max_degree + 1):
            e = [abs(recovered[i][k] - truth.get(i, {}).get(k, 0.0)) for i, k in keys if sum(k) == degree]
            if e:
                report.errors[f"max_abs_degree{degree}"] = float(max(e))
    return report


def _check_rank(A: np.ndarray, unknown: list, degree: int, species: int) -> None:
    if A.shape[0] == 0:
        raise UnresolvedCoefficientsError(degree, species, unknown)
    u, s, vt = np.linalg.svd(A)
    tol = RANK_TOL * (s[0] if s.size and s[0] > 0 else 1.0)
    rank = int(np.sum(s > tol))
    if rank < len(unknown):
        null = vt[rank:]
        involved = np.max(np.abs(null), axis=0) > 1e-8
        raise UnresolvedCoefficientsError(degree, species, [k for k, f in zip(unknown, involved) if f])


def recover_single_coefficient(
    spec: SystemSpec,
    datum: np.ndarray,
    labels: tuple[int, ...],
    species: int,
    kappa: tuple[int, ...],
    family: SourceFamily,
    h: MeasurementWeight,
    layout: DomainLayout,
    which: str,
) -> float:
    """Closed-form ratio for one unknown coefficient, all others taken from ``spec``."""
    known = {i: {k: c for k, c in t.items() if not (i == species and k == kappa)} for i, t in spec.interaction.items()}
    rep = recover_interaction(spec, {tuple(labels): datum}, family, h, layout, which, max_degree=len(labels), known=_complete_known(spec, known, species, kappa, len(labels)))
    return rep.meta["recovered"][species][kappa]


def _complete_known(spec, known, species, kappa, degree):
    """Mark every admissible index up to ``degree`` as known (zero unless given), except the target."""
    out = {i: dict(known.get(i, {})) for i in range(spec.n_species)}
    for r in range(2, degree + 1):
        for i in range(spec.n_species):
            for k in admissible_indices(spec.n_species, i, r):
                if not (i == species and k == kappa):
                    out[i].setdefault(k, 0.0)
    return out
