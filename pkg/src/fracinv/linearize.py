"""Higher-order linearization of the source-to-solution map around zero.

For sources ``q = sum_l eps_l g_l`` the mixed derivative ``u^(l1..lr)`` of the
solution solves the linear system (interaction dropped) whose source collects
every way of splitting the labels into at least two groups, each group fed by a
lower-order field.  Coefficients of the derivative tensor of ``F`` at zero are
``F_i^k * k!`` and are computed with exact integer factorials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Iterator, Sequence

import numpy as np

from .domain import DomainLayout
from .forward import SourceTerm, StateField, SystemSpec, solve_space_nonlocal, solve_time_fractional

EPS_MAX = 1e-2


@dataclass(frozen=True, eq=False)
class SourceFamily:
    """Member sources ``g_l`` of shape ``(K, M, n_time + 1, n_int)``."""

    g: np.ndarray
    eps_max: float = EPS_MAX

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        if g.ndim != 4:
            raise ValueError("family must have shape (K, M, n_time + 1, n_int)")
        object.__setattr__(self, "g", g)

    @property
    def size(self) -> int:
        return self.g.shape[0]

    def member(self, l: int) -> SourceTerm:
        return SourceTerm(self.g[l])

    def source(self, eps: Sequence[float]) -> SourceTerm:
        eps = np.asarray(eps, dtype=float)
        if eps.shape != (self.size,):
            raise ValueError("need one amplitude per family member")
        if np.max(np.abs(eps)) > self.eps_max:
            raise ValueError(f"amplitudes exceed eps_max={self.eps_max}")
        return SourceTerm(np.tensordot(eps, self.g, axes=1))


@dataclass
class LinearizedBundle:
    """Linearized fields keyed by sorted label tuples; values are full-grid arrays ``(M, n_time+1, n_nodes)``."""

    fields: dict[tuple[int, ...], np.ndarray] = field(default_factory=dict)
    u0: np.ndarray | None = None

    def interior(self, labels: Sequence[int], layout: DomainLayout) -> np.ndarray:
        return self.fields[tuple(sorted(labels))][:, :, layout.interior_index]

    @property
    def orders(self) -> list[int]:
        return sorted({len(k) for k in self.fields})


def solve_linear(spec: SystemSpec, source: SourceTerm, layout: DomainLayout, which: str) -> StateField:
    """Solve the system with its interaction removed."""
    lin = spec.linear_part()
    if which == "space":
        return solve_space_nonlocal(lin, source, layout)
    if which == "time":
        return solve_time_fractional(lin, source, layout)
    raise ValueError(f"unknown system kind {which!r}")


def solve_nonlinear(spec: SystemSpec, source: SourceTerm, layout: DomainLayout, which: str) -> StateField:
    if which == "space":
        return solve_space_nonlocal(spec, source, layout)
    if which == "time":
        return solve_time_fractional(spec, source, layout)
    raise ValueError(f"unknown system kind {which!r}")


def solve_first_order(spec: SystemSpec, g: SourceTerm | np.ndarray, layout: DomainLayout, which: str) -> StateField:
    """First-order field: the linear system driven by ``g``."""
    g = g if isinstance(g, SourceTerm) else SourceTerm(g)
    return solve_linear(spec, g, layout, which)


def set_partitions(items: Sequence) -> Iterator[list[list]]:
    """All partitions of ``items`` into nonempty blocks."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1 :]
        yield [[first]] + part


def _multiset_sequences(kappa: tuple[int, ...]) -> Iterator[tuple[int, ...]]:
    """Distinct orderings of the species multiset with counts ``kappa``."""
    if sum(kappa) == 0:
        yield ()
        return
    for j, k in enumerate(kappa):
        if k:
            rest = kappa[:j] + (k - 1,) + kappa[j + 1 :]
            for tail in _multiset_sequences(rest):
                yield (j,) + tail


def higher_order_source(
    spec: SystemSpec,
    fields: dict[tuple[int, ...], np.ndarray],
    labels: Sequence[int],
) -> np.ndarray:
    """Source of the linear system for the mixed derivative over ``labels``.

    Parameters
    ----------
    spec : SystemSpec
    fields : dict
        Lower-order fields keyed by sorted label tuples, each of shape
        ``(M, ...)`` (any trailing shape, shared by all fields).
    labels : sequence of int
        Derivative labels; repeats are allowed.

    Returns
    -------
    ndarray
        ``(M, ...)`` source values.
    """
    labels = tuple(labels)
    r = len(labels)
    if r > spec.max_order:
        raise ValueError(f"requested degree {r} exceeds max_order={spec.max_order}")
    if r < 2:
        raise ValueError("higher-order sources start at degree 2")
    shape = next(iter(fields.values())).shape if fields else None
    out = None
    for part in set_partitions(range(r)):
        k = len(part)
        if k < 2:
            continue
        block_fields = []
        for block in part:
            key = tuple(sorted(labels[b] for b in block))
            if key not in fields:
                raise KeyError(f"missing lower-order field for labels {key}")
            block_fields.append(fields[key])
        for i, terms in spec.interaction.items():
            for kappa, coef in terms.items():
                if sum(kappa) != k or coef == 0.0:
                    continue
                fact = math.prod(math.factorial(c) for c in kappa)
                acc = 0.0
                for seq in _multiset_sequences(kappa):
                    prod = 1.0
                    for j, fb in zip(seq, block_fields):
                        prod = prod * fb[j]
                    acc = acc + prod
                term = coef * fact * acc
                if spec.interaction_tilt is not None:
                    tilt = spec.interaction_tilt
                    term = term * np.exp(np.tensordot(np.asarray(kappa, float), tilt, axes=1) - tilt[i])
                if out is None:
                    out = np.zeros(shape)
                out[i] = out[i] + term
    return np.zeros(shape) if out is None else out


def solve_order(
    spec: SystemSpec,
    bundle: LinearizedBundle,
    labels: Sequence[int],
    layout: DomainLayout,
    which: str,
) -> np.ndarray:
    """Solve for the mixed field over ``labels`` (degree >= 2) and store it in ``bundle``."""
    interior = {k: v[:, :, layout.interior_index] for k, v in bundle.fields.items() if len(k) < len(labels)}
    src = higher_order_source(spec, interior, labels)
    sol = solve_linear(spec, SourceTerm(src), layout, which)
    bundle.fields[tuple(sorted(labels))] = sol.u
    return sol.u


def solve_second_order(
    spec: SystemSpec,
    u1: StateField | np.ndarray,
    u2: StateField | np.ndarray,
    layout: DomainLayout,
    which: str,
) -> StateField:
    """Second-order mixed field from two first-order fields."""
    if u1 is None or u2 is None:
        raise ValueError("second-order solve needs both first-order fields")
    I = layout.interior_index
    a = u1.u if isinstance(u1, StateField) else np.asarray(u1)
    b = u2.u if isinstance(u2, StateField) else np.asarray(u2)
    src = higher_order_source(spec, {(0,): a[:, :, I], (1,): b[:, :, I]}, (0, 1))
    return solve_linear(spec, SourceTerm(src), layout, which)


def linearize(
    spec: SystemSpec,
    family: SourceFamily,
    layout: DomainLayout,
    which: str,
    order: int = 2,
) -> LinearizedBundle:
    """All mixed fields up to ``order`` over label multisets of the family."""
    if order > spec.max_order:
        raise ValueError(f"order {order} exceeds max_order={spec.max_order}")
    bundle = LinearizedBundle(u0=np.zeros((spec.n_species, layout.n_time + 1, layout.n_nodes)))
    for l in range(family.size):
        bundle.fields[(l,)] = solve_first_order(spec, family.member(l), layout, which).u
    for r in range(2, order + 1):
        for labels in combinations_with_replacement(range(family.size), r):
            solve_order(spec, bundle, labels, layout, which)
    return bundle


def fd_first_order(spec, family: SourceFamily, l: int, eps: float, layout, which) -> np.ndarray:
    """Forward difference ``u(eps e_l) / eps`` of the nonlinear solution."""
    amps = np.zeros(family.size)
    amps[l] = eps
    return solve_nonlinear(spec, family.source(amps), layout, which).u / eps


def fd_second_order(spec, family: SourceFamily, l1: int, l2: int, eps: float, layout, which) -> np.ndarray:
    """Mixed difference ``[u(e1, e2) - u(e1, 0) - u(0, e2)] / (e1 e2)`` with ``e1 = e2 = eps``."""
    if l1 == l2:
        raise ValueError("mixed difference needs two distinct members")

    def run(a1, a2):
        amps = np.zeros(family.size)
        amps[l1], amps[l2] = a1, a2
        return solve_nonlinear(spec, family.source(amps), layout, which).u

    return (run(eps, eps) - run(eps, 0.0) - run(0.0, eps)) / eps**2


def observed_slope(eps: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of ``log(error)`` against ``log(eps)``."""
    return float(np.polyfit(np.log(eps), np.log(errors), 1)[0])
