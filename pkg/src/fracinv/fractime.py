"""Multi-term Caputo derivatives by the L1 scheme, and a numeric Laplace transform."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import gamma as gamma_fn


@dataclass(frozen=True)
class FracOrderSpec:
    """Per-species list of ``(beta, b)`` pairs defining sum_j b_j D^beta_j."""

    terms: tuple[tuple[tuple[float, float], ...], ...]

    def __post_init__(self):
        terms = tuple(tuple((float(beta), float(b)) for beta, b in species) for species in self.terms)
        object.__setattr__(self, "terms", terms)
        for species in terms:
            if not species:
                raise ValueError("each species needs at least one fractional term")
            orders = [beta for beta, _ in species]
            if any(not 0.0 < beta < 1.0 for beta in orders):
                raise ValueError("fractional orders must lie in (0, 1)")
            if any(b2 <= b1 for b1, b2 in zip(orders, orders[1:])):
                raise ValueError("fractional orders must be strictly increasing")
            if any(b <= 0.0 for _, b in species):
                raise ValueError("fractional weights must be positive")

    @classmethod
    def single(cls, beta: float, n_species: int = 1, weight: float = 1.0) -> "FracOrderSpec":
        return cls(tuple(((beta, weight),) for _ in range(n_species)))

    @property
    def n_species(self) -> int:
        return len(self.terms)

    def orders(self, species: int) -> np.ndarray:
        return np.array([beta for beta, _ in self.terms[species]])

    def weights(self, species: int) -> np.ndarray:
        return np.array([b for _, b in self.terms[species]])

    def symbol(self, species: int, s):
        """Laplace symbol ``sum_j b_j s^beta_j``."""
        s = np.asarray(s, dtype=float)
        return sum(b * s**beta for beta, b in self.terms[species])


@dataclass(frozen=True, eq=False)
class CaputoTable:
    """Dense L1 table acting on a series ``v_0..v_N`` sampled at ``k * dt``.

    ``side='left'`` is lower triangular (row m uses ``v_0..v_m``);
    ``side='right'`` is its time mirror (row m uses ``v_m..v_N``).
    """

    matrix: np.ndarray
    dt: float
    beta: float | None
    side: str

    @property
    def n_time(self) -> int:
        return self.matrix.shape[0] - 1

    def apply(self, series: np.ndarray) -> np.ndarray:
        """Apply along the first axis; shorter series use the leading block."""
        series = np.asarray(series, dtype=float)
        n = series.shape[0]
        if n > self.matrix.shape[0]:
            raise ValueError("series longer than the table")
        if self.side == "left":
            return self.matrix[:n, :n] @ series
        return self.matrix[-n:, -n:] @ series

    def __add__(self, other: "CaputoTable") -> "CaputoTable":
        return CaputoTable(self.matrix + other.matrix, self.dt, None, self.side)

    def scaled(self, factor: float) -> "CaputoTable":
        return CaputoTable(factor * self.matrix, self.dt, self.beta, self.side)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.matrix, delimiter=",", fmt="%.17g")


def l1_weights(beta: float, dt: float, n: int) -> np.ndarray:
    """``w_k = ((k+1)^(1-beta) - k^(1-beta)) dt^-beta / Gamma(2-beta)``, k < n."""
    _check_order(beta)
    k = np.arange(n, dtype=float)
    return ((k + 1) ** (1 - beta) - k ** (1 - beta)) * dt ** (-beta) / gamma_fn(2 - beta)


def _check_order(beta: float) -> None:
    if not 0.0 < beta < 1.0:
        raise ValueError(f"fractional order {beta} outside (0, 1)")


def build_l1_table(beta: float, dt: float, n_time: int) -> CaputoTable:
    """L1 table: row m gives ``sum_k w_k (v_{m-k} - v_{m-k-1})`` at ``t_m``."""
    _check_order(beta)
    if n_time < 1:
        raise ValueError("n_time must be at least 1")
    w = l1_weights(beta, dt, n_time)
    # coefficient of v_{m-j}: w_0 for j=0, w_j - w_{j-1} for 0<j<m, -w_{m-1} for j=m
    diffs = np.empty(n_time + 1)
    diffs[0] = w[0]
    diffs[1:n_time] = w[1:] - w[:-1]
    mat = np.zeros((n_time + 1, n_time + 1))
    for m in range(1, n_time + 1):
        mat[m, m : 0 : -1] = diffs[:m]
        mat[m, 0] = -w[m - 1]
    return CaputoTable(mat, dt, beta, "left")


def build_right_table(beta: float, dt: float, n_time: int) -> CaputoTable:
    """Right (backward-in-time) L1 table, the time mirror of the left table.

    With ``u_0 = 0`` and ``w_N = 0`` it is the exact adjoint of the left table
    under the plain (or trapezoidal) time pairing.
    """
    left = build_l1_table(beta, dt, n_time)
    return CaputoTable(left.matrix[::-1, ::-1].copy(), dt, beta, "right")


def multiterm_table(spec: FracOrderSpec, species: int, dt: float, n_time: int, side: str = "left") -> CaputoTable:
    """b-weighted sum of L1 tables for one species."""
    if not 0 <= species < spec.n_species:
        raise IndexError(f"species index {species} out of range")
    build = build_l1_table if side == "left" else build_right_table
    mat = sum(b * build(beta, dt, n_time).matrix for beta, b in spec.terms[species])
    return CaputoTable(mat, dt, None, side)


def apply_multiterm(spec: FracOrderSpec, species: int, series: np.ndarray, dt: float) -> np.ndarray:
    """Apply ``sum_j b_j D^beta_j`` (left, L1) to a series starting at t = 0."""
    series = np.asarray(series, dtype=float)
    n = series.shape[0] - 1
    if n < 1:
        return np.zeros_like(series)
    return multiterm_table(spec, species, dt, n).apply(series)


def caputo_monomial(power: float, beta: float, t):
    """Closed form ``D^beta t^power = Gamma(power+1)/Gamma(power+1-beta) t^(power-beta)``."""
    return gamma_fn(power + 1) / gamma_fn(power + 1 - beta) * np.asarray(t, dtype=float) ** (power - beta)


def laplace_numeric(series: Sequence[float], dt: float, s: float) -> float:
    """Laplace transform of samples ``v(k dt)``, k = 0..N.

    Trapezoidal quadrature on ``[0, T]`` plus the exact transform of an
    exponential ``v(T) exp(-k (t - T))`` fitted by log-linear least squares to
    the last quarter of the series.  The tail is skipped when the last quarter
    changes sign or the fitted decay does not make the tail integrable.
    """
    if s <= 0:
        raise ValueError("Laplace variable s must be positive")
    v = np.asarray(series, dtype=float)
    if v.size < 8:
        raise ValueError("series needs at least 8 samples for the tail fit")
    t = dt * np.arange(v.size)
    body = float(trapezoid(np.exp(-s * t) * v, t))
    q = v[-(v.size // 4) :]
    tq = t[-(v.size // 4) :]
    if np.all(q > 0) or np.all(q < 0):
        slope = np.polyfit(tq, np.log(np.abs(q)), 1)[0]
        rate = s - slope
        if rate > 0:
            return body + float(v[-1] * np.exp(-s * t[-1]) / rate)
    return body
