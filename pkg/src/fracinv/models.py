"""Preset application systems: linear reaction parts go to the potential, the rest to the interaction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import DomainLayout
from .forward import SystemSpec
from .fractime import FracOrderSpec
from .nonlocal_op import KernelSpec

PRESETS = ("sir_nonlocal", "viscoelastic_cell", "tumor_proliferation", "gray_scott", "schnakenberg")


@dataclass(frozen=True)
class PresetId:
    """Preset name plus its parameter record."""

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in PRESETS:
            raise ValueError(f"unknown preset {self.name!r}; choose from {', '.join(PRESETS)}")


def _positive(params: dict, *names: str) -> None:
    for n in names:
        if n in params and not params[n] > 0:
            raise ValueError(f"preset parameter {n} must be positive")


def _const(layout: DomainLayout, values) -> np.ndarray:
    return np.asarray(values, dtype=float)[:, None] * np.ones((1, layout.n_int))


def build_preset(preset: PresetId | str, layout: DomainLayout, M: int | None = None, allow_positive: bool = False, **params) -> SystemSpec:
    """Build the :class:`SystemSpec` of a preset.

    Parameters (defaults in brackets)
    ---------------------------------
    sir_nonlocal : beta [0.5] incidence, mu [0.1] death, gamma [0.2] recovery,
        kernel_s [0.5], kernel_c [1.0]; three species S, I, R.
    viscoelastic_cell : G [1.0] per species, kernel_s [0.5], kernel_c [1.0], M [1].
    tumor_proliferation : rho [-0.5] net proliferation (must be <= 0 unless
        ``allow_positive``), kappa [1.0], d [1.0], beta [0.5]; one species.
    gray_scott : gamma [0.04], c [0.06], m [1.0], d [(1, 0.5)], beta [0.5].
    schnakenberg : gamma [1.0], c [0.5], d [(1, 1)], beta [0.5].
    """
    if isinstance(preset, str):
        preset = PresetId(preset, params)
    else:
        params = {**preset.params, **params}
    name = preset.name
    warnings: tuple[str, ...] = ()
    if name == "sir_nonlocal":
        beta, mu, gamma = params.get("beta", 0.5), params.get("mu", 0.1), params.get("gamma", 0.2)
        _positive(params, "mu", "gamma", "kernel_c")
        if beta < 0:
            raise ValueError("incidence rate must be nonnegative")
        kernel = KernelSpec(((params.get("kernel_s", 0.5), params.get("kernel_c", 1.0)),))
        # R gains gamma * I, a cross-linear term outside the admissible class; it is omitted
        inter = {0: {(1, 1, 0): -beta}, 1: {(1, 1, 0): beta}, 2: {}}
        return SystemSpec(3, _const(layout, [-mu, -(mu + gamma), -mu]), interaction=inter, kernel=kernel, max_order=2,
                          warnings=("recovery gain gamma*I in the R equation is not represented",))
    if name == "viscoelastic_cell":
        M = M or int(params.get("M", 1))
        G = np.broadcast_to(np.asarray(params.get("G", 1.0), dtype=float), (M,))
        if np.any(G <= 0):
            raise ValueError("preset parameter G must be positive")
        kernel = KernelSpec(((params.get("kernel_s", 0.5), params.get("kernel_c", 1.0)),))
        return SystemSpec(M, _const(layout, -G), kernel=kernel)
    if name == "tumor_proliferation":
        rho, kappa = params.get("rho", -0.5), params.get("kappa", 1.0)
        _positive(params, "kappa", "d")
        if rho > 0:
            if not allow_positive:
                raise ValueError("tumor preset with rho > 0 violates p <= 0; pass allow_positive=True to build anyway")
            warnings = ("rho > 0: nonpositive-potential hypothesis violated",)
        return SystemSpec(
            1, _const(layout, [rho]), interaction={0: {(2,): -rho * kappa}}, d=[params.get("d", 1.0)],
            frac=FracOrderSpec.single(params.get("beta", 0.5)), allow_positive_potential=allow_positive, warnings=warnings,
        )
    if name == "gray_scott":
        gamma, c, m = params.get("gamma", 0.04), params.get("c", 0.06), params.get("m", 1.0)
        _positive(params, "gamma", "c", "m")
        return SystemSpec(
            2, _const(layout, [-gamma, -(gamma + c)]), interaction={0: {(1, 2): -m}, 1: {(1, 2): m}},
            d=params.get("d", (1.0, 0.5)), frac=FracOrderSpec.single(params.get("beta", 0.5), 2),
        )
    # schnakenberg
    gamma, c = params.get("gamma", 1.0), params.get("c", 0.5)
    _positive(params, "gamma", "c")
    return SystemSpec(
        2, _const(layout, [-c, 0.0]), interaction={0: {(2, 1): gamma}, 1: {(2, 1): -gamma}},
        d=params.get("d", (1.0, 1.0)), frac=FracOrderSpec.single(params.get("beta", 0.5), 2),
    )
