"""Twin-experiment drivers shared by the acceptance tests, the verify suite and the CLI.

Every driver returns an :class:`Outcome` with the measured quantities, the
threshold it is judged against and a pass flag.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domain import DomainLayout, build_layout
from .forward import SourceTerm, SystemSpec, solve_space_nonlocal, solve_time_fractional
from .fractime import FracOrderSpec, apply_multiterm, build_l1_table, caputo_monomial
from .inverse.adjoint import pair_source_adjoint, solve_adjoint_space, solve_adjoint_time
from .inverse.interaction import recover_interaction, synthesize_interaction_data
from .inverse.orders import OrderProbeSpec, compare_candidates, order_discrimination_diagnostic, recover_orders
from .inverse.potential import (
    backward_difference,
    hat_basis,
    recover_potential_space,
    recover_potential_time,
    recover_potential_time_separable,
    spacetime_hat_basis,
)
from .linearize import SourceFamily, fd_first_order, fd_second_order, linearize, observed_slope
from .inverse.interaction import admissible_indices
from .measure import MeasurementWeight, observe_point, pair_lambda1, pair_lambda2, point_noise_floor, synthesize_data
from .models import build_preset
from .nonlocal_op import KernelSpec, assemble_nonlocal, green_identity_residual


@dataclass
class Outcome:
    name: str
    passed: bool
    values: dict = field(default_factory=dict)
    threshold: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.values.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {shown} (need {self.threshold}; {self.seconds:.2f} s)"


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _timed(fn: Callable[[], Outcome]) -> Outcome:
    t0 = time.perf_counter()
    out = fn()
    out.seconds = time.perf_counter() - t0
    return out


def bump_on_collar(layout: DomainLayout) -> Callable:
    """Spatial weight profile on the right collar vanishing at both of its ends."""
    width = layout.collar_width

    def profile(X):
        z = np.clip((X[:, 0] - 1.0) / width, 0.0, 1.0)
        return np.sin(np.pi * z) ** 2

    return profile


# --- 1. Green identity -----------------------------------------------------


def green_identity(n_pairs: int = 20, n: int = 32, seed: int = 0, tol: float = 1e-10) -> Outcome:
    def run():
        layout = build_layout(1, n)
        kernel = KernelSpec(((0.3, 1.0), (0.7, 1.0)))
        op = assemble_nonlocal(layout, kernel)
        rng = np.random.default_rng(seed)
        res = []
        for _ in range(n_pairs):
            u = rng.standard_normal(layout.n_nodes)
            v = rng.standard_normal(layout.n_nodes)
            res.append(green_identity_residual(layout, kernel, u, v, op))
        worst = float(max(res))
        return Outcome("green identity", worst <= tol, {"max_residual": worst}, f"<= {tol:g}, < 1 s")

    out = _timed(run)
    out.passed = out.passed and out.seconds < 1.0
    return out


# --- 2. L1 order -----------------------------------------------------------


def caputo_order(betas=(0.3, 0.5, 0.8), n_steps=(64, 128, 256), slack: float = 0.2) -> Outcome:
    def run():
        orders = {}
        ok = True
        for beta in betas:
            errs = []
            for N in n_steps:
                t = np.linspace(0.0, 1.0, N + 1)
                approx = build_l1_table(beta, 1.0 / N, N).apply(t**2)[-1]
                errs.append(abs(approx - caputo_monomial(2.0, beta, 1.0)))
            rates = [float(np.log2(a / b)) for a, b in zip(errs, errs[1:])]
            orders[f"beta={beta}"] = rates
            ok = ok and min(rates) >= (2 - beta) - slack
        return Outcome("caputo L1 order", ok, orders, ">= (2 - beta) - 0.2")

    return _timed(run)


# --- 3. maximum principle --------------------------------------------------


def random_admissible_interaction(rng: np.random.Generator, n_species: int, max_degree: int = 3, scale: float = 0.5) -> dict:
    """One to three random admissible monomials per species with coefficients in ``[-scale, scale]``."""
    out = {}
    for i in range(n_species):
        pool = [k for r in range(2, max_degree + 1) for k in admissible_indices(n_species, i, r)]
        picks = rng.choice(len(pool), size=rng.integers(1, 4), replace=False)
        out[i] = {pool[j]: float(rng.uniform(-scale, scale)) for j in picks}
    return out


def random_instance(layout: DomainLayout, rng: np.random.Generator, n_species: int = 2):
    p = -rng.uniform(0.0, 2.0, (n_species, layout.n_int))
    inter = random_admissible_interaction(rng, n_species, max_degree=3, scale=0.5)
    kernel = KernelSpec(tuple(sorted(((float(s), float(c)) for s, c in zip(rng.uniform(0.1, 0.9, 2), rng.uniform(0.2, 2.0, 2))))))
    orders = tuple(tuple(sorted(((float(b), float(w)) for b, w in zip(rng.uniform(0.1, 0.9, 2), rng.uniform(0.2, 2.0, 2))))) for _ in range(n_species))
    spec = SystemSpec(
        n_species, p, interaction=inter, kernel=kernel, alpha=rng.normal(size=(n_species, layout.dim)),
        d=rng.uniform(0.2, 2.0, n_species), frac=FracOrderSpec(orders),
    )
    q = SourceTerm(rng.uniform(0.0, 1.0, (n_species, layout.n_time + 1, layout.n_int)))
    return spec, q


def maximum_principle(n_instances: int = 200, n: int = 32, n_time: int = 128, seed: int = 0, tol: float = 1e-12, budget: float = 60.0) -> Outcome:
    def run():
        layout = build_layout(1, n, n_time=n_time)
        rng = np.random.default_rng(seed)
        worst = {"space": 0.0, "time": 0.0}
        for _ in range(n_instances):
            spec, q = random_instance(layout, rng)
            worst["space"] = min(worst["space"], solve_space_nonlocal(spec, q, layout).min_value())
            worst["time"] = min(worst["time"], solve_time_fractional(spec, q, layout).min_value())
        ok = min(worst.values()) >= -tol
        return Outcome("maximum principle", ok, {"min_space": worst["space"], "min_time": worst["time"], "instances": n_instances}, f"min u >= -{tol:g}, < {budget:g} s")

    out = _timed(run)
    out.passed = out.passed and out.seconds < budget
    return out


# --- 4. linearization ------------------------------------------------------


def linearization_setup(n: int = 32, n_time: int = 64):
    layout = build_layout(1, n, n_time=n_time)
    x = layout.interior_coords()[:, 0]
    t = layout.times
    spec = SystemSpec(
        2, -0.5 * np.ones((2, layout.n_int)),
        interaction={0: {(2, 0): 1.0, (1, 1): -0.7, (1, 2): -0.3}, 1: {(1, 1): 0.8, (0, 2): 0.5}},
        kernel=KernelSpec(((0.5, 1.0),)), d=[1.0, 0.5], frac=FracOrderSpec.single(0.5, 2),
    )
    g = np.zeros((2, 2, n_time + 1, layout.n_int))
    g[0, 0] = 10 * np.outer(t, np.sin(np.pi * x))
    g[0, 1] = 5 * np.outer(t, np.ones_like(x))
    g[1, 1] = 10 * np.outer(np.ones_like(t), 4 * x * (1 - x))
    return layout, spec, SourceFamily(g)


def linearization(eps=(1e-2, 5e-3, 2.5e-3), target: float = 1.0, slack: float = 0.2) -> Outcome:
    def run():
        layout, spec, fam = linearization_setup()
        slopes = {}
        for which in ("space", "time"):
            b = linearize(spec, fam, layout, which, order=2)
            e1 = [np.abs(fd_first_order(spec, fam, 0, e, layout, which) - b.fields[(0,)]).max() for e in eps]
            e2 = [np.abs(fd_second_order(spec, fam, 0, 1, e, layout, which) - b.fields[(0, 1)]).max() for e in eps]
            slopes[f"{which}_first"] = observed_slope(eps, e1)
            slopes[f"{which}_second"] = observed_slope(eps, e2)
        ok = all(abs(s - target) <= slack for s in slopes.values())
        return Outcome("linearization consistency", ok, slopes, "slope 1.0 +- 0.2")

    return _timed(run)


# --- 5. duality ------------------------------------------------------------


def _smooth_random_source(rng: np.random.Generator):
    a = rng.uniform(0.5, 1.5, 3)
    c = rng.uniform(0.2, 1.0, 2)

    def q(t, x):
        space = a[0] * np.sin(np.pi * x) + a[1] * x * (1 - x) + a[2] * x
        return np.outer(1.0 + c[0] * t + c[1] * t**2, space)

    return q


def duality_levels(levels=(16, 32, 64), seed: int = 0) -> dict:
    """Residuals of both duality relations with trapezoid pairings on refined grids."""
    qfn = _smooth_random_source(np.random.default_rng(seed))
    kernel = KernelSpec(((0.5, 1.0),))
    out = {"lambda1": [], "lambda2": [], "lambda1_exact": [], "lambda2_exact": []}
    for n in levels:
        layout = build_layout(1, n, n_time=2 * n)
        x = layout.interior_coords()[:, 0]
        q = SourceTerm(qfn(layout.times, x)[None])
        # space-nonlocal system with drift
        p = -(1 + x)[None] / 2
        spec = SystemSpec(1, p, kernel=kernel, alpha=[[0.5]])
        u = solve_space_nonlocal(spec, q, layout)
        h1 = MeasurementWeight.build(layout, 1, "accessible", space_profile=bump_on_collar(layout))
        adj = solve_adjoint_space(p, h1, layout, kernel, spec.alpha)
        lam1 = pair_lambda1(u, h1, layout, kernel, spec.alpha)[0]
        out["lambda1"].append(abs(lam1 + pair_source_adjoint(q.q, adj, layout)[0]))
        out["lambda1_exact"].append(abs(lam1 + pair_source_adjoint(q.q, adj, layout, "exact")[0]))
        # time-fractional system
        pt = -(x * (1 - x))[None]
        tspec = SystemSpec(1, pt, frac=FracOrderSpec(((( 0.3, 1.0), (0.7, 0.5)),)))
        ut = solve_time_fractional(tspec, q, layout)
        h2 = MeasurementWeight.build(layout, 1, "gamma")
        adj2 = solve_adjoint_time(pt, h2, layout, tspec.frac)
        lam2 = pair_lambda2(ut, h2, layout)[0]
        out["lambda2"].append(abs(lam2 + pair_source_adjoint(q.q, adj2, layout)[0]))
        out["lambda2_exact"].append(abs(lam2 + pair_source_adjoint(q.q, adj2, layout, "exact")[0]))
    return out


def fitted_order(levels, residuals) -> float:
    """Observed order of a residual sequence against ``h = 1/(n+1)``."""
    hs = 1.0 / (np.asarray(levels, dtype=float) + 1.0)
    return float(np.polyfit(np.log(hs), np.log(residuals), 1)[0])


def duality(levels=(16, 32, 64), min_order: float = 1.0) -> Outcome:
    def run():
        r = duality_levels(levels)
        o1 = fitted_order(levels, r["lambda1"])
        o2 = fitted_order(levels, r["lambda2"])
        vals = {
            "order_lambda1": o1, "order_lambda2": o2,
            "res_lambda1": r["lambda1"], "res_lambda2": r["lambda2"],
            "exact_rule_lambda1": max(r["lambda1_exact"]), "exact_rule_lambda2": max(r["lambda2_exact"]),
        }
        return Outcome("duality identities", min(o1, o2) >= min_order, vals, f"observed order >= {min_order:g}")

    return _timed(run)


# --- 6. space potential ----------------------------------------------------

POTENTIAL_KERNEL = KernelSpec(((0.5, 0.1),))


def space_potential_setup(n: int = 32, n_time: int = 64):
    layout = build_layout(1, n, n_time=n_time)
    x = layout.interior_coords()[:, 0]
    truth = -(1 + x) / 2
    spec = SystemSpec(1, truth[None], kernel=POTENTIAL_KERNEL)
    h = MeasurementWeight.build(layout, 1, "accessible")
    v = np.sin(np.pi * layout.times / (2 * layout.t_final))
    return layout, spec, truth, h, v


def space_potential(noise_rel: float = 0.0, seed: int = 0, n_basis: int = 32, workers: int = 1, lam=None):
    layout, spec, truth, h, v = space_potential_setup()
    basis = hat_basis(layout, n_basis)
    dv = backward_difference(v, layout.dt)
    d1 = synthesize_data(spec, basis.sources(1, 0, v), h, layout, noise_rel=noise_rel, seed=seed, workers=workers)
    d2 = synthesize_data(spec, basis.sources(1, 0, dv), h, layout, noise_rel=noise_rel, seed=seed + 1, workers=workers)
    return recover_potential_space(d1, d2, basis, v, h, layout, spec.kernel, lam=lam, truth=truth)


def potential_space_outcome(seed: int = 0) -> Outcome:
    def run():
        clean = space_potential(0.0)
        noisy = space_potential(1e-3, seed=seed)
        vals = {"rel_l2_noiseless": clean.errors["rel_l2"], "rel_l2_noise1e-3": noisy.errors["rel_l2"], "lambda": noisy.meta["lambda_v"]}
        ok = clean.errors["rel_l2"] <= 0.05 and noisy.errors["rel_l2"] <= 0.15
        return Outcome("potential recovery (space)", ok, vals, "<= 5% noiseless, <= 15% at 0.1% noise, < 5 min")

    out = _timed(run)
    out.passed = out.passed and out.seconds < 300
    return out


# --- 7. time potential -----------------------------------------------------


def time_potential(n: int = 32, n_levels: int = 8, truth_fn=None):
    layout = build_layout(1, n, n_time=n_levels + 1)
    x = layout.interior_coords()[:, 0]
    truth_fn = truth_fn or (lambda t, x: -np.outer(1 + t, x * (1 - x)) / 4)
    truth = truth_fn(layout.times, x)
    frac = FracOrderSpec.single(0.5)
    spec = SystemSpec(1, truth[None], frac=frac)
    h = MeasurementWeight.build(layout, 1, "gamma")
    basis = spacetime_hat_basis(layout, n, n_levels)
    data = synthesize_data(spec, basis.sources(1, 0), h, layout, which="time", kind="lambda2")
    return recover_potential_time(data, basis, h, layout, frac, truth=truth)


def time_potential_separable(n: int = 32, n_time: int = 64):
    layout = build_layout(1, n, n_time=n_time)
    x = layout.interior_coords()[:, 0]
    truth = -x * (1 - x) / 2
    frac = FracOrderSpec.single(0.5)
    spec = SystemSpec(1, truth[None], frac=frac)
    h = MeasurementWeight.build(layout, 1, "gamma")
    basis = hat_basis(layout, n)
    v = layout.times**2
    lv = apply_multiterm(frac, 0, v, layout.dt)
    d1 = synthesize_data(spec, basis.sources(1, 0, v), h, layout, which="time", kind="lambda2")
    d2 = synthesize_data(spec, basis.sources(1, 0, lv), h, layout, which="time", kind="lambda2")
    return recover_potential_time_separable(d1, d2, basis, v, h, layout, frac, truth=truth)


def potential_time_outcome() -> Outcome:
    def run():
        rep = time_potential()
        vals = {"rel_l2": rep.errors["rel_l2"], "masked_fraction": rep.masked_fraction, "basis": rep.meta["basis_size"]}
        ok = rep.errors["rel_l2"] <= 0.05 and rep.masked_fraction <= 0.10
        return Outcome("potential recovery (time)", ok, vals, "<= 5% off mask, mask <= 10%")

    return _timed(run)


# --- 8. interaction --------------------------------------------------------


def interaction_setup(which: str, n: int = 32, n_time: int = 64):
    layout = build_layout(1, n, n_time=n_time)
    x = layout.interior_coords()[:, 0]
    t = layout.times
    spec = build_preset("gray_scott", layout, gamma=0.04, c=0.06, m=0.04)
    if which == "space":
        spec = SystemSpec(2, spec.potential, interaction=spec.interaction, kernel=KernelSpec(((0.5, 1.0),)))
    g = np.zeros((3, 2, n_time + 1, layout.n_int))
    g[0, 0] = np.outer(t, np.sin(np.pi * x))
    g[1, 1] = np.outer(t, 4 * x * (1 - x))
    g[2, 0] = np.outer(t**2, x)
    g[2, 1] = np.outer(t, 1 - x)
    region = "accessible" if which == "space" else "gamma"
    return layout, spec, SourceFamily(10 * g), MeasurementWeight.build(layout, 2, region)


def interaction(which: str = "time"):
    layout, spec, fam, h = interaction_setup(which)
    data = synthesize_interaction_data(spec, fam, h, layout, which, max_degree=3)
    blank = SystemSpec(2, spec.potential, alpha=spec.alpha, d=spec.d, kernel=spec.kernel, frac=spec.frac)
    return recover_interaction(blank, data, fam, h, layout, which, max_degree=3, truth=spec.interaction)


def interaction_outcome() -> Outcome:
    def run():
        vals, ok = {}, True
        for which in ("space", "time"):
            rep = interaction(which)
            vals[f"{which}_cubic_err"] = rep.errors["max_abs_degree3"]
            vals[f"{which}_quadratic_err"] = rep.errors["max_abs_degree2"]
            ok = ok and rep.errors["max_abs_degree3"] <= 1e-3 and rep.errors["max_abs_degree2"] <= 1e-6
        return Outcome("interaction recovery", ok, vals, "cubic <= 1e-3, quadratic zeros <= 1e-6")

    return _timed(run)


# --- 9. orders -------------------------------------------------------------

ORDER_T, ORDER_STEPS = 6.0, 3000
ORDER_S = np.logspace(-0.3, 0.5, 12)


def order_series(frac: FracOrderSpec, n: int = 32, t_final: float = ORDER_T, n_time: int = ORDER_STEPS):
    layout = build_layout(1, n, n_time=n_time, t_final=t_final)
    p = -np.ones(layout.n_int)
    probe = OrderProbeSpec(1.0, np.ones(layout.n_int), ORDER_S)
    spec = SystemSpec(1, p[None], frac=frac)
    sol = solve_time_fractional(spec, SourceTerm(probe.source(layout)), layout)
    return layout, p, probe, observe_point(sol, layout)[0]


def orders_outcome() -> Outcome:
    def run():
        layout, p, probe, series = order_series(FracOrderSpec.single(0.5))
        rep = recover_orders(series, probe, layout, p, n_terms=1, truth=(0.5,))
        layout2, p2, probe2, series2 = order_series(FracOrderSpec(((( 0.3, 1.0), (0.7, 1.0)),)))
        cmp = compare_candidates(series2, probe2, layout2, p2, [(0.3, 0.7), (0.5,)])
        ratio = float(cmp["misfits"][1] / cmp["misfits"][0])
        lay32 = build_layout(1, 32)
        diag = order_discrimination_diagnostic(0.3, 0.7, -np.ones(lay32.n_int), OrderProbeSpec(1.0, np.ones(lay32.n_int), [1.0]), lay32)
        vals = {"beta_hat": float(rep.fields["beta"][0]), "beta_err": rep.errors["beta_max_abs"], "misfit_ratio": ratio, "w0_x0": diag.meta["w0_x0"]}
        ok = rep.errors["beta_max_abs"] <= 1e-2 and ratio >= 10 and diag.meta["w0_x0"] < 0
        return Outcome("fractional order recovery", ok, vals, "|beta_hat - 0.5| <= 1e-2, ratio >= 10, w0(x0) < 0")

    return _timed(run)


# --- 10. drift removal -----------------------------------------------------


def drift_roundtrip(n: int = 32, n_time: int = 64) -> Outcome:
    def run():
        layout = build_layout(1, n, n_time=n_time)
        x = layout.interior_coords()[:, 0]
        spec = SystemSpec(1, -(1 + x)[None] / 2, interaction={0: {(2,): -0.5}}, alpha=[[1.0]], d=[1.0], frac=FracOrderSpec.single(0.5))
        q = SourceTerm(np.outer(1 + layout.times, np.sin(np.pi * x))[None])
        a = solve_time_fractional(spec, q, layout, normalize=True)
        b = solve_time_fractional(spec, q, layout, normalize=False)
        c = solve_time_fractional(spec, q, layout, normalize=False, drift_scheme="upwind")
        gap = float(np.max(np.abs(a.u - b.u)))
        vals = {"max_gap": gap, "upwind_gap": float(np.max(np.abs(a.u - c.u)))}
        return Outcome("drift removal round trip", gap <= 1e-8, vals, "<= 1e-8")

    return _timed(run)


# --- 11. point-observation discrimination ----------------------------------


def discrimination(n: int = 32, n_time: int = 128, factor: float = 10.0) -> Outcome:
    def run():
        def layout_fn(N):
            return build_layout(1, n, n_time=N)

        def source_fn(lay):
            return SourceTerm(np.outer(np.exp(-lay.times), np.ones(lay.n_int))[None])

        lay = layout_fn(n_time)
        series, floors = [], []
        for beta in (0.3, 0.7):
            spec = SystemSpec(1, -np.ones((1, lay.n_int)), frac=FracOrderSpec.single(beta))
            series.append(observe_point(solve_time_fractional(spec, source_fn(lay), lay), lay))
            floors.append(point_noise_floor(spec, source_fn, layout_fn, n_time))
        gap = float(np.max(np.abs(series[0] - series[1])))
        floor = max(floors)
        return Outcome("point-observation discrimination", gap >= factor * floor, {"sup_difference": gap, "noise_floor": floor, "ratio": gap / floor}, f">= {factor:g} x floor")

    return _timed(run)


ACCEPTANCE: list[tuple[str, Callable[[], Outcome]]] = [
    ("1", green_identity),
    ("2", caputo_order),
    ("3", maximum_principle),
    ("4", linearization),
    ("5", duality),
    ("6", potential_space_outcome),
    ("7", potential_time_outcome),
    ("8", interaction_outcome),
    ("9", orders_outcome),
    ("10", drift_roundtrip),
    ("11", discrimination),
]
