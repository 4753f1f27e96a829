"""Invariant suite run by ``fracinv --kind verify``.

Each check returns an :class:`~fracinv.experiments.Outcome`.  ``run_suite``
collects them; the CLI exits nonzero when any fails.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn

from . import experiments as ex
from .domain import NODE_CLASS_NAMES, build_layout
from .forward import SourceTerm, SystemSpec, evaluate_interaction, solve_space_nonlocal, solve_time_fractional, space_operators
from .fractime import FracOrderSpec, apply_multiterm, build_l1_table, build_right_table
from .inverse.adjoint import solve_adjoint_space, solve_adjoint_time
from .inverse.interaction import admissible_indices, recover_interaction, synthesize_interaction_data
from .linearize import SourceFamily, higher_order_source, linearize
from .measure import MeasurementWeight, pair_lambda1, pair_lambda2
from .models import PRESETS, build_preset
from .nonlocal_op import KernelSpec, assemble_nonlocal

Outcome = ex.Outcome


def _check(name: str, ok: bool, threshold: str, **values) -> Outcome:
    return Outcome(name, bool(ok), values, threshold)


# --- grid and operators ----------------------------------------------------


def node_partition() -> Outcome:
    ok = True
    for dim, n in ((1, 16), (2, 8)):
        lay = build_layout(dim, n)
        total = sum(int(lay.mask(c).sum()) for c in NODE_CLASS_NAMES)
        ok = ok and total == lay.n_nodes
    return _check("node classes partition the grid", ok, "mask sums == node count")


def layout_determinism() -> Outcome:
    a, b = build_layout(2, 8), build_layout(2, 8)
    return _check("layout construction deterministic", a.to_json() == b.to_json(), "identical serialization")


def m_matrix_pattern(seed: int = 0) -> Outcome:
    rng = np.random.default_rng(seed)
    lay = build_layout(1, 16)
    for _ in range(10):
        s = np.sort(rng.uniform(0.05, 0.95, 2))
        assemble_nonlocal(lay, KernelSpec(((s[0], rng.uniform(0.1, 2)), (s[1], rng.uniform(0.1, 2)))))
    return _check("M-matrix sign pattern", True, "assembly raises on violation", kernels=10)


def drift_free_symmetry() -> Outcome:
    full = assemble_nonlocal(build_layout(2, 6), KernelSpec(((0.4, 1.0),))).full
    return _check("drift-free table symmetric", np.array_equal(full, full.T), "exact")


def tail_monotone() -> Outcome:
    lay = build_layout(1, 32)
    node = lay.interior_index[lay.obs_interior_position]
    tails = []
    for R in (0.1, 0.2, 0.4):
        op = assemble_nonlocal(lay, KernelSpec(((0.5, 1.0),), radius=R))
        tails.append(float(op.tail[node]))
    big = assemble_nonlocal(lay, KernelSpec(((0.5, 1.0),))).tail[node]
    ok = tails[0] > tails[1] > tails[2] > big >= 0
    return _check("tail correction decreases with radius", ok, "strictly decreasing", tails=tails + [float(big)])


# --- fractional time -------------------------------------------------------


def right_table_adjoint(seed: int = 0) -> Outcome:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for beta in (0.2, 0.5, 0.9):
        L = build_l1_table(beta, 0.05, 20).matrix
        R = build_right_table(beta, 0.05, 20).matrix
        u, w = rng.standard_normal(21), rng.standard_normal(21)
        u[0], w[-1] = 0.0, 0.0
        worst = max(worst, abs(w @ L @ u - u @ R @ w) / (np.abs(w) @ np.abs(L) @ np.abs(u)))
    return _check("left/right L1 tables adjoint", worst <= 1e-14, "<= 1e-14 relative", max_rel=worst)


def multiterm_linearity(seed: int = 0) -> Outcome:
    rng = np.random.default_rng(seed)
    spec = FracOrderSpec((((0.3, 1.0), (0.7, 0.5)),))
    v1, v2 = rng.standard_normal(33), rng.standard_normal(33)
    a = apply_multiterm(spec, 0, v1 + v2, 0.1)
    b = apply_multiterm(spec, 0, v1, 0.1) + apply_multiterm(spec, 0, v2, 0.1)
    gap = float(np.max(np.abs(a - b)))
    return _check("multi-term linearity", gap <= 1e-12 * np.max(np.abs(a)), "roundoff", gap=gap)


# --- forward solvers -------------------------------------------------------


def zero_data() -> Outcome:
    lay = build_layout(1, 16, n_time=16)
    spec = SystemSpec(2, -np.ones((2, lay.n_int)), interaction={0: {(2, 0): 1.0}, 1: {(1, 1): -1.0}},
                      kernel=KernelSpec(((0.5, 1.0),)), alpha=[[1.0], [0.0]], frac=FracOrderSpec.single(0.5, 2))
    zero = SourceTerm.zeros(lay, 2)
    a = solve_space_nonlocal(spec, zero, lay).u
    b = solve_time_fractional(spec, zero, lay).u
    return _check("zero data gives zero solution", not a.any() and not b.any(), "exactly zero")


def _bump(x):
    inside = (x > 0) & (x < 1)
    return np.where(inside, np.sin(np.pi * np.clip(x, 0, 1)) ** 4, 0.0)


def _bump_nonlocal(x: float, kernel: KernelSpec) -> float:
    """Continuum value of ``-L`` applied to the bump at ``x``, by quadrature."""
    total = 0.0
    for s, c in kernel.terms:
        pts = sorted({abs(x), abs(1 - x)} - {0.0})
        val, _ = integrate.quad(lambda z: (2 * _bump(x) - _bump(x + z) - _bump(x - z)) * z ** (-1 - 2 * s), 0, 2, points=pts, limit=200)
        total += 2 * c * (val + 2 * _bump(x) * 2 ** (-2 * s) / (2 * s))
    return total


def mms_space(levels=(16, 32, 64)) -> Outcome:
    """u = t * bump(x) against the continuum operator, kernel order 0.3."""
    kernel = KernelSpec(((0.3, 1.0),))
    errs = []
    for n in levels:
        lay = build_layout(1, n, n_time=n)
        x, t = lay.interior_coords()[:, 0], lay.times
        Lx = np.array([_bump_nonlocal(xi, kernel) for xi in x])
        q = np.outer(np.ones_like(t), _bump(x)) + np.outer(t, Lx + 0.5 * _bump(x))
        u = solve_space_nonlocal(SystemSpec(1, -0.5 * np.ones((1, lay.n_int)), kernel=kernel), SourceTerm(q[None]), lay)
        errs.append(float(np.abs(u.interior()[0] - np.outer(t, _bump(x))).max()))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    return _check("manufactured solution (space)", rates.min() >= 1.0, "order >= 1", errors=errs, rates=rates)


def mms_time(levels=(16, 32, 64), beta: float = 0.7) -> Outcome:
    """u = t^2 sin(pi x) with a local Laplacian."""
    errs = []
    for n in levels:
        lay = build_layout(1, n, n_time=n)
        x, t = lay.interior_coords()[:, 0], lay.times
        ph = np.sin(np.pi * x)
        q = np.outer(2 / gamma_fn(3 - beta) * t ** (2 - beta), ph) + np.outer(t**2, (np.pi**2 + 0.5) * ph)
        spec = SystemSpec(1, -0.5 * np.ones((1, lay.n_int)), frac=FracOrderSpec.single(beta))
        u = solve_time_fractional(spec, SourceTerm(q[None]), lay)
        errs.append(float(np.abs(u.interior()[0] - np.outer(t**2, ph)).max()))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    need = min(2 - beta, 1.0)
    return _check("manufactured solution (time)", rates.min() >= need, f"order >= {need:g}", errors=errs, rates=rates)


def picard_fixed_point(seed: int = 0) -> Outcome:
    """Re-evaluate the implicit space step at the converged state."""
    rng = np.random.default_rng(seed)
    lay = build_layout(1, 16, n_time=8)
    spec, q = ex.random_instance(lay, rng)
    sol = solve_space_nonlocal(spec, q, lay)
    ops = space_operators(spec, lay)
    I = lay.interior_index
    P = spec.potential_at(lay)
    worst = 0.0
    for m in range(1, lay.n_time + 1):
        u = sol.interior()[:, m]
        F = evaluate_interaction(spec, u)
        for i in range(spec.n_species):
            lhs = (u[i] - sol.interior()[i, m - 1]) / lay.dt + ops[i][np.ix_(I, I)] @ u[i] - P[i, m] * u[i]
            worst = max(worst, float(np.max(np.abs(lhs - F[i] - q.q[i, m]))))
    return _check("Picard fixed point residual", worst <= 1e-8, "<= 1e-8 (tol 1e-10 on increments)", residual=worst)


# --- linearization and measurement -----------------------------------------


def linearized_symmetry() -> Outcome:
    lay, spec, fam = ex.linearization_setup(16, 16)
    b = linearize(spec, fam, lay, "time", order=1)
    inner = {k: v[:, :, lay.interior_index] for k, v in b.fields.items()}
    s01 = higher_order_source(spec, inner, (0, 1))
    s10 = higher_order_source(spec, inner, (1, 0))
    return _check("mixed source symmetric in labels", np.array_equal(s01, s10), "exact")


def first_order_independent_of_base() -> Outcome:
    """Rescaling the other member changes the base point but not u^(0)."""
    lay, spec, fam = ex.linearization_setup(16, 16)
    g = fam.g.copy()
    g[1] *= 5.0
    a = linearize(spec, fam, lay, "space", order=1).fields[(0,)]
    b = linearize(spec, SourceFamily(g), lay, "space", order=1).fields[(0,)]
    return _check("first-order field independent of the other amplitudes", np.array_equal(a, b), "bitwise identical")


def exact_duality() -> Outcome:
    r = ex.duality_levels((16, 32))
    worst = max(r["lambda1_exact"] + r["lambda2_exact"])
    return _check("duality under the matched time rule", worst <= 1e-12, "<= 1e-12", residual=worst)


def pairing_linearity(seed: int = 0) -> Outcome:
    rng = np.random.default_rng(seed)
    lay = build_layout(1, 16, n_time=8)
    kernel = KernelSpec(((0.5, 1.0),))
    h1 = MeasurementWeight.build(lay, 1, "accessible")
    h2 = MeasurementWeight.build(lay, 1, "gamma")
    u, v = rng.standard_normal((2, 1, lay.n_time + 1, lay.n_nodes))
    a = pair_lambda1(u + 2 * v, h1, lay, kernel) - pair_lambda1(u, h1, lay, kernel) - 2 * pair_lambda1(v, h1, lay, kernel)
    b = pair_lambda2(u + 2 * v, h2, lay) - pair_lambda2(u, h2, lay) - 2 * pair_lambda2(v, h2, lay)
    gap = float(max(np.abs(a).max(), np.abs(b).max()))
    return _check("pairings linear", gap <= 1e-12, "roundoff", gap=gap)


# --- adjoints and recovery -------------------------------------------------


def adjoint_positivity() -> Outcome:
    lay = build_layout(1, 32, n_time=32)
    x = lay.interior_coords()[:, 0]
    p = -(1 + x)[None] / 2
    h1 = MeasurementWeight.build(lay, 1, "accessible")
    w1 = solve_adjoint_space(p, h1, lay, KernelSpec(((0.5, 1.0),))).interior(lay)[0]
    space_ok = bool(np.any(np.all(w1[1:] > 0, axis=1)))
    h2 = MeasurementWeight.build(lay, 1, "gamma")
    w2 = solve_adjoint_time(p, h2, lay, FracOrderSpec.single(0.5)).interior(lay)[0]
    time_min = float(w2[:-1].min())
    return _check("adjoint positivity", space_ok and time_min > 0, "some slice > 0 (space); min > 0 before T (time)", time_min=time_min)


def noiseless_consistency() -> Outcome:
    a = ex.space_potential(0.0).errors["rel_l2"]
    b = ex.time_potential().errors["rel_l2"]
    c = ex.time_potential_separable().errors["rel_l2"]
    d = ex.interaction("time").errors["max_abs"]
    ok = max(a, b, c) <= 1e-6 and d <= 1e-10
    return _check("noiseless recoveries return the truth", ok, "potentials <= 1e-6, coefficients <= 1e-10", space=a, time=b, separable=c, interaction=d)


def basis_refinement() -> Outcome:
    errs = []
    for n in (8, 16, 32):
        errs.append(ex.space_potential(0.0, n_basis=n).errors["rel_l2"])
    ok = all(b <= 1.1 * a + 1e-8 for a, b in zip(errs, errs[1:]))
    return _check("error non-increasing as basis doubles", ok, "within 10% jitter", errors=errs)


def induction_soundness() -> Outcome:
    layout, spec, fam, h = ex.interaction_setup("time", 16, 16)
    out = []
    for cubic in (-0.04, 0.3):
        truth = {0: {(1, 1): 0.2, (1, 2): cubic}, 1: {(0, 2): -0.1, (1, 2): -cubic}}
        s = SystemSpec(2, spec.potential, interaction=truth, d=spec.d, frac=spec.frac)
        data = synthesize_interaction_data(s, fam, h, layout, "time", max_degree=2)
        blank = SystemSpec(2, spec.potential, d=spec.d, frac=spec.frac)
        out.append(recover_interaction(blank, data, fam, h, layout, "time", max_degree=2).fields["coefficients"])
    gap = float(np.max(np.abs(out[0] - out[1])))
    return _check("degree-2 recovery ignores cubic truth", gap <= 1e-12, "<= 1e-12", gap=gap)


# --- presets ---------------------------------------------------------------


def presets_admissible() -> Outcome:
    lay = build_layout(1, 8)
    ok = True
    for name in PRESETS:
        spec = build_preset(name, lay)
        for i, table in spec.interaction.items():
            for kappa in table:
                ok = ok and kappa in admissible_indices(spec.n_species, i, sum(kappa))
        ok = ok and np.all(spec.potential <= 0)
    gs = build_preset("gray_scott", lay).interaction
    ok = ok and gs[0][(1, 2)] == -gs[1][(1, 2)]
    return _check("presets admissible, Gray-Scott exchange cancels", ok, "all presets")


INVARIANTS = [
    node_partition, layout_determinism, m_matrix_pattern, drift_free_symmetry, tail_monotone,
    right_table_adjoint, multiterm_linearity, zero_data, mms_space, mms_time, picard_fixed_point,
    linearized_symmetry, first_order_independent_of_base, exact_duality, pairing_linearity,
    adjoint_positivity, noiseless_consistency, basis_refinement, induction_soundness, presets_admissible,
]


def run_suite(acceptance: bool = False, echo=print) -> list[Outcome]:
    """Run every invariant (and optionally every acceptance criterion)."""
    checks = [(f.__name__, f) for f in INVARIANTS]
    checks += [("green_identity", ex.green_identity), ("caputo_order", ex.caputo_order), ("maximum_principle", ex.maximum_principle),
               ("linearization", ex.linearization), ("drift_roundtrip", ex.drift_roundtrip), ("discrimination", ex.discrimination)]
    if acceptance:
        checks += [(f"criterion_{k}", fn) for k, fn in ex.ACCEPTANCE]
    out = []
    for _, fn in checks:
        try:
            res = ex._timed(fn)
        except Exception as err:  # a crashing check is a failed check
            res = Outcome(fn.__name__, False, {"error": f"{type(err).__name__}: {err}"})
        out.append(res)
        if echo:
            echo(res.line())
    return out
