import numpy as np
import pytest

from fracinv import experiments as ex
from fracinv.domain import build_layout
from fracinv.forward import SystemSpec
from fracinv.fractime import FracOrderSpec
from fracinv.inverse.adjoint import pair_source_adjoint, solve_adjoint_space, solve_adjoint_time
from fracinv.inverse.interaction import (
    UnresolvedCoefficientsError,
    admissible_indices,
    recover_interaction,
    recover_single_coefficient,
    synthesize_interaction_data,
)
from fracinv.inverse.orders import (
    OrderProbeSpec,
    compare_candidates,
    order_discrimination_diagnostic,
    order_lattice,
)
from fracinv.inverse.potential import (
    SourceBasis,
    backward_difference,
    expand_in_basis,
    hat_basis,
    lcurve_lambda,
    recover_potential_space,
    tikhonov_solve,
)
from fracinv.inverse.report import ReconstructionReport, relative_l2
from fracinv.measure import MeasurementWeight, synthesize_data
from fracinv.nonlocal_op import KernelSpec

K = KernelSpec(((0.5, 1.0),))


@pytest.fixture(scope="module")
def lay():
    return build_layout(1, 32, n_time=32)


# --- adjoints -------------------------------------------------------------


def test_zero_weight_zero_adjoint(lay):
    p = -np.ones((1, lay.n_int))
    z1 = MeasurementWeight(np.zeros((1, lay.n_time + 1, lay.n_nodes)), "accessible")
    z2 = MeasurementWeight(np.zeros((1, lay.n_time + 1, lay.n_nodes)), "gamma")
    assert not solve_adjoint_space(p, z1, lay, K).w.any()
    assert not solve_adjoint_time(p, z2, lay, FracOrderSpec.single(0.5)).w.any()


def test_terminal_condition_and_positivity(lay):
    x = lay.interior_coords()[:, 0]
    p = -(1 + x)[None]
    w1 = solve_adjoint_space(p, MeasurementWeight.build(lay, 1, "accessible"), lay, K).interior(lay)[0]
    assert not w1[-1].any()
    assert np.any(np.all(w1[1:-1] > 0, axis=1))
    w2 = solve_adjoint_time(p, MeasurementWeight.build(lay, 1, "gamma"), lay, FracOrderSpec.single(0.4)).interior(lay)[0]
    assert not w2[-1].any()
    assert w2[:-1].min() > 0


def test_duality_matched_rule_is_exact():
    r = ex.duality_levels((16,))
    assert r["lambda1_exact"][0] <= 1e-12
    assert r["lambda2_exact"][0] <= 1e-12


def test_duality_trapezoid_shrinks():
    r = ex.duality_levels((16, 32))
    assert r["lambda1"][1] < r["lambda1"][0]
    assert r["lambda2"][1] < r["lambda2"][0]


def test_pairing_rules(lay):
    adj = solve_adjoint_time(-np.ones((1, lay.n_int)), MeasurementWeight.build(lay, 1, "gamma"), lay, FracOrderSpec.single(0.5))
    q = np.ones((1, lay.n_time + 1, lay.n_int))
    trap = pair_source_adjoint(q, adj, lay)[0]
    rect = pair_source_adjoint(q, adj, lay, rule="exact")[0]
    w0 = adj.interior(lay)[0, 0]
    assert trap - rect == pytest.approx(0.5 * lay.dt * lay.cell_volume * w0.sum(), rel=1e-10)


# --- regularization helpers -----------------------------------------------


def test_tikhonov_and_lcurve():
    rng = np.random.default_rng(0)
    G = rng.standard_normal((6, 6))
    G = G @ G.T + 6 * np.eye(6)
    c = rng.standard_normal(6)
    assert np.allclose(tikhonov_solve(G, G @ c, 0.0), c)
    lam, info = lcurve_lambda(G, G @ c + 1e-3 * rng.standard_normal(6))
    assert lam in info["lambdas"]


def test_singular_gram_raises(lay):
    basis = hat_basis(lay, 8)
    twice = SourceBasis(np.vstack([basis.members, basis.members]), "dup")
    with pytest.raises(np.linalg.LinAlgError, match="condition"):
        expand_in_basis(twice, np.ones(twice.size), lay, 1e-12)


# --- potentials -----------------------------------------------------------


def _space_recovery(truth, noise=0.0):
    lay = build_layout(1, 32, n_time=64)
    spec = SystemSpec(1, truth[None], kernel=ex.POTENTIAL_KERNEL)
    h = MeasurementWeight.build(lay, 1, "accessible")
    v = np.sin(np.pi * lay.times / (2 * lay.t_final))
    basis = hat_basis(lay, 32)
    d1 = synthesize_data(spec, basis.sources(1, 0, v), h, lay, noise_rel=noise)
    d2 = synthesize_data(spec, basis.sources(1, 0, backward_difference(v, lay.dt)), h, lay, noise_rel=noise, seed=1)
    return recover_potential_space(d1, d2, basis, v, h, lay, ex.POTENTIAL_KERNEL, truth=truth)


def test_space_zero_truth():
    lay = build_layout(1, 32, n_time=64)
    rep = _space_recovery(np.zeros(lay.n_int))
    assert rep.errors["linf"] <= 1e-3


def test_space_linear_truth():
    rep = ex.space_potential(0.0)
    assert rep.errors["rel_l2"] <= 0.05
    assert rep.masked_fraction == 0.0


def test_space_weight_must_vanish_at_t0():
    lay = build_layout(1, 16, n_time=8)
    basis = hat_basis(lay, 4)
    spec = SystemSpec(1, -np.ones((1, lay.n_int)), kernel=K)
    h = MeasurementWeight.build(lay, 1, "accessible")
    d = synthesize_data(spec, basis.sources(1, 0, np.ones(9)), h, lay)
    with pytest.raises(ValueError, match="t = 0"):
        recover_potential_space(d, d, basis, np.ones(9), h, lay, K)


def test_time_zero_truth():
    rep = ex.time_potential(truth_fn=lambda t, x: np.zeros((t.size, x.size)))
    assert rep.errors["linf"] <= 1e-3


def test_time_spacetime_truth():
    rep = ex.time_potential()
    assert rep.errors["rel_l2"] <= 0.05 and rep.masked_fraction <= 0.10


def test_separable_uses_fewer_members():
    sep = ex.time_potential_separable()
    full = ex.time_potential()
    assert sep.errors["rel_l2"] <= 0.05
    assert sep.meta["basis_size"] < full.meta["basis_size"]


# --- interaction coefficients ---------------------------------------------


@pytest.fixture(scope="module")
def gs_time():
    return ex.interaction_setup("time", 16, 16)


def test_admissible_indices():
    assert admissible_indices(2, 0, 2) == [(2, 0), (1, 1)]
    assert admissible_indices(2, 1, 3) == [(2, 1), (1, 2), (0, 3)]


def test_zero_truth_recovers_zero(gs_time):
    lay, spec, fam, h = gs_time
    blank = SystemSpec(2, spec.potential, d=spec.d, frac=spec.frac)
    data = synthesize_interaction_data(blank, fam, h, lay, "time", max_degree=3)
    rep = recover_interaction(blank, data, fam, h, lay, "time", max_degree=3, truth={})
    assert rep.errors["max_abs"] <= 1e-8


@pytest.mark.parametrize("which", ["space", "time"])
def test_gray_scott_recovery(which):
    rep = ex.interaction(which)
    assert rep.errors["max_abs_degree3"] <= 1e-3
    assert rep.errors["max_abs_degree2"] <= 1e-6


def test_single_unknown_coefficient(gs_time):
    lay, spec, fam, h = gs_time
    data = synthesize_interaction_data(spec, fam, h, lay, "time", label_sets=[(0, 1, 2)])
    got = recover_single_coefficient(spec, data[(0, 1, 2)], (0, 1, 2), 1, (1, 2), fam, h, lay, "time")
    assert got == pytest.approx(spec.interaction[1][(1, 2)], abs=1e-10)


def test_unresolved_coefficients_reported(gs_time):
    lay, spec, fam, h = gs_time
    data = synthesize_interaction_data(spec, fam, h, lay, "time", label_sets=[(0, 1)], max_degree=2)
    blank = SystemSpec(2, spec.potential, d=spec.d, frac=spec.frac)
    with pytest.raises(UnresolvedCoefficientsError) as info:
        recover_interaction(blank, data, fam, h, lay, "time", max_degree=2)
    # sources 0 and 1 excite different species, so the (0, 1) datum never sees u_0^2
    assert info.value.degree == 2 and info.value.species == 0
    assert info.value.multi_indices == [(2, 0)]


# --- fractional orders ----------------------------------------------------


def test_probe_validation():
    with pytest.raises(ValueError):
        OrderProbeSpec(-1.0, np.ones(3), [1.0])
    with pytest.raises(ValueError):
        OrderProbeSpec(1.0, np.ones(3), [2.0, 1.0])


def test_lattice():
    assert len(order_lattice(1)) == 19
    assert len(order_lattice(2)) == 19 * 18 // 2


def test_identical_candidates_indistinguishable():
    lay, p, probe, series = ex.order_series(FracOrderSpec.single(0.5), n_time=600)
    res = compare_candidates(series, probe, lay, p, [(0.5,), (0.5,)])
    assert res["indistinguishable"] == [0, 1]


def test_diagnostic_refuses_equal_orders(lay):
    probe = OrderProbeSpec(1.0, np.ones(lay.n_int), [1.0])
    with pytest.raises(ValueError):
        order_discrimination_diagnostic(0.5, 0.5, -np.ones(lay.n_int), probe, lay)


def test_diagnostic_sign_and_ladder(lay):
    probe = OrderProbeSpec(1.0, np.ones(lay.n_int), [1.0])
    rep = order_discrimination_diagnostic(0.3, 0.7, -np.ones(lay.n_int), probe, lay)
    assert rep.meta["w0_x0"] < 0
    assert rep.fields["w0"].max() < 0
    gaps = [rep.residuals[k] for k in ("gap_s0.1", "gap_s0.01", "gap_s0.001")]
    assert gaps[0] > gaps[1] > gaps[2]


# --- reports --------------------------------------------------------------


def test_report_json(tmp_path):
    rep = ReconstructionReport({"p": np.arange(3.0)}, {"rel_l2": 0.1}, guard_mask=np.array([False, True, False]))
    path = rep.to_json(tmp_path, "r")
    assert path.exists() and (tmp_path / "r_p.csv").exists() and (tmp_path / "r_guard_mask.csv").exists()
    assert rep.masked_fraction == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        ReconstructionReport({}, {"bad": -1.0})
    assert relative_l2(np.ones(2), np.zeros(2)) == pytest.approx(np.sqrt(2))
