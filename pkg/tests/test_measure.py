import numpy as np
import pytest

from fracinv.domain import build_layout
from fracinv.experiments import bump_on_collar
from fracinv.forward import SourceTerm, SystemSpec, solve_space_nonlocal, solve_time_fractional
from fracinv.fractime import FracOrderSpec
from fracinv.inverse.potential import hat_basis
from fracinv.measure import (
    MeasurementSet,
    MeasurementWeight,
    apply_noise,
    default_time_profile,
    observe_point,
    pair_lambda1,
    pair_lambda1_nonlocal_flux,
    pair_lambda2,
    point_noise_floor,
    synthesize_data,
)
from fracinv.nonlocal_op import KernelSpec

K = KernelSpec(((0.5, 1.0),))


@pytest.fixture(scope="module")
def lay():
    return build_layout(1, 16, n_time=16)


@pytest.fixture(scope="module")
def positive_solution(lay):
    x = lay.interior_coords()[:, 0]
    spec = SystemSpec(1, -np.ones((1, lay.n_int)), kernel=K)
    return solve_space_nonlocal(spec, SourceTerm(np.outer(1 + lay.times, np.sin(np.pi * x))[None]), lay)


def test_time_profile_endpoints():
    t = np.linspace(0, 2.0, 9)
    prof = default_time_profile(t, 2.0)
    assert prof[0] == 0.0 and prof[-1] == 0.0 and np.all(prof[1:-1] > 0)


def test_weight_validation(lay):
    with pytest.raises(ValueError):
        MeasurementWeight(-np.ones((1, lay.n_time + 1, lay.n_nodes)), "gamma")
    h = np.zeros((1, lay.n_time + 1, lay.n_nodes))
    h[0, :, lay.interior_index[0]] = 1.0
    with pytest.raises(ValueError, match="outside"):
        MeasurementWeight(h, "gamma").check(lay)


def test_lambda1_zero_and_sign(lay, positive_solution):
    h = MeasurementWeight.build(lay, 1, "accessible")
    assert pair_lambda1(np.zeros((1, lay.n_time + 1, lay.n_nodes)), h, lay, K)[0] == 0.0
    assert pair_lambda1(positive_solution, h, lay, K)[0] < 0
    assert pair_lambda1_nonlocal_flux(positive_solution, h, lay, K)[0] < 0


def test_flux_pairing_constant_vanishes(lay):
    h = MeasurementWeight.build(lay, 1, "accessible")
    const = np.full((1, lay.n_time + 1, lay.n_nodes), 4.0)
    assert abs(pair_lambda1_nonlocal_flux(const, h, lay, K)[0]) < 1e-9
    with pytest.raises(ValueError):
        pair_lambda1_nonlocal_flux(const, h, lay, K, alpha=[[1.0]])


def test_lambda1_reproducible(lay, positive_solution):
    h = MeasurementWeight.build(lay, 1, "accessible", space_profile=bump_on_collar(lay))
    a = pair_lambda1(positive_solution, h, lay, K)
    b = pair_lambda1(positive_solution, h, lay, K)
    assert np.isfinite(a).all() and a.tobytes() == b.tobytes()


def test_lambda2_steady_sine():
    errs = []
    for n in (32, 64):
        lay = build_layout(1, n, n_time=10)
        x = lay.coords[:, 0]
        u = np.where((x >= 0) & (x <= 1), np.sin(np.pi * x), 0.0)
        field = np.broadcast_to(u, (1, lay.n_time + 1, lay.n_nodes))
        h = MeasurementWeight.build(lay, 1, "gamma", time_profile=np.ones_like)
        errs.append(abs(pair_lambda2(field, h, lay)[0] + np.pi * lay.t_final))
    assert errs[0] < 1e-2 and errs[1] < errs[0] / 3.5  # second order in h


def test_lambda2_zero(lay):
    h = MeasurementWeight.build(lay, 1, "gamma")
    assert pair_lambda2(np.zeros((1, lay.n_time + 1, lay.n_nodes)), h, lay)[0] == 0.0


def test_point_series(lay):
    z = np.zeros((2, lay.n_time + 1, lay.n_nodes))
    s = observe_point(z, lay)
    assert s.shape == (2, lay.n_time) and not s.any()


def test_point_discrimination():
    def layout_fn(N):
        return build_layout(1, 32, n_time=N)

    def source_fn(l):
        return SourceTerm(np.outer(np.exp(-l.times), np.ones(l.n_int))[None])

    lay = layout_fn(128)
    series, floors = [], []
    for beta in (0.3, 0.7):
        spec = SystemSpec(1, -np.ones((1, lay.n_int)), frac=FracOrderSpec.single(beta))
        series.append(observe_point(solve_time_fractional(spec, source_fn(lay), lay), lay))
        floors.append(point_noise_floor(spec, source_fn, layout_fn, 128))
    assert np.abs(series[0] - series[1]).max() > 10 * max(floors)


def test_noise_model():
    rng = np.random.default_rng(0)
    vals = np.linspace(1, 2, 1000)
    assert np.array_equal(apply_noise(vals, 0.0, rng), vals)
    a = apply_noise(vals, 0.01, np.random.default_rng(5))
    b = apply_noise(vals, 0.01, np.random.default_rng(5))
    assert np.array_equal(a, b)
    rel = a / vals - 1
    assert np.all(np.abs(rel) <= 5 * 0.01)
    assert rel.std() == pytest.approx(0.01, rel=0.1)


def test_synthesize_parallel_matches_serial(lay, tmp_path):
    spec = SystemSpec(1, -np.ones((1, lay.n_int)), kernel=K)
    basis = hat_basis(lay, 6).sources(1, 0, lay.times)
    h = MeasurementWeight.build(lay, 1, "accessible")
    a = synthesize_data(spec, basis, h, lay, noise_rel=1e-3, seed=3)
    b = synthesize_data(spec, basis, h, lay, noise_rel=1e-3, seed=3, workers=4)
    assert np.array_equal(a.values, b.values)
    c = synthesize_data(spec, basis, h, lay)
    d = synthesize_data(spec, basis, h, lay)
    assert np.array_equal(c.values, d.values)
    a.to_csv(tmp_path / "v.csv")
    back = np.genfromtxt(tmp_path / "v.csv", delimiter=",", skip_header=1)
    assert np.array_equal(back[:, 2], a.values.ravel())


def test_point_series_set(lay, tmp_path):
    spec = SystemSpec(1, -np.ones((1, lay.n_int)), frac=FracOrderSpec.single(0.5))
    basis = hat_basis(lay, 3).sources(1, 0, np.ones(lay.n_time + 1))
    ms = synthesize_data(spec, basis, None, lay, which="time", kind="lambda3")
    assert ms.series.shape == (3, 1, lay.n_time)
    ms.to_csv(tmp_path / "v.csv", tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().count("\n") == 1 + 3 * lay.n_time
    assert isinstance(ms, MeasurementSet)
