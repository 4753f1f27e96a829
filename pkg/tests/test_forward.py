import numpy as np
import pytest

from fracinv.domain import build_layout, interior_laplacian
from fracinv.experiments import random_instance
from fracinv.forward import (
    PicardError,
    SolverError,
    SourceTerm,
    SystemSpec,
    drift_removal,
    evaluate_interaction,
    read_binary,
    solve_space_nonlocal,
    solve_time_fractional,
    space_operators,
    write_binary,
)
from fracinv.fractime import FracOrderSpec
from fracinv.nonlocal_op import KernelSpec

K05 = KernelSpec(((0.5, 1.0),))


@pytest.fixture(scope="module")
def lay():
    return build_layout(1, 16, n_time=16)


def test_zero_source_zero_solution(lay):
    spec = SystemSpec(1, -np.ones((1, lay.n_int)), interaction={0: {(2,): 1.0}}, kernel=K05, frac=FracOrderSpec.single(0.5))
    assert not solve_space_nonlocal(spec, SourceTerm.zeros(lay, 1), lay).u.any()
    assert not solve_time_fractional(spec, SourceTerm.zeros(lay, 1), lay).u.any()


def test_maximum_principle_sample():
    lay = build_layout(1, 16, n_time=32)
    rng = np.random.default_rng(11)
    for _ in range(20):
        spec, q = random_instance(lay, rng)
        assert solve_space_nonlocal(spec, q, lay).min_value() >= -1e-12
        assert solve_time_fractional(spec, q, lay).min_value() >= -1e-12


def test_discrete_manufactured_solution(lay):
    spec = SystemSpec(1, -0.5 * np.ones((1, lay.n_int)), kernel=K05, alpha=[[0.7]])
    A = space_operators(spec, lay)[0]
    I = lay.interior_index
    x = lay.coords[:, 0]
    prof = np.where((x > 0) & (x < 1), np.sin(np.pi * x), 0.0)
    ustar = np.outer(lay.times, prof)
    q = np.zeros((1, lay.n_time + 1, lay.n_int))
    for m in range(1, lay.n_time + 1):
        q[0, m] = (ustar[m, I] - ustar[m - 1, I]) / lay.dt + (A @ ustar[m])[I] + 0.5 * ustar[m, I]
    u = solve_space_nonlocal(spec, SourceTerm(q), lay)
    assert np.abs(u.u[0] - ustar).max() <= 1e-10


def test_near_one_order_matches_heat():
    lay = build_layout(1, 32, n_time=200)
    x = lay.interior_coords()[:, 0]
    q = np.outer(np.ones(lay.n_time + 1), np.sin(np.pi * x))
    spec = SystemSpec(1, -0.2 * np.ones((1, lay.n_int)), frac=FracOrderSpec.single(0.999))
    u = solve_time_fractional(spec, SourceTerm(q[None]), lay).interior()[0, -1]
    # classical implicit Euler oracle
    B = np.eye(lay.n_int) / lay.dt - interior_laplacian(lay) + 0.2 * np.eye(lay.n_int)
    v = np.zeros(lay.n_int)
    for m in range(1, lay.n_time + 1):
        v = np.linalg.solve(B, v / lay.dt + q[m])
    assert np.linalg.norm(u - v) / np.linalg.norm(v) <= 0.02


def test_drift_removal_identity_and_shift(lay):
    spec = SystemSpec(1, -np.ones((1, lay.n_int)), frac=FracOrderSpec.single(0.5))
    tspec, scaling = drift_removal(spec, lay)
    assert np.all(scaling == 1.0)
    assert np.array_equal(tspec.potential, spec.potential)
    drifted = SystemSpec(1, np.zeros((1, lay.n_int)), alpha=[[1.0]], d=[1.0], frac=FracOrderSpec.single(0.5))
    tspec, _ = drift_removal(drifted, lay)
    assert np.allclose(tspec.potential, -0.25)
    assert not tspec.alpha.any()


def test_drift_round_trip():
    lay = build_layout(1, 32, n_time=32)
    x = lay.interior_coords()[:, 0]
    spec = SystemSpec(2, -np.ones((2, lay.n_int)), interaction={0: {(1, 1): -0.5}, 1: {(2, 1): 0.3}},
                      alpha=[[1.0], [-0.5]], d=[1.0, 0.5], frac=FracOrderSpec((((0.4, 1.0),), ((0.3, 1.0), (0.8, 0.5)))))
    q = SourceTerm(np.broadcast_to(np.outer(1 + lay.times, x * (1 - x) * 4), (2, lay.n_time + 1, lay.n_int)).copy())
    a = solve_time_fractional(spec, q, lay, normalize=True)
    b = solve_time_fractional(spec, q, lay, normalize=False)
    assert np.abs(a.u - b.u).max() <= 1e-8


def test_evaluate_interaction_examples():
    spec = SystemSpec(2, np.zeros((2, 1)), interaction={0: {(1, 2): -0.04}})
    assert evaluate_interaction(spec, np.array([1.0, 1.0]))[0] == pytest.approx(-0.04)
    verhulst = SystemSpec(1, np.zeros((1, 1)), interaction={0: {(2,): -0.5}})
    assert evaluate_interaction(verhulst, np.array([2.0]))[0] == pytest.approx(-2.0)
    assert not evaluate_interaction(SystemSpec(2, np.zeros((2, 1))), np.array([3.0, 1.0])).any()


def test_spec_validation(lay):
    with pytest.raises(ValueError, match="nonpositive"):
        SystemSpec(1, np.ones((1, lay.n_int)))
    with pytest.raises(ValueError):
        SystemSpec(1, np.zeros((1, 1)), interaction={0: {(0, 2): 1.0}})  # not admissible for species 0
    with pytest.raises(ValueError):
        SystemSpec(1, np.zeros((1, 1)), interaction={0: {(1,): 1.0}})  # degree 1
    with pytest.raises(ValueError):
        SystemSpec(1, np.zeros((1, 1)), d=[-1.0])


def test_picard_failure_reports_step(lay):
    spec = SystemSpec(1, np.zeros((1, lay.n_int)), interaction={0: {(2,): 5.0}}, frac=FracOrderSpec.single(0.5))
    q = SourceTerm(50 * np.ones((1, lay.n_time + 1, lay.n_int)))
    with pytest.raises(SolverError) as info:
        solve_time_fractional(spec, q, lay, max_iters=3)
    assert isinstance(info.value, PicardError)
    assert info.value.step >= 1


def test_csv_and_binary(tmp_path, lay):
    spec = SystemSpec(1, -np.ones((1, lay.n_int)), frac=FracOrderSpec.single(0.5))
    x = lay.interior_coords()[:, 0]
    sol = solve_time_fractional(spec, SourceTerm(np.outer(lay.times, x)[None]), lay)
    sol.to_csv(tmp_path / "u.csv", lay)
    data = np.genfromtxt(tmp_path / "u.csv", delimiter=",", names=True)
    assert data.size == lay.n_nodes * (lay.n_time + 1)
    assert np.array_equal(data["value"].reshape(sol.u.shape), sol.u)  # 17 digits round-trip
    sol.to_binary(tmp_path / "u.bin")
    assert np.array_equal(read_binary(tmp_path / "u.bin"), sol.u)
    write_binary(tmp_path / "a.bin", np.arange(6.0).reshape(2, 3))
    raw = (tmp_path / "a.bin").read_bytes()
    assert raw[:8] == b"FRACINV1"
    assert np.array_equal(read_binary(tmp_path / "a.bin"), np.arange(6.0).reshape(2, 3))


def test_source_term_ops(lay):
    a = SourceTerm.from_function(lay, 1, lambda x, t: np.outer(t, x[:, 0]))
    assert a.is_nonnegative()
    assert np.array_equal((a + a * 2.0).q, 3 * a.q)
    phi = np.ones(lay.n_int)
    sep = SourceTerm.separable(lay, 2, 1, phi, lay.times)
    assert not sep.q[0].any() and np.array_equal(sep.q[1], np.outer(lay.times, phi))
