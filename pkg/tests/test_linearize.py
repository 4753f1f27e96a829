import numpy as np
import pytest

from fracinv.domain import build_layout
from fracinv.experiments import linearization_setup
from fracinv.forward import SystemSpec
from fracinv.fractime import FracOrderSpec
from fracinv.linearize import (
    LinearizedBundle,
    SourceFamily,
    fd_first_order,
    fd_second_order,
    higher_order_source,
    linearize,
    observed_slope,
    set_partitions,
    solve_first_order,
    solve_order,
    solve_second_order,
)
from fracinv.nonlocal_op import KernelSpec

EPS = (1e-2, 5e-3, 2.5e-3)


@pytest.fixture(scope="module")
def setup():
    return linearization_setup(16, 32)


def test_zero_member_gives_zero(setup):
    lay, spec, fam = setup
    g = np.zeros_like(fam.g[0])
    assert not solve_first_order(spec, g, lay, "space").u.any()


def test_first_order_nonnegative(setup):
    lay, spec, fam = setup
    for which in ("space", "time"):
        for l in range(fam.size):
            assert solve_first_order(spec, fam.member(l), lay, which).min_value() >= -1e-12


@pytest.mark.parametrize("which", ["space", "time"])
def test_fd_slopes(setup, which):
    lay, spec, fam = setup
    b = linearize(spec, fam, lay, which, order=2)
    e1 = [np.abs(fd_first_order(spec, fam, 1, e, lay, which) - b.fields[(1,)]).max() for e in EPS]
    e2 = [np.abs(fd_second_order(spec, fam, 0, 1, e, lay, which) - b.fields[(0, 1)]).max() for e in EPS]
    assert observed_slope(EPS, e1) == pytest.approx(1.0, abs=0.2)
    assert observed_slope(EPS, e2) == pytest.approx(1.0, abs=0.2)


def test_no_quadratic_terms_no_second_order(setup):
    lay, _, fam = setup
    spec = SystemSpec(2, -0.5 * np.ones((2, lay.n_int)), interaction={0: {(1, 2): 1.0}}, kernel=KernelSpec(((0.5, 1.0),)))
    b = linearize(spec, fam, lay, "space", order=2)
    assert not b.fields[(0, 1)].any()


def test_square_source_sign():
    lay = build_layout(1, 16, n_time=16)
    x = lay.interior_coords()[:, 0]
    spec = SystemSpec(1, -np.ones((1, lay.n_int)), interaction={0: {(2,): 1.0}}, frac=FracOrderSpec.single(0.5))
    g = np.outer(lay.times, np.sin(np.pi * x))[None]
    u1 = solve_first_order(spec, g, lay, "time")
    inner = u1.interior()
    src = higher_order_source(spec, {(0,): inner, (1,): inner}, (0, 1))
    assert np.allclose(src, 2 * inner**2)
    u12 = solve_second_order(spec, u1, u1, lay, "time")
    assert u12.min_value() >= -1e-12


def test_degree3_without_cubic_coefficient():
    # M=1, F = a u^2 only: the triple source is 2a (u1 u23 + u2 u13 + u3 u12)
    a = 0.7
    spec = SystemSpec(1, np.zeros((1, 1)), interaction={0: {(2,): a}})
    rng = np.random.default_rng(0)
    f = {k: rng.standard_normal((1, 3, 4)) for k in [(0,), (1,), (2,), (0, 1), (0, 2), (1, 2)]}
    src = higher_order_source(spec, f, (0, 1, 2))
    expect = 2 * a * (f[(0,)] * f[(1, 2)] + f[(1,)] * f[(0, 2)] + f[(2,)] * f[(0, 1)])
    assert np.allclose(src, expect)


def test_zero_coefficients_zero_source():
    spec = SystemSpec(2, np.zeros((2, 1)))
    f = {k: np.ones((2, 2, 3)) for k in [(0,), (1,), (0, 1)]}
    assert not higher_order_source(spec, f, (0, 1)).any()


def test_gray_scott_cubic_permutation_count():
    m = 0.04
    spec = SystemSpec(2, np.zeros((2, 1)), interaction={0: {(1, 2): -m}})
    one, zero = np.ones((1, 1)), np.zeros((1, 1))
    f = {
        (0,): np.stack([one, zero]), (1,): np.stack([zero, one]), (2,): np.stack([zero, one]),
        (0, 1): np.zeros((2, 1, 1)), (0, 2): np.zeros((2, 1, 1)), (1, 2): np.zeros((2, 1, 1)),
    }
    src = higher_order_source(spec, f, (0, 1, 2))
    # u * v * v multilinearized over labels {0: u, 1: v, 2: v}: 2 assignments
    assert src[0, 0, 0] == pytest.approx(-2 * m)


def test_symmetry_in_labels(setup):
    lay, spec, fam = setup
    b = linearize(spec, fam, lay, "time", order=1)
    inner = {k: v[:, :, lay.interior_index] for k, v in b.fields.items()}
    assert np.array_equal(higher_order_source(spec, inner, (0, 1)), higher_order_source(spec, inner, (1, 0)))


def test_order_guards(setup):
    lay, spec, fam = setup
    quad = {i: {k: c for k, c in t.items() if sum(k) == 2} for i, t in spec.interaction.items()}
    s2 = SystemSpec(2, spec.potential, interaction=quad, kernel=spec.kernel, max_order=2)
    bundle = linearize(s2, fam, lay, "space", order=1)
    with pytest.raises(ValueError):
        solve_order(s2, bundle, (0, 0, 1), lay, "space")
    with pytest.raises(KeyError):
        higher_order_source(spec, {(0,): np.zeros((2, 2, 2))}, (0, 1))


def test_set_partitions_bell_numbers():
    assert [sum(1 for _ in set_partitions(list(range(n)))) for n in range(1, 6)] == [1, 2, 5, 15, 52]


def test_family_amplitude_guard(setup):
    _, _, fam = setup
    with pytest.raises(ValueError):
        fam.source([1.0, 0.0])
    assert isinstance(LinearizedBundle(), LinearizedBundle)
    assert isinstance(fam, SourceFamily)
