import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracinv.domain import build_layout
from fracinv.nonlocal_op import (
    KernelSpec,
    assemble_drift,
    assemble_nonlocal,
    green_identity_residual,
    interaction_flux,
    tail_mass,
)

LAY16 = build_layout(1, 16)


def test_constants_in_kernel_without_tail():
    op = assemble_nonlocal(LAY16, KernelSpec(((0.5, 1.0),)), tail=False)
    u = np.full(LAY16.n_nodes, 3.0)
    assert np.abs(op.apply(u)[LAY16.interior_index]).max() < 1e-10 * np.abs(op.full).max()


def test_symmetric_without_drift():
    op = assemble_nonlocal(LAY16, KernelSpec(((0.5, 1.0),)))
    assert np.array_equal(op.full, op.full.T)


def test_smallest_eigenvalue_positive():
    lay = build_layout(1, 8)
    table = assemble_nonlocal(lay, KernelSpec(((0.5, 1.0),))).table
    assert np.linalg.eigvalsh(table).min() > 0


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(0.05, 0.95), st.floats(0.05, 5.0)), min_size=1, max_size=3, unique_by=lambda t: round(t[0], 2)))
def test_m_matrix_pattern(terms):
    terms = sorted(terms)
    if any(b[0] - a[0] < 1e-3 for a, b in zip(terms, terms[1:])):
        return
    full = assemble_nonlocal(build_layout(1, 8), KernelSpec(tuple(terms))).full
    off = full - np.diag(np.diag(full))
    assert np.all(off <= 0) and np.all(np.diag(full) >= 0)


def test_kernel_validation():
    with pytest.raises(ValueError):
        KernelSpec(((1.2, 1.0),))
    with pytest.raises(ValueError):
        KernelSpec(((0.5, -1.0),))
    with pytest.raises(ValueError):
        KernelSpec(((0.7, 1.0), (0.3, 1.0)))


def test_tail_mass_decreases():
    k = KernelSpec(((0.3, 1.0), (0.7, 2.0)))
    vals = [tail_mass(k, R, 1) for R in (0.5, 1.0, 2.0, 1e12)]
    assert vals[0] > vals[1] > vals[2] > vals[3] and vals[3] < 1e-3


def test_drift_zero_table():
    assert not assemble_drift(LAY16, 0.0).full.any()


def test_drift_exact_on_linear():
    x = LAY16.coords[:, 0]
    out = assemble_drift(LAY16, 1.0).apply(x)
    inner = LAY16.interior_index[2:-2]
    assert np.allclose(out[inner], 1.0, atol=1e-12)


def test_drift_rows_mirror():
    lay = build_layout(1, 8)
    plus = assemble_drift(lay, 1.0).full
    minus = assemble_drift(lay, -1.0).full
    # mirrored grid: node g <-> n_nodes-1-g
    assert np.array_equal(plus, minus[::-1, ::-1])


def test_flux_vanishes_on_zero_and_constants():
    k = KernelSpec(((0.5, 1.0),))
    assert not interaction_flux(LAY16, k, np.zeros(LAY16.n_nodes)).any()
    assert np.abs(interaction_flux(LAY16, k, np.full(LAY16.n_nodes, 2.0))).max() < 1e-10


def test_flux_sign_by_direct_sum():
    k = KernelSpec(((0.5, 1.0),))
    op = assemble_nonlocal(LAY16, k)
    u = np.zeros(LAY16.n_nodes)
    u[LAY16.interior_index] = np.random.default_rng(1).uniform(0, 1, LAY16.n_int)
    flux = interaction_flux(LAY16, k, u, op)
    W = op.weights
    ext = LAY16.exterior_index
    direct = np.array([-2 * np.sum(W[e] * (u - u[e])) for e in ext])
    assert np.allclose(flux, direct, rtol=1e-12, atol=1e-14)
    assert np.all(flux <= 0)


def test_green_identity_trivial_and_random():
    k = KernelSpec(((0.3, 1.0), (0.7, 1.0)))
    rng = np.random.default_rng(0)
    u = rng.standard_normal(LAY16.n_nodes)
    assert green_identity_residual(LAY16, k, u, np.zeros(LAY16.n_nodes)) == 0
    assert green_identity_residual(LAY16, k, np.zeros(LAY16.n_nodes), u) == 0
    x = LAY16.coords[:, 0]
    bump = np.exp(-30 * (x - 0.5) ** 2)
    bump2 = np.exp(-20 * (x - 0.3) ** 2)
    assert green_identity_residual(LAY16, k, bump, bump2) <= 1e-10


def test_green_identity_2d():
    lay = build_layout(2, 6)
    k = KernelSpec(((0.4, 1.0),))
    rng = np.random.default_rng(2)
    assert green_identity_residual(lay, k, rng.standard_normal(lay.n_nodes), rng.standard_normal(lay.n_nodes)) <= 1e-10
