import numpy as np
import pytest

from fracinv.domain import (
    BOUNDARY,
    EXTERIOR_ACCESSIBLE,
    INTERIOR,
    NODE_CLASS_NAMES,
    DomainLayout,
    FieldIndexing,
    build_layout,
    interior_laplacian,
    inward_normal_stencil,
    run_length_decode,
    run_length_encode,
)


def test_1d_right_collar():
    lay = build_layout(1, 8, collar_width=0.25)
    assert lay.n_int == 8
    assert lay.accessible_index.size >= 2
    assert np.all(lay.coords[lay.accessible_index, 0] > 1.0)
    assert lay.coords[:, 0].min() >= -0.25 - 1e-12 and lay.coords[:, 0].max() <= 1.25 + 1e-12


def test_gamma_left_endpoint_only():
    lay = build_layout(1, 8)
    assert lay.gamma_index.size == 1
    assert lay.coords[lay.gamma_index[0], 0] == 0.0


def test_2d_counts_by_enumeration():
    lay = build_layout(2, 16)
    assert lay.n_int == 256
    # brute force: classify every lattice point independently
    n = 16
    counts = {c: 0 for c in range(4)}
    edges = set()
    for (i, j), cls in zip(lay.lattice, lay.node_class):
        inside = 1 <= i <= n and 1 <= j <= n
        in_box = 0 <= i <= n + 1 and 0 <= j <= n + 1
        expected = INTERIOR if inside else BOUNDARY if in_box else cls
        assert cls == expected
        counts[cls] += 1
        if cls == BOUNDARY and sum(v in (0, n + 1) for v in (i, j)) == 1:
            edges.add((i == 0, i == n + 1, j == 0, j == n + 1))
    assert counts[BOUNDARY] == 4 * (n + 1)
    assert len(edges) == 4


@pytest.mark.parametrize("dim,n", [(1, 8), (1, 33), (2, 8)])
def test_partition(dim, n):
    lay = build_layout(dim, n)
    assert sum(lay.mask(c).sum() for c in NODE_CLASS_NAMES) == lay.n_nodes


def test_deterministic_and_json_round_trip():
    a = build_layout(2, 8, accessible_selector="all")
    b = build_layout(2, 8, accessible_selector="all")
    assert a.to_json() == b.to_json()
    c = DomainLayout.from_json(a.to_json())
    assert np.array_equal(c.node_class, a.node_class)
    assert np.array_equal(c.coords, a.coords)
    assert c.obs_point_index == a.obs_point_index


def test_errors():
    with pytest.raises(ValueError):
        build_layout(1, 8, collar_width=0.1)  # one cell only
    with pytest.raises(ValueError, match="interior"):
        build_layout(1, 8, obs_point=1.1)
    with pytest.raises(ValueError):
        build_layout(3, 8)
    with pytest.raises(ValueError, match="accessible"):
        build_layout(1, 8, accessible_selector=lambda X: X[:, 0] > 5)


def test_run_length_round_trip():
    vals = [0, 0, 1, 1, 1, 2, 0]
    assert run_length_encode(vals) == [[0, 2], [1, 3], [2, 1], [0, 1]]
    assert run_length_decode(run_length_encode(vals)) == vals


def test_field_indexing_round_trip():
    idx = FieldIndexing(3, 10, 5)
    off = np.arange(idx.size)
    s, node, step = idx.unravel(off)
    assert np.array_equal(idx.offset(s, node, step), off)
    # row-major over (species, step, node)
    assert np.array_equal(np.arange(idx.size).reshape(3, 5, 10)[s, step, node], off)


def test_laplacian_and_normal_derivative():
    lay = build_layout(1, 64)
    x = lay.interior_coords()[:, 0]
    u = np.sin(np.pi * x)
    err = np.abs(interior_laplacian(lay) @ u + np.pi**2 * u).max()
    assert err < 5e-3
    dnu = inward_normal_stencil(lay) @ u
    # outward normal at x=0 points left: d_nu u = -u'(0) = -pi
    assert abs(dnu[0] + np.pi) < 5 * lay.h**2 * np.pi**3


def test_accessible_is_exterior_only():
    lay = build_layout(2, 8, accessible_selector="all")
    assert np.all(lay.node_class[lay.accessible_index] == EXTERIOR_ACCESSIBLE)
    assert not np.any(np.all((lay.coords[lay.accessible_index] >= 0) & (lay.coords[lay.accessible_index] <= 1), axis=1))
