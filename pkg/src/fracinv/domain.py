"""Discretized geometry: the unit box, its exterior collar and the time grid.

Nodes live on the integer lattice ``k * h`` with ``h = 1 / (n_interior + 1)``.
Along each axis the lattice runs from ``-K`` to ``n_interior + 1 + K`` where
``K`` is the number of collar cells.  Every node carries exactly one tag:

* ``interior`` -- strictly inside the box,
* ``boundary`` -- on the box surface,
* ``exterior_accessible`` -- collar node inside the measurement region,
* ``exterior_far`` -- any other collar node.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from numpy.typing import NDArray

INTERIOR = 0
BOUNDARY = 1
EXTERIOR_ACCESSIBLE = 2
EXTERIOR_FAR = 3
NODE_CLASS_NAMES = ("interior", "boundary", "exterior_accessible", "exterior_far")

Selector = Union[str, Callable[[NDArray[np.float64]], NDArray[np.bool_]], None]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DomainLayout:
    """Uniform tensor grid over the unit box plus an exterior collar.

    Attributes
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    n_interior : int
        Interior node count per axis.
    h : float
        Grid spacing.
    collar_cells : int
        Number of collar cells per side.
    coords : ndarray, shape (n_nodes, dim)
        Node coordinates.
    lattice : ndarray, shape (n_nodes, dim)
        Integer lattice index of every node (interior indices are 1..n).
    node_class : ndarray, shape (n_nodes,)
        One of the four node-class codes.
    gamma_mask : ndarray, shape (n_nodes,)
        Boundary nodes carrying boundary measurements.
    t_final, n_time :
        Final time and number of time steps.
    obs_point_index : int
        Global index of the observation node.
    """

    dim: int
    n_interior: int
    h: float
    collar_cells: int
    coords: np.ndarray
    lattice: np.ndarray
    node_class: np.ndarray
    gamma_mask: np.ndarray
    t_final: float
    n_time: int
    obs_point_index: int
    _lookup: dict = field(repr=False, default_factory=dict)

    @property
    def collar_width(self) -> float:
        return self.collar_cells * self.h

    @property
    def dt(self) -> float:
        return self.t_final / self.n_time

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_time + 1)

    @property
    def n_nodes(self) -> int:
        return self.node_class.size

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def axis_count(self) -> int:
        return self.n_interior + 2 + 2 * self.collar_cells

    def mask(self, name: str) -> np.ndarray:
        """Boolean mask for a node class name or for ``exterior`` / ``gamma``."""
        if name == "exterior":
            return self.node_class != INTERIOR
        if name == "collar":
            return self.node_class >= EXTERIOR_ACCESSIBLE
        if name == "gamma":
            return self.gamma_mask
        return self.node_class == NODE_CLASS_NAMES.index(name)

    @property
    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(self.node_class == INTERIOR)

    @property
    def exterior_index(self) -> np.ndarray:
        return np.flatnonzero(self.node_class != INTERIOR)

    @property
    def accessible_index(self) -> np.ndarray:
        return np.flatnonzero(self.node_class == EXTERIOR_ACCESSIBLE)

    @property
    def gamma_index(self) -> np.ndarray:
        return np.flatnonzero(self.gamma_mask)

    @property
    def n_int(self) -> int:
        return int(np.count_nonzero(self.node_class == INTERIOR))

    @property
    def obs_interior_position(self) -> int:
        """Position of the observation node inside ``interior_index``."""
        return int(np.searchsorted(self.interior_index, self.obs_point_index))

    def node_at(self, lattice_index: Sequence[int]) -> int:
        """Global node index for a lattice tuple, or -1 outside the grid."""
        return self._lookup.get(tuple(int(k) for k in lattice_index), -1)

    def interior_coords(self) -> np.ndarray:
        return self.coords[self.interior_index]

    def to_json(self) -> str:
        return json.dumps(
            {
                "dim": self.dim,
                "n_interior": self.n_interior,
                "h": self.h,
                "collar_cells": self.collar_cells,
                "collar_width": self.collar_width,
                "t_final": self.t_final,
                "n_time": self.n_time,
                "dt": self.dt,
                "obs_point_index": self.obs_point_index,
                "n_nodes": self.n_nodes,
                "node_tags": run_length_encode([NODE_CLASS_NAMES[c] for c in self.node_class]),
                "gamma": run_length_encode([bool(g) for g in self.gamma_mask]),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "DomainLayout":
        doc = json.loads(text)
        tags = run_length_decode(doc["node_tags"])
        gamma = np.array(run_length_decode(doc["gamma"]), dtype=bool)
        node_class = np.array([NODE_CLASS_NAMES.index(t) for t in tags], dtype=np.int8)
        coords, lattice, lookup = _lattice(doc["dim"], doc["n_interior"], doc["collar_cells"])
        return cls(
            dim=doc["dim"],
            n_interior=doc["n_interior"],
            h=doc["h"],
            collar_cells=doc["collar_cells"],
            coords=_freeze(coords),
            lattice=_freeze(lattice),
            node_class=_freeze(node_class),
            gamma_mask=_freeze(gamma),
            t_final=doc["t_final"],
            n_time=doc["n_time"],
            obs_point_index=doc["obs_point_index"],
            _lookup=lookup,
        )


def run_length_encode(values: Sequence) -> list[list]:
    """Encode a sequence as ``[[value, count], ...]``."""
    out: list[list] = []
    for v in values:
        if out and out[-1][0] == v:
            out[-1][1] += 1
        else:
            out.append([v, 1])
    return out


def run_length_decode(pairs: Sequence[Sequence]) -> list:
    out: list = []
    for v, n in pairs:
        out.extend([v] * int(n))
    return out


@dataclass(frozen=True)
class FieldIndexing:
    """Flattening rule ``(species, node, step) -> offset`` for stacked fields.

    Storage is row-major over ``(species, step, node)``, the layout used by
    every field array in the package.
    """

    n_species: int
    n_nodes: int
    n_steps: int  # number of stored time levels (n_time + 1)

    @property
    def size(self) -> int:
        return self.n_species * self.n_nodes * self.n_steps

    def offset(self, species, node, step):
        return (np.asarray(species) * self.n_steps + np.asarray(step)) * self.n_nodes + np.asarray(node)

    def unravel(self, offset):
        offset = np.asarray(offset)
        node = offset % self.n_nodes
        rest = offset // self.n_nodes
        return rest // self.n_steps, node, rest % self.n_steps

    @staticmethod
    def masks(layout: DomainLayout) -> dict[str, np.ndarray]:
        return {name: layout.node_class == k for k, name in enumerate(NODE_CLASS_NAMES)}


def _lattice(dim: int, n: int, K: int):
    h = 1.0 / (n + 1)
    axis = np.arange(-K, n + 2 + K)
    if dim == 1:
        lattice = axis[:, None]
    else:
        ii, jj = np.meshgrid(axis, axis, indexing="ij")
        lattice = np.column_stack([ii.ravel(), jj.ravel()])
    coords = lattice * h
    lookup = {tuple(int(k) for k in row): idx for idx, row in enumerate(lattice)}
    return coords.astype(float), lattice.astype(np.int64), lookup


def _select(selector: Selector, coords: np.ndarray, candidates: np.ndarray, kind: str) -> np.ndarray:
    if callable(selector):
        chosen = np.asarray(selector(coords), dtype=bool)
        if chosen.shape != (coords.shape[0],):
            raise ValueError(f"{kind} selector must return one boolean per node")
        return chosen & candidates
    x = coords[:, 0]
    presets = {
        "left": x < 1e-12 if kind == "gamma" else x < 0.0,
        "right": x > 1.0 - 1e-12 if kind == "gamma" else x > 1.0,
        "all": np.ones_like(x, dtype=bool),
    }
    if selector not in presets:
        raise ValueError(f"unknown {kind} selector {selector!r}; use 'left', 'right', 'all' or a callable")
    return presets[selector] & candidates


def build_layout(
    dim: int = 1,
    n_interior: int = 32,
    collar_width: float | None = None,
    accessible_selector: Selector = "right",
    gamma_selector: Selector = "left",
    t_final: float = 1.0,
    n_time: int = 64,
    obs_point: float | Sequence[float] | None = None,
) -> DomainLayout:
    """Build the grid over the unit box with an exterior collar.

    Parameters
    ----------
    dim : int
        1 or 2.
    n_interior : int
        Interior nodes per axis, at least 4.
    collar_width : float, optional
        Physical width of the collar; defaults to a quarter of the box diameter.
        Rounded down to a whole number of cells, which must be at least two.
    accessible_selector, gamma_selector : str or callable
        ``'left'``, ``'right'``, ``'all'`` or a function of the ``(n_nodes, dim)``
        coordinate array returning a boolean mask.  Only collar nodes can be
        accessible and only non-corner boundary nodes can lie on the boundary
        measurement portion.
    t_final, n_time :
        Final time and number of uniform steps.
    obs_point : float or tuple, optional
        Observation point; snapped to the nearest node, which must be interior.
        Defaults to the interior node closest to the box centre.

    Returns
    -------
    DomainLayout
    """
    if dim not in (1, 2):
        raise ValueError("dim must be 1 or 2")
    if n_interior < 4:
        raise ValueError("n_interior must be at least 4")
    if t_final <= 0 or n_time < 1:
        raise ValueError("t_final must be positive and n_time at least 1")
    h = 1.0 / (n_interior + 1)
    if collar_width is None:
        collar_width = 0.25 * np.sqrt(dim)
    K = int(np.floor(collar_width / h + 1e-9))
    if K < 1:
        raise ValueError("collar narrower than one cell")
    if K < 2:
        raise ValueError("collar must span at least two cells (collar_width >= 2h)")

    coords, lattice, lookup = _lattice(dim, n_interior, K)
    inside = np.all((lattice >= 1) & (lattice <= n_interior), axis=1)
    in_box = np.all((lattice >= 0) & (lattice <= n_interior + 1), axis=1)
    node_class = np.full(coords.shape[0], EXTERIOR_FAR, dtype=np.int8)
    node_class[inside] = INTERIOR
    node_class[in_box & ~inside] = BOUNDARY

    collar = ~in_box
    accessible = _select(accessible_selector, coords, collar, "accessible")
    if not accessible.any():
        raise ValueError("empty accessible set")
    node_class[accessible] = EXTERIOR_ACCESSIBLE

    on_face = in_box & ~inside
    if dim == 2:
        extreme = (lattice == 0) | (lattice == n_interior + 1)
        on_face &= extreme.sum(axis=1) == 1  # corners have no unique normal
    gamma = _select(gamma_selector, coords, on_face, "gamma")
    if not gamma.any():
        raise ValueError("empty boundary measurement portion")

    if obs_point is None:
        centre = np.full(dim, 0.5)
        cand = np.flatnonzero(inside)
        dist = np.linalg.norm(coords[cand] - centre, axis=1)
        obs = int(cand[np.argmin(dist + 1e-12 * np.arange(cand.size))])
    else:
        target = np.atleast_1d(np.asarray(obs_point, dtype=float))
        if target.size != dim:
            raise ValueError("obs_point dimension mismatch")
        obs = int(np.argmin(np.linalg.norm(coords - target, axis=1)))
        if node_class[obs] != INTERIOR:
            raise ValueError("observation point x0 is not an interior node")

    return DomainLayout(
        dim=dim,
        n_interior=n_interior,
        h=h,
        collar_cells=K,
        coords=_freeze(coords),
        lattice=_freeze(lattice),
        node_class=_freeze(node_class),
        gamma_mask=_freeze(gamma),
        t_final=float(t_final),
        n_time=int(n_time),
        obs_point_index=obs,
        _lookup=lookup,
    )


def interior_laplacian(layout: DomainLayout) -> np.ndarray:
    """Dense 2d+1 point Laplacian on interior nodes with zero boundary values."""
    idx = layout.interior_index
    pos = {int(g): k for k, g in enumerate(idx)}
    n = idx.size
    lap = np.zeros((n, n))
    inv_h2 = 1.0 / layout.h**2
    for k, g in enumerate(idx):
        lap[k, k] = -2.0 * layout.dim * inv_h2
        base = layout.lattice[g]
        for axis in range(layout.dim):
            for step in (-1, 1):
                nb = base.copy()
                nb[axis] += step
                j = pos.get(layout.node_at(nb))
                if j is not None:
                    lap[k, j] = inv_h2
    return lap


def inward_normal_stencil(layout: DomainLayout) -> np.ndarray:
    """Matrix mapping interior values to outward normal derivatives on Gamma.

    One-sided second-order difference ``(3u_0 - 4u_1 + u_2) / (2h)`` along the
    inward normal, with ``u_0 = 0`` on the boundary node itself.
    """
    gidx = layout.gamma_index
    pos = {int(g): k for k, g in enumerate(layout.interior_index)}
    S = np.zeros((gidx.size, layout.n_int))
    n = layout.n_interior
    for r, g in enumerate(gidx):
        base = layout.lattice[g]
        axis = int(np.flatnonzero((base == 0) | (base == n + 1))[0])
        inward = 1 if base[axis] == 0 else -1
        for dist, coef in ((1, -4.0), (2, 1.0)):
            nb = base.copy()
            nb[axis] += inward * dist
            S[r, pos[layout.node_at(nb)]] += coef / (2.0 * layout.h)
    return S
