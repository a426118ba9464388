"""Reference cell and periodically perforated mesh construction.

The reference cell is the unit square minus an interior disk.  A single
template triangulation of it is built once and the macroscopic perforated
mesh is obtained purely by replicating that template over the cell lattice
and scaling, never by independent global meshing.  That makes the unfolding
operator an exact node relabeling and makes shifted fields comparable
node-by-node.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from perihom.errors import ConfigError, GeometryError, MeshingError

GAMMA = "GAMMA"
SIDES = ("left", "right", "bottom", "top")

_CIRCLE_TOL = 1e-12
_DEFAULT_ANGLE_FLOOR_DEG = 20.0


# ---------------------------------------------------------------------------
# specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellSpec:
    """Geometry of the reference cell: unit square minus one interior disk."""

    hole_radius: float = 0.25
    hole_center: tuple[float, float] = (0.5, 0.5)
    refine_level: int = 1
    angle_floor_deg: float = _DEFAULT_ANGLE_FLOOR_DEG

    def __post_init__(self):
        r0 = self.hole_radius
        cx, cy = self.hole_center
        if not (0.0 < r0 < 0.5):
            raise GeometryError(f"hole radius must lie in (0, 0.5), got {r0}")
        if not (0.0 < cx < 1.0 and 0.0 < cy < 1.0):
            raise GeometryError(f"hole center must be interior to the unit square, got {self.hole_center}")
        if self.boundary_distance() <= r0:
            raise GeometryError(
                f"hole touches the cell boundary: dist(center, boundary) = "
                f"{self.boundary_distance():.6g} <= r0 = {r0}"
            )
        if self.refine_level < 0:
            raise GeometryError("refine_level must be >= 0")

    def boundary_distance(self) -> float:
        """Distance from the hole center to the square boundary."""
        cx, cy = self.hole_center
        return min(cx, 1.0 - cx, cy, 1.0 - cy)


# ---------------------------------------------------------------------------
# triangle utilities
# ---------------------------------------------------------------------------

def triangle_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Signed areas; positive for counterclockwise triangles."""
    p0 = nodes[triangles[:, 0]]
    p1 = nodes[triangles[:, 1]]
    p2 = nodes[triangles[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def min_angles_deg(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Smallest interior angle of each triangle, in degrees."""
    p = nodes[triangles]
    angles = np.empty((len(triangles), 3))
    for i in range(3):
        a = p[:, (i + 1) % 3] - p[:, i]
        b = p[:, (i + 2) % 3] - p[:, i]
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        cosang = np.clip(np.einsum("ij,ij->i", a, b) / (na * nb), -1.0, 1.0)
        angles[:, i] = np.degrees(np.arccos(cosang))
    return angles.min(axis=1)


def boundary_edges_of(triangles: np.ndarray) -> np.ndarray:
    """Edges adjacent to exactly one triangle, keeping the triangle orientation.

    With counterclockwise triangles the domain lies to the left of each
    returned directed edge, so the outward normal is the right-hand rotation
    of the edge tangent.
    """
    directed = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.ascontiguousarray(np.sort(directed, axis=1))
    view = key.view([("a", key.dtype), ("b", key.dtype)]).ravel()
    _, inverse, counts = np.unique(view, return_inverse=True, return_counts=True)
    return directed[counts[inverse] == 1]


def _orient_ccw(nodes, triangles):
    areas = triangle_areas(nodes, triangles)
    flip = areas < 0
    triangles = triangles.copy()
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    return triangles


# ---------------------------------------------------------------------------
# reference cell mesh
# ---------------------------------------------------------------------------

@dataclass
class CellMesh:
    """Conforming P1 triangulation of the reference cell.

    Node coordinates live in the closed unit square; every node tagged GAMMA
    lies on the exact hole circle.  ``periodic_pairs_x`` maps each left-face
    node to the right-face node with the identical transverse coordinate
    (same for ``periodic_pairs_y`` bottom/top), so opposite faces can be
    identified index-by-index.
    """

    spec: CellSpec
    nodes: np.ndarray                 # (N, 2)
    triangles: np.ndarray             # (T, 3) counterclockwise
    gamma_edges: np.ndarray           # (Eg, 2) node ids on the hole circle
    outer_edges: dict                 # side -> (E, 2) node ids
    periodic_pairs_x: np.ndarray      # (P, 2) [left id, right id]
    periodic_pairs_y: np.ndarray      # (P, 2) [bottom id, top id]
    areas: np.ndarray = field(init=False)

    def __post_init__(self):
        self.areas = triangle_areas(self.nodes, self.triangles)
        for arr in (self.nodes, self.triangles, self.gamma_edges,
                    self.periodic_pairs_x, self.periodic_pairs_y, self.areas):
            arr.setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def area(self) -> float:
        return float(self.areas.sum())

    def gamma_length(self) -> float:
        a = self.nodes[self.gamma_edges[:, 0]]
        b = self.nodes[self.gamma_edges[:, 1]]
        return float(np.linalg.norm(a - b, axis=1).sum())

    def gamma_nodes(self) -> np.ndarray:
        return np.unique(self.gamma_edges)

    def face_nodes(self, side: str) -> np.ndarray:
        return np.unique(self.outer_edges[side])

    def min_angle_deg(self) -> float:
        return float(min_angles_deg(self.nodes, self.triangles).min())


def _base_point_set(spec: CellSpec):
    """Uniform grid plus an exact-circle ring, with a protected gap between."""
    r0 = spec.hole_radius
    c = np.asarray(spec.hole_center)
    n = 6                                     # base grid intervals per side
    h = 1.0 / n
    ring = max(8, 4 * int(round(0.5 * np.pi * r0 * n)))   # multiple of 4
    chord = 2.0 * r0 * np.sin(np.pi / ring)
    band = max(0.55 * chord, 0.45 * h)

    g = np.linspace(0.0, 1.0, n + 1)
    gx, gy = np.meshgrid(g, g, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    dist = np.linalg.norm(grid - c, axis=1)
    grid = grid[dist > r0 + band]

    theta = 2.0 * np.pi * np.arange(ring) / ring
    circle = c + r0 * np.column_stack([np.cos(theta), np.sin(theta)])

    points = np.vstack([grid, circle])
    circle_ids = np.arange(len(grid), len(points))
    return points, circle_ids


def _classify_boundary(nodes, triangles, spec: CellSpec):
    """Split boundary edges into the hole circle and the four outer faces."""
    r0 = spec.hole_radius
    c = np.asarray(spec.hole_center)
    edges = boundary_edges_of(triangles)
    on_circle = np.abs(np.linalg.norm(nodes - c, axis=1) - r0) <= _CIRCLE_TOL

    gamma, outer = [], {s: [] for s in SIDES}
    for a, b in edges:
        if on_circle[a] and on_circle[b]:
            gamma.append((a, b))
        elif nodes[a, 0] == 0.0 and nodes[b, 0] == 0.0:
            outer["left"].append((a, b))
        elif nodes[a, 0] == 1.0 and nodes[b, 0] == 1.0:
            outer["right"].append((a, b))
        elif nodes[a, 1] == 0.0 and nodes[b, 1] == 0.0:
            outer["bottom"].append((a, b))
        elif nodes[a, 1] == 1.0 and nodes[b, 1] == 1.0:
            outer["top"].append((a, b))
        else:
            raise MeshingError(
                f"boundary edge ({a},{b}) lies neither on the circle nor on a face: "
                f"{nodes[a]}, {nodes[b]}"
            )
    gamma = np.asarray(gamma, dtype=np.int64).reshape(-1, 2)
    outer = {s: np.asarray(v, dtype=np.int64).reshape(-1, 2) for s, v in outer.items()}
    return gamma, outer


def _periodic_pairs(nodes, outer_edges):
    def pairs(side_a, side_b, axis):
        ids_a = np.unique(outer_edges[side_a])
        ids_b = np.unique(outer_edges[side_b])
        if len(ids_a) != len(ids_b):
            raise MeshingError(f"face node counts differ: {side_a}={len(ids_a)} {side_b}={len(ids_b)}")
        order_a = ids_a[np.argsort(nodes[ids_a, axis], kind="stable")]
        order_b = ids_b[np.argsort(nodes[ids_b, axis], kind="stable")]
        if not np.array_equal(nodes[order_a, axis], nodes[order_b, axis]):
            raise MeshingError(f"{side_a}/{side_b} face nodes do not match under a unit shift")
        return np.column_stack([order_a, order_b])

    return pairs("left", "right", 1), pairs("bottom", "top", 0)


def _subdivide(nodes, triangles, spec: CellSpec):
    """Midpoint refinement; midpoints of circle edges snap back to the circle."""
    r0 = spec.hole_radius
    c = np.asarray(spec.hole_center)
    on_circle = np.abs(np.linalg.norm(nodes - c, axis=1) - r0) <= _CIRCLE_TOL

    edge_mid: dict[tuple[int, int], int] = {}
    new_nodes = [nodes]
    next_id = len(nodes)
    mids = []

    def midpoint(a, b):
        nonlocal next_id
        key = (a, b) if a < b else (b, a)
        if key in edge_mid:
            return edge_mid[key]
        p = 0.5 * (nodes[a] + nodes[b])
        if on_circle[a] and on_circle[b]:
            v = p - c
            p = c + r0 * v / np.linalg.norm(v)
        mids.append(p)
        edge_mid[key] = next_id
        next_id += 1
        return edge_mid[key]

    children = np.empty((4 * len(triangles), 3), dtype=np.int64)
    for t, (a, b, d) in enumerate(triangles):
        mab = midpoint(a, b)
        mbd = midpoint(b, d)
        mda = midpoint(d, a)
        children[4 * t:4 * t + 4] = [(a, mab, mda), (mab, b, mbd), (mda, mbd, d), (mab, mbd, mda)]
    if mids:
        new_nodes.append(np.asarray(mids))
    return np.vstack(new_nodes), children


def build_reference_cell(spec: CellSpec) -> CellMesh:
    """Triangulate the reference cell and tag its boundary.

    The base triangulation is a Delaunay triangulation of a uniform grid with
    the hole cut out and the circle resolved as a polygon whose vertices lie
    on the exact circle; a protected gap around the circle keeps the polygon
    edges Delaunay.  ``refine_level`` midpoint subdivisions follow, snapping
    circle-edge midpoints back onto the circle.
    """
    points, _ = _base_point_set(spec)
    tri = Delaunay(points)
    triangles = tri.simplices.astype(np.int64)

    # drop triangles covering the hole
    c = np.asarray(spec.hole_center)
    centroids = points[triangles].mean(axis=1)
    keep = np.linalg.norm(centroids - c, axis=1) >= spec.hole_radius
    triangles = triangles[keep]

    # drop nodes that no longer appear
    used = np.unique(triangles)
    remap = -np.ones(len(points), dtype=np.int64)
    remap[used] = np.arange(len(used))
    nodes = points[used]
    triangles = remap[triangles]
    triangles = _orient_ccw(nodes, triangles)

    for _ in range(spec.refine_level):
        nodes, triangles = _subdivide(nodes, triangles, spec)
        triangles = _orient_ccw(nodes, triangles)

    areas = triangle_areas(nodes, triangles)
    if np.any(areas <= 0.0):
        raise MeshingError("degenerate triangle in the template mesh")
    worst = float(min_angles_deg(nodes, triangles).min())
    if worst < spec.angle_floor_deg:
        raise MeshingError(
            f"template mesh quality below floor: min angle {worst:.2f} deg "
            f"< {spec.angle_floor_deg} deg"
        )

    gamma, outer = _classify_boundary(nodes, triangles, spec)
    if len(gamma) == 0:
        raise MeshingError("hole boundary not resolved")
    pairs_x, pairs_y = _periodic_pairs(nodes, outer)
    return CellMesh(spec, nodes, triangles, gamma, outer, pairs_x, pairs_y)


# ---------------------------------------------------------------------------
# perforated macroscopic mesh
# ---------------------------------------------------------------------------

@dataclass
class PerforatedMesh:
    """The template cell replicated over every lattice cell inside a rectangle.

    ``global_of[c, j]`` is the global node id of template node ``j`` inside
    lattice cell ``c`` (the exact relabeling used by the unfolding operator);
    duplicate nodes on shared cell faces are merged, and the stored canonical
    preimage of a merged node is its first owner in cell-lattice-major order.
    """

    epsilon: float
    template: CellMesh
    rect: tuple[float, float, float, float]   # x0, x1, y0, y1
    cells: np.ndarray                         # (C, 2) lattice indices k
    nodes: np.ndarray                         # (N, 2)
    triangles: np.ndarray                     # (C*Tt, 3)
    global_of: np.ndarray                     # (C, Nt)
    cell_of_node: np.ndarray                  # (N,) canonical owner cell index
    template_node_of_node: np.ndarray         # (N,)
    cell_of_tri: np.ndarray                   # (C*Tt,)
    template_tri_of_tri: np.ndarray           # (C*Tt,)
    gamma_edges: np.ndarray                   # (Eg, 2) global node ids
    outer_edges: np.ndarray                   # (Eo, 2) global node ids
    areas: np.ndarray = field(init=False)

    def __post_init__(self):
        self.areas = triangle_areas(self.nodes, self.triangles)
        for arr in (self.nodes, self.triangles, self.global_of, self.cells, self.areas):
            arr.setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    def area(self) -> float:
        return float(self.areas.sum())

    def cell_anchor(self, mode: str = "corner") -> np.ndarray:
        """Macro points attached to each cell: lattice corner eps*k or center eps*(k+1/2)."""
        if mode == "corner":
            return self.epsilon * self.cells.astype(float)
        if mode == "center":
            return self.epsilon * (self.cells + 0.5)
        raise ValueError(f"unknown anchor mode {mode!r}")

    def cell_index(self, k: tuple[int, int]) -> int:
        hit = np.nonzero((self.cells[:, 0] == k[0]) & (self.cells[:, 1] == k[1]))[0]
        if len(hit) == 0:
            raise KeyError(f"lattice cell {k} not in the mesh")
        return int(hit[0])


def lattice_cells(eps: float, rect: tuple[float, float, float, float]) -> np.ndarray:
    """All k with eps*(Y+k) inside the rectangle, in lattice-major order."""
    x0, x1, y0, y1 = rect
    tol = 1e-9
    k1 = np.arange(int(np.floor(x0 / eps + tol)), int(np.ceil(x1 / eps - tol)))
    k2 = np.arange(int(np.floor(y0 / eps + tol)), int(np.ceil(y1 / eps - tol)))
    cells = np.array([(a, b) for a in k1 for b in k2], dtype=np.int64).reshape(-1, 2)
    return cells


def build_perforated_mesh(eps: float, cell: CellMesh,
                          rect: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
                          ) -> PerforatedMesh:
    """Replicate the template over the cell lattice of an aligned rectangle."""
    inv = 1.0 / eps
    if abs(inv - round(inv)) > 1e-9:
        raise ConfigError(f"1/eps must be an integer, got eps = {eps}")
    x0, x1, y0, y1 = rect
    if x1 <= x0 or y1 <= y0:
        raise ConfigError(f"degenerate rectangle {rect}")
    for v in rect:
        if abs(v / eps - round(v / eps)) > 1e-9:
            raise ConfigError(f"rectangle corner {v} is not an integer multiple of eps = {eps}")

    cells = lattice_cells(eps, rect)
    n_t = cell.num_nodes
    n_c = len(cells)

    # eps*(k + y_j), bitwise reproducible from the stored (cell, template node)
    shifted = cells[:, None, :].astype(float) + cell.nodes[None, :, :]
    coords = (eps * shifted).reshape(n_c * n_t, 2)

    # Shared face nodes coincide bitwise (same eps*(k+y) product), so exact
    # row dedup merges them; renumber by first occurrence to keep the
    # cell-lattice-major, template-order node ordering.
    view = coords.view([("x", coords.dtype), ("y", coords.dtype)]).ravel()
    _, first_idx, inverse = np.unique(view, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first_idx, kind="stable"), kind="stable")
    global_ids = rank[inverse]
    first_idx_ordered = first_idx[np.argsort(first_idx, kind="stable")]

    nodes = coords[first_idx_ordered]
    global_of = global_ids.reshape(n_c, n_t)
    cell_of_node = (first_idx_ordered // n_t).astype(np.int64)
    template_node_of_node = (first_idx_ordered % n_t).astype(np.int64)

    tri_t = cell.num_triangles
    triangles = np.empty((n_c * tri_t, 3), dtype=np.int64)
    for ci in range(n_c):
        triangles[ci * tri_t:(ci + 1) * tri_t] = global_of[ci][cell.triangles]
    cell_of_tri = np.repeat(np.arange(n_c, dtype=np.int64), tri_t)
    template_tri_of_tri = np.tile(np.arange(tri_t, dtype=np.int64), n_c)

    gamma_edges = np.empty((n_c * len(cell.gamma_edges), 2), dtype=np.int64)
    for ci in range(n_c):
        gamma_edges[ci * len(cell.gamma_edges):(ci + 1) * len(cell.gamma_edges)] = \
            global_of[ci][cell.gamma_edges]

    kx0, ky0 = cells[:, 0].min(), cells[:, 1].min()
    kx1, ky1 = cells[:, 0].max(), cells[:, 1].max()
    outer = []
    side_of = {"left": (0, kx0), "right": (0, kx1), "bottom": (1, ky0), "top": (1, ky1)}
    for side, (axis, kedge) in side_of.items():
        edges_t = cell.outer_edges[side]
        if len(edges_t) == 0:
            continue
        for ci in np.nonzero(cells[:, axis] == kedge)[0]:
            outer.append(global_of[ci][edges_t])
    outer_edges = np.vstack(outer) if outer else np.empty((0, 2), dtype=np.int64)

    return PerforatedMesh(
        epsilon=eps, template=cell, rect=rect, cells=cells, nodes=nodes,
        triangles=triangles, global_of=global_of, cell_of_node=cell_of_node,
        template_node_of_node=template_node_of_node, cell_of_tri=cell_of_tri,
        template_tri_of_tri=template_tri_of_tri, gamma_edges=gamma_edges,
        outer_edges=outer_edges,
    )


# ---------------------------------------------------------------------------
# interior subdomains for the shift estimates
# ---------------------------------------------------------------------------

@dataclass
class SubdomainMask:
    """Cells (and their elements/nodes/interface edges) at distance > h from the outer boundary."""

    h: float
    cell_mask: np.ndarray        # (C,) bool
    element_mask: np.ndarray     # (T,) bool
    node_mask: np.ndarray        # (N,) bool
    gamma_edge_mask: np.ndarray  # (Eg,) bool

    @property
    def num_cells(self) -> int:
        return int(self.cell_mask.sum())


def interior_subdomain(mesh: PerforatedMesh, h: float) -> SubdomainMask:
    """Select the cells k with eps*(Y+k) inside {x : dist(x, boundary) > h}."""
    x0, x1, y0, y1 = mesh.rect
    if h < 0.0:
        raise ValueError("h must be nonnegative")
    eps = mesh.epsilon
    tol = 1e-12
    lo = mesh.cells * eps
    hi = (mesh.cells + 1) * eps
    cell_mask = ((lo[:, 0] >= x0 + h - tol) & (hi[:, 0] <= x1 - h + tol)
                 & (lo[:, 1] >= y0 + h - tol) & (hi[:, 1] <= y1 - h + tol))
    if not cell_mask.any():
        warnings.warn(f"interior subdomain for h = {h} contains no cells", stacklevel=2)

    element_mask = cell_mask[mesh.cell_of_tri]
    node_mask = np.zeros(mesh.num_nodes, dtype=bool)
    node_mask[np.unique(mesh.triangles[element_mask])] = True

    n_eg = len(mesh.template.gamma_edges)
    gamma_edge_mask = np.repeat(cell_mask, n_eg)
    return SubdomainMask(h, cell_mask, element_mask, node_mask, gamma_edge_mask)
