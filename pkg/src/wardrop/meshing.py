"""Structured triangulations of rectangles with optional obstacles.

Each grid square is split into two triangles.  The split diagonal is
mirrored about the vertical midline so that problems with mirror-symmetric
data produce mirror-symmetric discrete systems; triangles whose centroid
falls inside an obstacle are removed and the boundary is recomputed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MeshError


@dataclass(frozen=True)
class RectObstacle:
    bounds: tuple[float, float, float, float]  # x0, x1, y0, y1

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        x0, x1, y0, y1 = self.bounds
        return (
            (pts[:, 0] > x0) & (pts[:, 0] < x1) & (pts[:, 1] > y0) & (pts[:, 1] < y1)
        )

    def to_dict(self):
        return {"kind": "rect", "bounds": list(self.bounds)}


@dataclass(frozen=True)
class DiscObstacle:
    center: tuple[float, float]
    radius: float

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        dx = pts[:, 0] - self.center[0]
        dy = pts[:, 1] - self.center[1]
        return dx * dx + dy * dy < self.radius**2

    def to_dict(self):
        return {"kind": "disc", "center": list(self.center), "radius": self.radius}


def obstacle_from_dict(spec):
    if isinstance(spec, (RectObstacle, DiscObstacle)):
        return spec
    kind = spec.get("kind")
    if kind == "rect":
        return RectObstacle(bounds=tuple(float(v) for v in spec["bounds"]))
    if kind == "disc":
        return DiscObstacle(
            center=(float(spec["center"][0]), float(spec["center"][1])),
            radius=float(spec["radius"]),
        )
    raise MeshError(f"unknown obstacle kind {kind!r}")


class Mesh:
    """Conforming triangulation with edge and boundary bookkeeping.

    vertices: (V, 2) float array
    triangles: (T, 3) int array, counterclockwise
    edges: (E, 2) int array, each row sorted
    boundary_edge: (E,) bool mask (edges adjacent to exactly one triangle)
    """

    def __init__(self, vertices, triangles, domain, obstacles=()):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.domain = tuple(float(v) for v in domain)
        self.obstacles = tuple(obstacles)
        if len(self.triangles) == 0:
            raise MeshError("mesh has no triangles")
        self._validate_orientation()
        self._build_edges()

    # -- construction helpers ------------------------------------------------

    def _validate_orientation(self):
        p = self.vertices[self.triangles]
        u = p[:, 1] - p[:, 0]
        v = p[:, 2] - p[:, 0]
        cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
        bad = np.nonzero(cross <= 1e-15)[0]
        if bad.size:
            raise MeshError(f"triangle {bad[0]} has nonpositive area")
        self.areas = 0.5 * cross

    def _build_edges(self):
        t = self.triangles
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        pairs = np.sort(pairs, axis=1)
        edges, inverse, counts = np.unique(
            pairs, axis=0, return_inverse=True, return_counts=True
        )
        if counts.max() > 2:
            raise MeshError("non-conforming mesh: edge shared by >2 triangles")
        self.edges = edges
        self.boundary_edge = counts == 1
        # local edge e of triangle t -> global edge id, local order
        # (v0,v1), (v1,v2), (v2,v0)
        self.triangle_edges = inverse.reshape(3, -1).T
        ntri = len(t)
        owners = np.tile(np.arange(ntri), 3)
        order = np.argsort(inverse, kind="stable")
        self.edge_triangles = np.split(
            owners[order], np.cumsum(counts)[:-1]
        )

    # -- basic queries ---------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_triangles

    @property
    def n_holes(self) -> int:
        return 1 - self.euler_characteristic

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def boundary_normals(self):
        """Outward unit normals and lengths of all boundary edges.

        Returns (edge_ids, normals (B,2), lengths (B,)).
        """
        ids = np.nonzero(self.boundary_edge)[0]
        a = self.vertices[self.edges[ids, 0]]
        b = self.vertices[self.edges[ids, 1]]
        tang = b - a
        lengths = np.hypot(tang[:, 0], tang[:, 1])
        normals = np.stack([tang[:, 1], -tang[:, 0]], axis=1) / lengths[:, None]
        owners = np.array([self.edge_triangles[e][0] for e in ids])
        toward = self.centroids()[owners] - 0.5 * (a + b)
        flip = np.einsum("bi,bi->b", normals, toward) > 0
        normals[flip] *= -1.0
        return ids, normals, lengths


def build_structured_mesh(n, domain=(0.0, 1.0, 0.0, 1.0), obstacles=()):
    """Triangulate an n-by-n grid of squares on the rectangle.

    The diagonal direction flips across the vertical midline (mirrored
    layout), which keeps the triangulation invariant under x -> x0+x1-x.
    Triangles whose centroid lies inside an obstacle are removed and
    unused vertices dropped.
    """
    if n < 1:
        raise MeshError("need at least one subdivision per side")
    x0, x1, y0, y1 = (float(v) for v in domain)
    if not (x1 > x0 and y1 > y0):
        raise MeshError("domain rectangle is empty")
    obstacles = tuple(obstacle_from_dict(o) for o in obstacles)
    for obs in obstacles:
        _check_obstacle_inside(obs, (x0, x1, y0, y1))

    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.stack([gx.ravel(), gy.ravel()], axis=1)

    def vid(i, j):
        return i * (n + 1) + j

    tris = []
    half = (n + 1) // 2
    for i in range(n):
        backslash = i < half
        for j in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            if backslash:
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
            else:
                tris.append((v00, v10, v01))
                tris.append((v10, v11, v01))
    triangles = np.array(tris, dtype=np.int64)

    if obstacles:
        cent = vertices[triangles].mean(axis=1)
        hit = np.zeros(len(triangles), dtype=bool)
        for obs in obstacles:
            hit |= obs.contains(cent)
        # drop both triangles of a touched grid cell so the hole boundary
        # stays manifold (single-triangle nibbles create pinch vertices)
        hit = np.repeat(hit.reshape(-1, 2).any(axis=1), 2)
        triangles = triangles[~hit]
        if len(triangles) == 0:
            raise MeshError("obstacles removed every triangle")
        used = np.unique(triangles)
        remap = -np.ones(len(vertices), dtype=np.int64)
        remap[used] = np.arange(len(used))
        vertices = vertices[used]
        triangles = remap[triangles]

    return Mesh(vertices, triangles, domain=(x0, x1, y0, y1), obstacles=obstacles)


def _check_obstacle_inside(obs, domain):
    x0, x1, y0, y1 = domain
    if isinstance(obs, RectObstacle):
        ox0, ox1, oy0, oy1 = obs.bounds
        inside = x0 < ox0 < ox1 < x1 and y0 < oy0 < oy1 < y1
    else:
        cx, cy = obs.center
        r = obs.radius
        inside = (x0 < cx - r) and (cx + r < x1) and (y0 < cy - r) and (cy + r < y1)
    if not inside:
        raise MeshError("obstacles must lie strictly inside the domain")


def dump_mesh(mesh: Mesh, path):
    """Plain-text dump: vertex/triangle/edge records, one per line."""
    with open(path, "w") as fh:
        for x, y in mesh.vertices:
            fh.write(f"vertex {x:.17g} {y:.17g}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"triangle {i} {j} {k}\n")
        for (i, j), bnd in zip(mesh.edges, mesh.boundary_edge):
            fh.write(f"edge {i} {j} {int(bnd)}\n")
