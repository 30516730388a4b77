"""Polygonal meshes of a planar domain: topology, geometry and the P1 dual mesh.

A mesh is stored in compressed form: the counterclockwise vertex loop of cell
``c`` is ``cell_vert[cell_ptr[c]:cell_ptr[c + 1]]`` and ``cell_edge`` holds, at
the same positions, the edge joining each vertex to the next one in the loop.
Every per-(cell, edge) quantity in :class:`GeometryCache` uses this layout.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

FORMATS = ("triangle-list", "polygon-list")


class MeshError(ValueError):
    """Base class for invalid mesh input."""


class MeshParseError(MeshError):
    def __init__(self, msg: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {msg}" if where else msg)
        self.line = line
        self.path = path


class MeshTopologyError(MeshError):
    def __init__(self, msg: str, cell: int | None = None, edge: Sequence[int] | None = None,
                 vertex: int | None = None):
        parts = [msg]
        if cell is not None:
            parts.append(f"cell {cell}")
        if edge is not None:
            parts.append(f"edge {tuple(int(e) for e in edge)}")
        if vertex is not None:
            parts.append(f"vertex {vertex}")
        super().__init__(", ".join(parts))
        self.cell = cell
        self.edge = edge
        self.vertex = vertex


class MeshOrientationError(MeshError):
    def __init__(self, cell: int, area: float):
        super().__init__(f"cell {cell} is clockwise (signed area {area:.3e})")
        self.cell = cell


class DegenerateCellError(MeshError):
    def __init__(self, cell: int, area: float):
        super().__init__(f"cell {cell} is degenerate (area {area:.3e})")
        self.cell = cell


def _next_in_loop(cell_ptr: np.ndarray) -> np.ndarray:
    nnz = int(cell_ptr[-1])
    nxt = np.arange(1, nnz + 1)
    nxt[cell_ptr[1:] - 1] = cell_ptr[:-1]
    return nxt


def _signed_areas(vertices, cell_ptr, cell_vert, owner):
    nxt = _next_in_loop(cell_ptr)
    p, q = vertices[cell_vert], vertices[cell_vert[nxt]]
    cross = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
    return 0.5 * np.bincount(owner, weights=cross, minlength=len(cell_ptr) - 1)


@dataclass(frozen=True, eq=False)
class PolytopalMesh:
    """Conforming polygonal mesh with full cell/edge/vertex adjacency.

    Build instances with :meth:`from_cells` or :func:`load_mesh`; both validate
    the input. ``edge_cells[e, 1] == -1`` marks a boundary edge.
    """

    vertices: np.ndarray
    cell_ptr: np.ndarray
    cell_vert: np.ndarray
    cell_edge: np.ndarray
    edges: np.ndarray
    edge_cells: np.ndarray
    name: str = ""
    nominal_size: float | None = None
    _owner: np.ndarray = field(repr=False, default=None)

    @classmethod
    def from_cells(cls, vertices, cells: Iterable[Sequence[int]], name: str = "",
                   nominal_size: float | None = None) -> "PolytopalMesh":
        vertices = np.ascontiguousarray(vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be an (n, 2) array")
        cells = [np.asarray(c, dtype=np.int64) for c in cells]
        if not cells:
            raise MeshTopologyError("mesh has no cells")
        sizes = np.array([len(c) for c in cells])
        cell_ptr = np.zeros(len(cells) + 1, dtype=np.int64)
        np.cumsum(sizes, out=cell_ptr[1:])
        cell_vert = np.concatenate(cells)
        return cls._build(vertices, cell_ptr, cell_vert, name, nominal_size)

    @classmethod
    def _build(cls, vertices, cell_ptr, cell_vert, name, nominal_size):
        nv, nc = len(vertices), len(cell_ptr) - 1
        sizes = np.diff(cell_ptr)
        bad = np.flatnonzero(sizes < 3)
        if bad.size:
            raise MeshTopologyError("cell has fewer than 3 vertices", cell=int(bad[0]))
        if cell_vert.min() < 0 or cell_vert.max() >= nv:
            k = int(np.flatnonzero((cell_vert < 0) | (cell_vert >= nv))[0])
            c = int(np.searchsorted(cell_ptr, k, side="right") - 1)
            raise MeshTopologyError(f"vertex index {cell_vert[k]} out of range", cell=c)
        owner = np.repeat(np.arange(nc), sizes)

        # repeated vertex inside one loop
        key = owner * nv + cell_vert
        uniq, counts = np.unique(key, return_counts=True)
        if np.any(counts > 1):
            k = uniq[counts > 1][0]
            raise MeshTopologyError("vertex repeated in cell loop", cell=int(k // nv),
                                    vertex=int(k % nv))
        used = np.zeros(nv, dtype=bool)
        used[cell_vert] = True
        if not used.all():
            raise MeshTopologyError("vertex not used by any cell",
                                    vertex=int(np.flatnonzero(~used)[0]))

        area = _signed_areas(vertices, cell_ptr, cell_vert, owner)
        neg = np.flatnonzero(area < 0)
        if neg.size:
            raise MeshOrientationError(int(neg[0]), float(area[neg[0]]))

        # duplicate cells: identical sorted vertex sets
        if nc > 1:
            order = np.lexsort((cell_vert, owner))
            sorted_sets = [tuple(x) for x in np.split(cell_vert[order], cell_ptr[1:-1])]
            seen: dict[tuple, int] = {}
            for c, s in enumerate(sorted_sets):
                if s in seen:
                    raise MeshTopologyError(f"duplicate of cell {seen[s]}", cell=c)
                seen[s] = c

        nxt = _next_in_loop(cell_ptr)
        a, b = cell_vert, cell_vert[nxt]
        pairs = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1)
        edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True,
                                           return_counts=True)
        inverse = inverse.ravel()
        if np.any(counts > 2):
            e = int(np.flatnonzero(counts > 2)[0])
            raise MeshTopologyError("edge shared by more than two cells", edge=edges[e])
        # an interior edge must be traversed once in each direction
        forward = a < b
        fcount = np.bincount(inverse, weights=forward, minlength=len(edges))
        clash = np.flatnonzero((counts == 2) & (fcount != 1))
        if clash.size:
            e = int(clash[0])
            c = int(owner[np.flatnonzero(inverse == e)[-1]])
            raise MeshTopologyError("inconsistent orientation across edge (overlapping cells)",
                                    cell=c, edge=edges[e])

        edge_cells = np.full((len(edges), 2), -1, dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        first = np.ones(len(order), dtype=bool)
        first[1:] = inverse[order][1:] != inverse[order][:-1]
        edge_cells[inverse[order][first], 0] = owner[order][first]
        edge_cells[inverse[order][~first], 1] = owner[order][~first]

        # boundary must be one closed loop through degree-2 vertices
        bnd = edges[edge_cells[:, 1] < 0]
        deg = np.bincount(bnd.ravel(), minlength=nv)
        odd = np.flatnonzero((deg != 0) & (deg != 2))
        if odd.size:
            raise MeshTopologyError("non-conforming mesh or dangling edge at boundary vertex",
                                    vertex=int(odd[0]))
        n_loops = _count_loops(bnd, nv)
        if n_loops != 1:
            raise MeshTopologyError(f"boundary has {n_loops} loops; expected one")
        euler = nv - len(edges) + nc
        if euler != 1:
            raise MeshTopologyError(f"Euler characteristic V - E + C = {euler}, expected 1")

        return cls(vertices=vertices, cell_ptr=cell_ptr, cell_vert=cell_vert,
                   cell_edge=inverse.astype(np.int64), edges=edges.astype(np.int64),
                   edge_cells=edge_cells, name=name,
                   nominal_size=None if nominal_size is None else float(nominal_size),
                   _owner=owner)

    # -- counts and masks ----------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_cells(self) -> int:
        return len(self.cell_ptr) - 1

    @property
    def owner(self) -> np.ndarray:
        """Cell id for every entry of ``cell_vert`` / ``cell_edge``."""
        return self._owner

    @property
    def cell_sizes(self) -> np.ndarray:
        return np.diff(self.cell_ptr)

    @property
    def is_triangulation(self) -> bool:
        return bool(np.all(self.cell_sizes == 3))

    @property
    def boundary_edges(self) -> np.ndarray:
        return self.edge_cells[:, 1] < 0

    @property
    def boundary_vertices(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.edges[self.boundary_edges].ravel()] = True
        return mask

    def cell(self, c: int) -> np.ndarray:
        return self.cell_vert[self.cell_ptr[c]:self.cell_ptr[c + 1]]

    def cells(self) -> list[np.ndarray]:
        return np.split(self.cell_vert, self.cell_ptr[1:-1])

    def triangles(self) -> np.ndarray:
        if not self.is_triangulation:
            raise MeshError("mesh is not a triangulation")
        return self.cell_vert.reshape(-1, 3)

    @property
    def diameters(self) -> np.ndarray:
        out = np.empty(self.n_cells)
        for c, loop in enumerate(self.cells()):
            p = self.vertices[loop]
            d = p[:, None, :] - p[None, :, :]
            out[c] = np.sqrt((d ** 2).sum(-1).max())
        return out

    @property
    def size(self) -> float:
        """Maximum cell diameter."""
        return float(self.diameters.max())

    @property
    def h(self) -> float:
        """Mesh size used by the time-step rule: the family's nominal size when
        recorded in the mesh file, otherwise the maximum cell diameter."""
        return self.nominal_size if self.nominal_size is not None else self.size

    @property
    def bounding_box(self) -> tuple[float, float, float, float]:
        lo, hi = self.vertices.min(0), self.vertices.max(0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


def _count_loops(bnd_edges: np.ndarray, nv: int) -> int:
    parent = np.arange(nv)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in bnd_edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    verts = np.unique(bnd_edges)
    return len({find(v) for v in verts})


# -- file IO -----------------------------------------------------------------

def _tokens(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def load_mesh(path: str | os.PathLike, format: str | None = None) -> PolytopalMesh:
    """Read a mesh in the plain-text format written by :func:`save_mesh`.

    The file holds optional ``mesh <name>``, ``size <h>`` and ``format <fmt>``
    header lines, then ``vertices <n>`` followed by ``x y`` lines and
    ``cells <m>`` followed by one cell per line: ``i j k`` for the
    triangle-list format, ``k i_1 ... i_k`` for the polygon-list format.
    Indices are 0-based. ``#`` starts a comment.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    name, size = os.path.splitext(os.path.basename(path))[0], None
    fmt = format
    it = _tokens(path)
    vertices = cells = None
    try:
        for lineno, tok in it:
            key = tok[0].lower()
            if key == "mesh":
                name = " ".join(tok[1:])
            elif key == "size":
                size = float(tok[1])
            elif key == "format":
                if format is None:
                    fmt = tok[1]
            elif key == "vertices":
                nv = int(tok[1])
                vertices = np.empty((nv, 2))
                for i in range(nv):
                    lineno, t = next(it)
                    if len(t) != 2:
                        raise MeshParseError("expected 'x y'", lineno, path)
                    vertices[i] = float(t[0]), float(t[1])
            elif key == "cells":
                nc = int(tok[1])
                if fmt not in FORMATS:
                    raise MeshParseError(f"unknown or missing format {fmt!r}", lineno, path)
                cells = []
                for _ in range(nc):
                    lineno, t = next(it)
                    ids = [int(x) for x in t]
                    if fmt == "triangle-list":
                        if len(ids) != 3:
                            raise MeshParseError("triangle needs 3 vertex ids", lineno, path)
                        cells.append(ids)
                    else:
                        if len(ids) < 1 or ids[0] != len(ids) - 1:
                            raise MeshParseError("polygon line must be 'k i_1 ... i_k'",
                                                 lineno, path)
                        cells.append(ids[1:])
                    if vertices is not None and any(i < 0 or i >= len(vertices) for i in cells[-1]):
                        raise MeshParseError("vertex index out of range", lineno, path)
            else:
                raise MeshParseError(f"unexpected keyword {tok[0]!r}", lineno, path)
    except StopIteration:
        raise MeshParseError("unexpected end of file", None, path) from None
    except ValueError as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshParseError(str(exc), lineno, path) from None
    if vertices is None or cells is None:
        raise MeshParseError("missing 'vertices' or 'cells' section", None, path)
    return PolytopalMesh.from_cells(vertices, cells, name=name, nominal_size=size)


def save_mesh(mesh: PolytopalMesh, path: str | os.PathLike, format: str | None = None) -> None:
    if format is None:
        format = "triangle-list" if mesh.is_triangulation else "polygon-list"
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}")
    lines = []
    if mesh.name:
        lines.append(f"mesh {mesh.name}")
    if mesh.nominal_size is not None:
        lines.append(f"size {mesh.nominal_size!r}")
    lines.append(f"format {format}")
    lines.append(f"vertices {mesh.n_vertices}")
    lines.extend(f"{x!r} {y!r}" for x, y in mesh.vertices.tolist())
    lines.append(f"cells {mesh.n_cells}")
    for loop in mesh.cells():
        ids = " ".join(map(str, loop.tolist()))
        lines.append(ids if format == "triangle-list" else f"{len(loop)} {ids}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_fvca(path: str | os.PathLike, name: str | None = None,
              nominal_size: float | None = None) -> PolytopalMesh:
    """Convert a mesh in the FVCA benchmark text layout (1-based indices).

    Recognised sections: ``Vertices`` (coordinates), ``triangles``,
    ``quadrangles``, ``pentagons``, ``hexagons`` (fixed-size cells) and
    ``cells`` (``k i_1 ... i_k`` rows). Any other section, such as edge
    lists, is skipped using its count line.
    """
    path = os.fspath(path)
    fixed = {"triangles": 3, "quadrangles": 4, "pentagons": 5, "hexagons": 6}
    rows = list(_tokens(path))
    vertices, cells = None, []
    i = 0
    while i < len(rows):
        lineno, tok = rows[i]
        key = tok[0].lower()
        try:
            count = int(rows[i + 1][1][0]) if len(tok) == 1 else int(tok[1])
            i += 2 if len(tok) == 1 else 1
        except (IndexError, ValueError):
            raise MeshParseError(f"section {tok[0]!r} lacks a count", lineno, path) from None
        block = rows[i:i + count]
        if len(block) < count:
            raise MeshParseError(f"section {tok[0]!r} truncated", lineno, path)
        if key == "vertices":
            vertices = np.array([[float(t[0]), float(t[1])] for _, t in block])
        elif key in fixed:
            cells.extend([int(x) - 1 for x in t[:fixed[key]]] for _, t in block)
        elif key == "cells":
            cells.extend([int(x) - 1 for x in t[1:1 + int(t[0])]] for _, t in block)
        i += count
    if vertices is None or not cells:
        raise MeshParseError("no vertices or cells found", None, path)
    return PolytopalMesh.from_cells(vertices, cells,
                                    name=name or os.path.splitext(os.path.basename(path))[0],
                                    nominal_size=nominal_size)


# -- geometry ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GeometryCache:
    """Cell, edge and (cell, edge) geometry.

    ``normal``, ``dist`` and ``subvol`` are aligned with ``mesh.cell_edge``:
    outward unit normal of the cell on that edge, orthogonal distance from the
    cell center to the edge line, and the area of the triangle spanned by the
    center and the edge.
    """

    cell_area: np.ndarray
    cell_center: np.ndarray
    edge_length: np.ndarray
    edge_midpoint: np.ndarray
    normal: np.ndarray
    dist: np.ndarray
    subvol: np.ndarray

    @property
    def domain_area(self) -> float:
        return float(self.cell_area.sum())


def compute_geometry(mesh: PolytopalMesh) -> GeometryCache:
    v, owner = mesh.vertices, mesh.owner
    nxt = _next_in_loop(mesh.cell_ptr)
    p, q = v[mesh.cell_vert], v[mesh.cell_vert[nxt]]
    cross = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
    area = 0.5 * np.bincount(owner, weights=cross, minlength=mesh.n_cells)
    tiny = 1e-14 * max(mesh.bounding_box[2] - mesh.bounding_box[0], 1.0) ** 2
    bad = np.flatnonzero(area <= tiny)
    if bad.size:
        raise DegenerateCellError(int(bad[0]), float(area[bad[0]]))
    # centroid relative to the first vertex of each cell limits cancellation
    ref = v[mesh.cell_vert[mesh.cell_ptr[:-1]]][owner]
    pr, qr = p - ref, q - ref
    cr = pr[:, 0] * qr[:, 1] - qr[:, 0] * pr[:, 1]
    cx = np.bincount(owner, weights=(pr[:, 0] + qr[:, 0]) * cr, minlength=mesh.n_cells)
    cy = np.bincount(owner, weights=(pr[:, 1] + qr[:, 1]) * cr, minlength=mesh.n_cells)
    area_r = 0.5 * np.bincount(owner, weights=cr, minlength=mesh.n_cells)
    center = np.stack([cx, cy], axis=1) / (6.0 * area_r[:, None]) + v[mesh.cell_vert[mesh.cell_ptr[:-1]]]

    ev = v[mesh.edges[:, 1]] - v[mesh.edges[:, 0]]
    length = np.hypot(ev[:, 0], ev[:, 1])
    mid = 0.5 * (v[mesh.edges[:, 0]] + v[mesh.edges[:, 1]])

    t = q - p
    tl = np.hypot(t[:, 0], t[:, 1])
    normal = np.stack([t[:, 1], -t[:, 0]], axis=1) / tl[:, None]
    dist = np.einsum("ij,ij->i", mid[mesh.cell_edge] - center[owner], normal)
    subvol = 0.5 * length[mesh.cell_edge] * dist
    return GeometryCache(cell_area=area, cell_center=center, edge_length=length,
                         edge_midpoint=mid, normal=normal, dist=dist, subvol=subvol)


# -- dual mesh ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DualMesh:
    """Vertex-centred dual cells obtained by joining edge midpoints and cell centroids."""

    volume: np.ndarray
    boundary: np.ndarray


def build_dual_mesh(mesh: PolytopalMesh, geom: GeometryCache | None = None) -> DualMesh:
    if not mesh.is_triangulation:
        bad = int(np.flatnonzero(mesh.cell_sizes != 3)[0])
        raise MeshTopologyError("dual mesh requires a triangulation", cell=bad)
    if geom is None:
        geom = compute_geometry(mesh)
    # the (vertex, midpoint, centroid, midpoint) quadrilateral is a third of the triangle
    vol = np.bincount(mesh.cell_vert, weights=np.repeat(geom.cell_area / 3.0, 3),
                      minlength=mesh.n_vertices)
    return DualMesh(volume=vol, boundary=mesh.boundary_vertices)


def dual_pieces(mesh: PolytopalMesh, geom: GeometryCache | None = None):
    """Quadrilateral pieces of the dual cells, one per (triangle, vertex).

    Returns ``(owner_vertex, quads)`` with ``quads`` of shape ``(3 * n_cells, 4, 2)``
    listing vertex, next-edge midpoint, centroid and previous-edge midpoint
    (counterclockwise).
    """
    if geom is None:
        geom = compute_geometry(mesh)
    tri = mesh.triangles()
    v = mesh.vertices
    g = geom.cell_center
    quads = np.empty((tri.shape[0], 3, 4, 2))
    for k in range(3):
        s, a, b = tri[:, k], tri[:, (k + 1) % 3], tri[:, (k + 2) % 3]
        quads[:, k, 0] = v[s]
        quads[:, k, 1] = 0.5 * (v[s] + v[a])
        quads[:, k, 2] = g
        quads[:, k, 3] = 0.5 * (v[s] + v[b])
    return tri.reshape(-1), quads.reshape(-1, 4, 2)


# -- point location ----------------------------------------------------------

class PointOutsideError(MeshError):
    def __init__(self, point):
        super().__init__(f"point {tuple(np.round(point, 15))} lies outside the mesh")
        self.point = point


class CellLocator:
    """Bucket-grid point location; boundary points go to the lowest cell id."""

    def __init__(self, mesh: PolytopalMesh, buckets: int | None = None):
        self.mesh = mesh
        x0, y0, x1, y1 = mesh.bounding_box
        self.scale = max(x1 - x0, y1 - y0)
        self.tol = 1e-12 * self.scale
        nb = buckets or max(1, int(np.sqrt(mesh.n_cells)))
        self.nb = nb
        self.origin = np.array([x0, y0])
        self.width = np.array([max(x1 - x0, 1e-300), max(y1 - y0, 1e-300)]) / nb
        loops = mesh.cells()
        self._loops = [mesh.vertices[loop] for loop in loops]
        table: list[list[int]] = [[] for _ in range(nb * nb)]
        for c, p in enumerate(self._loops):
            lo = self._bucket(p.min(0) - self.tol)
            hi = self._bucket(p.max(0) + self.tol)
            for i in range(lo[0], hi[0] + 1):
                for j in range(lo[1], hi[1] + 1):
                    table[i * nb + j].append(c)
        self._table = table

    def _bucket(self, x):
        ij = np.floor((np.asarray(x) - self.origin) / self.width).astype(int)
        return np.clip(ij, 0, self.nb - 1)

    def contains(self, c: int, x) -> bool:
        return _in_polygon(self._loops[c], np.asarray(x, dtype=float), self.tol)

    def locate(self, x) -> int:
        x = np.asarray(x, dtype=float)
        i, j = self._bucket(x)
        for c in self._table[i * self.nb + j]:
            if _in_polygon(self._loops[c], x, self.tol):
                return c
        raise PointOutsideError(x)

    def locate_many(self, points) -> np.ndarray:
        return np.array([self.locate(p) for p in np.asarray(points, dtype=float)],
                        dtype=np.int64)


def _in_polygon(p: np.ndarray, x: np.ndarray, tol: float) -> bool:
    """Closed point-in-polygon test (on-edge within ``tol`` counts as inside)."""
    a = p
    b = np.roll(p, -1, axis=0)
    ab = b - a
    ax = x - a
    L2 = (ab ** 2).sum(1)
    s = np.clip((ax * ab).sum(1) / L2, 0.0, 1.0)
    d2 = ((ax - s[:, None] * ab) ** 2).sum(1)
    if d2.min() <= tol * tol:
        return True
    # crossing number
    cond = (a[:, 1] > x[1]) != (b[:, 1] > x[1])
    if not cond.any():
        return False
    xa, ya, xb, yb = a[cond, 0], a[cond, 1], b[cond, 0], b[cond, 1]
    xint = xa + (x[1] - ya) * (xb - xa) / (yb - ya)
    return bool(np.count_nonzero(x[0] < xint) % 2)


def locate_cell(mesh: PolytopalMesh, point) -> int:
    """Return the id of a cell whose closure contains ``point``."""
    return CellLocator(mesh).locate(point)
