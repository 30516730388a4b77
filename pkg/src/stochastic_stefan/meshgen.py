"""Generators for the two mesh families of the unit square used in the experiments.

``mesh1-XX`` are triangulations of an ``n x n`` grid of squares in which, in
every 2x2 block, three squares are cut into four triangles through their
center and one square is cut along a diagonal. ``hexa1-XX`` are
``n x n`` hexagonal (brick-wall) meshes whose non-corner boundary cells carry
one extra vertex on the boundary. Both reproduce the published cell, edge and
vertex counts exactly.

Run ``python -m stochastic_stefan.meshgen`` to regenerate the packaged files.
"""

from __future__ import annotations

import os
from importlib import resources

import numpy as np

from .mesh import PolytopalMesh, load_mesh, save_mesh

MESH1_LEVELS = {"mesh1-01": 4, "mesh1-02": 8, "mesh1-03": 16, "mesh1-04": 20,
                "mesh1-05": 32, "mesh1-06": 64}
HEXA1_LEVELS = {"hexa1-01": 11, "hexa1-02": 21, "hexa1-03": 29, "hexa1-04": 41,
                "hexa1-05": 81}
FAMILIES = {**MESH1_LEVELS, **HEXA1_LEVELS}


def mesh1(n: int, name: str | None = None) -> PolytopalMesh:
    if n % 2:
        raise ValueError("mesh1 pattern needs an even number of squares per side")
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    verts = [np.stack([X.ravel(), Y.ravel()], axis=1)]
    vid = lambda i, j: i * (n + 1) + j  # noqa: E731
    nxt = (n + 1) ** 2
    cells = []
    centers = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if i % 2 and j % 2:
                cells += [[a, b, c], [a, c, d]]
            else:
                m = nxt + len(centers)
                centers.append(((g[i] + g[i + 1]) / 2, (g[j] + g[j + 1]) / 2))
                cells += [[a, b, m], [b, c, m], [c, d, m], [d, a, m]]
    verts.append(np.array(centers))
    return PolytopalMesh.from_cells(np.vstack(verts), cells, name=name or f"mesh1-n{n}",
                                    nominal_size=1.0 / n)


def hexa1(n: int, name: str | None = None, bulge: float = 0.15) -> PolytopalMesh:
    """Brick-wall hexagonal mesh with ``n`` rows of ``n`` cells.

    Rows are shifted by -1/4 and +1/4 of a cell alternately; ``bulge`` (in
    cell units) pushes the triple points off the row interfaces so that every
    interior cell is a convex hexagon.
    """
    shift = [-0.25 if j % 2 == 0 else 0.25 for j in range(n)]
    breaks = [np.arange(1, n) + shift[j] for j in range(n)]

    index: dict[tuple, int] = {}
    coords: list[tuple[float, float]] = []

    def vertex(x, y):
        key = (round(x * 8), round(y * 8))
        if key not in index:
            index[key] = len(coords)
            coords.append((x, y))
        return index[key]

    def interface_y(k, x, from_row):
        # vertex on interface k created by a break of ``from_row``
        if k == 0 or k == n or x in (0.0, float(n)):
            return float(k)
        return k - bulge if from_row == k - 1 else k + bulge

    cells = []
    for j in range(n):
        ends = np.concatenate([[0.0], breaks[j], [float(n)]])
        for i in range(n):
            L, R = float(ends[i]), float(ends[i + 1])
            loop = [vertex(L, interface_y(j, L, j))]
            if j > 0:
                for x in breaks[j - 1][(breaks[j - 1] > L) & (breaks[j - 1] < R)]:
                    loop.append(vertex(float(x), interface_y(j, float(x), j - 1)))
            elif 0 < i < n - 1:
                loop.append(vertex((L + R) / 2, 0.0))
            loop.append(vertex(R, interface_y(j, R, j)))
            if R == n and 0 < j < n - 1:
                loop.append(vertex(float(n), j + 0.5))
            loop.append(vertex(R, interface_y(j + 1, R, j)))
            if j < n - 1:
                up = breaks[j + 1][(breaks[j + 1] > L) & (breaks[j + 1] < R)][::-1]
                for x in up:
                    loop.append(vertex(float(x), interface_y(j + 1, float(x), j + 1)))
            elif 0 < i < n - 1:
                loop.append(vertex((L + R) / 2, float(n)))
            loop.append(vertex(L, interface_y(j + 1, L, j)))
            if L == 0 and 0 < j < n - 1:
                loop.append(vertex(0.0, j + 0.5))
            cells.append(loop)
    return PolytopalMesh.from_cells(np.array(coords) / n, cells, name=name or f"hexa1-n{n}")


def generate(name: str) -> PolytopalMesh:
    if name in MESH1_LEVELS:
        return mesh1(MESH1_LEVELS[name], name=name)
    if name in HEXA1_LEVELS:
        return hexa1(HEXA1_LEVELS[name], name=name)
    raise KeyError(f"unknown mesh family member {name!r}; known: {sorted(FAMILIES)}")


def packaged_path(name: str) -> str:
    return str(resources.files("stochastic_stefan") / "meshes" / f"{name}.txt")


def family_mesh(name: str) -> PolytopalMesh:
    """Load a named family member from the packaged files (generating it if absent)."""
    path = packaged_path(name)
    if os.path.exists(path):
        return load_mesh(path)
    return generate(name)


def resolve_mesh(spec: str) -> PolytopalMesh:
    """Family name (``mesh1-03``) or path to a mesh file."""
    if spec in FAMILIES:
        return family_mesh(spec)
    return load_mesh(spec)


def write_packaged(directory: str | None = None) -> None:
    directory = directory or os.path.dirname(packaged_path("mesh1-01"))
    os.makedirs(directory, exist_ok=True)
    for name in FAMILIES:
        save_mesh(generate(name), os.path.join(directory, f"{name}.txt"))


if __name__ == "__main__":
    write_packaged()
