"""Mass-lumped P1 finite elements and the mass-lumped hybrid mimetic mixed method."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .gdm import GradientDiscretisation
from .mesh import (DualMesh, GeometryCache, MeshTopologyError, PolytopalMesh,
                   build_dual_mesh, compute_geometry)


def p1_gradients(mesh: PolytopalMesh, geom: GeometryCache) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Constant gradients of the P1 hat functions on each triangle, as (cells x vertices) maps."""
    tri = mesh.triangles()
    p = mesh.vertices[tri]
    two_area = 2.0 * geom.cell_area
    gx = np.empty(tri.shape)
    gy = np.empty(tri.shape)
    for k in range(3):
        a, b = p[:, (k + 1) % 3], p[:, (k + 2) % 3]
        gx[:, k] = (a[:, 1] - b[:, 1]) / two_area
        gy[:, k] = (b[:, 0] - a[:, 0]) / two_area
    rows = np.repeat(np.arange(mesh.n_cells), 3)
    shape = (mesh.n_cells, mesh.n_vertices)
    Gx = sp.csr_matrix((gx.ravel(), (rows, tri.ravel())), shape=shape)
    Gy = sp.csr_matrix((gy.ravel(), (rows, tri.ravel())), shape=shape)
    return Gx, Gy


def build_mlp1(mesh: PolytopalMesh, dual: DualMesh | None = None,
               geom: GeometryCache | None = None) -> GradientDiscretisation:
    """Vertex unknowns; dual-cell masses; P1 gradient on each triangle."""
    if not mesh.is_triangulation:
        bad = int(np.flatnonzero(mesh.cell_sizes != 3)[0])
        raise MeshTopologyError("MLP1 requires a triangulation", cell=bad)
    geom = geom or compute_geometry(mesh)
    dual = dual or build_dual_mesh(mesh, geom)
    Gx, Gy = p1_gradients(mesh, geom)
    return GradientDiscretisation(
        kind="mlp1", mass=dual.volume.copy(), grad_x=Gx, grad_y=Gy,
        region_measure=geom.cell_area.copy(), region_point=geom.cell_center.copy(),
        region_cell=np.arange(mesh.n_cells), boundary=dual.boundary.copy(),
        anchors=mesh.vertices.copy(), mesh=mesh, geom=geom, cell_grad=(Gx, Gy))


def build_hmm(mesh: PolytopalMesh, geom: GeometryCache | None = None,
              r: float = 0.5) -> GradientDiscretisation:
    """Cell and edge unknowns (cells first); one gradient region per (cell, edge) pair.

    On the half-diamond ``D_{K,s}`` the gradient is
    ``grad_K v + sqrt(2) / d_{K,s} * R_{K,s}(v) n_{K,s}`` with the polytopal
    gradient ``grad_K v = sum_s |s| v_s n_{K,s} / |K|`` and the residual
    ``R_{K,s}(v) = v_s - v_K - grad_K v . (x_s - x_K)``. Cell masses are
    ``r |K|``; edge masses are ``(1 - r)`` times the areas of the adjacent
    half-diamonds, so the masses sum to the domain area for every r.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"mass parameter r must lie in [0, 1], got {r}")
    geom = geom or compute_geometry(mesh)
    if np.any(geom.dist <= 0):
        k = int(np.argmin(geom.dist))
        raise MeshTopologyError(f"nonpositive center-to-edge distance {geom.dist[k]:.3e}",
                                cell=int(mesh.owner[k]), edge=mesh.edges[mesh.cell_edge[k]])
    nc, ne = mesh.n_cells, mesh.n_edges
    n = nc + ne
    owner, sig = mesh.owner, mesh.cell_edge
    nnz = len(sig)
    rows = np.arange(nnz)

    lw = geom.edge_length[sig] / geom.cell_area[owner]
    # polytopal gradient: cells x dofs (only edge columns are populated)
    GKx = sp.csr_matrix((lw * geom.normal[:, 0], (owner, nc + sig)), shape=(nc, n))
    GKy = sp.csr_matrix((lw * geom.normal[:, 1], (owner, nc + sig)), shape=(nc, n))

    S = sp.csr_matrix((np.ones(nnz), (rows, owner)), shape=(nnz, nc))
    Rx, Ry = S @ GKx, S @ GKy
    delta = geom.edge_midpoint[sig] - geom.cell_center[owner]
    jump = sp.csr_matrix((np.concatenate([np.ones(nnz), -np.ones(nnz)]),
                          (np.concatenate([rows, rows]), np.concatenate([nc + sig, owner]))),
                         shape=(nnz, n))
    R = jump - sp.diags(delta[:, 0]) @ Rx - sp.diags(delta[:, 1]) @ Ry
    coef = np.sqrt(2.0) / geom.dist
    Gx = sp.csr_matrix(Rx + sp.diags(coef * geom.normal[:, 0]) @ R)
    Gy = sp.csr_matrix(Ry + sp.diags(coef * geom.normal[:, 1]) @ R)

    # centroid of the half-diamond (triangle x_K, a, b)
    a = mesh.vertices[mesh.edges[sig, 0]]
    b = mesh.vertices[mesh.edges[sig, 1]]
    centroid = (geom.cell_center[owner] + a + b) / 3.0

    mass = np.empty(n)
    mass[:nc] = r * geom.cell_area
    mass[nc:] = (1.0 - r) * np.bincount(sig, weights=geom.subvol, minlength=ne)
    boundary = np.zeros(n, dtype=bool)
    boundary[nc:] = mesh.boundary_edges
    anchors = np.vstack([geom.cell_center, geom.edge_midpoint])
    return GradientDiscretisation(
        kind="hmm", mass=mass, grad_x=Gx, grad_y=Gy, region_measure=geom.subvol.copy(),
        region_point=centroid, region_cell=owner.copy(), boundary=boundary,
        anchors=anchors, mesh=mesh, geom=geom, r=float(r),
        cell_grad=(sp.csr_matrix(GKx), sp.csr_matrix(GKy)))


def stabilisation_residuals(gd: GradientDiscretisation, v) -> np.ndarray:
    """``R_{K,s}(v)`` for every (cell, edge) pair of an HMM discretisation."""
    if gd.kind != "hmm":
        raise ValueError("stabilisation residuals are defined for HMM only")
    mesh, geom = gd.mesh, gd.geom
    v = np.asarray(v, dtype=float)
    nc = mesh.n_cells
    gK = gd.cell_gradient(v)[mesh.owner]
    delta = geom.edge_midpoint[mesh.cell_edge] - geom.cell_center[mesh.owner]
    return v[nc + mesh.cell_edge] - v[mesh.owner] - np.einsum("ij,ij->i", gK, delta)


def build(kind: str, mesh: PolytopalMesh, r: float = 0.5) -> GradientDiscretisation:
    kind = kind.lower()
    if kind == "mlp1":
        return build_mlp1(mesh)
    if kind == "hmm":
        return build_hmm(mesh, r=r)
    raise ValueError(f"unknown scheme {kind!r} (expected 'mlp1' or 'hmm')")


def interpolate_initial(gd: GradientDiscretisation, u0) -> np.ndarray:
    """Point values of ``u0`` at the dof anchors (vertices, or cell centers and edge midpoints)."""
    return gd.interpolate(u0)
