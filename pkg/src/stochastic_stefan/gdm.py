"""Gradient discretisations with piecewise-constant reconstruction.

A :class:`GradientDiscretisation` stores the lumped masses ``m_i = |Theta_i|``
of the reconstruction regions, the gradient reconstruction as two sparse maps
from dofs to the constant gradient on each gradient region, the Dirichlet dofs
and the anchor points used for interpolation. Everything else (stiffness,
norms, the consistency / limit-conformity / coercivity diagnostics) is derived
from these arrays.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


@dataclass(frozen=True, eq=False)
class GradientDiscretisation:
    kind: str
    mass: np.ndarray
    grad_x: sp.csr_matrix
    grad_y: sp.csr_matrix
    region_measure: np.ndarray
    region_point: np.ndarray
    region_cell: np.ndarray
    boundary: np.ndarray
    anchors: np.ndarray
    mesh: object = None
    geom: object = None
    r: float | None = None
    cell_grad: tuple | None = None

    def __post_init__(self):
        n = len(self.mass)
        for name in ("grad_x", "grad_y"):
            g = getattr(self, name)
            if g.shape != (len(self.region_measure), n):
                raise ValueError(f"{name} has shape {g.shape}, expected "
                                 f"{(len(self.region_measure), n)}")
        if self.boundary.shape != (n,) or self.anchors.shape != (n, 2):
            raise ValueError("boundary mask / anchors do not match the dof count")

    @property
    def n_dofs(self) -> int:
        return len(self.mass)

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @property
    def n_regions(self) -> int:
        return len(self.region_measure)

    @property
    def domain_area(self) -> float:
        return float(self.mass.sum())

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.n_dofs:
            raise ValueError(f"dof vector has {v.shape[-1]} entries, expected {self.n_dofs}")
        return v

    def reconstruct(self, v) -> np.ndarray:
        """Value of the reconstructed function on each region ``Theta_i``."""
        return self._check(v).copy()

    def gradient(self, v) -> np.ndarray:
        """Reconstructed gradient, one 2-vector per gradient region."""
        v = self._check(v)
        return np.stack([self.grad_x @ v, self.grad_y @ v], axis=-1)

    def cell_gradient(self, v) -> np.ndarray:
        """Per-cell gradient used for linear reconstruction inside a cell
        (the P1 gradient for MLP1, the consistent polytopal gradient for HMM)."""
        if self.cell_grad is None:
            raise ValueError(f"{self.kind} discretisation has no cell gradient")
        v = self._check(v)
        return np.stack([self.cell_grad[0] @ v, self.cell_grad[1] @ v], axis=-1)

    def interpolate(self, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        return np.asarray(func(self.anchors), dtype=float).reshape(self.n_dofs)

    def l2_norm(self, v) -> float:
        v = self._check(v)
        return float(np.sqrt(self.mass @ v ** 2))

    def grad_norm(self, v) -> float:
        g = self.gradient(v)
        return float(np.sqrt(self.region_measure @ (g ** 2).sum(1)))

    def integrate(self, v) -> float:
        return float(self.mass @ self._check(v))


@dataclass(frozen=True, eq=False)
class DiffusionTensor:
    """Symmetric, uniformly elliptic tensor, constant on each mesh cell."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 3 or v.shape[1:] != (2, 2):
            raise ValueError("tensor values must have shape (n_cells, 2, 2)")
        if not np.array_equal(v[:, 0, 1], v[:, 1, 0]):
            raise ValueError("diffusion tensor must be symmetric")
        if self.lower <= 0:
            raise ValueError(f"diffusion tensor not elliptic (min eigenvalue {self.lower})")

    @classmethod
    def identity(cls, n_cells: int) -> "DiffusionTensor":
        return cls(np.broadcast_to(np.eye(2), (n_cells, 2, 2)).copy())

    @classmethod
    def from_function(cls, func, points) -> "DiffusionTensor":
        vals = np.asarray(func(np.asarray(points)), dtype=float)
        if vals.shape == (2, 2):
            vals = np.broadcast_to(vals, (len(points), 2, 2))
        return cls(np.array(vals))

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.values)

    @property
    def lower(self) -> float:
        return float(self.eigenvalues.min())

    @property
    def upper(self) -> float:
        return float(self.eigenvalues.max())


def diffusion_for(gd: GradientDiscretisation, func=None) -> DiffusionTensor:
    n_cells = int(gd.region_cell.max()) + 1
    if func is None:
        return DiffusionTensor.identity(n_cells)
    if gd.geom is None:
        raise ValueError("a spatially varying tensor needs the mesh geometry")
    return DiffusionTensor.from_function(func, gd.geom.cell_center)


def assemble_stiffness(gd: GradientDiscretisation,
                       tensor: DiffusionTensor | None = None) -> sp.csr_matrix:
    """``A_ij = int Lambda grad_D e_j . grad_D e_i``, exactly symmetric."""
    W = sp.diags(gd.region_measure)
    Gx, Gy = gd.grad_x, gd.grad_y
    if tensor is None:
        A = Gx.T @ W @ Gx + Gy.T @ W @ Gy
    else:
        if gd.region_cell.max() >= len(tensor.values):
            raise ValueError("gradient regions refer to cells missing from the tensor")
        L = tensor.values[gd.region_cell]
        A = (Gx.T @ sp.diags(gd.region_measure * L[:, 0, 0]) @ Gx
             + Gx.T @ sp.diags(gd.region_measure * L[:, 0, 1]) @ Gy
             + Gy.T @ sp.diags(gd.region_measure * L[:, 1, 0]) @ Gx
             + Gy.T @ sp.diags(gd.region_measure * L[:, 1, 1]) @ Gy)
    A = sp.csr_matrix(A)
    A = sp.csr_matrix((A + A.T) * 0.5)
    A.sum_duplicates()
    A.sort_indices()
    return A


def _interior_blocks(gd: GradientDiscretisation, A=None):
    I = gd.interior
    if A is None:
        A = assemble_stiffness(gd)
    return I, sp.csc_matrix(A[I][:, I])


def s_defect(gd: GradientDiscretisation, phi, grad_phi) -> float:
    """Consistency defect of ``phi`` (vanishing on the boundary).

    Minimises ``||Pi w - phi||^2 + ||grad_D w - grad phi||^2`` over dof vectors
    with zero Dirichlet values, using the anchor points for the first integral
    and region centroids for the second, and returns the unsquared sum
    ``||Pi w - phi|| + ||grad_D w - grad phi||`` at the minimiser.
    """
    I, K = _interior_blocks(gd)
    pa = np.asarray(phi(gd.anchors), dtype=float)
    g = np.asarray(grad_phi(gd.region_point), dtype=float)
    w_meas = gd.region_measure
    rhs = (gd.mass * pa + gd.grad_x.T @ (w_meas * g[:, 0]) + gd.grad_y.T @ (w_meas * g[:, 1]))[I]
    N = (sp.diags(gd.mass[I]) + K).tocsc()
    try:
        wI = spla.spsolve(N, rhs)
    except RuntimeError as exc:  # pragma: no cover - singular only for invalid GDs
        raise np.linalg.LinAlgError(f"singular consistency normal equations: {exc}") from exc
    if not np.all(np.isfinite(wI)):
        raise np.linalg.LinAlgError("singular consistency normal equations")
    w = np.zeros(gd.n_dofs)
    w[I] = wI
    e0 = np.sqrt(gd.mass @ (w - pa) ** 2)
    e1 = np.sqrt(w_meas @ ((gd.gradient(w) - g) ** 2).sum(1))
    return float(e0 + e1)


def conformity_functional(gd: GradientDiscretisation, psi, div_psi) -> np.ndarray:
    """``l_i = <grad_D e_i, psi> + <Pi e_i, div psi>`` for every dof."""
    q = np.asarray(psi(gd.region_point), dtype=float)
    d = np.asarray(div_psi(gd.anchors), dtype=float)
    w = gd.region_measure
    return gd.grad_x.T @ (w * q[:, 0]) + gd.grad_y.T @ (w * q[:, 1]) + gd.mass * d


def w_defect(gd: GradientDiscretisation, psi, div_psi) -> float:
    """Limit-conformity defect: dual norm of :func:`conformity_functional`
    with respect to ``||grad_D v||`` on zero-boundary dof vectors."""
    I, K = _interior_blocks(gd)
    ell = conformity_functional(gd, psi, div_psi)[I]
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"singular stiffness: {exc}") from exc
    x = lu.solve(ell)
    return float(np.sqrt(max(ell @ x, 0.0)))


class ConvergenceWarning(RuntimeWarning):
    pass


def coercivity_constant(gd: GradientDiscretisation, rtol: float = 1e-8,
                        maxiter: int = 5000) -> float:
    """``max ||Pi v|| / ||grad_D v||`` over zero-boundary dof vectors.

    Power iteration on ``K^{-1} M``; the Rayleigh quotient is returned once it
    changes by less than ``rtol`` (relative). If ``maxiter`` is reached the
    best value is returned and a :class:`ConvergenceWarning` is issued.
    """
    I, K = _interior_blocks(gd)
    if len(I) == 0:
        raise ValueError("no interior dofs")
    m = gd.mass[I]
    lu = spla.splu(K)
    v = np.ones(len(I))
    lam_old = 0.0
    lam = 0.0
    for it in range(1, maxiter + 1):
        w = lu.solve(m * v)
        lam = float((m * w) @ w / (w @ (K @ w)))
        v = w / np.linalg.norm(w)
        if it > 1 and abs(lam - lam_old) <= rtol * abs(lam):
            return float(np.sqrt(lam))
        lam_old = lam
    warnings.warn(f"power iteration did not converge in {maxiter} iterations; "
                  f"best value {np.sqrt(lam):.6g}", ConvergenceWarning, stacklevel=2)
    return float(np.sqrt(lam))
