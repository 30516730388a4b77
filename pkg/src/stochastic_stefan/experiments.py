"""Monte Carlo ensembles, coarse-to-fine error metrics and mushy-region statistics.

Every coarse level and the reference level are driven by the same Brownian
path (one driver per path index, generated on the finest time grid). Coarse
trajectories are carried onto the reference discretisation with
:func:`interpolation_matrix` and compared in the space-time ``L2`` norms of
``Pi_D zeta(u)`` and ``grad_D zeta(u)``, and in ``L1`` for ``Xi(u)`` at the
final time. Coarse fields are piecewise constant in time, so coarse step
``k`` covers fine steps ``(k - 1) r + 1 .. k r`` with ``r = N_ref / N``.
"""

from __future__ import annotations

import hashlib
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .discretisations import build
from .gdm import GradientDiscretisation
from .mesh import CellLocator
from .meshgen import resolve_mesh
from .model import StefanModel, make_model
from .noise import generate, sine_basis, steps_for
from .stepper import GradientScheme, NewtonConfig, NewtonError, SnapshotObserver, mushy_area

log = logging.getLogger(__name__)

MODES = ("gradient-linear", "constant")


# -- interpolation -----------------------------------------------------------

def _same_space(a: GradientDiscretisation, b: GradientDiscretisation) -> bool:
    return (a.kind == b.kind and a.n_dofs == b.n_dofs and a.mesh.n_cells == b.mesh.n_cells
            and np.array_equal(a.anchors, b.anchors)
            and np.array_equal(a.mesh.cell_vert, b.mesh.cell_vert))


def _barycentric(tri_pts: np.ndarray, x: np.ndarray) -> np.ndarray:
    a, b, c = tri_pts[:, 0], tri_pts[:, 1], tri_pts[:, 2]
    v0, v1, v2 = b - a, c - a, x - a
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / det
    l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=1)


def interpolation_matrix(coarse: GradientDiscretisation, fine: GradientDiscretisation,
                         mode: str = "gradient-linear", locator: CellLocator | None = None
                         ) -> sp.csr_matrix:
    """Sparse map from coarse dof values to values at the fine anchors.

    Each fine anchor is located in a coarse cell ``K``. MLP1 coarse fields are
    evaluated as P1 functions (``gradient-linear``) or copied from the vertex
    whose dual cell contains the anchor (``constant``). HMM coarse fields use
    ``w_K + grad_K w . (x - x_K)`` or ``w_K``. Identical discretisations give
    the identity.
    """
    if mode not in MODES:
        raise ValueError(f"unknown interpolation mode {mode!r}; expected one of {MODES}")
    if _same_space(coarse, fine):
        return sp.identity(coarse.n_dofs, format="csr")
    locator = locator or CellLocator(coarse.mesh)
    x = fine.anchors
    cells = locator.locate_many(x)
    nf = len(x)
    rows = np.arange(nf)
    shape = (nf, coarse.n_dofs)
    if coarse.kind == "mlp1":
        tri = coarse.mesh.triangles()[cells]
        lam = _barycentric(coarse.mesh.vertices[tri], x)
        lam[np.abs(lam) < 1e-14] = 0.0
        if mode == "constant":
            pick = np.argmax(lam, axis=1)
            return sp.csr_matrix((np.ones(nf), (rows, tri[rows, pick])), shape=shape)
        return sp.csr_matrix((lam.ravel(), (np.repeat(rows, 3), tri.ravel())), shape=shape)
    if coarse.kind == "hmm":
        P = sp.csr_matrix((np.ones(nf), (rows, cells)), shape=shape)
        if mode == "constant":
            return P
        gx, gy = coarse.cell_grad
        dx = x - coarse.geom.cell_center[cells]
        P = P + sp.diags(dx[:, 0]) @ gx[cells] + sp.diags(dx[:, 1]) @ gy[cells]
        P = sp.csr_matrix(P)
        P.eliminate_zeros()
        return P
    raise ValueError(f"no interpolation rule for {coarse.kind!r} discretisations")


def interpolate_to_fine(coarse: GradientDiscretisation, w, fine: GradientDiscretisation,
                        mode: str = "gradient-linear") -> np.ndarray:
    return interpolation_matrix(coarse, fine, mode) @ np.asarray(w, dtype=float)


# -- metrics -----------------------------------------------------------------

def fine_step_map(n_fine: int, n_coarse: int) -> np.ndarray:
    """Coarse time level (1-based) active on each fine step ``1 .. n_fine``."""
    if n_coarse <= 0 or n_fine % n_coarse:
        raise ValueError(f"coarse step count {n_coarse} does not divide {n_fine}")
    r = n_fine // n_coarse
    return (np.arange(n_fine) // r) + 1


@dataclass
class ErrorSums:
    """Per-path sums whose ensemble means give the relative errors."""

    l2: float
    h1: float
    xi: float
    ref_l2: float
    ref_h1: float
    ref_xi: float

    def __add__(self, other: "ErrorSums") -> "ErrorSums":
        return ErrorSums(*(a + b for a, b in zip(self.astuple(), other.astuple())))

    def astuple(self):
        return (self.l2, self.h1, self.xi, self.ref_l2, self.ref_h1, self.ref_xi)


def error_sums(ref_zeta: np.ndarray, ref_xi_T: np.ndarray, coarse_zeta: np.ndarray,
               coarse_xi_T: np.ndarray, fine: GradientDiscretisation, P_lin, P_const,
               dt_fine: float) -> ErrorSums:
    """Squared space-time differences for one path.

    ``ref_zeta`` is ``(N_ref + 1, n_fine)``, ``coarse_zeta`` is
    ``(N + 1, n_coarse)``; row 0 (the initial level) is not part of the
    piecewise-constant-in-time field and is ignored.
    """
    n_ref = ref_zeta.shape[0] - 1
    n_c = coarse_zeta.shape[0] - 1
    k = fine_step_map(n_ref, n_c)
    zc = (P_lin @ coarse_zeta[1:].T).T[k - 1]
    zr = ref_zeta[1:]
    d = zr - zc
    m = fine.mass
    l2 = dt_fine * float(np.sum((d * d) @ m))
    ref_l2 = dt_fine * float(np.sum((zr * zr) @ m))
    w = fine.region_measure
    gdx = fine.grad_x @ d.T
    gdy = fine.grad_y @ d.T
    h1 = dt_fine * float(w @ (gdx * gdx + gdy * gdy).sum(1))
    grx = fine.grad_x @ zr.T
    gry = fine.grad_y @ zr.T
    ref_h1 = dt_fine * float(w @ (grx * grx + gry * gry).sum(1))
    xi_c = P_const @ coarse_xi_T
    xi = float(m @ np.abs(ref_xi_T - xi_c))
    ref_xi = float(m @ ref_xi_T)
    return ErrorSums(l2, h1, xi, ref_l2, ref_h1, ref_xi)


def relative_errors(sums: list[ErrorSums]) -> tuple[float, float, float]:
    """``(E_Pi_zeta, E_grad_zeta, E_Xi)`` from per-path sums (ensemble means)."""
    if not sums:
        raise ValueError("no paths")
    P = len(sums)
    a = np.array([s.astuple() for s in sums]).sum(0) / P

    def ratio(num, den, root):
        if den == 0:
            return 0.0 if num == 0 else float("inf")
        return float(np.sqrt(num / den)) if root else float(num / den)

    return ratio(a[0], a[3], True), ratio(a[1], a[4], True), ratio(a[2], a[5], False)


def error_metrics(ref_zeta, ref_xi_T, coarse_zeta, coarse_xi_T, coarse_gd, fine_gd,
                  dt_fine: float) -> tuple[float, float, float]:
    """Relative errors for a single path (see :func:`relative_errors`)."""
    P_lin = interpolation_matrix(coarse_gd, fine_gd, "gradient-linear")
    P_const = interpolation_matrix(coarse_gd, fine_gd, "constant")
    s = error_sums(np.asarray(ref_zeta), np.asarray(ref_xi_T), np.asarray(coarse_zeta),
                   np.asarray(coarse_xi_T), fine_gd, P_lin, P_const, dt_fine)
    return relative_errors([s])


def norm_sums(gd: GradientDiscretisation, zeta_traj: np.ndarray, xi_T: np.ndarray,
              dt: float) -> tuple[float, float, float]:
    """``(||Pi zeta||^2, ||grad zeta||^2, int Xi(u^N))`` for one trajectory."""
    z = zeta_traj[1:]
    l2 = dt * float(np.sum((z * z) @ gd.mass))
    gx = gd.grad_x @ z.T
    gy = gd.grad_y @ z.T
    h1 = dt * float(gd.region_measure @ (gx * gx + gy * gy).sum(1))
    return l2, h1, float(gd.mass @ xi_T)


def mushy_stats(areas) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble mean and unbiased standard deviation of mushy areas ``(P, N + 1)``."""
    a = np.asarray(areas, dtype=float)
    if a.ndim != 2 or a.shape[0] < 2:
        raise ValueError("mushy statistics need at least two paths")
    return a.mean(0), a.std(0, ddof=1)


# -- ensembles ---------------------------------------------------------------

@dataclass(frozen=True)
class Level:
    mesh: str
    scheme: str = "mlp1"
    r: float = 0.5

    @property
    def label(self) -> str:
        return f"{self.scheme}:{self.mesh}"


@lru_cache(maxsize=32)
def _level_gd(mesh: str, scheme: str, r: float) -> GradientDiscretisation:
    return build(scheme, resolve_mesh(mesh), r=r)


def level_gd(level: Level) -> GradientDiscretisation:
    return _level_gd(level.mesh, level.scheme, float(level.r))


OBSERVABLES = frozenset({"errors", "norms", "mushy", "energy", "newton"})


@dataclass(frozen=True)
class EnsembleSpec:
    """One Monte Carlo experiment.

    ``reference`` is the finest level; with ``exact_reference`` the reference
    trajectory is the interpolated exact solution instead of a solve.
    ``q`` switches the noise to Q-Wiener mode with the tensor sine basis.
    """

    levels: tuple
    test: int = 1
    nf: float = 0.0
    paths: int = 1
    seed: int = 0
    reference: Level | None = None
    exact_reference: bool = False
    observables: frozenset = OBSERVABLES
    T: float = 1.0
    plateau: tuple | None = None
    q: tuple | None = None
    workers: int = 1
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    condense: bool = False
    cache_dir: str | None = None
    n_max: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "observables", frozenset(self.observables))
        if not self.levels:
            raise ValueError("an ensemble needs at least one level")
        if self.paths < 1:
            raise ValueError("path count must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        bad = self.observables - OBSERVABLES
        if bad:
            raise ValueError(f"unknown observables {sorted(bad)}")
        if "errors" in self.observables and self.reference is None:
            raise ValueError("error metrics need a reference level")
        if "mushy" in self.observables and self.paths < 2:
            raise ValueError("mushy statistics need at least two paths")
        if self.exact_reference and self.test != 1:
            raise ValueError("only Test-1 has an exact solution")
        if self.n_max is not None and (self.n_max < 1 or self.n_max & (self.n_max - 1)):
            raise ValueError(f"n_max must be a power of two, got {self.n_max}")

    def model(self) -> StefanModel:
        kw = {"plateau": tuple(self.plateau)} if self.plateau else {}
        return make_model(self.test, nf=self.nf, T=self.T, **kw)

    def steps(self, level: Level) -> int:
        return steps_for(level_gd(level).mesh.h, self.T)

    @property
    def all_levels(self) -> tuple:
        return self.levels + ((self.reference,) if self.reference is not None else ())

    def finest_steps(self) -> int:
        """``N_max``: the explicit override, or the largest step count of any level."""
        need = max(self.steps(lv) for lv in self.all_levels)
        if self.n_max is None:
            return need
        if self.n_max < need:
            raise ValueError(f"n_max = {self.n_max} is coarser than the finest level ({need} steps)")
        return self.n_max


@dataclass
class LevelResult:
    level: Level
    h: float
    ndofs: int
    steps: int
    errors: tuple = (float("nan"),) * 3
    norms: tuple = (float("nan"),) * 3
    mean_iterations: float = float("nan")
    relaxations: int = 0
    relaxations_per_path: float = float("nan")
    energy_sup: float = float("nan")
    mushy_t: np.ndarray | None = None
    mushy_exp: np.ndarray | None = None
    mushy_sd: np.ndarray | None = None


@dataclass
class ExperimentReport:
    spec: EnsembleSpec
    levels: list
    reference: LevelResult | None = None

    def __bool__(self) -> bool:
        return bool(self.levels)

    def column(self, name: str) -> np.ndarray:
        idx = {"E_L2z": 0, "E_H1z": 1, "E_L1Xi": 2}
        if name in idx:
            return np.array([lv.errors[idx[name]] for lv in self.levels])
        jdx = {"L2z": 0, "H1z": 1, "L1Xi": 2}
        if name in jdx:
            return np.array([lv.norms[jdx[name]] for lv in self.levels])
        return np.array([getattr(lv, name) for lv in self.levels])


@dataclass
class PathOutcome:
    path: int
    errors: list          # ErrorSums per coarse level (or None)
    norms: list           # (l2, h1, xi) per level incl. reference
    iterations: list
    relaxations: list
    energy_sup: list
    mushy: list


def _cache_file(spec: EnsembleSpec, level: Level, path: int, N: int) -> str | None:
    if not spec.cache_dir:
        return None
    key = repr((level.mesh, level.scheme, level.r, spec.test, spec.nf, spec.T, spec.seed,
                path, N, spec.q, spec.exact_reference, spec.newton))
    digest = hashlib.sha1(key.encode()).hexdigest()[:16]
    return os.path.join(spec.cache_dir, f"ref-{digest}.npz")


def _trajectory(spec: EnsembleSpec, model: StefanModel, level: Level, driver, N: int,
                path: int, exact: bool = False):
    """ζ snapshots, final Ξ, mushy series, energy sup and Newton statistics."""
    gd = level_gd(level)
    if exact:
        ts = np.linspace(0.0, spec.T, N + 1)
        u = np.array([gd.interpolate(lambda p, t=t: model.exact(p, t)) for t in ts])
        z = model.zeta(u)
        xi = model.xi(u)
        mush = ([mushy_area(gd, row, model.plateau) for row in u]
                if model.plateau else [])
        return z, xi[-1], mush, float((xi @ gd.mass).max()), 0, 0
    sch = GradientScheme(gd, model, newton=spec.newton, condense=spec.condense and gd.kind == "hmm")
    snaps = SnapshotObserver("zeta")
    mush: list = []
    energy: list = []

    def observe(scheme, state):
        snaps(scheme, state)
        energy.append(float(gd.mass @ model.xi(state.u)))
        if model.plateau is not None:
            mush.append(mushy_area(gd, state.u, model.plateau))

    try:
        res = sch.run_path(driver, N, [observe])
    except NewtonError as exc:
        raise NewtonError(exc.step, exc.residuals, path) from None
    return (snaps.array(), model.xi(res.final.u), mush, max(energy),
            res.final.total_iterations, res.final.total_relaxations)


def run_single_path(spec: EnsembleSpec, path: int) -> PathOutcome:
    """All levels of one path; raises :class:`NewtonError` with the path id on failure."""
    model = spec.model()
    n_max = spec.finest_steps()
    basis = sine_basis(len(spec.q))[0] if spec.q else None
    driver = generate(spec.seed, path, n_max, spec.T, q=spec.q, basis=basis) if spec.nf else None
    want = spec.observables
    ref = None
    outcome = PathOutcome(path, [], [], [], [], [], [])
    if spec.reference is not None:
        Nr = spec.steps(spec.reference)
        cache = _cache_file(spec, spec.reference, path, Nr)
        if cache and os.path.exists(cache):
            with np.load(cache) as data:
                ref = (data["z"], data["xi"], list(data["mush"]), float(data["esup"]),
                       int(data["its"]), int(data["rel"]))
        else:
            ref = _trajectory(spec, model, spec.reference, driver, Nr, path, spec.exact_reference)
            if cache:
                os.makedirs(spec.cache_dir, exist_ok=True)
                tmp = cache + f".{os.getpid()}.tmp.npz"
                np.savez(tmp, z=ref[0], xi=ref[1], mush=np.asarray(ref[2]), esup=ref[3],
                         its=ref[4], rel=ref[5])
                os.replace(tmp, cache)
        fine = level_gd(spec.reference)
        dt_ref = spec.T / Nr
    for level in spec.levels:
        N = spec.steps(level)
        gd = level_gd(level)
        z, xi_T, mush, esup, its, rel = _trajectory(spec, model, level, driver, N, path)
        if "errors" in want:
            P_lin = interpolation_matrix(gd, fine, "gradient-linear")
            P_const = interpolation_matrix(gd, fine, "constant")
            outcome.errors.append(error_sums(ref[0], ref[1], z, xi_T, fine, P_lin, P_const, dt_ref))
        outcome.norms.append(norm_sums(gd, z, xi_T, spec.T / N))
        outcome.iterations.append(its)
        outcome.relaxations.append(rel)
        outcome.energy_sup.append(esup)
        outcome.mushy.append(np.asarray(mush))
    if ref is not None:
        outcome.norms.append(norm_sums(fine, ref[0], ref[1], dt_ref))
        outcome.iterations.append(ref[4])
        outcome.relaxations.append(ref[5])
        outcome.energy_sup.append(ref[3])
        outcome.mushy.append(np.asarray(ref[2]))
    return outcome


def _worker(args):
    spec, path = args
    return run_single_path(spec, path)


def run_ensemble(spec: EnsembleSpec, workers: int | None = None) -> ExperimentReport:
    """Run all paths (in parallel when ``workers > 1``) and reduce in path order."""
    workers = spec.workers if workers is None else workers
    jobs = [(spec, p) for p in range(spec.paths)]
    if workers > 1 and spec.paths > 1:
        with ProcessPoolExecutor(max_workers=min(workers, spec.paths)) as pool:
            outcomes = list(pool.map(_worker, jobs))
    else:
        outcomes = [_worker(j) for j in jobs]
    outcomes.sort(key=lambda o: o.path)
    return reduce_outcomes(spec, outcomes)


def reduce_outcomes(spec: EnsembleSpec, outcomes: list[PathOutcome]) -> ExperimentReport:
    P = len(outcomes)
    want = spec.observables
    results = []
    for k, level in enumerate(spec.all_levels):
        gd = level_gd(level)
        N = spec.steps(level)
        res = LevelResult(level=level, h=gd.mesh.h, ndofs=gd.n_dofs, steps=N)
        is_ref = k == len(spec.levels)
        if "errors" in want:
            res.errors = (0.0, 0.0, 0.0) if is_ref else relative_errors([o.errors[k] for o in outcomes])
        if "norms" in want:
            sums = np.array([o.norms[k] for o in outcomes]).sum(0) / P
            res.norms = (float(np.sqrt(sums[0])), float(np.sqrt(sums[1])), float(sums[2]))
        its = sum(o.iterations[k] for o in outcomes)
        rel = sum(o.relaxations[k] for o in outcomes)
        res.mean_iterations = its / (N * P)
        res.relaxations = int(rel)
        res.relaxations_per_path = rel / P
        if "energy" in want:
            res.energy_sup = float(np.mean([o.energy_sup[k] for o in outcomes]))
        if "mushy" in want:
            areas = np.array([o.mushy[k] for o in outcomes])
            if areas.size:
                res.mushy_t = np.linspace(0.0, spec.T, N + 1)
                res.mushy_exp, res.mushy_sd = mushy_stats(areas)
        results.append(res)
        if not is_ref:
            log.info("%s: h=%.4g ndofs=%d errors=%s", level.label, res.h, res.ndofs, res.errors)
    ref = results.pop() if spec.reference is not None else None
    return ExperimentReport(spec=spec, levels=results, reference=ref)


def time_average(t: np.ndarray, series: np.ndarray, t0: float, t1: float) -> float:
    """Average of a piecewise-constant-in-time series over ``(t0, t1]``.

    Level ``n`` holds on ``(t^{n-1}, t^n]``; the average uses the levels whose
    interval midpoint lies in ``(t0, t1)``.
    """
    t = np.asarray(t)
    mid = 0.5 * (t[1:] + t[:-1])
    sel = (mid > t0) & (mid < t1)
    if not sel.any():
        raise ValueError("averaging window contains no time step")
    return float(np.asarray(series)[1:][sel].mean())


__all__ = [
    "EnsembleSpec", "ErrorSums", "ExperimentReport", "Level", "LevelResult", "NewtonError",
    "error_metrics", "error_sums", "fine_step_map", "interpolate_to_fine",
    "interpolation_matrix", "level_gd", "mushy_stats", "norm_sums", "relative_errors",
    "run_ensemble", "run_single_path", "time_average",
]
