"""Time stepping of the gradient scheme for one Brownian path.

Each step solves, for the interior unknowns ``v``,

    m_i (v_i - u_i^n) + dt (A zeta(v))_i = m_i g(u_i^n) dW_i,

with Dirichlet unknowns pinned to the boundary datum at ``t^{n+1}``. The
noise is explicit (evaluated at ``u^n``); the degenerate diffusion is
implicit and handled by a damped semismooth Newton method whose Jacobian uses
the right-hand slope of zeta.

Two Newton variables are available. ``enthalpy`` iterates on ``v`` with the
Jacobian ``D_m + dt A diag(zeta'(v))``. ``temperature`` (the default)
iterates on ``w = zeta(v)`` and recovers ``v = (f - dt A w) / m`` from the
equation itself, solving ``w - zeta(v(w)) = 0`` with the Jacobian
``I + diag(zeta'(v) dt / m) A``. Both use the same residual, line search and
stopping test; the temperature form avoids the very long enthalpy steps that
plateau dofs (where ``zeta' = 0``) produce on HMM meshes. It needs every
interior mass to be positive, and falls back to the enthalpy form otherwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .gdm import GradientDiscretisation, assemble_stiffness, diffusion_for
from .model import StefanModel
from .noise import BrownianDriver

log = logging.getLogger(__name__)


class LinearSolveError(np.linalg.LinAlgError):
    pass


class NewtonError(RuntimeError):
    """Newton did not converge; carries the step index and residual history."""

    def __init__(self, step: int, residuals: Sequence[float], path: int | None = None):
        self.step = step
        self.residuals = list(residuals)
        self.path = path
        tail = ", ".join(f"{r:.3e}" for r in self.residuals[-5:])
        where = f"path {path}, " if path is not None else ""
        super().__init__(f"Newton failed at {where}step {step}; last residuals [{tail}]")


def solve_linear(J, b) -> np.ndarray:
    """Sparse direct solve with a residual check ``||Jx - b|| <= 1e-10 (1 + ||b||)``."""
    b = np.asarray(b, dtype=float)
    if sp.issparse(J):
        try:
            x = spla.splu(sp.csc_matrix(J)).solve(b)
        except RuntimeError as exc:
            raise LinearSolveError(str(exc)) from exc
    else:
        J = np.asarray(J, dtype=float)
        try:
            x = np.linalg.solve(J, b)
        except np.linalg.LinAlgError as exc:
            raise LinearSolveError(str(exc)) from exc
    res = np.linalg.norm(J @ x - b)
    if not np.isfinite(res) or res > 1e-10 * (1.0 + np.linalg.norm(b)):
        raise LinearSolveError(f"linear solve residual {res:.3e} too large")
    return x


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-9
    max_iter: int = 50
    damping: float = 0.5
    max_halvings: int = 30
    decrease: float = 0.25
    variable: str = "temperature"

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("Newton tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.damping < 1:
            raise ValueError("damping factor must lie in (0, 1)")
        if self.variable not in ("temperature", "enthalpy"):
            raise ValueError("Newton variable must be 'temperature' or 'enthalpy'")


@dataclass(frozen=True, eq=False)
class SchemeState:
    n: int
    t: float
    u: np.ndarray
    zeta_u: np.ndarray
    iterations: int = 0
    relaxations: int = 0
    total_iterations: int = 0
    total_relaxations: int = 0
    residuals: tuple = ()
    capped: int = 0


class Observer(Protocol):
    def __call__(self, scheme: "GradientScheme", state: SchemeState) -> None: ...


@dataclass(eq=False)
class PathResult:
    final: SchemeState
    observers: list
    steps: int
    dt: float

    @property
    def mean_iterations(self) -> float:
        return self.final.total_iterations / max(self.steps, 1)


class GradientScheme:
    """Gradient scheme for one discretisation and model.

    ``condense=True`` eliminates the cell unknowns of an HMM discretisation
    from each Newton system before the sparse solve.
    """

    def __init__(self, gd: GradientDiscretisation, model: StefanModel, A=None,
                 newton: NewtonConfig | None = None, condense: bool = False):
        self.gd = gd
        self.model = model
        self.newton = newton or NewtonConfig()
        self.A = A if A is not None else assemble_stiffness(gd, diffusion_for(gd, model.diffusion))
        self.I = gd.interior
        self.B = np.flatnonzero(gd.boundary)
        A = sp.csr_matrix(self.A)
        self.A_II = sp.csr_matrix(A[self.I][:, self.I])
        self.A_IB = sp.csr_matrix(A[self.I][:, self.B])
        self.m_I = gd.mass[self.I]
        wm = np.where(self.m_I > 0, self.m_I, self.m_I[self.m_I > 0].mean() if np.any(self.m_I > 0) else 1.0)
        self._w = 1.0 / wm
        self.zeta = model.zeta
        self.condense = False
        if condense:
            self._setup_condensation()

    # -- helpers -------------------------------------------------------------
    def _setup_condensation(self):
        gd = self.gd
        if gd.kind != "hmm":
            raise ValueError("static condensation applies to HMM discretisations")
        nc = gd.mesh.n_cells
        local = np.arange(len(self.I))
        c = local[self.I < nc]
        e = local[self.I >= nc]
        Acc = self.A_II[c][:, c]
        if (Acc - sp.diags(Acc.diagonal())).count_nonzero():
            raise ValueError("cell block is not diagonal; cannot condense")
        self._c, self._e = c, e
        self.condense = True

    def boundary_values(self, t: float) -> np.ndarray:
        return np.asarray(self.model.boundary(self.gd.anchors[self.B], t), dtype=float).reshape(-1)

    def norm(self, G) -> float:
        return float(np.sqrt(np.sum(G * G * self._w)))

    def initial_state(self) -> SchemeState:
        u = self.gd.interpolate(self.model.u0)
        u[self.B] = self.boundary_values(0.0)
        return SchemeState(n=0, t=0.0, u=u, zeta_u=self.zeta(u))

    def noise_rhs(self, u: np.ndarray, dW) -> np.ndarray:
        """``m_i g(u_i) dW_i`` on the interior dofs."""
        g = self.model.noise_amplitude(u[self.I])
        dW = np.asarray(dW, dtype=float)
        if dW.ndim:
            dW = dW[self.I] if dW.shape[0] == self.gd.n_dofs else dW
        return self.m_I * g * dW

    def _jacobian(self, u, dt, temperature: bool):
        zp = self.zeta.derivative(u)
        if temperature:
            return sp.csr_matrix(sp.identity(len(u)) + sp.diags(zp * dt / self.m_I) @ self.A_II)
        return sp.csr_matrix(sp.diags(self.m_I) + dt * (self.A_II @ sp.diags(zp)))

    def _solve(self, J, b):
        if not self.condense:
            return solve_linear(sp.csc_matrix(J), b)
        c, e = self._c, self._e
        Jcc = J.diagonal()[c]
        if np.any(Jcc == 0):
            return solve_linear(sp.csc_matrix(J), b)
        Jce, Jec, Jee = J[c][:, e], J[e][:, c], J[e][:, e]
        Dinv = sp.diags(1.0 / Jcc)
        S = Jee - Jec @ Dinv @ Jce
        de = solve_linear(sp.csc_matrix(S), b[e] - Jec @ (Dinv @ b[c]))
        d = np.empty_like(b)
        d[e] = de
        d[c] = (b[c] - Jce @ de) / Jcc
        return d

    # -- one step ------------------------------------------------------------
    def step(self, state: SchemeState, dW, dt: float) -> SchemeState:
        """Advance ``state`` by ``dt`` with noise increment ``dW`` (scalar or per dof).

        Raises :class:`NewtonError` if Newton stalls or the iterates overflow.
        """
        if dt <= 0:
            raise ValueError("time step must be positive")
        # overflow shows up as a non-finite residual and is reported as a NewtonError
        with np.errstate(over="ignore", invalid="ignore"):
            return self._step(state, dW, dt)

    def _step(self, state: SchemeState, dW, dt: float) -> SchemeState:
        cfg = self.newton
        t1 = state.t + dt
        uB = self.boundary_values(t1)
        zB = self.zeta(uB)
        uI0 = state.u[self.I]
        rhs = self.m_I * uI0 + self.noise_rhs(state.u, dW)
        fixed = rhs - dt * (self.A_IB @ zB)
        m, A = self.m_I, self.A_II
        temperature = cfg.variable == "temperature" and bool(np.all(m > 0))

        def residual(v):
            return m * v + dt * (A @ self.zeta(v)) - fixed

        def enthalpy(w):
            # solves the scheme's equation for u given zeta(u) = w
            return (fixed - dt * (A @ w)) / m

        tol = cfg.tol * (1.0 + self.norm(rhs))
        if not np.isfinite(tol):
            raise NewtonError(state.n + 1, [float("inf")])
        v = uI0.copy()
        w = self.zeta(v)
        G = residual(v)
        r = self.norm(G)
        history = [r]
        its = relax = capped = 0
        while not r <= tol:
            # a NaN residual fails the test above and is caught here
            if its >= cfg.max_iter or not np.isfinite(r):
                raise NewtonError(state.n + 1, history)
            if temperature:
                u_w = enthalpy(w)
                F = w - self.zeta(u_w)
                x, J, b = w, self._jacobian(u_w, dt, True), -F
            else:
                x, J, b = v, self._jacobian(v, dt, False), -G
            try:
                d = self._solve(J, b)
            except LinearSolveError:
                raise NewtonError(state.n + 1, history) from None
            its += 1
            theta = 1.0
            halvings = 0
            while True:
                x_try = x + theta * d
                v_try = enthalpy(x_try) if temperature else x_try
                G_try = residual(v_try)
                r_try = self.norm(G_try)
                if r_try <= (1.0 - cfg.decrease * theta) * r:
                    break
                if halvings >= cfg.max_halvings:
                    capped += 1
                    x_try = x + d
                    v_try = enthalpy(x_try) if temperature else x_try
                    G_try = residual(v_try)
                    r_try = self.norm(G_try)
                    break
                theta *= cfg.damping
                halvings += 1
            if halvings:
                relax += 1
            if temperature:
                w = x_try
            v, G, r = v_try, G_try, r_try
            history.append(r)
        u = np.empty_like(state.u)
        u[self.I] = v
        u[self.B] = uB
        return SchemeState(n=state.n + 1, t=t1, u=u, zeta_u=self.zeta(u), iterations=its,
                           relaxations=relax, total_iterations=state.total_iterations + its,
                           total_relaxations=state.total_relaxations + relax,
                           residuals=tuple(history), capped=capped)

    # -- one path ------------------------------------------------------------
    def noise_sequence(self, driver: BrownianDriver | None, N: int):
        """Per-step noise increments: scalars, or per-dof arrays in Q mode."""
        if driver is None or self.model.nf == 0:
            return np.zeros(N)
        if abs(driver.T - self.model.T) > 1e-12 * self.model.T:
            raise ValueError("driver and model final times differ")
        inc = driver.increments_for(N)
        if not driver.q_mode:
            return inc
        E = driver.basis(self.gd.anchors) * driver.q
        return (E @ inc).T

    def run_path(self, driver: BrownianDriver | None, N: int,
                 observers: Iterable[Observer] = ()) -> PathResult:
        """Run ``N`` steps to time ``T``; observers see the initial state and every step."""
        observers = list(observers)
        dt = self.model.T / N
        noise = self.noise_sequence(driver, N)
        state = self.initial_state()
        for obs in observers:
            obs(self, state)
        path = driver.path if driver is not None else None
        for n in range(N):
            try:
                state = self.step(state, noise[n], dt)
            except NewtonError as exc:
                exc.path = path
                raise NewtonError(exc.step, exc.residuals, path) from None
            for obs in observers:
                obs(self, state)
        log.debug("path %s: %d steps, %d Newton iterations, %d relaxations", path, N,
                  state.total_iterations, state.total_relaxations)
        return PathResult(final=state, observers=observers, steps=N, dt=dt)


# -- observers ---------------------------------------------------------------

@dataclass(eq=False)
class EnergyObserver:
    """``int Xi(Pi_D u^n)`` at every time level."""

    values: list = field(default_factory=list)

    def __call__(self, scheme, state):
        self.values.append(float(scheme.gd.mass @ scheme.model.xi(state.u)))

    @property
    def sup(self) -> float:
        return max(self.values)


def mushy_area(gd: GradientDiscretisation, u: np.ndarray, interval) -> float:
    lo, hi = interval
    inside = (u > lo) & (u < hi)
    return float(gd.mass @ inside)


@dataclass(eq=False)
class MushyObserver:
    interval: tuple | None = None
    values: list = field(default_factory=list)

    def __call__(self, scheme, state):
        interval = self.interval or scheme.model.plateau
        if interval is None:
            raise ValueError("model has no plateau; give the mushy interval explicitly")
        self.values.append(mushy_area(scheme.gd, state.u, interval))


@dataclass(eq=False)
class SnapshotObserver:
    """Stores ``what(state)`` for every time level (``u``, ``zeta`` or ``xi``)."""

    what: str = "zeta"
    values: list = field(default_factory=list)

    def __call__(self, scheme, state):
        if self.what == "u":
            self.values.append(state.u.copy())
        elif self.what == "zeta":
            self.values.append(state.zeta_u.copy())
        elif self.what == "xi":
            self.values.append(scheme.model.xi(state.u))
        else:
            raise ValueError(f"unknown snapshot field {self.what!r}")

    def array(self) -> np.ndarray:
        return np.array(self.values)


@dataclass(eq=False)
class StepLog:
    """Per-step rows ``(t, energy, mushy_area, newton_its, relaxations)``."""

    interval: tuple | None = None
    rows: list = field(default_factory=list)

    def __call__(self, scheme, state):
        interval = self.interval or scheme.model.plateau
        mushy = mushy_area(scheme.gd, state.u, interval) if interval else float("nan")
        energy = float(scheme.gd.mass @ scheme.model.xi(state.u))
        self.rows.append((state.t, energy, mushy, state.iterations, state.relaxations))


@dataclass(eq=False)
class CallbackObserver:
    func: Callable[[GradientScheme, SchemeState], None]

    def __call__(self, scheme, state):
        self.func(scheme, state)


def with_time(state: SchemeState, t: float) -> SchemeState:
    return replace(state, t=t)
