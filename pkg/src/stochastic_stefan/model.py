"""Stefan problem data: the enthalpy-temperature map, its primitive, noise and test cases."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class ZetaRangeError(ValueError):
    pass


@dataclass(frozen=True)
class ZetaFunction:
    """Continuous, nondecreasing, piecewise-linear map with ``zeta(0) == 0``.

    ``breakpoints`` are increasing; ``slopes[i]`` applies left of
    ``breakpoints[i]`` (``slopes[-1]`` right of the last breakpoint). Use
    :meth:`from_slopes` rather than the raw constructor.
    """

    breakpoints: np.ndarray
    slopes: np.ndarray
    values: np.ndarray
    _G: np.ndarray = field(repr=False)
    _G0: float = field(repr=False)

    @classmethod
    def from_slopes(cls, breakpoints, slopes) -> "ZetaFunction":
        b = np.asarray(breakpoints, dtype=float)
        s = np.asarray(slopes, dtype=float)
        if b.ndim != 1 or s.shape != (len(b) + 1,):
            raise ValueError("need k breakpoints and k + 1 slopes")
        if np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(s < 0):
            raise ValueError("slopes must be nonnegative (zeta nondecreasing)")
        if s[0] <= 0 or s[-1] <= 0:
            raise ValueError("outer slopes must be positive (coercivity)")
        # values up to a constant, then shift so that zeta(0) = 0
        v = np.concatenate([[0.0], np.cumsum(s[1:-1] * np.diff(b))]) if len(b) else np.zeros(0)
        if len(b) == 0:
            return cls(b, s, v, np.zeros(0), 0.0)
        tmp = cls(b, s, v, np.zeros(len(b)), 0.0)
        v = v - tmp._raw(np.array([0.0]))[0]
        h = np.diff(b)
        G = np.concatenate([[0.0], np.cumsum(v[:-1] * h + 0.5 * s[1:-1] * h ** 2)])
        out = cls(b, s, v, G, 0.0)
        G0 = float(out._prim_from_first(np.array([0.0]))[0])
        return cls(b, s, v, G, G0)

    # piecewise evaluation anchored at the breakpoint left of x (first one for x < b_0)
    def _anchor(self, x):
        idx = np.searchsorted(self.breakpoints, x, side="right")
        a = np.maximum(idx - 1, 0)
        return idx, a

    def _raw(self, x):
        if len(self.breakpoints) == 0:
            return self.slopes[0] * x
        idx, a = self._anchor(x)
        return self.values[a] + self.slopes[idx] * (x - self.breakpoints[a])

    def _prim_from_first(self, x):
        idx, a = self._anchor(x)
        d = x - self.breakpoints[a]
        return self._G[a] + self.values[a] * d + 0.5 * self.slopes[idx] * d ** 2

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return self._raw(s)

    def derivative(self, s):
        """Right-hand slope (the slope to the right of a breakpoint)."""
        s = np.asarray(s, dtype=float)
        if len(self.breakpoints) == 0:
            return np.full_like(s, self.slopes[0])
        return self.slopes[np.searchsorted(self.breakpoints, s, side="right")]

    def primitive(self, z):
        """``Xi(z) = int_0^z zeta(s) ds`` (closed form)."""
        z = np.asarray(z, dtype=float)
        if len(self.breakpoints) == 0:
            return 0.5 * self.slopes[0] * z ** 2
        return self._prim_from_first(z) - self._G0

    def inverse(self, y):
        """Smallest preimage ``inf{s : zeta(s) = y}``."""
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            # outer slopes are positive, so every finite value has a preimage
            raise ZetaRangeError("zeta has no preimage for non-finite values")
        b, s, v = self.breakpoints, self.slopes, self.values
        if len(b) == 0:
            return y / s[0]
        i = np.searchsorted(v, y, side="left")
        out = np.empty(np.shape(y))
        yy = np.atleast_1d(y)
        ii = np.atleast_1d(i)
        res = np.atleast_1d(out)
        for k, (yk, ik) in enumerate(zip(yy, ii)):
            if ik == 0:
                if s[0] <= 0:
                    raise ZetaRangeError(f"{yk} is outside the range of zeta")
                res[k] = b[0] + (yk - v[0]) / s[0]
            elif ik == len(b):
                res[k] = b[-1] + (yk - v[-1]) / s[-1]
            else:
                res[k] = b[ik - 1] + (yk - v[ik - 1]) / s[ik]
        return res.reshape(np.shape(y)) if np.ndim(y) else float(res[0])

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant (the inverse of L_zeta in the usual notation)."""
        return float(self.slopes.max())

    @property
    def coercivity(self) -> tuple[float, float]:
        """``(c, d)`` with ``|zeta(s)| >= c|s| - d`` for all s."""
        c = float(min(self.slopes[0], self.slopes[-1]))
        pts = np.concatenate([self.breakpoints, [0.0]])
        d = float(np.max(c * np.abs(pts) - np.abs(self(pts))))
        return c, max(d, 0.0)

    @property
    def quadratic_bound(self) -> tuple[float, float]:
        """``(K1, K2)`` with ``s**2 <= K1 * Xi(s) + K2`` for all s."""
        c, d = self.coercivity
        return 4.0 / c, 4.0 * d ** 2 / c ** 2

    @property
    def plateau(self) -> tuple[float, float] | None:
        """First interval on which zeta is constant, if any."""
        flat = np.flatnonzero(self.slopes[1:-1] == 0)
        if flat.size == 0:
            return None
        k = flat[0]
        return float(self.breakpoints[k]), float(self.breakpoints[k + 1])


def stefan_zeta() -> ZetaFunction:
    """Unit-slope map with the plateau ``[1, 2]``: u, 1, u - 1."""
    return ZetaFunction.from_slopes([1.0, 2.0], [1.0, 0.0, 1.0])


def identity_zeta() -> ZetaFunction:
    return ZetaFunction.from_slopes([], [1.0])


PointFunction = Callable[[np.ndarray], np.ndarray]
BoundaryFunction = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class StefanModel:
    """Data for ``du - div(Lambda grad zeta(u)) dt = nf sqrt(Xi(u)) dW``.

    ``u0(points)`` and ``boundary(points, t)`` return enthalpy values at an
    ``(n, 2)`` array of points. ``diffusion(points)`` returns ``(n, 2, 2)``
    tensors; ``None`` means the identity.
    """

    zeta: ZetaFunction
    u0: PointFunction
    boundary: BoundaryFunction
    nf: float = 0.0
    T: float = 1.0
    diffusion: PointFunction | None = None
    exact: BoundaryFunction | None = None
    plateau: tuple[float, float] | None = None
    name: str = ""

    def __post_init__(self):
        if self.nf < 0:
            raise ValueError("noise factor must be nonnegative")
        if self.T <= 0:
            raise ValueError("final time must be positive")
        if self.plateau is None and self.zeta.plateau is not None:
            object.__setattr__(self, "plateau", self.zeta.plateau)

    def xi(self, u):
        return self.zeta.primitive(u)

    def noise_amplitude(self, u) -> np.ndarray:
        """Per-dof amplitude ``nf * sqrt(Xi(u))``."""
        if self.nf == 0:
            return np.zeros(np.shape(u))
        return self.nf * np.sqrt(np.maximum(self.xi(u), 0.0))

    def with_(self, **changes) -> "StefanModel":
        from dataclasses import replace
        return replace(self, **changes)


def exact_test1(x, t: float):
    """Two-phase exact solution: ``2 exp(t - x1)`` where ``x1 < t``, ``exp(t - x1)`` elsewhere."""
    x = np.asarray(x, dtype=float)
    x1 = x[..., 0]
    e = np.exp(t - x1)
    return np.where(x1 < t, 2.0 * e, e)


def test1_model(nf: float = 0.0, T: float = 1.0, **kw) -> StefanModel:
    return StefanModel(zeta=stefan_zeta(), u0=lambda p: exact_test1(p, 0.0),
                       boundary=exact_test1, nf=nf, T=T, exact=exact_test1,
                       name="test1", **kw)


def test2_model(nf: float = 1.0, T: float = 1.0, **kw) -> StefanModel:
    zeta = stefan_zeta()
    ub = float(zeta.inverse(-1.0))
    return StefanModel(zeta=zeta, u0=lambda p: np.full(len(p), 2.0),
                       boundary=lambda p, t: np.full(len(p), ub), nf=nf, T=T,
                       name="test2", **kw)


def make_model(test: int, nf: float = 0.0, T: float = 1.0, **kw) -> StefanModel:
    if test == 1:
        return test1_model(nf=nf, T=T, **kw)
    if test == 2:
        return test2_model(nf=nf, T=T, **kw)
    raise ValueError(f"test must be 1 or 2, got {test}")
