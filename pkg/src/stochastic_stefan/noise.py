"""Reproducible Wiener paths on a hierarchy of dyadic time grids.

Fine increments are drawn from a Philox4x64 counter-based generator keyed by
``(seed, path, mode)``: the normal variate for fine step ``j`` comes from the
Philox block with counter ``j`` (first two 64-bit words, Box-Muller cosine
branch), so any increment can be recomputed on its own and the stream does
not depend on how paths are scheduled across workers.

Increments are rounded to integer multiples of ``2**-QUANT_BITS``. With that
quantisation every partial sum of a path is exactly representable in double
precision, so coarse increments, ``W(T)`` and any regrouping of fine
increments are bit-identical regardless of summation order.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

QUANT_BITS = 30
_QUANT = float(2.0 ** QUANT_BITS)
_MODE_BITS = 20


def _key(seed: int, path: int, mode: int) -> list[int]:
    if seed < 0 or path < 0 or not 0 <= mode < 2 ** _MODE_BITS:
        raise ValueError("seed, path and mode must be nonnegative (mode < 2**20)")
    return [int(seed) & (2 ** 64 - 1), ((int(path) << _MODE_BITS) | int(mode)) & (2 ** 64 - 1)]


def _uniform(words: np.ndarray) -> np.ndarray:
    # 53 high bits, shifted by half an ulp: strictly inside (0, 1)
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def standard_normals(seed: int, path: int, mode: int, start: int, count: int) -> np.ndarray:
    """Normal variates for fine steps ``start .. start + count - 1``."""
    bg = np.random.Philox(key=_key(seed, path, mode), counter=start)
    raw = bg.random_raw(4 * count).reshape(count, 4)
    u1, u2 = _uniform(raw[:, 0]), _uniform(raw[:, 1])
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def quantise(x: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(x) * _QUANT) / _QUANT


def sine_basis(K: int) -> tuple[Callable[[np.ndarray], np.ndarray], np.ndarray]:
    """First ``K`` tensor sine modes ``2 sin(j pi x) sin(l pi y)`` on the unit square,
    ordered by ``j**2 + l**2`` (ties by ``j``). Returns the basis and the ``(j, l)`` pairs."""
    pairs = sorted(((j, l) for j in range(1, K + 1) for l in range(1, K + 1)),
                   key=lambda jl: (jl[0] ** 2 + jl[1] ** 2, jl[0]))[:K]
    pairs = np.array(pairs)

    def basis(points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return (2.0 * np.sin(np.pi * np.outer(p[:, 0], pairs[:, 0]))
                * np.sin(np.pi * np.outer(p[:, 1], pairs[:, 1])))

    return basis, pairs


def constant_basis(points: np.ndarray) -> np.ndarray:
    """The single L2-normalised constant mode on the unit square."""
    return np.ones((len(points), 1))


def power_law(K: int, decay: float = 1.0) -> np.ndarray:
    """``q_k = k**-decay``; square-summable for ``decay > 1/2``."""
    if decay <= 0.5:
        raise ValueError("decay must exceed 1/2 for square-summable coefficients")
    return np.arange(1, K + 1, dtype=float) ** -decay


@dataclass(frozen=True, eq=False)
class BrownianDriver:
    """Fine Wiener increments for one path (``modes`` independent scalar paths).

    ``increments`` has shape ``(n_modes, n_max)``. ``q`` and ``basis`` are set
    in Q-Wiener mode only.
    """

    seed: int
    path: int
    n_max: int
    T: float
    increments: np.ndarray
    q: np.ndarray | None = None
    basis: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def dt(self) -> float:
        return self.T / self.n_max

    @property
    def q_mode(self) -> bool:
        return self.q is not None

    def _factor(self, N: int) -> int:
        if N <= 0 or self.n_max % N:
            raise ValueError(f"step count {N} does not divide n_max = {self.n_max}")
        return self.n_max // N

    def increments_for(self, N: int) -> np.ndarray:
        """Increments over the uniform grid with ``N`` steps (scalar path, or
        ``(n_modes, N)`` in Q mode)."""
        f = self._factor(N)
        coarse = self.increments.reshape(len(self.increments), N, f).sum(axis=2)
        return coarse if self.q_mode else coarse[0]

    def W(self, N: int | None = None) -> np.ndarray:
        """Path values ``W(t_0 = 0), ..., W(t_N)``."""
        inc = self.increments_for(N or self.n_max)
        inc = np.atleast_2d(inc)
        out = np.zeros((len(inc), inc.shape[1] + 1))
        np.cumsum(inc, axis=1, out=out[:, 1:])
        return out if self.q_mode else out[0]

    def q_wiener_increment(self, n: int, anchors: np.ndarray, N: int | None = None,
                           _coarse: np.ndarray | None = None) -> np.ndarray:
        """``sum_k q_k dW_k^{(n)} e_k(anchor_i)`` for coarse step ``n`` (0-based)."""
        if not self.q_mode:
            raise ValueError("driver was generated without Q-Wiener modes")
        N = N or self.n_max
        dW = self.increments_for(N)[:, n] if _coarse is None else _coarse[:, n]
        return self.basis(anchors) @ (self.q * dW)


def generate(seed: int, path: int, n_max: int, T: float = 1.0,
             q: Sequence[float] | None = None,
             basis: Callable[[np.ndarray], np.ndarray] | None = None) -> BrownianDriver:
    """Draw the fine increments of one path.

    ``n_max`` must be a power of two. Passing ``q`` switches to Q-Wiener mode
    with ``len(q)`` modes; ``basis`` then defaults to :func:`sine_basis`.
    """
    if n_max < 1 or n_max & (n_max - 1):
        raise ValueError(f"n_max must be a power of two, got {n_max}")
    sdt = np.sqrt(T / n_max)
    if q is None:
        modes = [0]
    else:
        q = np.asarray(q, dtype=float)
        if q.ndim != 1 or len(q) == 0:
            raise ValueError("q must be a nonempty 1-d sequence")
        modes = list(range(len(q)))
        if basis is None:
            basis = sine_basis(len(q))[0]
    inc = np.stack([quantise(standard_normals(seed, path, k, 0, n_max) * sdt) for k in modes])
    return BrownianDriver(seed=int(seed), path=int(path), n_max=int(n_max), T=float(T),
                          increments=inc, q=q, basis=basis)


def steps_for(h: float, T: float = 1.0) -> int:
    """Smallest power of two ``N`` with ``T / N <= h**2``."""
    N = 1
    while T / N > h * h:
        N *= 2
    return N


# -- persistence -------------------------------------------------------------
_HEADER = struct.Struct("<QQQ")


def save_paths(path: str | os.PathLike, drivers: Sequence[BrownianDriver]) -> None:
    """Binary file: little-endian ``seed, n_max, count`` (uint64) then the
    scalar fine increments of paths ``0 .. count - 1`` as float64."""
    if not drivers:
        raise ValueError("no paths to save")
    seed, n_max = drivers[0].seed, drivers[0].n_max
    for k, d in enumerate(drivers):
        if d.seed != seed or d.n_max != n_max or d.path != k or d.q_mode:
            raise ValueError("paths must be scalar, share seed and n_max and be numbered 0..count-1")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(seed, n_max, len(drivers)))
        fh.write(np.concatenate([d.increments[0] for d in drivers]).astype("<f8").tobytes())


def load_paths(path: str | os.PathLike, T: float = 1.0) -> list[BrownianDriver]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError("truncated path file header")
        seed, n_max, count = _HEADER.unpack(head)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n_max * count:
        raise ValueError(f"path file holds {data.size} values, expected {n_max * count}")
    data = data.reshape(count, n_max).astype(np.float64)
    return [BrownianDriver(seed=seed, path=k, n_max=n_max, T=T, increments=data[k:k + 1].copy())
            for k in range(count)]
