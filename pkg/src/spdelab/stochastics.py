"""Wiener increments, piecewise-constant controls, and Girsanov weights.

Sample paths come from counter-based Philox streams keyed by
(seed, block index): path i lives at row i % BLOCK_SIZE of block
i // BLOCK_SIZE, so ensembles reproduce bit-for-bit no matter how work is
split across workers, and a single path can be regenerated without its
ensemble.

Controls are piecewise-constant on the solver time grid, which makes their
L^2 norm an exact quadrature and keeps the change-of-measure exponent exact
for the discrete scheme: with deterministic phi the weight
exp(-(1/sqrt(eps)) sum <phi, dB> - (1/(2 eps)) int |phi|^2 dt) has mean one
under the discrete Gaussian measure, not just asymptotically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError

BLOCK_SIZE = 512


def _check_time_grid(time_grid: np.ndarray) -> np.ndarray:
    tg = np.asarray(time_grid, dtype=float)
    if tg.ndim != 1 or tg.size < 2:
        raise DomainError("time grid needs at least two points")
    if abs(tg[0]) > 0:
        raise DomainError(f"time grid must start at 0, got {tg[0]}")
    if np.any(np.diff(tg) <= 0):
        raise DomainError("time grid must be strictly increasing")
    return tg


def make_time_grid(T: float, n_steps: int) -> np.ndarray:
    if T <= 0 or n_steps < 1:
        raise DomainError(f"need T > 0 and n_steps >= 1, got T={T}, n_steps={n_steps}")
    return np.linspace(0.0, float(T), int(n_steps) + 1)


# ---------------------------------------------------------------------------
# Noise paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoisePath:
    """Gaussian increments of a k-dimensional Wiener path on a time grid."""

    time_grid: np.ndarray          # (M+1,)
    k: int
    increments: np.ndarray         # (M, k)
    seed: int
    path_index: int = 0

    @property
    def dts(self) -> np.ndarray:
        return np.diff(self.time_grid)

    def values(self) -> np.ndarray:
        """B(t_m), shape (M+1, k), starting at zero."""
        out = np.zeros((self.time_grid.size, self.k))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out


def _block_rng(seed: int, block: int) -> np.random.Generator:
    key = np.array([np.uint64(seed), np.uint64(block)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def increment_blocks(k: int, time_grid, seed: int, n_paths: int):
    """Yield (first_path_index, increments[(B, M, k)]) in fixed-size blocks."""
    tg = _check_time_grid(time_grid)
    if k < 1:
        raise DomainError(f"noise dimension k must be >= 1, got {k}")
    if n_paths < 1:
        raise DomainError(f"n_paths must be >= 1, got {n_paths}")
    dts = np.diff(tg)
    sqrt_dt = np.sqrt(dts)[None, :, None]
    M = dts.size
    n_blocks = (n_paths + BLOCK_SIZE - 1) // BLOCK_SIZE
    for b in range(n_blocks):
        rng = _block_rng(seed, b)
        raw = rng.standard_normal((BLOCK_SIZE, M, k))
        start = b * BLOCK_SIZE
        stop = min(start + BLOCK_SIZE, n_paths)
        yield start, raw[: stop - start] * sqrt_dt


def sample_brownian(k: int, time_grid, seed: int, path_index: int = 0) -> NoisePath:
    """Increments of path `path_index` from the (seed, block) Philox stream."""
    tg = _check_time_grid(time_grid)
    if k < 1:
        raise DomainError(f"noise dimension k must be >= 1, got {k}")
    if path_index < 0:
        raise DomainError(f"path_index must be >= 0, got {path_index}")
    block, row = divmod(path_index, BLOCK_SIZE)
    rng = _block_rng(seed, block)
    raw = rng.standard_normal((BLOCK_SIZE, tg.size - 1, k))
    inc = raw[row] * np.sqrt(np.diff(tg))[:, None]
    return NoisePath(time_grid=tg, k=k, increments=inc, seed=int(seed),
                     path_index=int(path_index))


# ---------------------------------------------------------------------------
# Controls
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Control:
    """Piecewise-constant R^k-valued control on [t_m, t_{m+1}) intervals.

    If an L^2 budget N is declared, membership is enforced at construction.
    """

    time_grid: np.ndarray          # (M+1,)
    values: np.ndarray             # (M, k)
    N: Optional[float] = None

    def __post_init__(self):
        tg = _check_time_grid(self.time_grid)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != tg.size - 1:
            raise DomainError(
                f"control has {vals.shape[0]} intervals, grid has {tg.size - 1}"
            )
        if not np.all(np.isfinite(vals)):
            raise DomainError("control values must be finite")
        object.__setattr__(self, "time_grid", tg)
        object.__setattr__(self, "values", vals)
        if self.N is not None and control_l2_norm(self) > self.N * (1 + 1e-12):
            raise DomainError(
                f"control L2 norm {control_l2_norm(self):.6g} exceeds budget N={self.N}"
            )

    @property
    def k(self) -> int:
        return self.values.shape[1]

    @staticmethod
    def zero(time_grid, k: int = 1, N: Optional[float] = None) -> "Control":
        tg = _check_time_grid(time_grid)
        return Control(tg, np.zeros((tg.size - 1, k)), N)

    @staticmethod
    def constant(value, time_grid, N: Optional[float] = None) -> "Control":
        tg = _check_time_grid(time_grid)
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return Control(tg, np.tile(v, (tg.size - 1, 1)), N)

    def refined(self, factor: int = 2) -> "Control":
        """Same control on a grid with each interval split `factor` ways."""
        tg = self.time_grid
        fine = np.concatenate(
            [np.linspace(tg[m], tg[m + 1], factor, endpoint=False)
             for m in range(tg.size - 1)] + [tg[-1:]]
        )
        vals = np.repeat(self.values, factor, axis=0)
        return Control(fine, vals, self.N)


def control_l2_norm(c: Control) -> float:
    """Exact piecewise-constant quadrature of int_0^T |phi(s)|^2 ds.

    Summed with math.fsum (correct rounding), so dyadic grid refinements of
    the same control give the identical float.
    """
    dts = np.diff(c.time_grid)
    return math.fsum(np.sum(c.values**2, axis=1) * dts)


def _require_shared_grid(a, b) -> None:
    if a.shape != b.shape or not np.array_equal(a, b):
        raise DomainError("control and path must share the same time grid")


def girsanov_log_weight(c: Control, path: NoisePath, eps: float) -> float:
    """Log density of the change of measure that recenters the tilted process.

    Ito (left-point) evaluation of the stochastic integral, matching the
    discrete scheme exactly.
    """
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    _require_shared_grid(c.time_grid, path.time_grid)
    if c.k != path.k:
        raise DomainError(f"control has k={c.k}, path has k={path.k}")
    stoch = float(np.sum(c.values * path.increments))
    return -stoch / np.sqrt(eps) - control_l2_norm(c) / (2.0 * eps)


def log_weights_for_increments(values: np.ndarray, dts: np.ndarray,
                               increments: np.ndarray, eps: float) -> np.ndarray:
    """Vectorized Girsanov log weights for a block of increment arrays (B, M, k)."""
    stoch = np.einsum("mk,bmk->b", values, increments)
    quad = float(np.sum(np.sum(values**2, axis=1) * dts))
    return -stoch / np.sqrt(eps) - quad / (2.0 * eps)


def shift_path(path: NoisePath, c: Control, eps: float) -> NoisePath:
    """Increments of B + eps^{-1/2} int phi ds on the shared grid."""
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    _require_shared_grid(c.time_grid, path.time_grid)
    if c.k != path.k:
        raise DomainError(f"control has k={c.k}, path has k={path.k}")
    drift = c.values * np.diff(path.time_grid)[:, None] / np.sqrt(eps)
    return NoisePath(
        time_grid=path.time_grid,
        k=path.k,
        increments=path.increments + drift,
        seed=path.seed,
        path_index=path.path_index,
    )


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------

def control_to_csv(c: Control, path) -> None:
    """Rows (t, phi_1 ... phi_k); the final row repeats the last value at t = T."""
    vals = np.vstack([c.values, c.values[-1:]])
    data = np.column_stack([c.time_grid, vals])
    header = "t," + ",".join(f"phi{j + 1}" for j in range(c.k))
    np.savetxt(path, data, delimiter=",", header=header, comments="")


def control_from_csv(path, N: Optional[float] = None) -> Control:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Control(data[:, 0], data[:-1, 1:], N)
