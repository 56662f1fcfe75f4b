"""Mild-form time steppers: the noisy equation, its controlled tilt, and the
noise-free skeleton.

All three share one exponential-Euler step on the mild formulation: the linear
part is propagated exactly through the spectral semigroup, the nonlinear flux
divergence, reaction, and noise terms are evaluated at the left endpoint:

    u_{m+1} = G_dt [ u_m + dt (f(t_m, u_m) + D_i g_i(t_m, u_m))
                         + sigma_j(t_m, u_m) (sqrt(eps) dB^j_m + phi_j(t_m) dt) ]

The controlled equation with phi = 0 IS the plain equation (same code path,
bit-for-bit), and with eps = 0 its trajectory is exactly the fixed point of
the left-point mild quadrature that the skeleton solver's Picard sweeps
converge to.

A polynomial flux of order nu forces a CFL-type guard
dt <= c h / max(1, sup|u|^{nu-1}); violations and fields beyond the blow-up
threshold raise (single path) or flag (ensembles).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coefficients import CoefficientSet
from .errors import BlowUpError, ConvergenceError, DomainError
from .grid_kernel import Grid, KernelOperator
from .stochastics import (
    Control,
    NoisePath,
    _check_time_grid,
    increment_blocks,
    log_weights_for_increments,
)

BLOWUP_THRESHOLD = 1e8


# ---------------------------------------------------------------------------
# Fields and diagnostics
# ---------------------------------------------------------------------------

@dataclass
class SpaceTimeField:
    """A field on the time x interior-node grid with Dirichlet boundary.

    Boundary nodes are implicit zeros at all times, so the Dirichlet trace
    vanishes exactly by construction.
    """

    grid: Grid
    time_grid: np.ndarray          # (M+1,)
    values: np.ndarray             # (M+1, n_interior)
    rho: float

    def lp_norms(self, p: Optional[float] = None) -> np.ndarray:
        return self.grid.lp_norm(self.values, p if p is not None else self.rho)

    def sup_lp_norm(self, p: Optional[float] = None) -> float:
        return float(np.max(self.lp_norms(p)))

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def values_with_boundary(self) -> np.ndarray:
        """Embed the interior values in the full grid including zero boundary."""
        if self.grid.dim == 1:
            n = self.grid.n_per_axis[0]
            out = np.zeros((self.values.shape[0], n + 2))
            out[:, 1:-1] = self.values
            return out
        nx, ny = self.grid.n_per_axis
        out = np.zeros((self.values.shape[0], nx + 2, ny + 2))
        out[:, 1:-1, 1:-1] = self.values.reshape(-1, nx, ny)
        return out

    def to_csv(self, path) -> None:
        """Rows (t, x..., value) over interior nodes."""
        coords = self.grid.interior_coords()
        M1, n = self.values.shape
        t_col = np.repeat(self.time_grid, n)
        x_cols = np.tile(coords, (M1, 1))
        data = np.column_stack([t_col, x_cols, self.values.ravel()])
        header = "t," + ",".join(f"x{i + 1}" for i in range(self.grid.dim)) + ",value"
        np.savetxt(path, data, delimiter=",", header=header, comments="")

    def save_npz(self, path) -> None:
        np.savez_compressed(
            path, time_grid=self.time_grid, values=self.values, rho=self.rho,
            extents=np.asarray(self.grid.extents), resolution=np.asarray(self.grid.resolution),
        )

    @staticmethod
    def load_npz(path) -> "SpaceTimeField":
        from .grid_kernel import build_grid

        data = np.load(path)
        grid = build_grid(data["extents"], data["resolution"])
        return SpaceTimeField(grid=grid, time_grid=data["time_grid"],
                              values=data["values"], rho=float(data["rho"]))


@dataclass
class SolveDiagnostics:
    """What the solver did: sweeps, increments, guards, blow-up state."""

    steps: int = 0
    picard_sweeps: Optional[int] = None
    last_increment: Optional[float] = None
    converged: bool = True
    truncation_level: Optional[float] = None
    blow_up: bool = False
    guard_tripped: bool = False
    max_abs_value: float = 0.0


# ---------------------------------------------------------------------------
# The shared step
# ---------------------------------------------------------------------------

class _Stepper:
    """Precomputed context for repeated exponential-Euler steps."""

    def __init__(self, op: KernelOperator, c: CoefficientSet, time_grid: np.ndarray,
                 blowup_threshold: float = BLOWUP_THRESHOLD, cfl_constant: float = 1.0):
        self.op = op
        self.c = c
        self.time_grid = _check_time_grid(time_grid)
        self.dts = np.diff(self.time_grid)
        self.props = [op.propagator(float(dt)) for dt in self.dts]
        self.coords = op.grid.interior_coords()
        self.grads_T = [D.T.copy() for D in op.grad_matrices]
        self.blowup_threshold = blowup_threshold
        self.h_min = min(op.grid.h)
        self.cfl_constant = cfl_constant
        self.guard_active = c.has_flux and c.nu > 1

    def nonlinear(self, m: int, U: np.ndarray) -> np.ndarray:
        """dt * (f + D_i g_i) evaluated at (t_m, U); U has nodes on the last axis."""
        c, t = self.c, float(self.time_grid[m])
        out = np.zeros_like(U)
        if c.has_reaction:
            out += c.f(t, self.coords, U)
        if c.has_flux:
            for i in range(c.d):
                out += c.g(i, t, self.coords, U) @ self.grads_T[i]
        return out * self.dts[m]

    def noise_factor(self, m: int, U: np.ndarray, w: np.ndarray) -> np.ndarray:
        """sum_j sigma_j(t_m, U) * w_j with w of shape (..., k)."""
        c, t = self.c, float(self.time_grid[m])
        out = np.zeros_like(U)
        for j in range(c.k):
            out += c.sigma[j](t, self.coords, U) * w[..., j, None]
        return out

    def step(self, m: int, U: np.ndarray, w: np.ndarray) -> np.ndarray:
        return (U + self.nonlinear(m, U) + self.noise_factor(m, U, w)) @ self.props[m]

    def guard_ok(self, m: int, U: np.ndarray) -> np.ndarray:
        """Per-row CFL-type check dt <= c h / max(1, sup|u|^{nu-1})."""
        sup = np.max(np.abs(U), axis=-1)
        limit = self.cfl_constant * self.h_min / np.maximum(1.0, sup ** (self.c.nu - 1.0))
        return self.dts[m] <= limit


def _combined_noise(eps: float, inc_m: np.ndarray, phi_m: Optional[np.ndarray],
                    dt: float) -> np.ndarray:
    w = np.sqrt(eps) * inc_m
    if phi_m is not None:
        w = w + phi_m * dt
    return w


def _validate_initial(op: KernelOperator, xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (op.grid.n_interior,):
        raise DomainError(
            f"initial field has shape {xi.shape}, expected ({op.grid.n_interior},)"
        )
    if not np.all(np.isfinite(xi)):
        raise DomainError("initial field must be finite (L^rho membership)")
    return xi


def _resolve_rho(c: CoefficientSet, rho: Optional[float]) -> float:
    r = c.default_rho() if rho is None else float(rho)
    if r <= c.d:
        raise DomainError(f"rho must exceed the space dimension, got rho={r}, d={c.d}")
    return r


# ---------------------------------------------------------------------------
# Single-path integrators
# ---------------------------------------------------------------------------

def integrate_controlled(op: KernelOperator, c: CoefficientSet, xi, eps: float,
                         path: NoisePath, phi: Control, *,
                         rho: Optional[float] = None,
                         blowup_threshold: float = BLOWUP_THRESHOLD,
                         cfl_constant: float = 1.0):
    """Tilted equation: the plain step plus the drift sigma_j(v) phi_j dt.

    Equivalently, the plain scheme evaluated on the shifted driving path, so
    Girsanov reweighting is exact at the scheme level.
    """
    if eps < 0:
        raise DomainError(f"eps must be >= 0, got {eps}")
    xi = _validate_initial(op, xi)
    if not np.array_equal(path.time_grid, phi.time_grid):
        raise DomainError("noise path and control must share the solver time grid")
    if phi.k != path.k:
        raise DomainError(f"control has k={phi.k}, path has k={path.k}")
    if path.k != c.k:
        raise DomainError(f"path has k={path.k}, coefficients declare k={c.k}")
    rho = _resolve_rho(c, rho)

    st = _Stepper(op, c, path.time_grid, blowup_threshold, cfl_constant)
    M = st.dts.size
    vals = np.empty((M + 1, xi.size))
    vals[0] = xi
    U = xi[None, :]
    diag = SolveDiagnostics(steps=M, truncation_level=c.truncation_level,
                            max_abs_value=float(np.max(np.abs(xi))))
    for m in range(M):
        if st.guard_active and not bool(st.guard_ok(m, U)[0]):
            diag.guard_tripped = True
            diag.blow_up = True
            raise BlowUpError(
                f"step-size guard tripped at t={st.time_grid[m]:.6g}: "
                f"dt={st.dts[m]:.3g} too large for sup|u|={np.max(np.abs(U)):.3g} "
                f"(nu={c.nu})", t=float(st.time_grid[m]),
                sup_value=float(np.max(np.abs(U))))
        w = _combined_noise(eps, path.increments[m][None, :], phi.values[m], st.dts[m])
        U = st.step(m, U, w)
        sup = float(np.max(np.abs(U)))
        diag.max_abs_value = max(diag.max_abs_value, sup)
        if not np.isfinite(sup) or sup > blowup_threshold:
            diag.blow_up = True
            raise BlowUpError(
                f"field blew up at t={st.time_grid[m + 1]:.6g} (sup={sup:.3g})",
                t=float(st.time_grid[m + 1]), sup_value=sup)
        vals[m + 1] = U[0]
    fld = SpaceTimeField(op.grid, st.time_grid, vals, rho)
    return fld, diag


def integrate_spde(op: KernelOperator, c: CoefficientSet, xi, eps: float,
                   path: NoisePath, *, rho: Optional[float] = None,
                   blowup_threshold: float = BLOWUP_THRESHOLD,
                   cfl_constant: float = 1.0):
    """Mild solution driven by sqrt(eps) B alone (the controlled run at phi = 0)."""
    phi = Control.zero(path.time_grid, path.k)
    return integrate_controlled(op, c, xi, eps, path, phi, rho=rho,
                                blowup_threshold=blowup_threshold,
                                cfl_constant=cfl_constant)


# ---------------------------------------------------------------------------
# Skeleton equation
# ---------------------------------------------------------------------------

def skeleton_trajectory(op: KernelOperator, c: CoefficientSet, xi: np.ndarray,
                        phi: Control, *, cfl_constant: float = 1.0,
                        blowup_threshold: float = BLOWUP_THRESHOLD) -> np.ndarray:
    """Fixed point of the left-point mild quadrature, built in one forward pass.

    This is the trajectory the Picard sweeps of solve_skeleton converge to;
    the optimizer uses it directly because it is exact and cheap.
    """
    st = _Stepper(op, c, phi.time_grid, blowup_threshold, cfl_constant)
    M = st.dts.size
    vals = np.empty((M + 1, xi.size))
    vals[0] = xi
    U = xi[None, :]
    for m in range(M):
        w = phi.values[m][None, :] * st.dts[m]
        U = (U + st.nonlinear(m, U) + st.noise_factor(m, U, w)) @ st.props[m]
        sup = float(np.max(np.abs(U)))
        if not np.isfinite(sup) or sup > blowup_threshold:
            raise BlowUpError(f"skeleton blew up at t={st.time_grid[m + 1]:.6g}",
                              t=float(st.time_grid[m + 1]), sup_value=sup)
        vals[m + 1] = U[0]
    return vals


def solve_skeleton(op: KernelOperator, c: CoefficientSet, xi, phi: Control, *,
                   rho: Optional[float] = None, tol: float = 1e-10,
                   max_sweeps: int = 50, initial: str = "heat",
                   blowup_threshold: float = BLOWUP_THRESHOLD):
    """Deterministic mild solution by global Picard iteration.

    Sweeps map a whole candidate trajectory through the left-point Duhamel
    quadrature until the relative sup increment falls below tol.  Any starting
    trajectory converges to the same fixed point; `initial` chooses between
    the heat flow of xi ("heat") and the zero trajectory ("zero").
    """
    xi = _validate_initial(op, xi)
    if phi.k != c.k:
        raise DomainError(f"control has k={phi.k}, coefficients declare k={c.k}")
    rho = _resolve_rho(c, rho)
    st = _Stepper(op, c, phi.time_grid, blowup_threshold)
    M = st.dts.size
    n = xi.size

    heat = np.empty((M + 1, n))
    heat[0] = xi
    for m in range(M):
        heat[m + 1] = heat[m] @ st.props[m]

    if initial == "heat":
        psi = heat.copy()
    elif initial == "zero":
        psi = np.zeros((M + 1, n))
        psi[0] = xi
    else:
        raise DomainError(f"unknown initial trajectory {initial!r}")

    scale = max(1.0, float(np.max(np.abs(xi))))
    diag = SolveDiagnostics(steps=M, truncation_level=c.truncation_level)
    for sweep in range(1, max_sweeps + 1):
        new = np.empty_like(psi)
        new[0] = xi
        duhamel = np.zeros((1, n))
        for m in range(M):
            w = phi.values[m][None, :] * st.dts[m]
            src = st.nonlinear(m, psi[m][None, :]) + st.noise_factor(m, psi[m][None, :], w)
            duhamel = (duhamel + src) @ st.props[m]
            new[m + 1] = heat[m + 1] + duhamel[0]
        inc = float(np.max(np.abs(new - psi)))
        sup = float(np.max(np.abs(new)))
        diag.picard_sweeps = sweep
        diag.last_increment = inc / scale
        diag.max_abs_value = max(diag.max_abs_value, sup)
        psi = new
        if not np.isfinite(sup) or sup > blowup_threshold:
            diag.blow_up = True
            raise BlowUpError(f"skeleton sweep blew up (sup={sup:.3g})", sup_value=sup)
        if inc <= tol * scale:
            diag.converged = True
            return SpaceTimeField(op.grid, st.time_grid, psi, rho), diag
    diag.converged = False
    raise ConvergenceError(
        f"Picard did not converge in {max_sweeps} sweeps "
        f"(last relative increment {diag.last_increment:.3e})", diagnostics=diag)


# ---------------------------------------------------------------------------
# Mild-form term decomposition
# ---------------------------------------------------------------------------

def decompose_terms(op: KernelOperator, c: CoefficientSet, xi, eps: float,
                    path: NoisePath, phi: Control, *,
                    rho: Optional[float] = None):
    """The five mild-form terms along the controlled trajectory.

    Returns (Z1..Z5): initial heat flow, stochastic convolution, flux term,
    reaction term, control drift.  Their sum reproduces the trajectory to
    round-off because each accumulator satisfies the same semigroup recursion
    as the scheme itself.
    """
    fld, _ = integrate_controlled(op, c, xi, eps, path, phi, rho=rho)
    st = _Stepper(op, c, path.time_grid)
    rho = fld.rho
    M = st.dts.size
    n = xi.size if hasattr(xi, "size") else op.grid.n_interior
    Z = np.zeros((5, M + 1, op.grid.n_interior))
    Z[0, 0] = np.asarray(xi, dtype=float)
    coords = st.coords
    for m in range(M):
        t = float(st.time_grid[m])
        U = fld.values[m][None, :]
        dt = st.dts[m]
        src = np.zeros((5, 1, op.grid.n_interior))
        noise = np.sqrt(eps) * path.increments[m][None, :]
        src[1] = st.noise_factor(m, U, noise)
        if c.has_flux:
            flux = np.zeros_like(U)
            for i in range(c.d):
                flux += c.g(i, t, coords, U) @ st.grads_T[i]
            src[2] = flux * dt
        if c.has_reaction:
            src[3] = c.f(t, coords, U) * dt
        src[4] = st.noise_factor(m, U, phi.values[m][None, :] * dt)
        for ell in range(5):
            Z[ell, m + 1] = (Z[ell, m][None, :] + src[ell]) @ st.props[m]
    fields = tuple(
        SpaceTimeField(op.grid, st.time_grid, Z[ell], rho) for ell in range(5)
    )
    return fields


# ---------------------------------------------------------------------------
# Vectorized ensembles
# ---------------------------------------------------------------------------

@dataclass
class EnsembleResult:
    """Per-path reductions of a Monte Carlo run (order matches path index)."""

    n_paths: int
    time_grid: np.ndarray
    terminal: np.ndarray                    # (n_paths, n_interior)
    sup_rho: np.ndarray                     # (n_paths,)
    sup_dist: Optional[np.ndarray] = None   # distance to a reference trajectory
    log_weights: Optional[np.ndarray] = None
    blown: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    guard_trips: int = 0

    @property
    def n_blowups(self) -> int:
        return int(np.count_nonzero(self.blown))


def simulate_ensemble(op: KernelOperator, c: CoefficientSet, xi, eps: float,
                      time_grid, n_paths: int, seed: int, *,
                      phi: Optional[Control] = None,
                      rho: Optional[float] = None,
                      reference: Optional[np.ndarray] = None,
                      blowup_threshold: float = BLOWUP_THRESHOLD,
                      cfl_constant: float = 1.0,
                      n_workers: int = 1) -> EnsembleResult:
    """Evolve many paths at once with block-structured, counter-based noise.

    Paths that trip the blow-up threshold or the step guard are frozen and
    flagged (sup_rho = inf) rather than aborting the ensemble.  Results are
    invariant to the worker count because blocks are fixed and reductions are
    per path.
    """
    if eps < 0:
        raise DomainError(f"eps must be >= 0, got {eps}")
    xi = _validate_initial(op, xi)
    tg = _check_time_grid(time_grid)
    if phi is not None and not np.array_equal(phi.time_grid, tg):
        raise DomainError("control must live on the ensemble time grid")
    rho_val = _resolve_rho(c, rho)

    st = _Stepper(op, c, tg, blowup_threshold, cfl_constant)
    M = st.dts.size
    n = op.grid.n_interior
    grid = op.grid

    ref = None
    if reference is not None:
        ref = np.asarray(reference, dtype=float)
        if ref.shape != (M + 1, n):
            raise DomainError(f"reference trajectory has shape {ref.shape}, "
                              f"expected {(M + 1, n)}")

    out_terminal = np.empty((n_paths, n))
    out_sup = np.zeros(n_paths)
    out_dist = np.zeros(n_paths) if ref is not None else None
    out_logw = np.empty(n_paths) if (phi is not None and eps > 0) else None
    out_blown = np.zeros(n_paths, dtype=bool)
    guard_trips = 0

    def run_block(start: int, inc: np.ndarray):
        B = inc.shape[0]
        U = np.tile(xi, (B, 1))
        sup = grid.lp_norm(U, rho_val) * np.ones(B)
        dist = None
        if ref is not None:
            dist = grid.lp_norm(U - ref[0], rho_val) * np.ones(B)
        blown = np.zeros(B, dtype=bool)
        trips = 0
        for m in range(M):
            active = ~blown
            if not active.any():
                break
            Ua = U[active] if not active.all() else U
            if st.guard_active:
                ok = st.guard_ok(m, Ua)
                if not ok.all():
                    bad_local = np.flatnonzero(active)[~ok]
                    blown[bad_local] = True
                    trips += int((~ok).sum())
                    active = ~blown
                    if not active.any():
                        break
                    Ua = U[active]
            w = _combined_noise(eps, inc[active, m, :],
                                phi.values[m] if phi is not None else None, st.dts[m])
            Unew = st.step(m, Ua, w)
            sup_new = np.max(np.abs(Unew), axis=-1)
            bad = ~np.isfinite(sup_new) | (sup_new > blowup_threshold)
            rows = np.flatnonzero(active)
            if bad.any():
                blown[rows[bad]] = True
                Unew = Unew[~bad]
                rows = rows[~bad]
            U[rows] = Unew
            sup[rows] = np.maximum(sup[rows], grid.lp_norm(Unew, rho_val))
            if ref is not None:
                dist[rows] = np.maximum(dist[rows], grid.lp_norm(Unew - ref[m + 1], rho_val))
        sl = slice(start, start + B)
        out_terminal[sl] = U
        out_sup[sl] = np.where(blown, np.inf, sup)
        out_blown[sl] = blown
        if ref is not None:
            out_dist[sl] = np.where(blown, np.inf, dist)
        if out_logw is not None:
            out_logw[sl] = log_weights_for_increments(phi.values, st.dts, inc, eps)
        return trips

    blocks = list(increment_blocks(c.k, tg, seed, n_paths))
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            for trips in pool.map(lambda sb: run_block(*sb), blocks):
                guard_trips += trips
    else:
        for start, inc in blocks:
            guard_trips += run_block(start, inc)

    return EnsembleResult(
        n_paths=n_paths, time_grid=tg, terminal=out_terminal, sup_rho=out_sup,
        sup_dist=out_dist, log_weights=out_logw, blown=out_blown,
        guard_trips=guard_trips,
    )
