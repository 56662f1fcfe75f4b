"""Rare-event Monte Carlo, rate fitting, and the convergence/tightness probes.

Event probabilities can be estimated plainly (empirical frequency under the
noisy equation) or by importance sampling: simulate the tilted equation with a
bias control (typically the action minimizer) and reweight each path with the
exact discrete change-of-measure density.  Because the tilted scheme equals
the plain scheme evaluated on the shifted driving path, the reweighted
estimator is unbiased at the scheme level for every step size.

Rate fits include a first-order prefactor term, -eps log p = I + c eps,
because desk-scale eps never reaches the asymptotic regime; the intercept is
the reported rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .action import TargetSpec
from .coefficients import CoefficientSet
from .errors import DegenerateEstimateError, DomainError, InsufficientDataError
from .evolvers import EnsembleResult, simulate_ensemble, skeleton_trajectory, _resolve_rho
from .grid_kernel import KernelOperator
from .stochastics import Control


# ---------------------------------------------------------------------------
# Event indicators
# ---------------------------------------------------------------------------

def event_indicators(op: KernelOperator, event: TargetSpec, result: EnsembleResult,
                     rho: float) -> np.ndarray:
    """Boolean per-path indicator of the event on an ensemble result."""
    grid = op.grid
    if event.kind == "terminal_functional_threshold":
        if event.functional == "point_value":
            node = grid.nearest_node(np.asarray(event.x0))
            vals = result.terminal[:, node]
        else:
            p = event.p if event.p is not None else rho
            vals = grid.lp_norm(result.terminal, p)
        return vals >= event.level
    if event.kind == "tube_exit":
        if result.sup_dist is None:
            raise DomainError("tube_exit event needs a run with a reference trajectory")
        return result.sup_dist >= event.delta
    raise DomainError(f"{event.kind!r} is not a positive-probability event family")


@dataclass
class ProbabilityEstimate:
    """A single event-probability estimate with its sampling error."""

    p_hat: float
    stderr: float
    n: int
    method: str                    # "plain" | "importance"
    eps: float
    event: TargetSpec
    n_hits: int
    ess: Optional[float] = None    # effective sample size (importance only)

    def to_dict(self) -> dict:
        return {"p_hat": self.p_hat, "stderr": self.stderr, "n": self.n,
                "method": self.method, "eps": self.eps, "n_hits": self.n_hits,
                "ess": self.ess, "event": self.event.to_dict()}


def estimate_event(op: KernelOperator, c: CoefficientSet, xi, eps: float,
                   event: TargetSpec, n: int, method: str = "plain",
                   bias_control: Optional[Control] = None, *,
                   time_grid, seed: int = 0, rho: Optional[float] = None,
                   n_workers: int = 1) -> ProbabilityEstimate:
    """Estimate P(event) under the noisy equation at noise level eps."""
    if n < 100:
        raise DomainError(f"need at least 100 sample paths, got {n}")
    if method not in ("plain", "importance"):
        raise DomainError(f"unknown method {method!r}")
    rho_val = _resolve_rho(c, rho)
    tg = np.asarray(time_grid, dtype=float)

    reference = None
    if event.kind == "tube_exit":
        reference = skeleton_trajectory(op, c, np.asarray(xi, dtype=float),
                                        Control.zero(tg, c.k))

    if method == "plain":
        res = simulate_ensemble(op, c, xi, eps, tg, n, seed, rho=rho_val,
                                reference=reference, n_workers=n_workers)
        ind = event_indicators(op, event, res, rho_val)
        p_hat = float(np.mean(ind))
        stderr = float(np.sqrt(p_hat * (1.0 - p_hat) / n))
        return ProbabilityEstimate(p_hat=p_hat, stderr=stderr, n=n, method="plain",
                                   eps=eps, event=event, n_hits=int(ind.sum()))

    if bias_control is None:
        raise DomainError("importance sampling needs a bias_control")
    if eps <= 0:
        raise DomainError("importance sampling needs eps > 0")
    res = simulate_ensemble(op, c, xi, eps, tg, n, seed, phi=bias_control,
                            rho=rho_val, reference=reference, n_workers=n_workers)
    ind = event_indicators(op, event, res, rho_val)
    w = np.exp(res.log_weights)
    contrib = np.where(ind, w, 0.0)
    n_hits = int(ind.sum())
    if n_hits == 0 or float(np.sum(contrib)) == 0.0:
        raise DegenerateEstimateError(
            f"no effective samples: {n_hits} hits under the biased measure")
    p_hat = float(np.mean(contrib))
    stderr = float(np.std(contrib, ddof=1) / np.sqrt(n))
    ess = float(np.sum(w) ** 2 / np.sum(w**2))
    return ProbabilityEstimate(p_hat=min(p_hat, 1.0), stderr=stderr, n=n,
                               method="importance", eps=eps, event=event,
                               n_hits=n_hits, ess=max(ess, 1.0))


# ---------------------------------------------------------------------------
# Rate fitting
# ---------------------------------------------------------------------------

@dataclass
class RateFit:
    """Affine fit -eps log p = I + c eps; the intercept I is the rate."""

    eps_grid: np.ndarray
    minus_eps_log_p: np.ndarray
    intercept: float
    slope: float
    residuals: np.ndarray
    fitted: np.ndarray

    def to_dict(self) -> dict:
        return {"eps_grid": self.eps_grid.tolist(),
                "minus_eps_log_p": self.minus_eps_log_p.tolist(),
                "intercept": self.intercept, "slope": self.slope,
                "residuals": self.residuals.tolist()}


def fit_rate(estimates: Sequence[ProbabilityEstimate]) -> RateFit:
    """Least-squares fit of -eps log p_hat with a prefactor correction slope."""
    for est in estimates:
        if est.p_hat <= 0.0:
            raise InsufficientDataError(
                f"p_hat = 0 at eps = {est.eps}; no rate information")
    eps = np.asarray([est.eps for est in estimates], dtype=float)
    if np.unique(eps).size < 3:
        raise InsufficientDataError(
            f"need at least 3 distinct eps values, got {np.unique(eps).size}")
    y = -eps * np.log(np.asarray([est.p_hat for est in estimates]))
    X = np.column_stack([np.ones_like(eps), eps])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    fitted = X @ coef
    return RateFit(eps_grid=eps, minus_eps_log_p=y, intercept=float(coef[0]),
                   slope=float(coef[1]), residuals=y - fitted, fitted=fitted)


# ---------------------------------------------------------------------------
# Convergence of the tilted process to the skeleton
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceRow:
    eps: float
    noise_level: float
    mean_distance: float
    stderr: float
    n: int


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)

    @property
    def eps_grid(self) -> np.ndarray:
        return np.asarray([r.eps for r in self.rows])

    @property
    def distances(self) -> np.ndarray:
        return np.asarray([r.mean_distance for r in self.rows])

    def loglog_slope(self) -> float:
        """Slope of log mean-distance against log eps over the nonzero rows."""
        mask = (self.eps_grid > 0) & (self.distances > 0)
        if mask.sum() < 2:
            raise InsufficientDataError("need >= 2 positive rows for a slope")
        s, _ = np.polyfit(np.log(self.eps_grid[mask]), np.log(self.distances[mask]), 1)
        return float(s)

    def to_dict(self) -> dict:
        return {"rows": [vars(r) for r in self.rows]}


def convergence_experiment(op: KernelOperator, c: CoefficientSet,
                           xi_family: Callable[[float], np.ndarray],
                           phi_family: Callable[[float], Control],
                           eps_grid: Sequence[float], *,
                           time_grid, n_paths: int, seed: int = 0,
                           rho: Optional[float] = None,
                           gamma: str = "identity",
                           n_workers: int = 1) -> ConvergenceTable:
    """Mean sup-L^rho distance between the tilted process and the skeleton.

    xi_family / phi_family are closed-form families evaluated at each eps;
    their value at 0 defines the limit.  gamma chooses the noise-level
    reparametrization: "identity" runs at noise eps, "zero" turns the noise
    off and probes the continuity of the limit map alone.
    """
    if gamma not in ("identity", "zero"):
        raise DomainError(f"gamma must be 'identity' or 'zero', got {gamma!r}")
    rho_val = _resolve_rho(c, rho)
    tg = np.asarray(time_grid, dtype=float)
    xi_limit = np.asarray(xi_family(0.0), dtype=float)
    phi_limit = phi_family(0.0)
    reference = skeleton_trajectory(op, c, xi_limit, phi_limit)

    table = ConvergenceTable()
    for eps in eps_grid:
        eps = float(eps)
        noise = eps if gamma == "identity" else 0.0
        xi_eps = np.asarray(xi_family(eps), dtype=float)
        phi_eps = phi_family(eps)
        n_run = n_paths if noise > 0 else 1
        res = simulate_ensemble(op, c, xi_eps, noise, tg, n_run, seed,
                                phi=phi_eps, rho=rho_val, reference=reference,
                                n_workers=n_workers)
        d = res.sup_dist
        mean = float(np.mean(d))
        stderr = float(np.std(d, ddof=1) / np.sqrt(n_run)) if n_run > 1 else 0.0
        table.rows.append(ConvergenceRow(eps=eps, noise_level=noise,
                                         mean_distance=mean, stderr=stderr, n=n_run))
    return table


# ---------------------------------------------------------------------------
# Tightness probe
# ---------------------------------------------------------------------------

@dataclass
class TightnessTable:
    eps_grid: np.ndarray
    C_grid: np.ndarray
    p_hat: np.ndarray            # (n_eps, n_C)
    n: int
    n_blowups: int

    @property
    def sup_over_eps(self) -> np.ndarray:
        return self.p_hat.max(axis=0)

    def to_dict(self) -> dict:
        return {"eps_grid": self.eps_grid.tolist(), "C_grid": self.C_grid.tolist(),
                "p_hat": self.p_hat.tolist(),
                "sup_over_eps": self.sup_over_eps.tolist(),
                "n": self.n, "n_blowups": self.n_blowups}


def tightness_probe(op: KernelOperator, c: CoefficientSet, xi,
                    eps_grid: Sequence[float], C_grid: Sequence[float], n: int, *,
                    time_grid, seed: int = 0, phi: Optional[Control] = None,
                    rho: Optional[float] = None,
                    n_workers: int = 1) -> TightnessTable:
    """Empirical exceedance probabilities P(sup_t |v|_rho >= C) per (eps, C).

    All C levels share one sample per eps, so each row is exactly nonincreasing
    in C.  Blown-up paths count as exceeding every level.
    """
    if n < 1000:
        raise DomainError(f"tightness probe needs n >= 1000 paths, got {n}")
    rho_val = _resolve_rho(c, rho)
    tg = np.asarray(time_grid, dtype=float)
    eps_arr = np.asarray([float(e) for e in eps_grid])
    C_arr = np.asarray(sorted(float(C) for C in C_grid))
    p = np.zeros((eps_arr.size, C_arr.size))
    n_blow = 0
    for i, eps in enumerate(eps_arr):
        res = simulate_ensemble(op, c, xi, float(eps), tg, n, seed, phi=phi,
                                rho=rho_val, n_workers=n_workers)
        n_blow += res.n_blowups
        sups = res.sup_rho
        for j, C in enumerate(C_arr):
            p[i, j] = float(np.mean(sups >= C))
    return TightnessTable(eps_grid=eps_arr, C_grid=C_arr, p_hat=p, n=n,
                          n_blowups=n_blow)
