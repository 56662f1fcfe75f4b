"""Nonlinearities f, g_i = g_i1 + g_i2, sigma_j and their growth assumptions.

A CoefficientSet bundles the reaction term f(t, x, r), the flux parts
g_i1(t, x, r) (linear growth) and g_i2(t, r) (polynomial growth of order nu),
and the noise coefficients sigma_j(t, x, r), together with their declared
growth and Lipschitz constants.  Derivatives in r ride along because the
action minimizer propagates forward sensitivities through the solvers.

Callables are vectorized: t is a scalar, x is an (n, d) array of node
coordinates, and r is an array whose last axis indexes nodes (g_i2 takes
(t, r) only, matching its x-independence).

Validation is sampling-based, not symbolic; reports carry the worst ratio and
a witness point so failures are reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, UnknownPresetError

PRESET_NAMES = ("burgers", "reaction_diffusion", "linear_gaussian")


def _zero(t, x, r):
    return np.zeros_like(np.asarray(r, dtype=float))


def _zero_tr(t, r):
    return np.zeros_like(np.asarray(r, dtype=float))


@dataclass
class CoefficientSet:
    """Coefficient functions with declared constants (nu, K, L, k, d)."""

    d: int
    k: int
    nu: float
    K: float
    L: float
    f: Callable
    f_prime: Callable
    g1: tuple
    g1_prime: tuple
    g2: tuple                      # callables (t, r); independent of x
    g2_prime: tuple
    sigma: tuple
    sigma_prime: tuple
    name: str = "custom"
    truncation_level: Optional[float] = None

    def __post_init__(self):
        if self.nu < 1:
            raise DomainError(f"polynomial order nu must be >= 1, got {self.nu}")
        if self.K <= 0 or self.L <= 0:
            raise DomainError(f"growth constants must be positive, got K={self.K}, L={self.L}")
        if self.k < 1:
            raise DomainError(f"noise dimension k must be >= 1, got {self.k}")
        if len(self.g1) != self.d or len(self.g2) != self.d:
            raise DomainError(f"need d={self.d} flux components, got {len(self.g1)}/{len(self.g2)}")
        if len(self.sigma) != self.k:
            raise DomainError(f"need k={self.k} noise components, got {len(self.sigma)}")

    def g(self, i: int, t, x, r):
        """Combined flux component g_i = g_i1 + g_i2."""
        return self.g1[i](t, x, r) + self.g2[i](t, r)

    def g_prime(self, i: int, t, x, r):
        return self.g1_prime[i](t, x, r) + self.g2_prime[i](t, r)

    @property
    def has_flux(self) -> bool:
        return any(fn is not _zero for fn in self.g1) or any(fn is not _zero_tr for fn in self.g2)

    @property
    def has_reaction(self) -> bool:
        return self.f is not _zero

    def default_rho(self) -> float:
        """Norm exponent strictly above both d and 2 nu."""
        return float(max(2 * self.nu, self.d + 1) + 1)


def evaluate(c: CoefficientSet, which: str, t: float, x, r: float, index: int = 0) -> float:
    """Pointwise evaluation of one coefficient function; deterministic."""
    xarr = np.atleast_2d(np.asarray(x, dtype=float))
    rarr = np.asarray(float(r))
    if which == "f":
        return float(np.asarray(c.f(t, xarr, rarr)).ravel()[0])
    if which in ("g", "g1", "g2"):
        if not 0 <= index < c.d:
            raise DomainError(f"flux index {index} out of range for d={c.d}")
        if which == "g":
            return float(np.asarray(c.g(index, t, xarr, rarr)).ravel()[0])
        if which == "g1":
            return float(np.asarray(c.g1[index](t, xarr, rarr)).ravel()[0])
        return float(np.asarray(c.g2[index](t, rarr)).ravel()[0])
    if which == "sigma":
        if not 0 <= index < c.k:
            raise DomainError(f"noise index {index} out of range for k={c.k}")
        return float(np.asarray(c.sigma[index](t, xarr, rarr)).ravel()[0])
    raise DomainError(f"unknown coefficient selector {which!r}")


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def _saturating_sigma(scale: float, flatten: float):
    """sigma(r) = scale * r / sqrt(1 + flatten * r^2): linear growth, Lipschitz
    with constant `scale`, bounded when flatten > 0."""

    def fn(t, x, r):
        r = np.asarray(r, dtype=float)
        return scale * r / np.sqrt(1.0 + flatten * r * r)

    def dfn(t, x, r):
        r = np.asarray(r, dtype=float)
        return scale * (1.0 + flatten * r * r) ** (-1.5)

    return fn, dfn


def make_preset(name: str, d: int = 1, k: int = 1, *,
                sigma_scale: float = 0.5, sigma_flatten: float = 0.1,
                rd_a: float = 1.0, rd_b: float = -0.5) -> CoefficientSet:
    """Build one of the shipped equation families.

    burgers             flux g_i2(r) = r^2 / 2 (nu = 2), f = 0, saturating
                        multiplicative noise
    reaction_diffusion  f(r) = a r / (1 + r^2) + b r, no flux, same noise
    linear_gaussian     f = g = 0, sigma_j = 1 (additive noise)
    """
    if name not in PRESET_NAMES:
        raise UnknownPresetError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")

    zeros_d = tuple(_zero for _ in range(d))
    zeros_d_tr = tuple(_zero_tr for _ in range(d))

    if name == "linear_gaussian":
        one = lambda t, x, r: np.ones_like(np.asarray(r, dtype=float))
        return CoefficientSet(
            d=d, k=k, nu=1.0, K=1.0, L=float(max(1.0, k)),
            f=_zero, f_prime=_zero,
            g1=zeros_d, g1_prime=zeros_d,
            g2=zeros_d_tr, g2_prime=zeros_d_tr,
            sigma=tuple(one for _ in range(k)),
            sigma_prime=tuple(_zero for _ in range(k)),
            name=name,
        )

    sig, dsig = _saturating_sigma(sigma_scale, sigma_flatten)
    sigmas = tuple(sig for _ in range(k))
    dsigmas = tuple(dsig for _ in range(k))
    # sum_j sigma_j^2 <= k scale^2 r^2 and the Lipschitz constant is `scale`
    L_sigma = k * sigma_scale**2

    if name == "burgers":
        half_sq = lambda t, r: 0.5 * np.asarray(r, dtype=float) ** 2
        ident = lambda t, r: np.asarray(r, dtype=float)
        return CoefficientSet(
            d=d, k=k, nu=2.0, K=0.5, L=float(max(0.5, L_sigma)),
            f=_zero, f_prime=_zero,
            g1=zeros_d, g1_prime=zeros_d,
            g2=tuple(half_sq for _ in range(d)),
            g2_prime=tuple(ident for _ in range(d)),
            sigma=sigmas, sigma_prime=dsigmas,
            name=name,
        )

    # reaction_diffusion: |r/(1+r^2)| <= 1/2 with derivative bounded by 1
    a, b = float(rd_a), float(rd_b)

    def f(t, x, r):
        r = np.asarray(r, dtype=float)
        return a * r / (1.0 + r * r) + b * r

    def f_prime(t, x, r):
        r = np.asarray(r, dtype=float)
        return a * (1.0 - r * r) / (1.0 + r * r) ** 2 + b

    L_f = max(0.5 * abs(a), abs(b)) * 2.0 + 1e-12   # growth: |f| <= (a/2) + |b||r|
    return CoefficientSet(
        d=d, k=k, nu=1.0, K=1.0,
        L=float(max(abs(a) + abs(b), L_f, L_sigma)),
        f=f, f_prime=f_prime,
        g1=zeros_d, g1_prime=zeros_d,
        g2=zeros_d_tr, g2_prime=zeros_d_tr,
        sigma=sigmas, sigma_prime=dsigmas,
        name=name,
    )


def make_custom(d: int, k: int, *, nu: float, K: float, L: float,
                f_poly=None, g2_polys=None, sigma_polys=None,
                name: str = "custom") -> CoefficientSet:
    """Table-driven coefficients: polynomials in r with ascending coefficients.

    This is the serializable form used by config files; g_i1 is zero in this
    form (x-dependent terms cannot be tabulated compactly).
    """
    from numpy.polynomial import polynomial as P

    def poly_pair_txr(coeffs):
        c = np.asarray(coeffs, dtype=float)
        dc = P.polyder(c) if c.size > 1 else np.zeros(1)
        return (lambda t, x, r: P.polyval(np.asarray(r, dtype=float), c),
                lambda t, x, r: P.polyval(np.asarray(r, dtype=float), dc))

    def poly_pair_tr(coeffs):
        c = np.asarray(coeffs, dtype=float)
        dc = P.polyder(c) if c.size > 1 else np.zeros(1)
        return (lambda t, r: P.polyval(np.asarray(r, dtype=float), c),
                lambda t, r: P.polyval(np.asarray(r, dtype=float), dc))

    f, fp = poly_pair_txr(f_poly) if f_poly is not None else (_zero, _zero)

    g2, g2p = [], []
    tables = g2_polys if g2_polys is not None else [[0.0]] * d
    if len(tables) != d:
        raise DomainError(f"g2_polys needs {d} tables, got {len(tables)}")
    for tab in tables:
        fn, dfn = poly_pair_tr(tab)
        g2.append(fn)
        g2p.append(dfn)

    sig, sigp = [], []
    tables = sigma_polys if sigma_polys is not None else [[0.0]] * k
    if len(tables) != k:
        raise DomainError(f"sigma_polys needs {k} tables, got {len(tables)}")
    for tab in tables:
        fn, dfn = poly_pair_txr(tab)
        sig.append(fn)
        sigp.append(dfn)

    return CoefficientSet(
        d=d, k=k, nu=float(nu), K=float(K), L=float(L),
        f=f, f_prime=fp,
        g1=tuple(_zero for _ in range(d)), g1_prime=tuple(_zero for _ in range(d)),
        g2=tuple(g2), g2_prime=tuple(g2p),
        sigma=tuple(sig), sigma_prime=tuple(sigp),
        name=name,
    )


# ---------------------------------------------------------------------------
# Truncation (stability guard mirroring the bounded-coefficient approximation)
# ---------------------------------------------------------------------------

def _cutoff(r, level):
    """C^1 cutoff: 1 for |r| <= level, 0 for |r| >= level + 1, cubic between."""
    s = np.abs(np.asarray(r, dtype=float))
    theta = np.clip(s - level, 0.0, 1.0)
    return 1.0 - theta * theta * (3.0 - 2.0 * theta)


def _cutoff_prime(r, level):
    r = np.asarray(r, dtype=float)
    s = np.abs(r)
    theta = np.clip(s - level, 0.0, 1.0)
    inside = (s > level) & (s < level + 1.0)
    return np.where(inside, -6.0 * theta * (1.0 - theta) * np.sign(r), 0.0)


def truncate_coefficients(c: CoefficientSet, level: float) -> CoefficientSet:
    """Clip all nonlinearities to vanish for |r| >= level + 1 (smoothly)."""
    if level <= 0:
        raise DomainError(f"truncation level must be positive, got {level}")

    def wrap_txr(fn, dfn):
        def w(t, x, r):
            return fn(t, x, r) * _cutoff(r, level)

        def dw(t, x, r):
            return dfn(t, x, r) * _cutoff(r, level) + fn(t, x, r) * _cutoff_prime(r, level)

        return w, dw

    def wrap_tr(fn, dfn):
        def w(t, r):
            return fn(t, r) * _cutoff(r, level)

        def dw(t, r):
            return dfn(t, r) * _cutoff(r, level) + fn(t, r) * _cutoff_prime(r, level)

        return w, dw

    f, fp = wrap_txr(c.f, c.f_prime)
    g1, g1p = zip(*(wrap_txr(fn, dfn) for fn, dfn in zip(c.g1, c.g1_prime))) if c.d else ((), ())
    g2, g2p = zip(*(wrap_tr(fn, dfn) for fn, dfn in zip(c.g2, c.g2_prime))) if c.d else ((), ())
    sig, sigp = zip(*(wrap_txr(fn, dfn) for fn, dfn in zip(c.sigma, c.sigma_prime)))
    return CoefficientSet(
        d=c.d, k=c.k, nu=c.nu, K=c.K, L=c.L,
        f=f, f_prime=fp,
        g1=tuple(g1), g1_prime=tuple(g1p),
        g2=tuple(g2), g2_prime=tuple(g2p),
        sigma=tuple(sig), sigma_prime=tuple(sigp),
        name=f"{c.name}_trunc{level:g}",
        truncation_level=float(level),
    )


# ---------------------------------------------------------------------------
# Assumption validation
# ---------------------------------------------------------------------------

@dataclass
class SampleSpec:
    """Sampling box for assumption checks."""

    r_range: tuple = (-10.0, 10.0)
    n_r: int = 41
    n_t: int = 7
    n_x: int = 4
    x_box: Optional[tuple] = None    # ((a1,b1),...); defaults to the unit box

    def r_grid(self) -> np.ndarray:
        lo, hi = self.r_range
        if not hi > lo:
            raise DomainError(f"degenerate r_range {self.r_range}")
        return np.linspace(lo, hi, self.n_r)

    def x_points(self, d: int) -> np.ndarray:
        box = self.x_box if self.x_box is not None else tuple((0.0, 1.0) for _ in range(d))
        per_axis = max(2, int(np.ceil(self.n_x ** (1.0 / d))))
        axes = [np.linspace(a, b, per_axis) for (a, b) in box]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        return pts[: self.n_x]


@dataclass
class AssumptionCheck:
    passed: bool
    worst_ratio: float
    witness: tuple     # (t, x, r, s); s reuses r for growth-only checks

    def to_dict(self):
        t, x, r, s = self.witness
        return {"passed": self.passed, "worst_ratio": self.worst_ratio,
                "witness": {"t": t, "x": list(np.atleast_1d(x).astype(float)),
                            "r": r, "s": s}}


@dataclass
class ValidationReport:
    checks: dict = field(default_factory=dict)

    @property
    def all_pass(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def to_dict(self) -> dict:
        return {name: c.to_dict() for name, c in self.checks.items()}

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _worst(ratios: np.ndarray):
    idx = np.unravel_index(int(np.argmax(ratios)), ratios.shape)
    return float(ratios[idx]), idx


def validate_assumptions(c: CoefficientSet, T: float = 1.0,
                         sample_spec: Optional[SampleSpec] = None,
                         tol: float = 1e-9) -> ValidationReport:
    """Check the growth and Lipschitz bounds on a sampled (t, x, r, s) box.

    Each check records the worst ratio lhs / bound;  a ratio above 1 + tol
    fails and the witness tuple reproduces it.
    """
    spec = sample_spec or SampleSpec()
    ts = np.linspace(0.0, T, spec.n_t)
    xs = spec.x_points(c.d)
    rs = spec.r_grid()

    report = ValidationReport()

    def run_check(name, ratio_fn, pairwise):
        worst = -np.inf
        witness = (0.0, xs[0], 0.0, 0.0)
        for t in ts:
            for x in xs:
                xrow = x[None, :]
                ratios = ratio_fn(float(t), xrow)
                val, idx = _worst(ratios)
                if val > worst:
                    worst = val
                    if pairwise:
                        witness = (float(t), x, float(rs[idx[0]]), float(rs[idx[1]]))
                    else:
                        witness = (float(t), x, float(rs[idx[0]]), float(rs[idx[0]]))
        report.checks[name] = AssumptionCheck(bool(worst <= 1.0 + tol), worst, witness)

    diff = np.abs(rs[:, None] - rs[None, :])
    off_diag = diff > 0

    def a3_g1(t, x):
        vals = [np.abs(np.asarray(c.g1[i](t, x, rs)).reshape(rs.shape)) for i in range(c.d)]
        return np.max(vals, axis=0)[:, None] / (c.K * (1.0 + np.abs(rs)))[:, None]

    def a3_g2(t, x):
        vals = [np.abs(np.asarray(c.g2[i](t, rs)).reshape(rs.shape)) for i in range(c.d)]
        return np.max(vals, axis=0)[:, None] / (c.K * (1.0 + np.abs(rs) ** c.nu))[:, None]

    def a4_sigma(t, x):
        s2 = sum(np.asarray(c.sigma[j](t, x, rs)).reshape(rs.shape) ** 2 for j in range(c.k))
        return (s2 / (c.L * (rs**2 + 1.0)))[:, None]

    def a4_f(t, x):
        vals = np.abs(np.asarray(c.f(t, x, rs)).reshape(rs.shape))
        return (vals / (c.L * (np.abs(rs) + 1.0)))[:, None]

    def a5_sigma(t, x):
        s2 = np.zeros((rs.size, rs.size))
        for j in range(c.k):
            v = np.asarray(c.sigma[j](t, x, rs)).reshape(rs.shape)
            s2 += (v[:, None] - v[None, :]) ** 2
        denom = c.L * diff**2
        return np.where(off_diag, s2 / np.where(off_diag, denom, 1.0), 0.0)

    def a5_f(t, x):
        v = np.asarray(c.f(t, x, rs)).reshape(rs.shape)
        num = np.abs(v[:, None] - v[None, :])
        denom = c.L * diff
        return np.where(off_diag, num / np.where(off_diag, denom, 1.0), 0.0)

    def a5_g(t, x):
        grow = 1.0 + np.abs(rs[:, None]) ** (c.nu - 1.0) + np.abs(rs[None, :]) ** (c.nu - 1.0)
        worst_ratio = np.zeros((rs.size, rs.size))
        for i in range(c.d):
            v = np.asarray(c.g(i, t, x, rs)).reshape(rs.shape)
            num = np.abs(v[:, None] - v[None, :])
            denom = c.L * grow * diff
            ratio = np.where(off_diag, num / np.where(off_diag, denom, 1.0), 0.0)
            worst_ratio = np.maximum(worst_ratio, ratio)
        return worst_ratio

    run_check("A3_g1_linear_growth", a3_g1, pairwise=False)
    run_check("A3_g2_polynomial_growth", a3_g2, pairwise=False)
    run_check("A4_sigma_growth", a4_sigma, pairwise=False)
    run_check("A4_f_growth", a4_f, pairwise=False)
    run_check("A5_sigma_lipschitz", a5_sigma, pairwise=True)
    run_check("A5_f_lipschitz", a5_f, pairwise=True)
    run_check("A5_g_lipschitz", a5_g, pairwise=True)
    return report
