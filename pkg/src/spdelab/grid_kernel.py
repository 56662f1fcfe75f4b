"""Dirichlet grids, divergence-form elliptic operators, and their heat semigroup.

The elliptic operator A = d/dx_i ( b_ij(x) d/dx_j . ) on a box with zero
boundary values is discretized with second-order finite differences in flux
form, so the matrix is symmetric whenever b is.  The semigroup G_t = exp(t A)
is realized through an exact eigen-decomposition of the discrete operator:
semigroup and symmetry identities then hold to round-off, independently of any
time stepping built on top.

Desk-scale limits: at most 512 interior nodes in 1D and 64 x 64 in 2D, which
keeps dense eigen-solves cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import (
    AssumptionViolationError,
    DomainError,
    InvalidGridError,
    SingularKernelError,
)

_MAX_INTERIOR = {1: 512, 2: 64 * 64}


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on a box with Dirichlet boundary.

    Only interior nodes are indexed; boundary nodes carry the value 0 and are
    implicit.  ``n_per_axis`` counts interior nodes, ``resolution`` counts
    cells per axis (interior = resolution - 1).
    """

    dim: int
    extents: tuple          # ((a1, b1), ..., (ad, bd))
    resolution: tuple       # cells per axis
    n_per_axis: tuple       # interior nodes per axis
    h: tuple                # spacing per axis

    @property
    def n_interior(self) -> int:
        return int(np.prod(self.n_per_axis))

    @property
    def cell_volume(self) -> float:
        """Quadrature weight h_1 * ... * h_d for interior-node sums."""
        return float(np.prod(self.h))

    def axis_coords(self, axis: int) -> np.ndarray:
        a, b = self.extents[axis]
        n = self.n_per_axis[axis]
        return a + self.h[axis] * np.arange(1, n + 1)

    def interior_coords(self) -> np.ndarray:
        """Interior node coordinates, shape (n_interior, dim), row-major."""
        axes = [self.axis_coords(ax) for ax in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def nearest_node(self, x) -> int:
        """Row index of the interior node closest to the point x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        coords = self.interior_coords()
        return int(np.argmin(np.sum((coords - x[None, :]) ** 2, axis=1)))

    def lp_norm(self, values: np.ndarray, p: float) -> np.ndarray:
        """L^p(D) norm over the last axis, with quadrature weight h^d."""
        v = np.abs(np.asarray(values, dtype=float))
        if np.isinf(p):
            return v.max(axis=-1)
        return (np.sum(v**p, axis=-1) * self.cell_volume) ** (1.0 / p)


def build_grid(extents, resolution) -> Grid:
    """Build a uniform Dirichlet grid on a box.

    extents: (a, b) in 1D, or a sequence of per-axis (a, b) pairs.
    resolution: cells per axis (scalar or per-axis); must be >= 2 so that at
    least one interior node exists.
    """
    ext = np.asarray(extents, dtype=float)
    if ext.ndim == 1:
        ext = ext[None, :]
    if ext.ndim != 2 or ext.shape[1] != 2:
        raise InvalidGridError(f"extents must be (d, 2) pairs, got shape {ext.shape}")
    dim = ext.shape[0]
    if dim not in (1, 2):
        raise InvalidGridError(f"dimension {dim} unsupported (desk scale is d in {{1, 2}})")
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (dim,)).copy()
    if np.any(res < 2):
        raise InvalidGridError(f"resolution must be >= 2 per axis, got {res.tolist()}")
    lengths = ext[:, 1] - ext[:, 0]
    if np.any(lengths <= 0):
        raise InvalidGridError(f"degenerate extents {ext.tolist()}")
    n_int = res - 1
    if int(np.prod(n_int)) > _MAX_INTERIOR[dim]:
        raise InvalidGridError(
            f"{int(np.prod(n_int))} interior nodes exceeds the desk-scale cap "
            f"{_MAX_INTERIOR[dim]} for d={dim}"
        )
    h = lengths / res
    return Grid(
        dim=dim,
        extents=tuple(map(tuple, ext.tolist())),
        resolution=tuple(int(r) for r in res),
        n_per_axis=tuple(int(n) for n in n_int),
        h=tuple(float(x) for x in h),
    )


# ---------------------------------------------------------------------------
# Elliptic coefficients
# ---------------------------------------------------------------------------

class EllipticCoefficients:
    """Symmetric matrix field b_ij(x) with ellipticity constant kappa.

    ``b`` may be a scalar, a constant (d, d) array, or a callable mapping an
    (N, d) array of points to (N, d, d) matrices.  The uniform ellipticity
    condition kappa |g|^2 <= b_ij g_i g_j <= kappa^{-1} |g|^2 is spot-checked
    on grid nodes at assembly time.
    """

    def __init__(self, b, kappa: float):
        if kappa <= 0:
            raise AssumptionViolationError(f"kappa must be positive, got {kappa}")
        self.kappa = float(kappa)
        self._b = b

    def matrices_at(self, points: np.ndarray, dim: int) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = pts.shape[0]
        b = self._b
        if callable(b):
            out = np.asarray(b(pts), dtype=float)
            if out.shape != (n, dim, dim):
                raise AssumptionViolationError(
                    f"b(x) returned shape {out.shape}, expected {(n, dim, dim)}"
                )
            return out
        arr = np.asarray(b, dtype=float)
        if arr.ndim == 0:
            arr = float(arr) * np.eye(dim)
        if arr.shape != (dim, dim):
            raise AssumptionViolationError(
                f"constant b has shape {arr.shape}, expected {(dim, dim)}"
            )
        return np.broadcast_to(arr, (n, dim, dim)).copy()

    def check(self, points: np.ndarray, dim: int, rtol: float = 1e-10) -> None:
        """Raise if b is asymmetric or violates ellipticity at any point."""
        mats = self.matrices_at(points, dim)
        asym = np.max(np.abs(mats - np.swapaxes(mats, -1, -2)))
        if asym > rtol * max(1.0, np.max(np.abs(mats))):
            raise AssumptionViolationError(f"b(x) is asymmetric (max deviation {asym:.3e})")
        eigs = np.linalg.eigvalsh(0.5 * (mats + np.swapaxes(mats, -1, -2)))
        lo, hi = eigs.min(), eigs.max()
        if lo < self.kappa * (1 - 1e-9) or hi > (1 + 1e-9) / self.kappa:
            raise AssumptionViolationError(
                f"ellipticity violated: eigenvalues in [{lo:.6g}, {hi:.6g}] "
                f"outside [{self.kappa:.6g}, {1 / self.kappa:.6g}]"
            )


def identity_coefficients(kappa: float = 1.0) -> EllipticCoefficients:
    return EllipticCoefficients(1.0, kappa)


# ---------------------------------------------------------------------------
# Discrete operator and semigroup
# ---------------------------------------------------------------------------

def _centered_diff_1d(n: int, h: float) -> np.ndarray:
    """Centered first-difference matrix on interior nodes, zero Dirichlet padding.

    Exactly antisymmetric (D^T = -D), which makes discrete integration by
    parts against the kernel exact.
    """
    D = np.zeros((n, n))
    inv = 1.0 / (2.0 * h)
    for i in range(n):
        if i + 1 < n:
            D[i, i + 1] = inv
        if i - 1 >= 0:
            D[i, i - 1] = -inv
    return D


def _flux_1d(n: int, h: float, b_faces: np.ndarray) -> np.ndarray:
    """Tridiagonal flux-form operator d/dx (b d/dx .) with Dirichlet ends.

    b_faces has n + 1 entries, one per face between consecutive nodes
    (boundary faces included).
    """
    A = np.zeros((n, n))
    inv_h2 = 1.0 / h**2
    for i in range(n):
        A[i, i] = -(b_faces[i] + b_faces[i + 1]) * inv_h2
        if i + 1 < n:
            A[i, i + 1] = b_faces[i + 1] * inv_h2
            A[i + 1, i] = b_faces[i + 1] * inv_h2
    return A


@dataclass
class KernelOperator:
    """Discretized divergence-form operator with its exact spectral semigroup.

    Immutable after construction; safe to share read-only across workers.
    ``eigenvalues`` are sorted with the principal (least negative) mode first.
    """

    grid: Grid
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray           # columns, orthonormal, same order
    grad_matrices: tuple               # centered d/dx_i on interior nodes
    kappa: float
    _prop_cache: dict = field(default_factory=dict, repr=False)

    def propagator(self, t: float) -> np.ndarray:
        """Dense matrix of exp(t A), symmetrized so G_t(x, y) = G_t(y, x) exactly."""
        if t < 0:
            raise DomainError(f"semigroup time must be >= 0, got {t}")
        key = float(t)
        cached = self._prop_cache.get(key)
        if cached is not None:
            return cached
        if key == 0.0:
            return np.eye(self.grid.n_interior)
        V = self.eigenvectors
        M = (V * np.exp(self.eigenvalues * key)) @ V.T
        M = 0.5 * (M + M.T)
        if len(self._prop_cache) < 64:
            self._prop_cache[key] = M
        return M

    def kernel_values(self, t: float) -> np.ndarray:
        """Point values G_t(x_i, y_j): the propagator divided by the cell volume."""
        return self.propagator(t) / self.grid.cell_volume


def assemble_operator(grid: Grid, coeffs: EllipticCoefficients) -> KernelOperator:
    """Assemble the flux-form matrix of A on the grid and eigen-decompose it.

    Diagonal entries b_ii are sampled at face midpoints (flux form); the
    off-diagonal b_12 term uses centered differences at nodes, keeping the
    matrix symmetric for symmetric b.  Raises if b fails its spot checks or if
    the assembled spectrum is not strictly negative.
    """
    coeffs.check(grid.interior_coords(), grid.dim)
    d = grid.dim
    if d == 1:
        n = grid.n_per_axis[0]
        h = grid.h[0]
        a0 = grid.extents[0][0]
        face_x = (a0 + h * (np.arange(n + 1) + 0.5))[:, None]
        b_faces = coeffs.matrices_at(face_x, 1)[:, 0, 0]
        A = _flux_1d(n, h, b_faces)
        grads = (_centered_diff_1d(n, h),)
    else:
        nx, ny = grid.n_per_axis
        hx, hy = grid.h
        (ax, _), (ay, _) = grid.extents
        xs = ax + hx * np.arange(1, nx + 1)
        ys = ay + hy * np.arange(1, ny + 1)
        N = nx * ny
        A = np.zeros((N, N))
        # b_11 flux along axis 0, one 1D flux block per y-column
        for j, y in enumerate(ys):
            fx = ax + hx * (np.arange(nx + 1) + 0.5)
            pts = np.column_stack([fx, np.full(nx + 1, y)])
            b11 = coeffs.matrices_at(pts, 2)[:, 0, 0]
            Ax = _flux_1d(nx, hx, b11)
            idx = np.arange(nx) * ny + j
            A[np.ix_(idx, idx)] += Ax
        # b_22 flux along axis 1, per x-row
        for i, x in enumerate(xs):
            fy = ay + hy * (np.arange(ny + 1) + 0.5)
            pts = np.column_stack([np.full(ny + 1, x), fy])
            b22 = coeffs.matrices_at(pts, 2)[:, 1, 1]
            Ay = _flux_1d(ny, hy, b22)
            idx = i * ny + np.arange(ny)
            A[np.ix_(idx, idx)] += Ay
        Dx = np.kron(_centered_diff_1d(nx, hx), np.eye(ny))
        Dy = np.kron(np.eye(nx), _centered_diff_1d(ny, hy))
        b12 = coeffs.matrices_at(grid.interior_coords(), 2)[:, 0, 1]
        if np.max(np.abs(b12)) > 0:
            B = b12[:, None]
            A += Dx @ (B * Dy) + Dy @ (B * Dx)
        grads = (Dx, Dy)
    A = 0.5 * (A + A.T)
    w, V = scipy.linalg.eigh(A)
    order = np.argsort(w)[::-1]     # principal mode first
    w, V = w[order], V[:, order]
    if w[0] >= 0:
        raise AssumptionViolationError(
            f"assembled operator is not negative definite (max eigenvalue {w[0]:.3e})"
        )
    return KernelOperator(
        grid=grid,
        matrix=A,
        eigenvalues=w,
        eigenvectors=V,
        grad_matrices=grads,
        kappa=coeffs.kappa,
    )


def kernel_apply(op: KernelOperator, t: float, fld: np.ndarray) -> np.ndarray:
    """Apply G_t = exp(t A) to a field (last axis indexes interior nodes)."""
    if t < 0:
        raise DomainError(f"semigroup time must be >= 0, got {t}")
    fld = np.asarray(fld, dtype=float)
    if fld.shape[-1] != op.grid.n_interior:
        raise DomainError(
            f"field has {fld.shape[-1]} nodes, operator grid has {op.grid.n_interior}"
        )
    if t == 0:
        return fld.copy()
    V = op.eigenvectors
    return ((fld @ V) * np.exp(op.eigenvalues * t)) @ V.T


def kernel_grad_apply(op: KernelOperator, t: float, fld: np.ndarray) -> tuple:
    """Fields x -> integral of d/dy_i G_t(x, y) fld(y) dy, one per axis.

    Computed by discrete integration by parts: the centered difference is
    exactly antisymmetric, so applying it to the test field and flipping sign
    equals differentiating the kernel itself.
    """
    if t <= 0:
        raise SingularKernelError(f"gradient kernel requires t > 0, got {t}")
    fld = np.asarray(fld, dtype=float)
    return tuple(-kernel_apply(op, t, fld @ D.T) for D in op.grad_matrices)


# ---------------------------------------------------------------------------
# Kernel-estimate fitting
# ---------------------------------------------------------------------------

@dataclass
class KernelEstimateReport:
    """Fitted constants for the L^p and Gaussian kernel bounds.

    The decay exponents are fitted from log-log regressions of
    sup_x |G_t(x, .)|_p (and the analogous gradient / time-derivative kernel
    norms) against t; the multiplicative constants are then raised to the
    smallest values that dominate every sample, so a True flag means the bound
    holds pointwise on the sampled set with the reported constants.
    """

    p: float
    K_p: float
    lambda_p: float
    upsilon_p: float
    epsilon_p: float
    gaussian_C: float
    gaussian_K: float
    passes: dict
    n_gaussian_samples: int

    @property
    def all_pass(self) -> bool:
        return all(self.passes.values())

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "K_p": self.K_p,
            "lambda_p": self.lambda_p,
            "upsilon_p": self.upsilon_p,
            "epsilon_p": self.epsilon_p,
            "gaussian_C": self.gaussian_C,
            "gaussian_K": self.gaussian_K,
            "passes": dict(self.passes),
            "n_gaussian_samples": self.n_gaussian_samples,
        }


def _sup_row_lp(grid: Grid, pointvals: np.ndarray, p: float) -> float:
    """sup over x of the L^p norm in y of a kernel given by point values."""
    return float(np.max(grid.lp_norm(np.abs(pointvals), p)))


def fit_kernel_estimates(
    op: KernelOperator,
    p: float,
    time_samples: Sequence[float],
    n_gaussian_samples: int = 1000,
    z_cap: float = 100.0,
    seed: int = 0,
    lambda_tol: float = 0.05,
) -> KernelEstimateReport:
    """Fit the kernel decay bounds on sampled times and spot-check them.

    z_cap bounds |x - y|^2 / t for the Gaussian-bound samples: beyond it the
    true kernel falls under the double-precision floor of the eigen-solve and
    point values are round-off noise.
    """
    ts = np.asarray(sorted(float(t) for t in time_samples))
    if ts.size == 0:
        raise DomainError("time_samples must be nonempty")
    if np.any(ts <= 0):
        raise DomainError("time_samples must be strictly positive")
    if p < 1:
        raise DomainError(f"integrability exponent p must be >= 1, got {p}")

    grid = op.grid
    d = grid.dim
    vol = grid.cell_volume

    m_kernel = np.empty(ts.size)
    m_grad = np.empty(ts.size)
    m_dt = np.empty(ts.size)
    kernels = []
    for i, t in enumerate(ts):
        P = op.propagator(t)
        K = P / vol
        kernels.append(K)
        m_kernel[i] = _sup_row_lp(grid, K, p)
        G = np.sqrt(sum((D @ K) ** 2 for D in op.grad_matrices))
        m_grad[i] = _sup_row_lp(grid, G, p)
        m_dt[i] = _sup_row_lp(grid, op.matrix @ K, p)

    logt = np.log(ts)

    def fit_exponent(m):
        if ts.size == 1:
            return 0.0, float(m[0])
        slope, intercept = np.polyfit(logt, np.log(np.maximum(m, 1e-300)), 1)
        return float(slope), float(np.exp(intercept))

    s1, _ = fit_exponent(m_kernel)
    lambda_p = max(0.0, 1.0 + s1)
    K1 = float(np.max(m_kernel / ts ** (-1.0 + lambda_p)))

    s2, _ = fit_exponent(m_grad)
    upsilon_p = max(0.0, lambda_p - 1.0 - s2)
    K2 = float(np.max(m_grad / ts ** (-1.0 - upsilon_p + lambda_p)))

    s3, _ = fit_exponent(m_dt)
    epsilon_p = max(0.0, lambda_p - 1.0 - s3)
    K3 = float(np.max(m_dt / ts ** (-1.0 - epsilon_p + lambda_p)))

    K_p = max(K1, K2, K3)

    # Gaussian bound on sampled (t, x, y) triples
    rng = np.random.default_rng(seed)
    coords = grid.interior_coords()
    n = grid.n_interior
    samples_t, samples_z, samples_val = [], [], []
    attempts = 0
    while len(samples_t) < n_gaussian_samples and attempts < 50 * n_gaussian_samples:
        attempts += 1
        it = int(rng.integers(ts.size))
        ix = int(rng.integers(n))
        iy = int(rng.integers(n))
        t = ts[it]
        z = float(np.sum((coords[ix] - coords[iy]) ** 2) / t)
        if z > z_cap:
            continue
        val = abs(kernels[it][ix, iy])
        if val <= 0.0:
            continue
        samples_t.append(t)
        samples_z.append(z)
        samples_val.append(val)
    samples_t = np.asarray(samples_t)
    samples_z = np.asarray(samples_z)
    samples_val = np.asarray(samples_val)

    if samples_t.size >= 2 and np.ptp(samples_z) > 1e-12:
        lhs = np.log(samples_val) + 0.5 * d * np.log(samples_t)
        slope, _ = np.polyfit(samples_z, lhs, 1)
        gaussian_C = float(max(-slope, 0.0))
    else:
        gaussian_C = 0.0
    ratios = samples_val * samples_t ** (0.5 * d) * np.exp(gaussian_C * samples_z)
    gaussian_K = float(np.max(ratios)) if ratios.size else np.nan

    bound_e4 = gaussian_K * samples_t ** (-0.5 * d) * np.exp(-gaussian_C * samples_z)
    passes = {
        "kernel_lp_decay": bool(np.isfinite(K1) and lambda_p <= 1.0 + lambda_tol
                   and np.all(m_kernel <= K_p * ts ** (-1.0 + lambda_p) * (1 + 1e-9))),
        "gradient_lp_decay": bool(np.isfinite(K2)
                   and np.all(m_grad <= K_p * ts ** (-1.0 - upsilon_p + lambda_p) * (1 + 1e-9))),
        "time_derivative_lp_decay": bool(np.isfinite(K3)
                   and np.all(m_dt <= K_p * ts ** (-1.0 - epsilon_p + lambda_p) * (1 + 1e-9))),
        "gaussian_pointwise": bool(samples_t.size > 0 and gaussian_C > 0.0 and np.isfinite(gaussian_K)
                   and np.all(samples_val <= bound_e4 * (1 + 1e-9))),
    }
    return KernelEstimateReport(
        p=float(p),
        K_p=K_p,
        lambda_p=lambda_p,
        upsilon_p=upsilon_p,
        epsilon_p=epsilon_p,
        gaussian_C=gaussian_C,
        gaussian_K=gaussian_K,
        passes=passes,
        n_gaussian_samples=int(samples_t.size),
    )


def default_estimate_times(op: KernelOperator, n: int = 16,
                           t_min: float = 1e-3, t_max: float = 0.03) -> np.ndarray:
    """Log-spaced sample times in the resolved power-law regime of the kernel."""
    t_lo = max(t_min, 4.0 * max(op.grid.h) ** 2)
    return np.geomspace(t_lo, max(t_max, 2 * t_lo), n)


def save_eigenvalues_csv(op: KernelOperator, path) -> None:
    """Write (index, eigenvalue) rows for inspection."""
    data = np.column_stack([np.arange(op.eigenvalues.size), op.eigenvalues])
    np.savetxt(path, data, delimiter=",", header="index,eigenvalue", comments="")
