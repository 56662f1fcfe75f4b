import numpy as np
import pytest

import spdelab as sl


@pytest.fixture(scope="session")
def op64():
    grid = sl.build_grid((0.0, 1.0), 64)
    return sl.assemble_operator(grid, sl.EllipticCoefficients(1.0, 1.0))


@pytest.fixture(scope="session")
def op32():
    grid = sl.build_grid((0.0, 1.0), 32)
    return sl.assemble_operator(grid, sl.EllipticCoefficients(1.0, 1.0))


@pytest.fixture(scope="session")
def op16_2d():
    grid = sl.build_grid([[0.0, 1.0], [0.0, 1.0]], 16)
    return sl.assemble_operator(grid, sl.EllipticCoefficients(1.0, 1.0))


@pytest.fixture(scope="session")
def lin():
    return sl.make_preset("linear_gaussian")


@pytest.fixture(scope="session")
def burgers():
    return sl.make_preset("burgers")


def sine_field(op):
    x = op.grid.interior_coords()
    vals = np.ones(op.grid.n_interior)
    for ax in range(op.grid.dim):
        a, b = op.grid.extents[ax]
        vals = vals * np.sin(np.pi * (x[:, ax] - a) / (b - a))
    return vals


def reachable_terminal_problem(resolution, n_steps, T=0.25, range_threshold=1e-3):
    """Linear-Gaussian terminal-field instance with a least-squares oracle.

    The terminal map y = G_T xi + M beta is linear; restricting the target to
    the numerically well-conditioned range of M (singular values above
    range_threshold * sigma_max) keeps the constrained problem well posed.
    Returns (op, time_grid, xi, y_star, oracle_value).
    """
    grid = sl.build_grid((0.0, 1.0), resolution)
    op = sl.assemble_operator(grid, sl.EllipticCoefficients(1.0, 1.0))
    tg = sl.make_time_grid(T, n_steps)
    dt = tg[1] - tg[0]
    xi = sine_field(op)
    ones = np.ones(grid.n_interior)
    cols = [sl.kernel_apply(op, tg[-1] - tg[l], ones) * dt for l in range(n_steps)]
    M = np.stack(cols, axis=1)
    U, S, Vt = np.linalg.svd(M, full_matrices=False)
    q = int(np.sum(S >= range_threshold * S[0]))
    beta0 = np.sin(np.pi * tg[:-1] / tg[-1])
    beta0 = Vt[:q].T @ (Vt[:q] @ beta0)
    heat_T = sl.kernel_apply(op, tg[-1], xi)
    y_star = heat_T + M @ beta0
    # minimum-norm solution of M beta = y_star - heat_T on the retained range
    r = y_star - heat_T
    beta_or = Vt[:q].T @ ((U[:, :q].T @ r) / S[:q])
    oracle_value = 0.5 * float(np.sum(beta_or**2)) * dt
    return op, tg, xi, y_star, oracle_value
