import numpy as np
import pytest

import spdelab as sl
from spdelab.errors import BlowUpError, ConvergenceError, DomainError

from conftest import sine_field


TG32 = sl.make_time_grid(0.25, 32)


def _path(op, k=1, seed=3, tg=TG32):
    return sl.sample_brownian(k, tg, seed)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def test_pure_heat_flow(op32, lin):
    xi = sine_field(op32)
    fld, diag = sl.integrate_spde(op32, lin, xi, 0.0, _path(op32))
    for m, t in enumerate(TG32):
        assert np.max(np.abs(fld.values[m] - sl.kernel_apply(op32, t, xi))) < 1e-12
    assert diag.steps == 32 and not diag.blow_up


def test_zero_control_is_bitwise_plain(op32, lin):
    xi = sine_field(op32)
    path = _path(op32)
    plain, _ = sl.integrate_spde(op32, lin, xi, 0.3, path)
    controlled, _ = sl.integrate_controlled(op32, lin, xi, 0.3, path,
                                            sl.Control.zero(TG32, 1))
    assert np.array_equal(plain.values, controlled.values)


def test_zero_noise_matches_skeleton(op32, burgers):
    xi = 0.5 * sine_field(op32)
    phi = sl.Control.constant([0.6], TG32)
    controlled, _ = sl.integrate_controlled(op32, burgers, xi, 0.0, _path(op32), phi)
    skel, diag = sl.solve_skeleton(op32, burgers, xi, phi)
    assert np.max(np.abs(controlled.values - skel.values)) < 1e-8
    assert diag.converged


# ---------------------------------------------------------------------------
# skeleton solver
# ---------------------------------------------------------------------------

def test_skeleton_duhamel_oracle(op64, lin):
    # oracle: left-point Duhamel sum assembled term by term from the semigroup
    tg = sl.make_time_grid(0.25, 16)
    dt = tg[1] - tg[0]
    xi = sine_field(op64)
    phi_val = 0.7
    skel, _ = sl.solve_skeleton(op64, lin, xi, sl.Control.constant([phi_val], tg))
    ones = np.ones(op64.grid.n_interior)
    for m, t in enumerate(tg):
        acc = sl.kernel_apply(op64, t, xi)
        for l in range(m):
            acc = acc + sl.kernel_apply(op64, t - tg[l], phi_val * ones) * dt
        assert np.max(np.abs(skel.values[m] - acc)) < 1e-8


def test_skeleton_two_start_uniqueness(op32, burgers):
    xi = 0.4 * sine_field(op32)
    phi = sl.Control.constant([0.5], TG32)
    tol = 1e-10
    a, da = sl.solve_skeleton(op32, burgers, xi, phi, tol=tol, initial="heat")
    b, db = sl.solve_skeleton(op32, burgers, xi, phi, tol=tol, initial="zero")
    assert np.max(np.abs(a.values - b.values)) < 10 * tol
    assert da.converged and db.converged and db.picard_sweeps >= 2


def test_skeleton_nonconvergence_reported(op32, burgers):
    xi = 0.8 * sine_field(op32)
    phi = sl.Control.constant([1.0], TG32)
    with pytest.raises(ConvergenceError) as err:
        sl.solve_skeleton(op32, burgers, xi, phi, max_sweeps=1, initial="zero")
    assert err.value.diagnostics.picard_sweeps == 1


def test_time_step_consistency_first_order(op32):
    # f(r) = r makes the exact solution e^t e^{tA} xi; global error is O(dt)
    c = sl.make_custom(1, 1, nu=1.0, K=1.0, L=1.5, f_poly=[0.0, 1.0],
                       sigma_polys=[[1.0]])
    xi = sine_field(op32)
    T = 0.5
    exact = np.exp(T) * sl.kernel_apply(op32, T, xi)
    errs = []
    for M in (16, 32):
        tg = sl.make_time_grid(T, M)
        fld, _ = sl.integrate_spde(op32, c, xi, 0.0, sl.sample_brownian(1, tg, 0),
                                   rho=2.0)
        errs.append(op32.grid.lp_norm(fld.terminal - exact, 2))
    ratio = errs[0] / errs[1]
    assert 1.6 <= ratio <= 2.4


# ---------------------------------------------------------------------------
# statistics of the noisy equation
# ---------------------------------------------------------------------------

def test_ito_isometry_small(op32, lin):
    # oracle: quadrature of the spectral kernel integral (discrete Ito isometry)
    xi = sine_field(op32)
    tg = sl.make_time_grid(0.25, 32)
    dt = tg[1] - tg[0]
    node = op32.grid.nearest_node([0.5])
    ones = np.ones(op32.grid.n_interior)
    var_oracle = sum(sl.kernel_apply(op32, tg[-1] - tg[l], ones)[node] ** 2 * dt
                     for l in range(32))
    n = 4000
    res = sl.simulate_ensemble(op32, lin, xi, 1.0, tg, n, seed=14)
    var_emp = np.var(res.terminal[:, node], ddof=1)
    se = var_oracle * np.sqrt(2.0 / (n - 1))
    assert abs(var_emp - var_oracle) <= 3 * se


def test_weak_girsanov_consistency_exact_quadrature(lin):
    # Two time steps and Gauss-Hermite quadrature over the two increments:
    # the reweighted tilted expectation must equal the plain one exactly
    # (discrete Cameron-Martin), so the two quadratures agree to round-off.
    grid = sl.build_grid((0.0, 1.0), 8)
    op = sl.assemble_operator(grid, sl.EllipticCoefficients(1.0, 1.0))
    tg = sl.make_time_grid(0.2, 2)
    dt = tg[1] - tg[0]
    xi = sine_field(op)
    node = grid.nearest_node([0.5])
    eps = 0.3
    phi = sl.Control.constant([0.9], tg)
    nodes, weights = np.polynomial.hermite_e.hermegauss(40)
    weights = weights / np.sqrt(2 * np.pi)

    def terminal(z1, z2, control):
        inc = np.sqrt(dt) * np.array([[z1], [z2]])
        path = sl.NoisePath(time_grid=tg, k=1, increments=inc, seed=0)
        fld, _ = sl.integrate_controlled(op, lin, xi, eps, path, control)
        logw = sl.girsanov_log_weight(control, path, eps)
        return np.tanh(fld.terminal[node]), np.exp(logw)

    zero = sl.Control.zero(tg, 1)
    e_plain = e_tilted = 0.0
    for z1, w1 in zip(nodes, weights):
        for z2, w2 in zip(nodes, weights):
            f_plain, _ = terminal(z1, z2, zero)
            f_tilt, w = terminal(z1, z2, phi)
            e_plain += w1 * w2 * f_plain
            e_tilted += w1 * w2 * f_tilt * w
    assert abs(e_plain - e_tilted) < 1e-10


def test_weak_girsanov_consistency_small(op32, lin):
    xi = sine_field(op32)
    node = op32.grid.nearest_node([0.5])
    phi = sl.Control.constant([0.8], TG32)
    eps, n = 0.25, 8000
    plain = sl.simulate_ensemble(op32, lin, xi, eps, TG32, n, seed=31)
    tilted = sl.simulate_ensemble(op32, lin, xi, eps, TG32, n, seed=32, phi=phi)
    f_plain = np.tanh(plain.terminal[:, node])
    f_tilted = np.tanh(tilted.terminal[:, node]) * np.exp(tilted.log_weights)
    comb = np.hypot(f_plain.std(ddof=1), f_tilted.std(ddof=1)) / np.sqrt(n)
    assert abs(f_plain.mean() - f_tilted.mean()) <= 3 * comb


def test_burgers_bounded_small(op64, burgers):
    xi = sine_field(op64)
    tg = sl.make_time_grid(0.25, 64)
    res = sl.simulate_ensemble(op64, burgers, xi, 0.01, tg, 300, seed=8)
    assert res.n_blowups == 0
    assert np.all(np.isfinite(res.sup_rho))


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------

def test_decompose_sum_identity(op32, burgers):
    xi = 0.5 * sine_field(op32)
    path = _path(op32, seed=6)
    phi = sl.Control.constant([0.4], TG32)
    fld, _ = sl.integrate_controlled(op32, burgers, xi, 0.2, path, phi)
    Z = sl.decompose_terms(op32, burgers, xi, 0.2, path, phi)
    total = sum(z.values for z in Z)
    assert np.max(np.abs(total - fld.values)) < 1e-10


def test_decompose_initial_term(op32, burgers):
    xi = 0.5 * sine_field(op32)
    Z = sl.decompose_terms(op32, burgers, xi, 0.2, _path(op32, seed=6),
                           sl.Control.constant([0.4], TG32))
    for m, t in enumerate(TG32):
        assert np.max(np.abs(Z[0].values[m] - sl.kernel_apply(op32, t, xi))) < 1e-10


def test_decompose_zero_terms_linear(op32, lin):
    xi = sine_field(op32)
    Z = sl.decompose_terms(op32, lin, xi, 0.2, _path(op32, seed=6),
                           sl.Control.zero(TG32, 1))
    for ell in (2, 3, 4):   # flux, reaction, control drift all vanish
        assert np.max(np.abs(Z[ell].values)) == 0.0


# ---------------------------------------------------------------------------
# guards and errors
# ---------------------------------------------------------------------------

def test_blowup_error_carries_time(op32):
    c = sl.make_custom(1, 1, nu=1.0, K=1.0, L=80.0, f_poly=[0.0, 75.0],
                       sigma_polys=[[1.0]])
    xi = sine_field(op32)
    tg = sl.make_time_grid(0.5, 64)
    with pytest.raises(BlowUpError) as err:
        sl.integrate_spde(op32, c, xi, 0.0, sl.sample_brownian(1, tg, 0), rho=2.0)
    assert err.value.t is not None and 0 < err.value.t <= 0.5


def test_step_guard_trips_on_large_fields(burgers):
    g = sl.build_grid((0.0, 1.0), 128)
    op = sl.assemble_operator(g, sl.EllipticCoefficients(1.0, 1.0))
    xi = 5.0 * sine_field(op)
    tg = sl.make_time_grid(0.5, 16)     # dt far above c h / sup|u|
    with pytest.raises(BlowUpError) as err:
        sl.integrate_spde(op, burgers, xi, 0.0, sl.sample_brownian(1, tg, 1))
    assert "guard" in str(err.value)


def test_ensemble_flags_instead_of_raising(op32):
    c = sl.make_custom(1, 1, nu=1.0, K=1.0, L=80.0, f_poly=[0.0, 75.0],
                       sigma_polys=[[1.0]])
    xi = sine_field(op32)
    tg = sl.make_time_grid(0.5, 64)
    res = sl.simulate_ensemble(op32, c, xi, 0.0, tg, 4, seed=0, rho=2.0)
    assert res.n_blowups == 4
    assert np.all(np.isinf(res.sup_rho))


def test_grid_mismatch_rejected(op32, lin):
    xi = sine_field(op32)
    other = sl.Control.zero(sl.make_time_grid(0.25, 16), 1)
    with pytest.raises(DomainError):
        sl.integrate_controlled(op32, lin, xi, 0.1, _path(op32), other)


# ---------------------------------------------------------------------------
# fields, determinism, ensembles
# ---------------------------------------------------------------------------

def test_dirichlet_trace_zero(op32, lin):
    fld, _ = sl.integrate_spde(op32, lin, sine_field(op32), 0.5, _path(op32))
    full = fld.values_with_boundary()
    assert np.all(full[:, 0] == 0.0) and np.all(full[:, -1] == 0.0)


def test_field_norms_and_snapshots(tmp_path, op32, lin):
    fld, _ = sl.integrate_spde(op32, lin, sine_field(op32), 0.0, _path(op32))
    assert fld.sup_lp_norm() == fld.lp_norms().max()
    assert np.isfinite(fld.sup_lp_norm(2))
    fld.to_csv(tmp_path / "f.csv")
    fld.save_npz(tmp_path / "f.npz")
    data = np.load(tmp_path / "f.npz")
    assert np.array_equal(data["values"], fld.values)


def test_rerun_and_workers_bitwise(op32, burgers):
    xi = sine_field(op32)
    a = sl.simulate_ensemble(op32, burgers, xi, 0.3, TG32, 1200, seed=5, n_workers=1)
    b = sl.simulate_ensemble(op32, burgers, xi, 0.3, TG32, 1200, seed=5, n_workers=3)
    c = sl.simulate_ensemble(op32, burgers, xi, 0.3, TG32, 1200, seed=5, n_workers=1)
    assert np.array_equal(a.terminal, b.terminal)
    assert np.array_equal(a.sup_rho, b.sup_rho)
    assert np.array_equal(a.terminal, c.terminal)


def test_single_path_matches_ensemble_row(op32, burgers):
    xi = sine_field(op32)
    res = sl.simulate_ensemble(op32, burgers, xi, 0.3, TG32, 40, seed=5)
    fld, _ = sl.integrate_spde(op32, burgers, xi, 0.3,
                               sl.sample_brownian(1, TG32, 5, path_index=7))
    assert np.max(np.abs(fld.terminal - res.terminal[7])) < 1e-12


def test_two_dimensional_pure_heat(op16_2d):
    c = sl.make_preset("linear_gaussian", d=2)
    xi = sine_field(op16_2d)
    tg = sl.make_time_grid(0.1, 16)
    fld, _ = sl.integrate_spde(op16_2d, c, xi, 0.0, sl.sample_brownian(1, tg, 1))
    for m, t in enumerate(tg):
        assert np.max(np.abs(fld.values[m] - sl.kernel_apply(op16_2d, t, xi))) < 1e-12
    full = fld.values_with_boundary()
    assert full.shape == (17, 17, 17)
    assert np.all(full[:, 0, :] == 0) and np.all(full[:, :, -1] == 0)


def test_two_dimensional_noisy_ensemble(op16_2d):
    c = sl.make_preset("reaction_diffusion", d=2, k=2)
    xi = sine_field(op16_2d)
    tg = sl.make_time_grid(0.1, 16)
    res = sl.simulate_ensemble(op16_2d, c, xi, 0.2, tg, 200, seed=6)
    assert res.n_blowups == 0
    assert np.all(np.isfinite(res.sup_rho))
    fld, _ = sl.integrate_spde(op16_2d, c, xi, 0.2,
                               sl.sample_brownian(2, tg, 6, path_index=3))
    assert np.max(np.abs(fld.terminal - res.terminal[3])) < 1e-12
