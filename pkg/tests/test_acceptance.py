"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest -s tests/test_acceptance.py -v` to see the per-criterion
lines as they complete.
"""

import time

import numpy as np

import spdelab as sl
from spdelab.action import penalized_objective
from spdelab.stochastics import increment_blocks, log_weights_for_increments

from conftest import reachable_terminal_problem, sine_field


def _report(num, ok, runtime, detail, cap=None):
    status = "PASS" if ok else "FAIL"
    line = f"ACCEPTANCE {num:02d} {status} ({runtime:.1f}s): {detail}"
    print("\n" + line)
    assert ok, line
    if cap is not None:
        assert runtime < cap, f"criterion {num} exceeded runtime cap {cap}s ({runtime:.1f}s)"


def test_criterion_01_kernel_exactness():
    """Semigroup and symmetry to 1e-12, sub-Markov to 1e-10, 1D and 2D."""
    t0 = time.time()
    worst_semi = worst_sym = worst_sub = 0.0
    for extents, res in [([[0.0, 1.0]], 64), ([[0.0, 1.0], [0.0, 1.0]], 16)]:
        grid = sl.build_grid(extents, res)
        op = sl.assemble_operator(grid, sl.EllipticCoefficients(1.0, 1.0))
        rng = np.random.default_rng(0)
        f = rng.standard_normal(grid.n_interior)
        for (s, t) in [(0.05, 0.1), (0.02, 0.3)]:
            two = sl.kernel_apply(op, s, sl.kernel_apply(op, t, f))
            one = sl.kernel_apply(op, s + t, f)
            worst_semi = max(worst_semi, float(np.max(np.abs(two - one))))
        for t in (0.01, 0.1, 1.0):
            P = op.propagator(t)
            worst_sym = max(worst_sym, float(np.max(np.abs(P - P.T))))
            v = sl.kernel_apply(op, t, np.ones(grid.n_interior))
            worst_sub = max(worst_sub, float(max(np.max(v) - 1.0, -np.min(v), 0.0)))
    ok = worst_semi < 1e-12 and worst_sym < 1e-12 and worst_sub < 1e-10
    _report(1, ok, time.time() - t0,
            f"semigroup {worst_semi:.2e}, symmetry {worst_sym:.2e}, "
            f"sub-Markov violation {worst_sub:.2e}", cap=10)


def test_criterion_02_kernel_estimate_fits(op64):
    """Fitted lambda_1 in [0.95, 1.05]; Gaussian bound pointwise on 1e3 samples."""
    t0 = time.time()
    rep = sl.fit_kernel_estimates(op64, 1, sl.default_estimate_times(op64),
                              n_gaussian_samples=1000)
    ok = (0.95 <= rep.lambda_p <= 1.05 and rep.passes["gaussian_pointwise"]
          and rep.n_gaussian_samples == 1000 and rep.all_pass)
    _report(2, ok, time.time() - t0,
            f"lambda_1 = {rep.lambda_p:.4f}, Gaussian bound on {rep.n_gaussian_samples} "
            f"samples with C = {rep.gaussian_C:.3f}", cap=30)


def test_criterion_03_ito_isometry(op64, lin):
    """Terminal variance vs spectral quadrature, 1e4 paths, n=64, dt=1/256."""
    t0 = time.time()
    tg = sl.make_time_grid(0.25, 64)            # dt = 1/256
    dt = tg[1] - tg[0]
    xi = sine_field(op64)
    node = op64.grid.nearest_node([0.5])
    ones = np.ones(op64.grid.n_interior)
    var_oracle = sum(sl.kernel_apply(op64, tg[-1] - tg[l], ones)[node] ** 2 * dt
                     for l in range(64))
    n = 10_000
    res = sl.simulate_ensemble(op64, lin, xi, 1.0, tg, n, seed=101)
    var_emp = float(np.var(res.terminal[:, node], ddof=1))
    se = var_oracle * np.sqrt(2.0 / (n - 1))
    z = abs(var_emp - var_oracle) / se
    _report(3, z <= 3.0, time.time() - t0,
            f"empirical {var_emp:.6f} vs oracle {var_oracle:.6f} (z = {z:.2f})",
            cap=120)


def test_criterion_04_girsanov_suite(op32, lin):
    """Mean-one weights at 1e5 paths; weak consistency at 1e5 paths."""
    t0 = time.time()
    tg = sl.make_time_grid(0.25, 64)
    dts = np.diff(tg)
    n = 100_000
    details = []
    ok = True
    for eps in (0.25, 1.0):
        for amp in (1.0, 4.0):                   # L2 budgets 0.25 and 4
            phi = sl.Control.constant([amp], tg)
            logw = np.empty(n)
            for start, blk in increment_blocks(1, tg, 201, n):
                logw[start:start + blk.shape[0]] = log_weights_for_increments(
                    phi.values, dts, blk, eps)
            w = np.exp(logw)
            se = w.std(ddof=1) / np.sqrt(n)
            z = abs(w.mean() - 1.0) / se
            ok = ok and z <= 3.0
            details.append(f"eps={eps}/amp={amp}: z={z:.2f}")

    xi = sine_field(op32)
    node = op32.grid.nearest_node([0.5])
    phi = sl.Control.constant([0.8], tg)
    eps = 0.25
    plain = sl.simulate_ensemble(op32, lin, xi, eps, tg, n, seed=210)
    tilted = sl.simulate_ensemble(op32, lin, xi, eps, tg, n, seed=211, phi=phi)
    f_plain = np.tanh(plain.terminal[:, node])
    f_tilt = np.tanh(tilted.terminal[:, node]) * np.exp(tilted.log_weights)
    comb = np.hypot(f_plain.std(ddof=1), f_tilt.std(ddof=1)) / np.sqrt(n)
    z_weak = abs(f_plain.mean() - f_tilt.mean()) / comb
    ok = ok and z_weak <= 3.0
    _report(4, ok, time.time() - t0,
            f"mean-one [{', '.join(details)}]; weak consistency z = {z_weak:.2f}",
            cap=300)


def test_criterion_05_pathwise_reductions(op32, burgers):
    """phi = 0 run is bitwise the plain run; eps = 0 matches the skeleton to 1e-8."""
    t0 = time.time()
    tg = sl.make_time_grid(0.25, 32)
    xi = 0.5 * sine_field(op32)
    path = sl.sample_brownian(1, tg, 301)
    plain, _ = sl.integrate_spde(op32, burgers, xi, 0.3, path)
    controlled, _ = sl.integrate_controlled(op32, burgers, xi, 0.3, path,
                                            sl.Control.zero(tg, 1))
    bitwise = np.array_equal(plain.values, controlled.values)
    phi = sl.Control.constant([0.6], tg)
    frozen, _ = sl.integrate_controlled(op32, burgers, xi, 0.0, path, phi)
    skel, _ = sl.solve_skeleton(op32, burgers, xi, phi)
    gap = float(np.max(np.abs(frozen.values - skel.values)))
    ok = bitwise and gap < 1e-8
    _report(5, ok, time.time() - t0,
            f"bitwise equality: {bitwise}; eps=0 skeleton gap {gap:.2e}")


def test_criterion_06_minimizer_oracle(lin):
    """Linear-Gaussian value matches the least-squares oracle to 1e-3 relative."""
    t0 = time.time()
    details = []
    ok = True
    for res in (16, 32):
        for M in (16, 32):
            op, tg, xi, y_star, oracle = reachable_terminal_problem(res, M)
            av = sl.minimize_action(op, lin, xi, sl.TargetSpec.terminal_field(y_star), tg)
            rel = abs(av.value - oracle) / oracle
            ok = ok and av.feasible and rel <= 1e-3
            details.append(f"(n={res},M={M}): rel {rel:.1e}")
    op, tg, xi, _, _ = reachable_terminal_problem(16, 16)
    psi0 = sl.skeleton_trajectory(op, lin, xi, sl.Control.zero(tg, 1))
    opts = sl.MinimizeOptions(beta0=0.4 * np.ones((16, 1)))
    av0 = sl.minimize_action(op, lin, xi, sl.TargetSpec.terminal_field(psi0[-1]),
                             tg, opts)
    ok = ok and av0.value < 1e-10
    _report(6, ok, time.time() - t0,
            f"{'; '.join(details)}; uncontrolled-target action {av0.value:.1e}",
            cap=120)


def test_criterion_07_gradient_check():
    """Forward-sensitivity gradients vs central differences, 64 parameters, 1e-5."""
    t0 = time.time()
    grid = sl.build_grid((0.0, 1.0), 16)
    op = sl.assemble_operator(grid, sl.EllipticCoefficients(1.0, 1.0))
    c = sl.make_preset("linear_gaussian", k=2)
    tg = sl.make_time_grid(0.25, 64)             # 128 control parameters
    xi = sine_field(op)
    rng = np.random.default_rng(77)
    beta = 0.5 * rng.standard_normal((64, 2))
    free = sl.skeleton_trajectory(op, c, xi, sl.Control.zero(tg, 2))
    target = sl.TargetSpec.terminal_field(free[-1] + 0.1)
    mu = 100.0
    _, grad, _, _ = penalized_objective(op, c, xi, target, tg, beta, mu)
    idx = rng.choice(128, size=64, replace=False)
    h = 1e-5
    worst = 0.0
    for i in idx:
        bp, bm = beta.ravel().copy(), beta.ravel().copy()
        bp[i] += h
        bm[i] -= h
        Jp, _, _, _ = penalized_objective(op, c, xi, target, tg, bp.reshape(64, 2), mu)
        Jm, _, _, _ = penalized_objective(op, c, xi, target, tg, bm.reshape(64, 2), mu)
        fd = (Jp - Jm) / (2 * h)
        worst = max(worst, abs(fd - grad[i]) / max(1e-12, abs(grad[i])))
    _report(7, worst <= 1e-5, time.time() - t0,
            f"worst relative gradient error {worst:.2e} over 64 parameters")


def test_criterion_08_ldp_scaling(op32, lin):
    """fit_rate intercept vs minimize_action value within 15%, IS at 1e5/eps."""
    t0 = time.time()
    tg = sl.make_time_grid(0.25, 64)
    dt = tg[1] - tg[0]
    xi = sine_field(op32)
    node = op32.grid.nearest_node([0.5])
    ones = np.ones(op32.grid.n_interior)
    mean = sl.kernel_apply(op32, tg[-1], xi)[node]
    s1 = np.sqrt(sum(sl.kernel_apply(op32, tg[-1] - tg[l], ones)[node] ** 2 * dt
                     for l in range(64)))
    a = mean + 2.0 * s1
    event = sl.TargetSpec.point_exceedance([0.5], a)
    av = sl.minimize_action(op32, lin, xi, event, tg)
    assert av.feasible
    estimates = []
    for i, eps in enumerate((0.4, 0.2, 0.1, 0.05)):
        estimates.append(sl.estimate_event(
            op32, lin, xi, eps, event, 100_000, "importance", av.control,
            time_grid=tg, seed=400 + i))
    fit = sl.fit_rate(estimates)
    rel = abs(fit.intercept - av.value) / av.value
    _report(8, rel <= 0.15, time.time() - t0,
            f"intercept {fit.intercept:.4f} vs action {av.value:.4f} "
            f"(rel {rel:.3f}, slope {fit.slope:.3f})", cap=900)


def test_criterion_09_controlled_convergence(op32, lin):
    """Distances strictly decreasing; log-log slope 0.5 +/- 0.15 (additive)."""
    t0 = time.time()
    tg = sl.make_time_grid(0.25, 64)
    xi = sine_field(op32)
    bump = 4 * op32.grid.axis_coords(0) * (1 - op32.grid.axis_coords(0))
    table = sl.convergence_experiment(
        op32, lin,
        xi_family=lambda e: xi + 0.05 * e * bump,
        phi_family=lambda e: sl.Control.constant([0.5], tg),
        eps_grid=[0.4, 0.2, 0.1, 0.05],
        time_grid=tg, n_paths=1000, seed=500)
    d = table.distances
    slope = table.loglog_slope()
    ok = bool(np.all(np.diff(d) < 0)) and 0.35 <= slope <= 0.65
    _report(9, ok, time.time() - t0,
            f"distances {np.round(d, 4).tolist()}, slope {slope:.3f}", cap=600)


def test_criterion_10_tightness_proxy(op64, burgers):
    """Burgers: sup over eps of the exceedance table nonincreasing, < 0.01 at C max."""
    t0 = time.time()
    tg = sl.make_time_grid(0.25, 64)
    xi = sine_field(op64)
    table = sl.tightness_probe(op64, burgers, xi, [0.5, 0.25, 0.1, 0.05],
                               [0.5, 0.8, 0.82, 1.0, 2.0], 1000,
                               time_grid=tg, seed=600)
    sup = table.sup_over_eps
    ok = bool(np.all(np.diff(sup) <= 0)) and sup[-1] < 0.01 and table.n_blowups == 0
    _report(10, ok, time.time() - t0,
            f"sup over eps per C: {sup.tolist()}", cap=600)


def test_criterion_11_burgers_stability(burgers):
    """1e3 Burgers paths at eps=0.01, T=0.5, n=128: zero blow-up flags."""
    t0 = time.time()
    grid = sl.build_grid((0.0, 1.0), 128)
    op = sl.assemble_operator(grid, sl.EllipticCoefficients(1.0, 1.0))
    tg = sl.make_time_grid(0.5, 256)             # dt = 1/512 under the step guard
    xi = sine_field(op)
    res = sl.simulate_ensemble(op, burgers, xi, 0.01, tg, 1000, seed=700)
    ok = (res.n_blowups == 0 and res.guard_trips == 0
          and bool(np.all(np.isfinite(res.sup_rho))))
    _report(11, ok, time.time() - t0,
            f"blow-ups {res.n_blowups}, guard trips {res.guard_trips}, "
            f"max sup-rho {res.sup_rho.max():.3f}")
