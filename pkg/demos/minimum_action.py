"""Minimum action paths for a terminal exceedance event.

For additive noise the optimal cost of pushing the terminal point value to a
level a has the closed form (a - m)^2 / (2 s^2); the penalized minimizer
recovers it and returns the optimal control and the steered trajectory.
"""

import numpy as np

import spdelab as sl

grid = sl.build_grid((0.0, 1.0), 32)
op = sl.assemble_operator(grid, sl.EllipticCoefficients(1.0, 1.0))
c = sl.make_preset("linear_gaussian")
tg = sl.make_time_grid(0.25, 32)
dt = tg[1] - tg[0]
xi = np.sin(np.pi * grid.axis_coords(0))
node = grid.nearest_node([0.5])

# Closed-form ingredients: terminal mean under the heat flow, and the
# discrete variance of the stochastic convolution at eps = 1.
ones = np.ones(grid.n_interior)
mean = sl.kernel_apply(op, tg[-1], xi)[node]
s2 = sum(sl.kernel_apply(op, tg[-1] - tg[l], ones)[node] ** 2 * dt
         for l in range(len(tg) - 1))
print(f"terminal mean {mean:.4f}, unit-noise std {np.sqrt(s2):.4f}")

for z in (1.0, 2.0, 3.0):
    a = mean + z * np.sqrt(s2)
    av = sl.minimize_action(op, c, xi, sl.TargetSpec.point_exceedance([0.5], a), tg)
    print(f"level {a:.4f} ({z} sigma): action {av.value:.4f} "
          f"(closed form {z**2 / 2:.4f}), residual {av.diagnostics['residual']:.1e}")

# The optimal control for the 2-sigma event, and where it spends its budget.
a = mean + 2.0 * np.sqrt(s2)
av = sl.minimize_action(op, c, xi, sl.TargetSpec.point_exceedance([0.5], a), tg)
beta = av.control.values[:, 0]
print("\noptimal control (time, beta):")
for m in range(0, len(beta), 4):
    bar = "#" * int(40 * beta[m] / beta.max())
    print(f"  t = {tg[m]:.4f}  {beta[m]:7.4f}  {bar}")
print(f"terminal value of the steered skeleton: "
      f"{av.trajectory.terminal[node]:.4f} (target {a:.4f})")

# Exit events from a sup-norm tube around the free skeleton cost ~ delta^2.
print("\ntube exits:")
for delta in (0.05, 0.1, 0.2):
    avt = sl.minimize_action(op, c, xi, sl.TargetSpec.tube_exit(delta), tg)
    print(f"  delta = {delta}: action {avt.value:.4f} "
          f"(ratio to delta^2: {avt.value / delta**2:.2f})")
