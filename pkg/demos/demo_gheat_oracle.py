#!/usr/bin/env python3
"""The fully nonlinear heat equation as an exact oracle for worst-case
expectations of terminal payoffs, with the Monte Carlo estimator checked
against it.

Run:  python3 demos/demo_gheat_oracle.py
"""

import numpy as np

import gcalc as g

band = g.SigmaBand(1.0, 2.0)
grid = g.SpaceTimeGrid.with_cfl(-12.0, 12.0, 401, 1.0, band)
print(f"space-time grid: nx={grid.nx}, nt={grid.nt} (CFL-limited), domain [{grid.x_lo}, {grid.x_hi}]")

for name, phi, expected in (
    ("x (martingale)", lambda x: x, 0.0),
    ("x^2 (convex -> hi variance)", lambda x: x**2, band.sigma2_hi),
    ("-x^2 (concave -> lo variance)", lambda x: -(x**2), -band.sigma2_lo),
):
    sol = g.solve_terminal(band, phi, grid)
    print(f"  payoff {name:32s} u(0,0) = {sol.value_at(0.0):+.5f}  (expected {expected:+.1f})")

# Two observation times via the backward recursion.
outer = g.SpaceTimeGrid.with_cfl(-10.0, 10.0, 201, 0.5, band)
inner = g.SpaceTimeGrid.with_cfl(-10.0, 10.0, 201, 0.5, band)
v = g.solve_two_step(band, lambda a, b: a**2 + b**2, 0.5, 1.0, outer, inner)
print(f"two-step payoff B_0.5^2 + (B_1 - B_0.5)^2 -> {v:.5f} (independence of increments: 2.0)")

# Monte Carlo over extreme constant policies agrees with the PDE for convex data.
rep = g.estimate_upper(lambda b: b.b[:, -1, 0] ** 2, g.PolicyFamily.extreme_constants(),
                       band, g.TimeGrid(1.0, 50), 50_000, seed=0)
print(f"\nMonte Carlo sup over extreme constants: {rep.value:.4f} +- {rep.std_error:.4f}")
print("argmax policy:", rep.argmax_policy.describe())

# A payoff with mixed convexity: the finite family lower-bounds the PDE value.
phi = lambda x: np.maximum(x, 0.0) ** 3 - np.maximum(-x, 0.0)
pde = g.solve_terminal(band, phi, g.SpaceTimeGrid.with_cfl(-14.0, 14.0, 281, 1.0, band)).value_at(0.0)
search = g.optimize_bangbang(lambda b: phi(b.b[:, -1, 0]), band, g.TimeGrid(1.0, 50),
                             np.linspace(-1.5, 1.5, 7), 20_000, seed=1)
print(f"\nmixed-convexity payoff: PDE value {pde:.4f}, best threshold policy {search.value:.4f}")
print("search argmax:", search.argmax_policy.describe(),
      "(a lower bound up to Monte Carlo noise)")
