#!/usr/bin/env python3
"""Stability certificates three ways: grid-checked Lyapunov conditions,
closed-form eigenvalue tests for linear systems, and admissible moment
exponents.

Run:  python3 demos/demo_stability_certificates.py
"""

import numpy as np

import gcalc as g

band = g.SigmaBand(1.0, 2.0)

# --- Lyapunov conditions on a grid -------------------------------------
# f = -3x, h = -x, g = x with V = x^2: LV = -6x^2 + G(-2x^2) = -7x^2
coeffs = g.coefficients(1, 1, ["-3*x1"], ["-x1"], ["x1"])
spec = g.LyapunovSpec(1, "x1^2", mode="analytic", dt="0", grad=["2*x1"], hess=[["2"]])
region = g.CheckRegion(1.0, [(-3.0, 3.0, 41)], exclude_r0=1e-6)
rep = g.check_stability_conditions(spec, coeffs, band, region, {"lambda": 7.0}, "exp_stable")
print("exponential stability at rate 7:", rep.verdict,
      f"(max violation {rep.max_violation:.2e})")

flipped = g.coefficients(1, 1, ["3*x1"], ["-x1"], ["x1"])
rep2 = g.check_stability_conditions(spec, flipped, band, region, {"lambda": 5.0}, "exp_unstable")
print("instability of the reversed drift at rate 5:", rep2.verdict)

# --- Linear matrix-inequality certificates ------------------------------
sys_ = g.LinearGSystem([[-3.0]], [[-1.0]], [[1.0]], band)
cert = g.lmi_stable(sys_, [[1.0]])
print(f"\nscalar system (F,H,C) = (-3,-1,1): {cert.kind}, alpha* = {cert.alpha:g}, "
      f"margin = {cert.margin:g}")
print("quadratic form at x = 1:", g.riccati_value(sys_, [[1.0]], [1.0]), "(nonpositive)")

weighted = g.LinearGSystem(np.diag([-10.0, -0.6]), np.zeros((2, 2)),
                           np.array([[0.0, 3.0], [0.0, 0.0]]), g.SigmaBand(1.0, 1.0))
print("\nweighted 2-d system: identity P ->", g.lmi_stable(weighted, np.eye(2)).kind)
best = g.search_p(weighted, seed=0)
print("randomized diagonal search ->", best.kind,
      f"margin {best.margin:.3f} with P = diag{tuple(np.round(np.diag(best.P), 3))}")

# --- Admissible moment exponents ----------------------------------------
for a1, a2, a3 in ((-1.0, 0.0, 1.0), (0.0, 1.0, 2.0), (1.0, 1.0, 2.0)):
    r = g.admissible_p_range(a1, a2, a3)
    tag = "empty: " + r.reason if r.empty else f"(0, {r.p_max:g}) via case {r.case}"
    print(f"alpha = ({a1:+.0f}, {a2:.0f}, {a3:.0f}) -> {tag}")

# --- The moment bound behind well-posedness ------------------------------
dvp = g.coefficients(2, 1, ["0", "0"], ["x2", "-x1 - x1^3 - x2"], ["0", "1"])
V = g.LyapunovSpec(2, "1 + 0.5*x2^2 + 0.5*x1^2 + 0.25*x1^4", mode="analytic", dt="0",
                   grad=["x1 + x1^3", "x2"], hess=[["1 + 3*x1^2", "0"], ["0", "1"]])
box = g.CheckRegion(5.0, [(-8.0, 8.0, 17), (-8.0, 8.0, 17)])
c = g.find_cly(V, dvp, band, box)
print(f"\noscillator: smallest grid-certified growth constant c = {c:.3f}")
fam = g.PolicyFamily.custom(g.PolicyFamily.extreme_constants().policies(band)
                            + [g.threshold_bangbang(band, 0.0)])
mb = g.verify_moment_bound(V, dvp, band, [1.0, 0.0], [1, 3, 5], fam,
                           n_paths=300, seed=1, c_ly=c, n_steps=1000, region=box)
for t, est, se, bound, ok in mb.rows:
    print(f"  t={t:g}: estimated sup E[V] = {est:.3f} <= bound {bound:.1f}  ok={ok}")
