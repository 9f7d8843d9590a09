"""Grid certification of Lyapunov-type conditions for GSDEs.

The differential operator evaluated here is

    L V = dV/dt + sum_nu dV/dx_nu * f_nu + G(eta),
    eta_ij = sum_nu dV/dx_nu * (h_nu_ij + h_nu_ji)
           + sum_{mu,nu} d2V/dx_mu dx_nu * g_mu_i * g_nu_j,

with G the sublinear function of the uncertainty set.  Conditions of the
form "for all (t, x)" are certified on finite grids; reports carry a crude
Lipschitz slack estimated from adjacent grid differences so refinement
behaviour can be judged.  Candidates like |x|^p with p < 2 are not twice
differentiable at the origin: exclude a ball around 0 via the region.
"""

from __future__ import annotations

import numpy as np

from . import expr as expr_mod
from .gsde import CoefficientSet, integrate_batch
from .scenario import TimeGrid, assemble, batch_noise
from .uncertainty import SigmaBand, g_matrix, g_scalar


class RegionError(ValueError):
    pass


class LyapunovSpec:
    """Candidate V(t, x) with derivatives, analytic or finite-difference.

    In analytic mode the caller supplies expressions for dV/dt, the
    gradient, and the Hessian.  In finite-difference mode derivatives use
    central stencils with per-point steps h1 = h_fd*(1+|x|) for first order
    and h2 = h_fd2*(1+|x|) for second order.
    """

    def __init__(self, n, v, mode="finite_difference", dt=None, grad=None, hess=None,
                 constants=None, nonneg=True, h_fd=1e-5, h_fd2=1e-4):
        self.n = int(n)
        variables = ("t",) + tuple(expr_mod.state_variables(self.n))
        self.v = v if isinstance(v, expr_mod.Expression) else expr_mod.parse(str(v), variables, constants)
        if mode not in ("analytic", "finite_difference"):
            raise ValueError("mode must be 'analytic' or 'finite_difference'")
        self.mode = mode
        self.nonneg = bool(nonneg)
        self.h_fd = float(h_fd)
        self.h_fd2 = float(h_fd2)
        self.dt_expr = None
        self.grad_exprs = None
        self.hess_exprs = None
        if mode == "analytic":
            if dt is None or grad is None or hess is None:
                raise ValueError("analytic mode needs dt, grad, and hess expressions")
            parse = lambda s: s if isinstance(s, expr_mod.Expression) else expr_mod.parse(str(s), variables, constants)
            self.dt_expr = parse(dt)
            self.grad_exprs = tuple(parse(s) for s in grad)
            if len(self.grad_exprs) != self.n:
                raise ValueError(f"grad needs {self.n} expressions")
            self.hess_exprs = tuple(tuple(parse(s) for s in row) for row in hess)
            if len(self.hess_exprs) != self.n or any(len(r) != self.n for r in self.hess_exprs):
                raise ValueError(f"hess needs an {self.n}x{self.n} table")

    def _env(self, t, x):
        env = {"t": t}
        for i in range(self.n):
            env[f"x{i + 1}"] = x[..., i]
        return env

    def value(self, t, x):
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(np.shape(t), x.shape[:-1])
        return np.broadcast_to(np.asarray(self.v.eval(self._env(t, x)), dtype=float), shape)

    def derivatives(self, t, x):
        """(dV/dt, gradient (..., n), Hessian (..., n, n)) at (t, x)."""
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(np.shape(t), x.shape[:-1])
        if self.mode == "analytic":
            env = self._env(t, x)
            vt = np.broadcast_to(np.asarray(self.dt_expr.eval(env), dtype=float), shape)
            grad = np.empty(shape + (self.n,))
            for i, e in enumerate(self.grad_exprs):
                grad[..., i] = np.broadcast_to(np.asarray(e.eval(env), dtype=float), shape)
            hess = np.empty(shape + (self.n, self.n))
            for i in range(self.n):
                for j in range(self.n):
                    hess[..., i, j] = np.broadcast_to(
                        np.asarray(self.hess_exprs[i][j].eval(env), dtype=float), shape
                    )
            return vt, grad, hess
        return self._derivatives_fd(t, x, shape)

    def _derivatives_fd(self, t, x, shape):
        xnorm = np.linalg.norm(x, axis=-1)
        h1 = self.h_fd * (1.0 + xnorm)
        h2 = self.h_fd2 * (1.0 + xnorm)
        ht = self.h_fd * (1.0 + np.abs(np.asarray(t, dtype=float)))

        def v_at(tt, xx):
            return np.broadcast_to(np.asarray(self.v.eval(self._env(tt, xx)), dtype=float), shape)

        vt = (v_at(np.asarray(t) + ht, x) - v_at(np.asarray(t) - ht, x)) / (2.0 * ht)
        grad = np.empty(shape + (self.n,))
        hess = np.empty(shape + (self.n, self.n))
        v0 = v_at(t, x)
        for i in range(self.n):
            xp = x.copy()
            xm = x.copy()
            xp[..., i] = xp[..., i] + h1
            xm[..., i] = xm[..., i] - h1
            grad[..., i] = (v_at(t, xp) - v_at(t, xm)) / (2.0 * h1)
        for i in range(self.n):
            xp = x.copy()
            xm = x.copy()
            xp[..., i] = xp[..., i] + h2
            xm[..., i] = xm[..., i] - h2
            hess[..., i, i] = (v_at(t, xp) - 2.0 * v0 + v_at(t, xm)) / (h2 * h2)
            for j in range(i + 1, self.n):
                acc = 0.0
                for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    xx = x.copy()
                    xx[..., i] = xx[..., i] + si * h2
                    xx[..., j] = xx[..., j] + sj * h2
                    acc = acc + si * sj * v_at(t, xx)
                hess[..., i, j] = hess[..., j, i] = acc / (4.0 * h2 * h2)
        return vt, grad, hess


class CheckRegion:
    """Rectangular (t, x) grid with an optional exclusion ball around 0."""

    def __init__(self, t_end, box, exclude_r0=0.0, nt=2):
        self.t_end = float(t_end)
        self.box = tuple((float(lo), float(hi), int(count)) for lo, hi, count in box)
        for lo, hi, count in self.box:
            if count < 2:
                raise RegionError("axis counts must be >= 2")
            if not lo < hi:
                raise RegionError("axis bounds need lo < hi")
        self.exclude_r0 = float(exclude_r0)
        self.nt = max(1, int(nt))

    @property
    def n(self) -> int:
        return len(self.box)

    def grid(self):
        """Flattened (t values (M,), states (M, n)) after ball exclusion."""
        axes = [np.linspace(lo, hi, count) for lo, hi, count in self.box]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        if self.exclude_r0 > 0.0:
            pts = pts[np.linalg.norm(pts, axis=-1) >= self.exclude_r0]
        if len(pts) == 0:
            raise RegionError("exclusion ball removed every grid point")
        tvals = np.linspace(0.0, self.t_end, self.nt) if self.t_end > 0 else np.zeros(1)
        T = np.repeat(tvals, len(pts))
        X = np.tile(pts, (len(tvals), 1))
        return T, X

    def spacings(self):
        return [(hi - lo) / (count - 1) for lo, hi, count in self.box]

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ok = np.ones(x.shape[:-1], dtype=bool)
        for i, (lo, hi, _) in enumerate(self.box):
            ok &= (x[..., i] >= lo) & (x[..., i] <= hi)
        return ok


class CheckReport:
    def __init__(self, condition, max_violation, argmax_t, argmax_x, tolerance, grid_size, diagnostics=None):
        self.condition = condition
        self.max_violation = float(max_violation)
        self.argmax_t = float(argmax_t)
        self.argmax_x = np.asarray(argmax_x, dtype=float)
        self.tolerance = float(tolerance)
        self.grid_size = int(grid_size)
        self.diagnostics = dict(diagnostics or {})

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tolerance

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def to_json_dict(self) -> dict:
        return {
            "condition": self.condition,
            "max_violation": self.max_violation,
            "argmax": {"t": self.argmax_t, "x": self.argmax_x.tolist()},
            "tolerance": self.tolerance,
            "grid_size": self.grid_size,
            "verdict": self.verdict,
            "diagnostics": {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.diagnostics.items()},
        }

    def __repr__(self):
        return f"CheckReport({self.condition}: {self.verdict}, max_violation={self.max_violation:.3e})"


def eval_L(spec: LyapunovSpec, coeffs: CoefficientSet, unc, t, x):
    """L V at (t, x); broadcasts over stacked points x of shape (..., n)."""
    x = np.asarray(x, dtype=float)
    vt, grad, hess = spec.derivatives(t, x)
    fv = coeffs.eval_f(t, x)
    hv = coeffs.eval_h(t, x)
    gv = coeffs.eval_g(t, x)
    h_sym = hv + np.swapaxes(hv, -1, -2)
    eta = np.einsum("...n,...nij->...ij", grad, h_sym) + np.einsum(
        "...mn,...mi,...nj->...ij", hess, gv, gv
    )
    if isinstance(unc, SigmaBand):
        gval = g_scalar(unc, eta[..., 0, 0])
    else:
        gval = g_matrix(unc, eta)
    out = vt + np.einsum("...n,...n->...", grad, fv) + gval
    if not np.all(np.isfinite(out)):
        raise expr_mod.ExprError("L V evaluated to a non-finite value")
    return float(out) if np.ndim(out) == 0 else out


def _lipschitz_slack(values, region: CheckRegion):
    """Half-cell bound on how much a grid max can move under refinement."""
    shape = tuple(count for _, _, count in region.box)
    if values.size % int(np.prod(shape)) != 0:
        return None  # exclusion ball broke the lattice; skip the estimate
    grid_vals = values.reshape((-1,) + shape)
    slack = 0.0
    for axis in range(1, grid_vals.ndim):
        if grid_vals.shape[axis] > 1:
            slack = max(slack, 0.5 * float(np.max(np.abs(np.diff(grid_vals, axis=axis)))))
    return slack


def _report(condition, violations, T, X, vscale, region, extra=None):
    idx = int(np.argmax(violations))
    tol = 1e-9 * (1.0 + vscale)
    diag = dict(extra or {})
    slack = _lipschitz_slack(violations, region)
    if slack is not None:
        diag["lipschitz_slack"] = slack
    return CheckReport(condition, violations[idx], T[idx], X[idx], tol, len(T), diag)


def _check_nonneg(spec, T, X):
    vals = spec.value(T, X)
    if np.min(vals) < -1e-12:
        i = int(np.argmin(vals))
        raise RegionError(f"V is negative at t={T[i]}, x={X[i].tolist()} but the nonneg flag is set")
    return vals


def check_growth_condition(spec: LyapunovSpec, coeffs: CoefficientSet, unc,
                           region: CheckRegion, c_ly: float) -> CheckReport:
    """Grid max of L V - c_ly V; passes when <= 1e-9*(1 + max|V|)."""
    if c_ly < 0:
        raise ValueError("c_ly must be >= 0")
    T, X = region.grid()
    v = spec.value(T, X)
    if spec.nonneg:
        _check_nonneg(spec, T, X)
    lv = eval_L(spec, coeffs, unc, T, X)
    violations = lv - c_ly * v
    return _report(f"LV <= {c_ly:g} V", violations, T, X, float(np.max(np.abs(v))), region)


def find_cly(spec: LyapunovSpec, coeffs: CoefficientSet, unc, region: CheckRegion,
             v_min: float = 1e-8) -> float:
    """Smallest grid-certified constant c with L V <= c V, clipped at 0."""
    return find_cly_detailed(spec, coeffs, unc, region, v_min).diagnostics["clipped"]


def find_cly_detailed(spec: LyapunovSpec, coeffs: CoefficientSet, unc, region: CheckRegion,
                      v_min: float = 1e-8) -> CheckReport:
    T, X = region.grid()
    v = spec.value(T, X)
    if np.min(v) < v_min:
        i = int(np.argmin(v))
        raise RegionError(
            f"V(t={T[i]}, x={X[i].tolist()}) = {v[i]:.3e} < v_min={v_min:g}; "
            "exclude a ball around the origin or raise v_min"
        )
    lv = eval_L(spec, coeffs, unc, T, X)
    ratios = lv / v
    raw = float(np.max(ratios))
    rep = _report("min c with LV <= c V", ratios, T, X, float(np.max(np.abs(v))), region,
                  extra={"raw": raw, "clipped": max(raw, 0.0)})
    return rep


_CONDITIONS = ("sandwich", "nonpositive", "exp_stable", "exp_unstable")


def check_stability_conditions(spec: LyapunovSpec, coeffs: CoefficientSet, unc,
                               region: CheckRegion, params: dict, which: str) -> CheckReport:
    """Signed grid violation of one stability hypothesis.

    sandwich:      c1 |x|^p <= V <= c2 |x|^p
    nonpositive:   L V <= 0
    exp_stable:    L V <= -lambda V
    exp_unstable:  L V >= +lambda V
    """
    if which not in _CONDITIONS:
        raise ValueError(f"which must be one of {_CONDITIONS}")
    T, X = region.grid()
    v = spec.value(T, X)
    vscale = float(np.max(np.abs(v)))
    if which == "sandwich":
        p = float(params["p"])
        c1, c2 = float(params["c1"]), float(params["c2"])
        if p <= 0 or c1 <= 0 or c2 <= 0:
            raise ValueError("need p, c1, c2 > 0")
        xp = np.linalg.norm(X, axis=-1) ** p
        violations = np.maximum(c1 * xp - v, v - c2 * xp)
        return _report(f"{c1:g}|x|^{p:g} <= V <= {c2:g}|x|^{p:g}", violations, T, X,
                       max(vscale, float(np.max(xp))), region)
    lv = eval_L(spec, coeffs, unc, T, X)
    if which == "nonpositive":
        return _report("LV <= 0", lv, T, X, vscale, region)
    lam = float(params["lambda"] if "lambda" in params else params["lam"])
    if lam <= 0:
        raise ValueError("need lambda > 0")
    if which == "exp_stable":
        violations = lv + lam * v
        return _report(f"LV <= -{lam:g} V", violations, T, X, vscale, region)
    violations = lam * v - lv
    return _report(f"LV >= {lam:g} V", violations, T, X, vscale, region)


class MomentBoundReport:
    """Per-time comparison of the estimated upper expectation of V(t, X_t)
    against exp(c_ly t) V(0, x0), with the 5% + 3 s.e. one-sided margin
    (the estimator lower-bounds the target, so violations are meaningful)."""

    def __init__(self, rows, passed, region_exceeded=None, details=None):
        self.rows = rows  # (t, estimate, se, bound, ok)
        self.passed = bool(passed)
        self.region_exceeded = region_exceeded
        self.details = dict(details or {})

    @property
    def verdict(self) -> str:
        if self.region_exceeded:
            return "region_exceeded"
        return "pass" if self.passed else "fail"

    def to_json_dict(self) -> dict:
        return {
            "rows": [
                {"t": t, "estimate": est, "se": se, "bound": bnd, "ok": bool(ok)}
                for (t, est, se, bnd, ok) in self.rows
            ],
            "verdict": self.verdict,
            **({"region_exceeded": self.region_exceeded} if self.region_exceeded else {}),
            **({"details": self.details} if self.details else {}),
        }


def verify_moment_bound(spec: LyapunovSpec, coeffs: CoefficientSet, unc, x0, times,
                        family, n_paths: int, seed: int, c_ly: float,
                        n_steps: int = None, region: CheckRegion = None,
                        slack: float = 0.05) -> MomentBoundReport:
    """Simulate the system under every policy in the family and check
    max-policy mean of V(t, X_t) <= exp(c_ly t) V(0, x0) (1 + slack) + 3 se."""
    from .upper_expectation import PolicyFamily

    times = sorted(float(t) for t in times)
    if not times or times[0] < 0:
        raise ValueError("times must be nonnegative")
    T = times[-1]
    grid = TimeGrid(T, n_steps if n_steps else max(200, int(round(200 * T))))
    indices = [grid.index_of(t) for t in times]
    x0 = np.asarray(x0, dtype=float).reshape(coeffs.n)
    v0 = float(spec.value(0.0, x0[None])[0])

    policies = family.policies(unc) if isinstance(family, PolicyFamily) else list(family)
    d = 1 if isinstance(unc, SigmaBand) else unc.dim
    noise = batch_noise(seed, 0, n_paths, grid.n_steps, d)
    means = []
    ses = []
    excursion = None
    for policy in policies:
        batch = assemble(policy, unc, grid, noise, seed=seed)
        sol = integrate_batch(coeffs, x0, batch)
        if region is not None:
            inside = region.contains(sol.x)
            if not inside.all():
                worst = float(np.max(sol.norms))
                excursion = {"policy": policy.describe(), "max_norm": worst}
        states = sol.x[:, indices, :]  # (P, m, n)
        tarr = np.asarray(times)[None, :]
        vals = spec.value(np.broadcast_to(tarr, states.shape[:2]), states)
        means.append(vals.mean(axis=0))
        ses.append(vals.std(axis=0, ddof=1) / np.sqrt(n_paths))
    means = np.asarray(means)
    ses = np.asarray(ses)
    best = np.argmax(means, axis=0)
    rows = []
    all_ok = True
    for j, t in enumerate(times):
        est = float(means[best[j], j])
        se = float(ses[best[j], j])
        bound = float(np.exp(c_ly * t) * v0)
        ok = est <= bound * (1.0 + slack) + 3.0 * se
        all_ok &= ok
        rows.append((t, est, se, bound, ok))
    return MomentBoundReport(rows, all_ok and excursion is None, region_exceeded=excursion,
                             details={"v0": v0, "c_ly": c_ly, "n_paths": n_paths, "seed": seed})
