"""Scenario-wise simulation of G-Brownian motion.

A path is classical Brownian motion whose per-step covariance gamma_k is
picked by an adapted volatility policy from the uncertainty set; the
quadratic variation accumulates gamma_k * dt exactly.  Noise is drawn from
a counter-based generator keyed by (seed, path index), so the normals for
path p never depend on batch size, thread count, or the policy, which also
gives common random numbers across policies for free.

Discrete integrals here and downstream are left-endpoint sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .uncertainty import CovarianceSet, SigmaBand, g_matrix, g_scalar

_MASK64 = (1 << 64) - 1
_EIG_CLAMP = 1e-12


class PolicyError(ValueError):
    """A policy produced a choice outside the uncertainty set."""


class UnsupportedDimensionError(ValueError):
    """Operation defined only for scalar (d = 1) paths."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, t_end] with n_steps steps."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (float(self.t_end) > 0.0):
            raise ValueError("t_end must be > 0")
        if int(self.n_steps) < 1:
            raise ValueError("n_steps must be >= 1")
        object.__setattr__(self, "t_end", float(self.t_end))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_steps + 1)

    def index_of(self, time: float) -> int:
        """Nearest grid index to the given time."""
        k = int(round(time / self.dt))
        return min(max(k, 0), self.n_steps)


class VolatilityPolicy:
    """Adapted covariance chooser.

    ``choose(k, b, aux)`` receives the step index, the current values
    B_k with shape (P, d), and an auxiliary state; it returns, per path,
    either a variance value (band scenarios, d = 1) or a member index
    (finite covariance sets).  Choices may depend only on (k, B_k, aux).
    """

    def init_aux(self, n_paths: int):
        return None

    def choose(self, k: int, b: np.ndarray, aux):
        raise NotImplementedError

    def update_aux(self, k: int, b_next: np.ndarray, aux):
        return aux

    def describe(self) -> str:
        return type(self).__name__

    def __repr__(self):
        return self.describe()


class ConstantPolicy(VolatilityPolicy):
    """Fixed variance value (band) or fixed member index (finite set)."""

    def __init__(self, value=None, index=None):
        if (value is None) == (index is None):
            raise ValueError("give exactly one of value= or index=")
        self.value = None if value is None else float(value)
        self.index = None if index is None else int(index)

    def choose(self, k, b, aux):
        return self.value if self.index is None else self.index

    def describe(self):
        if self.index is None:
            return f"const(sigma2={self.value:g})"
        return f"const(member={self.index})"


class PiecewiseConstantPolicy(VolatilityPolicy):
    """Deterministic schedule [(step, choice), ...]; each choice holds from
    its step until the next entry.  The first entry must cover step 0."""

    def __init__(self, schedule):
        sched = sorted((int(k), c) for k, c in schedule)
        if not sched or sched[0][0] != 0:
            raise ValueError("schedule must start at step 0")
        steps = [k for k, _ in sched]
        if len(set(steps)) != len(steps):
            raise ValueError("duplicate step in schedule")
        self.schedule = sched
        self._steps = np.array(steps)

    def choose(self, k, b, aux):
        i = int(np.searchsorted(self._steps, k, side="right")) - 1
        return self.schedule[i][1]

    def describe(self):
        parts = ",".join(f"{k}:{c}" for k, c in self.schedule)
        return f"piecewise({parts})"


class BangBangPolicy(VolatilityPolicy):
    """Feedback rule over the extreme members.

    ``rule(k, b, aux)`` must be deterministic and numpy-aware: b has shape
    (P, d) and the rule returns per-path choices (an array broadcasts, a
    scalar applies to every path).  Optional aux state evolves through
    ``aux_update(k, b_next, aux)`` starting from ``aux0``.
    """

    def __init__(self, rule, name="bangbang", aux0=None, aux_update=None):
        self.rule = rule
        self.name = name
        self.aux0 = aux0
        self.aux_update = aux_update

    def init_aux(self, n_paths):
        return None if self.aux0 is None else self.aux0(n_paths)

    def choose(self, k, b, aux):
        return self.rule(k, b, aux)

    def update_aux(self, k, b_next, aux):
        if self.aux_update is None:
            return aux
        return self.aux_update(k, b_next, aux)

    def describe(self):
        return self.name


def threshold_bangbang(band: SigmaBand, theta: float, hi_above: bool = True) -> BangBangPolicy:
    """d = 1 rule: take the upper extreme where B >= theta (or below it)."""
    hi, lo = band.sigma2_hi, band.sigma2_lo
    up, down = (hi, lo) if hi_above else (lo, hi)

    def rule(k, b, aux):
        return np.where(b[:, 0] >= theta, up, down)

    side = "hi_above" if hi_above else "lo_above"
    return BangBangPolicy(rule, name=f"bangbang(theta={theta:g},{side})")


def path_noise(seed: int, path_index: int, n_steps: int, d: int) -> np.ndarray:
    """Standard normal draws for one path, shape (n_steps, d).

    Philox keyed by (seed, path_index): the draws for a path are a fixed
    function of that pair, and extending n_steps keeps the prefix intact.
    """
    key = ((int(seed) & _MASK64) << 64) | (int(path_index) & _MASK64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal((n_steps, d))


def batch_noise(seed: int, first_index: int, n_paths: int, n_steps: int, d: int) -> np.ndarray:
    out = np.empty((n_paths, n_steps, d))
    for p in range(n_paths):
        out[p] = path_noise(seed, first_index + p, n_steps, d)
    return out


def _sqrt_factor(m: np.ndarray) -> np.ndarray:
    """Matrix square root L with L @ L.T = m; Cholesky, eigen fallback."""
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(m)
        w = np.where(w < _EIG_CLAMP, 0.0, w)
        return v * np.sqrt(w)


class GPath:
    """One simulated path: time grid, B, quadratic variation, policy trace,
    and the raw noise record.  A view into a PathBatch; treat as read-only."""

    def __init__(self, grid, b, qvar, policy_trace, choices, noise, seed, path_index, unc=None):
        self.grid = grid
        self.unc = unc
        self.b = b
        self.qvar = qvar
        self.policy_trace = policy_trace
        self.choices = choices
        self.noise = noise
        self.seed = seed
        self.path_index = path_index

    @property
    def d(self) -> int:
        return self.b.shape[-1]

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    def qv_scalar(self) -> np.ndarray:
        """Quadratic variation as a 1-d series (d = 1 only)."""
        if self.d != 1:
            raise UnsupportedDimensionError("scalar quadratic variation needs d = 1")
        return self.qvar[:, 0, 0]

    def to_csv(self, target) -> None:
        """Columns t, b_1..b_d, qvar_11..qvar_dd, policy_choice."""
        d = self.d
        header = (
            ["t"]
            + [f"b_{i + 1}" for i in range(d)]
            + [f"qvar_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
            + ["policy_choice"]
        )
        rows = np.column_stack(
            [
                self.t,
                self.b.reshape(len(self.t), d),
                self.qvar.reshape(len(self.t), d * d),
                np.append(self.choices, np.nan),
            ]
        )
        _write_csv(target, header, rows)

    def __repr__(self):
        return f"GPath(seed={self.seed}, index={self.path_index}, d={self.d}, n_steps={self.grid.n_steps})"


def _write_csv(target, header, rows, comments=()):
    close = False
    if isinstance(target, (str, Path)):
        fh = open(target, "w", newline="")
        close = True
    else:
        fh = target
    try:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(rows):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    finally:
        if close:
            fh.close()


class PathBatch:
    """n_paths simulated under one policy with shared (seed, index) noise."""

    def __init__(self, grid, unc, b, qvar, trace, choices, noise, seed, first_index, policy_descriptor):
        self.grid = grid
        self.unc = unc
        self.b = b            # (P, K+1, d)
        self.qvar = qvar      # (P, K+1, d, d)
        self.trace = trace    # (P, K, d, d)
        self.choices = choices  # (P, K)
        self.noise = noise    # (P, K, d)
        self.seed = seed
        self.first_index = first_index
        self.policy_descriptor = policy_descriptor

    def __len__(self) -> int:
        return self.b.shape[0]

    @property
    def d(self) -> int:
        return self.b.shape[-1]

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    def qv_scalar(self) -> np.ndarray:
        if self.d != 1:
            raise UnsupportedDimensionError("scalar quadratic variation needs d = 1")
        return self.qvar[:, :, 0, 0]

    def path(self, i: int) -> GPath:
        return GPath(
            self.grid,
            self.b[i],
            self.qvar[i],
            self.trace[i],
            self.choices[i],
            self.noise[i],
            self.seed,
            self.first_index + i,
            unc=self.unc,
        )

    def __iter__(self):
        return (self.path(i) for i in range(len(self)))


def assemble(policy: VolatilityPolicy, unc, grid: TimeGrid, noise: np.ndarray,
             seed: int = 0, first_index: int = 0) -> PathBatch:
    """Build paths from an explicit noise block of shape (P, K, d).

    The step recursion is B_{k+1} = B_k + L_k Z_k sqrt(dt) with
    L_k L_k^T = gamma_k, and qvar accumulates gamma_k * dt.  B values up to
    step k depend only on noise before step k (adaptedness by construction).
    """
    if isinstance(unc, SigmaBand):
        d = 1
    elif isinstance(unc, CovarianceSet):
        d = unc.dim
    else:
        raise TypeError("unc must be a SigmaBand or CovarianceSet")
    noise = np.asarray(noise, dtype=float)
    if noise.ndim != 3 or noise.shape[1] != grid.n_steps or noise.shape[2] != d:
        raise ValueError(f"noise must have shape (P, {grid.n_steps}, {d})")
    n_paths, n_steps, _ = noise.shape
    dt = grid.dt
    sqdt = np.sqrt(dt)

    b = np.zeros((n_paths, n_steps + 1, d))
    choices = np.empty((n_paths, n_steps))
    trace = np.empty((n_paths, n_steps, d, d))
    aux = policy.init_aux(n_paths)
    bang = isinstance(policy, BangBangPolicy)

    if isinstance(unc, SigmaBand):
        lo, hi = unc.sigma2_lo, unc.sigma2_hi
        for k in range(n_steps):
            c = np.broadcast_to(np.asarray(policy.choose(k, b[:, k, :], aux), dtype=float), (n_paths,))
            if bang:
                if not np.all((c == lo) | (c == hi)):
                    raise PolicyError(f"bang-bang choice off the extremes at step {k}")
            elif not np.all(unc.contains(c)):
                raise PolicyError(f"variance choice outside the band at step {k}")
            choices[:, k] = c
            b[:, k + 1, 0] = b[:, k, 0] + np.sqrt(c * dt) * noise[:, k, 0]
            aux = policy.update_aux(k, b[:, k + 1, :], aux)
        trace[:, :, 0, 0] = choices
    else:
        members = unc.member_stack()
        factors = np.stack([_sqrt_factor(m) for m in unc.members])
        m = len(unc)
        for k in range(n_steps):
            idx = np.broadcast_to(np.asarray(policy.choose(k, b[:, k, :], aux)), (n_paths,))
            idx = idx.astype(int)
            if np.any((idx < 0) | (idx >= m)):
                raise PolicyError(f"member index out of range at step {k}")
            choices[:, k] = idx
            b[:, k + 1, :] = b[:, k, :] + sqdt * np.einsum("pij,pj->pi", factors[idx], noise[:, k, :])
            aux = policy.update_aux(k, b[:, k + 1, :], aux)
        trace[:] = members[choices.astype(int)]

    qvar = np.zeros((n_paths, n_steps + 1, d, d))
    np.cumsum(trace * dt, axis=1, out=qvar[:, 1:])
    return PathBatch(grid, unc, b, qvar, trace, choices, noise, seed, first_index, policy.describe())


def simulate_batch(policy, unc, grid, seed, n_paths, first_index=0, noise=None) -> PathBatch:
    d = 1 if isinstance(unc, SigmaBand) else unc.dim
    if noise is None:
        noise = batch_noise(seed, first_index, n_paths, grid.n_steps, d)
    return assemble(policy, unc, grid, noise, seed=seed, first_index=first_index)


def simulate(policy, unc, grid, seed, path_index=0) -> GPath:
    """One path; deterministic given (policy, unc, grid, seed, path_index)."""
    return simulate_batch(policy, unc, grid, seed, 1, first_index=path_index).path(0)


def restrict(batch: PathBatch, factor: int) -> PathBatch:
    """The same paths viewed on a grid coarsened by an integer factor.

    B and qvar are subsampled; each coarse step's covariance is the average
    of the fine-step choices (still inside the band/convex hull), so the
    result is a valid path batch of the same model at lower resolution.
    Useful for strong-convergence measurements with shared randomness.
    """
    factor = int(factor)
    if factor < 1 or batch.grid.n_steps % factor != 0:
        raise ValueError("factor must divide n_steps")
    if factor == 1:
        return batch
    grid = TimeGrid(batch.grid.t_end, batch.grid.n_steps // factor)
    b = batch.b[:, ::factor]
    qvar = batch.qvar[:, ::factor]
    trace = np.diff(qvar, axis=1) / grid.dt
    choices = trace[:, :, 0, 0] if batch.d == 1 else np.full(trace.shape[:2], np.nan)
    # back out the standard normals the coarse increments imply: conditionally
    # on the volatility record, dB over a coarse step is centred Gaussian with
    # covariance equal to the aggregated quadratic variation
    db = np.diff(b, axis=1)
    if batch.d == 1:
        dqv = np.diff(qvar[:, :, 0, 0], axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            noise = np.where(dqv > 0, db[:, :, 0] / np.sqrt(dqv), 0.0)[:, :, None]
    else:
        factors = np.linalg.cholesky(trace * grid.dt)
        noise = np.linalg.solve(factors, db[..., None])[..., 0]
    return PathBatch(grid, batch.unc, b, qvar, trace, choices, noise, batch.seed,
                     batch.first_index, f"{batch.policy_descriptor}/restricted x{factor}")


def _gap_scan(increments):
    """max over pairs i <= j of sum(increments[i:j]): prefix-min scan, O(n)."""
    s = np.zeros(increments.shape[:-1] + (increments.shape[-1] + 1,))
    np.cumsum(increments, axis=-1, out=s[..., 1:])
    return np.max(s - np.minimum.accumulate(s, axis=-1), axis=-1)


def _pairwise_violation(qv, t, lo, hi):
    """Worst two-sided bound violation over all grid pairs of a raw series.

    Subject to the rounding drift of comparing two running sums; prefer the
    increment-based check for simulated paths."""
    return np.maximum(_gap_scan(np.diff(qv, axis=-1) - hi * np.diff(t)),
                      _gap_scan(lo * np.diff(t) - np.diff(qv, axis=-1)))


def _trace_violation(trace_scalar, dt, lo, hi):
    # per-step violations (sigma_k^2 - hi) dt and (lo - sigma_k^2) dt are
    # exactly nonpositive in floats, so the pair scan cannot drift upward
    up = trace_scalar * dt - hi * dt
    down = lo * dt - trace_scalar * dt
    return np.maximum(_gap_scan(up), _gap_scan(down))


def qvar_bounds_check(path: GPath, band: SigmaBand) -> float:
    """Max signed violation of lo*(t2-t1) <= <B>(t2)-<B>(t1) <= hi*(t2-t1)
    over all grid pairs t1 <= t2.

    Evaluated on the quadratic-variation increments gamma_k dt whose partial
    sums are the stored qvar; nonpositive on any simulated path."""
    if path.d != 1:
        raise UnsupportedDimensionError("qvar bounds are defined for d = 1")
    return float(_trace_violation(path.policy_trace[:, 0, 0], path.grid.dt,
                                  band.sigma2_lo, band.sigma2_hi))


def qvar_bounds_check_batch(batch: PathBatch, band: SigmaBand) -> np.ndarray:
    if batch.d != 1:
        raise UnsupportedDimensionError("qvar bounds are defined for d = 1")
    return _trace_violation(batch.trace[:, :, 0, 0], batch.grid.dt,
                            band.sigma2_lo, band.sigma2_hi)


def _eta_array(eta, n_steps, d):
    if callable(eta):
        arr = np.stack([np.asarray(eta(k), dtype=float).reshape(d, d) for k in range(n_steps)])
    else:
        arr = np.asarray(eta, dtype=float)
        if arr.ndim == 0:
            arr = np.broadcast_to(arr.reshape(1, 1, 1), (n_steps, d, d))
        elif arr.ndim == 1:
            arr = np.broadcast_to(arr[:, None, None], (n_steps, d, d))
        if arr.shape[-2:] != (d, d):
            raise ValueError(f"eta must produce {d}x{d} matrices")
    if not np.all(np.isfinite(arr)):
        raise ValueError("eta evaluated to a non-finite matrix")
    return 0.5 * (arr + np.swapaxes(arr, -1, -2))


def _m_running(eta, dqv, dt, unc):
    # increments tr(eta_k dqv_k) - 2 G(eta_k) dt, left-endpoint sums
    traces = np.einsum("...ij,...ij->...", eta, dqv)
    if isinstance(unc, SigmaBand):
        g = g_scalar(unc, eta[..., 0, 0])
    else:
        g = g_matrix(unc, eta)
    incr = traces - 2.0 * np.asarray(g) * dt
    m = np.zeros(incr.shape[:-1] + (incr.shape[-1] + 1,))
    np.cumsum(incr, axis=-1, out=m[..., 1:])
    return m


def qv_compensation_check(path: GPath, eta, unc=None) -> float:
    """Max over grid times of M_t = sum tr(eta dqv) - sum 2 G(eta) dt,
    the quadratic-variation integral minus its sublinear compensator.

    Nonpositive up to rounding for every scenario path, because each
    increment satisfies tr(eta gamma) <= 2 G(eta) with gamma in the set.
    ``unc`` defaults to the set the path was simulated under.
    """
    if unc is None:
        unc = path.unc
    if unc is None:
        raise ValueError("pass the uncertainty set the path was simulated under")
    eta_arr = _eta_array(eta, path.grid.n_steps, path.d)
    dqv = np.diff(path.qvar, axis=0)
    m = _m_running(eta_arr, dqv, path.grid.dt, unc)
    return float(np.max(m))


def qv_compensation_check_batch(batch: PathBatch, etas) -> np.ndarray:
    """Per-path max_t M_t; etas has shape (P, K, d, d) or (K, d, d)."""
    d = batch.d
    etas = np.asarray(etas, dtype=float)
    etas = 0.5 * (etas + np.swapaxes(etas, -1, -2))
    if etas.ndim == 3:
        etas = np.broadcast_to(etas, (len(batch),) + etas.shape)
    if etas.shape != (len(batch), batch.grid.n_steps, d, d):
        raise ValueError("etas shape mismatch")
    dqv = np.diff(batch.qvar, axis=1)
    m = _m_running(etas, dqv, batch.grid.dt, batch.unc)
    return np.max(m, axis=-1)
