"""Monte Carlo estimation of upper expectations over a policy family.

The estimator simulates every candidate policy on common random numbers
and reports the largest per-policy mean.  Because the family indexes only
a subset of the scenario measures, the value is a downward-biased estimate
of the true supremum; acceptance checks against exact oracles are
therefore one-sided unless convexity pins the optimum at an extreme
constant policy.  The quoted standard error is the argmax policy's; the
selection bias of taking a max is absorbed by test tolerances.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .scenario import (
    BangBangPolicy,
    ConstantPolicy,
    PathBatch,
    TimeGrid,
    assemble,
    batch_noise,
    threshold_bangbang,
)
from .uncertainty import CovarianceSet, SigmaBand


class PayoffError(ValueError):
    """Payoff evaluated to a non-finite value on a sampled path."""


@dataclass(frozen=True)
class PolicyFamily:
    """A finite, ordered menu of candidate policies.

    kinds: constants_only (a grid of constant variances, or every member of
    a finite set), extreme_constants (band endpoints / all members),
    bangbang_threshold (both orientations per threshold, d = 1 bands), and
    custom (explicit policy list).
    """

    kind: str
    n_constants: int = 5
    thresholds: tuple = ()
    custom_policies: tuple = ()

    @classmethod
    def constants_only(cls, n: int = 5):
        if n < 1:
            raise ValueError("need at least one constant")
        return cls(kind="constants_only", n_constants=int(n))

    @classmethod
    def extreme_constants(cls):
        return cls(kind="extreme_constants")

    @classmethod
    def bangbang_threshold(cls, thresholds):
        thetas = tuple(float(t) for t in thresholds)
        if not thetas:
            raise ValueError("threshold grid must be nonempty")
        return cls(kind="bangbang_threshold", thresholds=thetas)

    @classmethod
    def custom(cls, policies):
        policies = tuple(policies)
        if not policies:
            raise ValueError("custom policy list must be nonempty")
        return cls(kind="custom", custom_policies=policies)

    def policies(self, unc) -> list:
        if self.kind == "custom":
            return list(self.custom_policies)
        if isinstance(unc, CovarianceSet):
            if self.kind in ("constants_only", "extreme_constants"):
                return [ConstantPolicy(index=i) for i in range(len(unc))]
            raise ValueError(f"{self.kind} needs a SigmaBand")
        band: SigmaBand = unc
        if self.kind == "extreme_constants":
            values = [band.sigma2_lo, band.sigma2_hi] if band.width > 0 else [band.sigma2_lo]
            return [ConstantPolicy(value=v) for v in values]
        if self.kind == "constants_only":
            values = np.linspace(band.sigma2_lo, band.sigma2_hi, self.n_constants)
            return [ConstantPolicy(value=v) for v in values]
        if self.kind == "bangbang_threshold":
            out = []
            for theta in self.thresholds:
                out.append(threshold_bangbang(band, theta, hi_above=True))
                out.append(threshold_bangbang(band, theta, hi_above=False))
            return out
        raise ValueError(f"unknown family kind {self.kind!r}")


@dataclass
class PolicyEstimate:
    descriptor: str
    mean: float
    se: float


@dataclass
class EstimateReport:
    value: float
    std_error: float
    argmax_policy: object
    n_paths: int
    table: list
    details: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "argmax_policy": self.argmax_policy.describe(),
            "policies": [{"descriptor": e.descriptor, "mean": e.mean, "se": e.se} for e in self.table],
            **({"details": self.details} if self.details else {}),
        }

    def to_json(self, indent=None) -> str:
        return json.dumps(self.to_json_dict(), indent=indent)


def _mean_se(values: np.ndarray):
    m = float(np.mean(values))
    se = float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else float("nan")
    return m, se


def _evaluate_policy(policy, unc, grid, noise, seed, payoff):
    batch = assemble(policy, unc, grid, noise, seed=seed)
    vals = np.asarray(payoff(batch), dtype=float)
    if vals.shape[0] != len(batch):
        raise ValueError("payoff must return one value (or row) per path")
    if not np.all(np.isfinite(vals)):
        bad = int(np.argmax(~np.all(np.isfinite(vals.reshape(len(batch), -1)), axis=1)))
        raise PayoffError(
            f"payoff non-finite on path seed={seed} index={bad} under {policy.describe()}"
        )
    return vals


def _assemble_reports(policies, results, n_paths, details=None):
    means = np.array([m for m, _ in results])
    best = int(np.argmax(means))
    table = [PolicyEstimate(p.describe(), m, s) for p, (m, s) in zip(policies, results)]
    return EstimateReport(
        value=float(means[best]),
        std_error=results[best][1],
        argmax_policy=policies[best],
        n_paths=n_paths,
        table=table,
        details=dict(details or {}),
    )


def estimate_upper(payoff, family, unc, grid: TimeGrid, n_paths: int, seed: int,
                   threads: int = 1):
    """sup over the family of Monte Carlo means of payoff(paths).

    payoff maps a PathBatch to a (P,) array; it may instead return (P, m)
    to evaluate m functionals on the same paths, in which case a list of m
    EstimateReports comes back.  All policies see the same noise block
    (common random numbers keyed by (seed, path index)).
    """
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    policies = family.policies(unc) if isinstance(family, PolicyFamily) else list(family)
    if not policies:
        raise ValueError("empty policy family")
    d = 1 if isinstance(unc, SigmaBand) else unc.dim
    noise = batch_noise(seed, 0, n_paths, grid.n_steps, d)

    def run(policy):
        return _evaluate_policy(policy, unc, grid, noise, seed, payoff)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            all_vals = list(pool.map(run, policies))
    else:
        all_vals = [run(p) for p in policies]

    first = np.asarray(all_vals[0])
    if first.ndim == 1:
        results = [_mean_se(v) for v in all_vals]
        return _assemble_reports(policies, results, n_paths)
    reports = []
    for j in range(first.shape[1]):
        results = [_mean_se(np.asarray(v)[:, j]) for v in all_vals]
        reports.append(_assemble_reports(policies, results, n_paths))
    return reports


def optimize_bangbang(payoff, unc, grid: TimeGrid, thresholds, n_paths: int, seed: int,
                      threads: int = 1) -> EstimateReport:
    """Grid search over threshold bang-bang rules (both orientations),
    with the two extreme constants included so constant optima are exact.
    The report's details carry the evaluation trajectory in search order."""
    if not isinstance(unc, SigmaBand):
        raise ValueError("bang-bang threshold search needs a d = 1 band")
    thetas = [float(t) for t in thresholds]
    if not thetas:
        raise ValueError("threshold grid must be nonempty")
    candidates = [ConstantPolicy(value=unc.sigma2_lo), ConstantPolicy(value=unc.sigma2_hi)]
    for theta in thetas:
        candidates.append(threshold_bangbang(unc, theta, hi_above=True))
        candidates.append(threshold_bangbang(unc, theta, hi_above=False))
    report = estimate_upper(payoff, PolicyFamily.custom(candidates), unc, grid,
                            n_paths, seed, threads=threads)
    report.details["search_trajectory"] = [
        {"policy": e.descriptor, "mean": e.mean, "se": e.se} for e in report.table
    ]
    return report


def terminal_payoff(fn):
    """Lift a function of the terminal state: fn(B_T (P,d), qv_T (P,d,d)) -> (P,)."""

    def payoff(batch: PathBatch):
        return fn(batch.b[:, -1, :], batch.qvar[:, -1, :, :])

    return payoff


def stochastic_exponential_payoff(rate: float, at_time: float):
    """exp(rate*B_t - rate^2/2 * qv_t) read off at the grid point nearest t;
    mean 1 under every adapted scenario (d = 1)."""

    def payoff(batch: PathBatch):
        k = batch.grid.index_of(at_time)
        b = batch.b[:, k, 0]
        qv = batch.qvar[:, k, 0, 0]
        return np.exp(rate * b - 0.5 * rate * rate * qv)

    return payoff
