"""Algebraic stability certificates for linear systems driven by a scalar
G-Brownian motion: dX = F X dt + H X d<B> + C X dB.

With V(x) = x'Px the operator reduces to quadratic forms, and the
matrix-inequality tests below decide it through two eigenvalue
computations.  Because the scalar sublinear function is monotone, the
tightest admissible coupling constant is alpha* = lambda_max (stability)
or lambda_min (instability) of sym(2PH + C'PC); no scan over alpha is
needed.  Note the certificates are not invariant under rescaling P: the
identity terms in the inequalities fix the normalization.

A margin note for users of ms_stable certificates: the pointwise quadratic
form x'(PF+I)x + G(x'(2PH+C'PC)x) is guaranteed nonpositive once
margin >= 1 + G(alpha*); below that the eigenvalue test can hold while the
pointwise form peeks above zero for some directions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .uncertainty import SigmaBand, g_scalar

_SPD_TOL = 1e-10


class NotSPDError(ValueError):
    pass


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _check_spd(p: np.ndarray, n: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (n, n):
        raise ValueError(f"P must be {n}x{n}")
    if np.max(np.abs(p - p.T)) > _SPD_TOL * max(1.0, np.max(np.abs(p))):
        raise NotSPDError("P is not symmetric")
    p = _sym(p)
    if np.min(np.linalg.eigvalsh(p)) <= 0.0:
        raise NotSPDError("P is not positive definite")
    return p


@dataclass(frozen=True)
class LinearGSystem:
    n: int
    F: np.ndarray
    H: np.ndarray
    C: np.ndarray
    band: SigmaBand

    def __init__(self, F, H, C, band: SigmaBand):
        F = np.asarray(F, dtype=float)
        H = np.asarray(H, dtype=float)
        C = np.asarray(C, dtype=float)
        n = F.shape[0]
        for name, m in (("F", F), ("H", H), ("C", C)):
            if m.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "band", band)

    def coupling_matrix(self, P: np.ndarray) -> np.ndarray:
        """sym(2PH + C'PC); linear in P."""
        return _sym(2.0 * P @ self.H + self.C.T @ P @ self.C)

    def to_coefficients(self):
        """Expression-based coefficient set for cross-checks and simulation."""
        from .gsde import coefficients

        def lin_exprs(M):
            rows = []
            for i in range(self.n):
                terms = [f"({float(M[i, j])!r})*x{j + 1}" for j in range(self.n)]
                rows.append(" + ".join(terms))
            return rows

        f = lin_exprs(self.F)
        h = [[[e]] for e in lin_exprs(self.H)]
        g = [[e] for e in lin_exprs(self.C)]
        return coefficients(self.n, 1, f, h, g)


@dataclass
class Certificate:
    kind: str  # ms_stable | q_unstable | inconclusive
    P: np.ndarray
    alpha: float
    margin: float
    details: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "P": np.asarray(self.P).tolist(),
            "alpha": self.alpha,
            "margin": self.margin,
            "details": self.details,
        }

    def to_json(self, indent=None) -> str:
        return json.dumps(self.to_json_dict(), indent=indent)


def riccati_value(sys: LinearGSystem, P, x) -> float:
    """x' sym(PF + I) x + G(x' sym(2PH + C'PC) x) for a unit vector x."""
    P = _check_spd(P, sys.n)
    x = np.asarray(x, dtype=float).reshape(sys.n)
    if abs(np.linalg.norm(x) - 1.0) > 1e-9:
        raise ValueError("x must be a unit vector")
    quad_f = float(x @ _sym(P @ sys.F + np.eye(sys.n)) @ x)
    quad_c = float(x @ sys.coupling_matrix(P) @ x)
    return quad_f + g_scalar(sys.band, quad_c)


def lmi_stable(sys: LinearGSystem, P) -> Certificate:
    """Mean-square stability test: lambda_max(sym(2PF) + I) <= -G(alpha*)
    with alpha* = lambda_max(sym(2PH + C'PC))."""
    P = _check_spd(P, sys.n)
    alpha = float(np.max(np.linalg.eigvalsh(sys.coupling_matrix(P))))
    lhs = float(np.max(np.linalg.eigvalsh(_sym(2.0 * P @ sys.F) + np.eye(sys.n))))
    threshold = -g_scalar(sys.band, alpha)
    margin = threshold - lhs
    kind = "ms_stable" if margin >= 0.0 else "inconclusive"
    return Certificate(kind, P, alpha, margin,
                       details={"lambda_max_drift": lhs, "g_alpha": g_scalar(sys.band, alpha)})


def lmi_unstable(sys: LinearGSystem, P) -> Certificate:
    """Instability test: lambda_min(sym(2PF) - I) >= -G(alpha*)
    with alpha* = lambda_min(sym(2PH + C'PC))."""
    P = _check_spd(P, sys.n)
    alpha = float(np.min(np.linalg.eigvalsh(sys.coupling_matrix(P))))
    lhs = float(np.min(np.linalg.eigvalsh(_sym(2.0 * P @ sys.F) - np.eye(sys.n))))
    threshold = -g_scalar(sys.band, alpha)
    margin = lhs - threshold
    kind = "q_unstable" if margin >= 0.0 else "inconclusive"
    return Certificate(kind, P, alpha, margin,
                       details={"lambda_min_drift": lhs, "g_alpha": g_scalar(sys.band, alpha)})


@dataclass(frozen=True)
class PRange:
    """Open admissible interval (0, p_max) of moment exponents, or
    empty with a reason."""

    p_max: float
    case: str
    reason: str = ""

    @property
    def empty(self) -> bool:
        return not np.isfinite(self.p_max) or self.p_max <= 0.0

    def contains(self, p: float) -> bool:
        return (not self.empty) and 0.0 < p < self.p_max


def admissible_p_range(alpha1: float, alpha2: float, alpha3: float) -> PRange:
    """Admissible exponents p for exponential p-stability given the
    quadratic-form constants: case (a) alpha1 < 0 gives p < 2 + |alpha1|/alpha3^2;
    case (b) 0 <= alpha1 < alpha2^2 gives p < 2 - 2 alpha1/alpha2^2."""
    alpha1, alpha2, alpha3 = float(alpha1), float(alpha2), float(alpha3)
    if not (0.0 <= alpha2 < alpha3):
        raise ValueError(f"need 0 <= alpha2 < alpha3, got ({alpha2}, {alpha3})")
    if alpha1 < 0.0:
        return PRange(2.0 + abs(alpha1) / alpha3**2, case="a")
    if alpha2 > 0.0 and alpha1 < alpha2**2:
        return PRange(2.0 - 2.0 * alpha1 / alpha2**2, case="b")
    return PRange(float("nan"), case="none",
                  reason="neither alpha1 < 0 nor 0 <= alpha1 < alpha2^2 holds")


def default_p_candidates(n: int, count: int = 50, seed: int = 0, low: float = 0.05,
                         high: float = 20.0) -> list:
    """Identity plus seeded log-uniform diagonal SPD matrices."""
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    out = [np.eye(n)]
    for _ in range(count):
        diag = np.exp(gen.uniform(np.log(low), np.log(high), size=n))
        out.append(np.diag(diag))
    return out


def search_p(sys: LinearGSystem, candidates=None, seed: int = 0) -> Certificate:
    """Best-margin stability certificate over a candidate list of SPD
    matrices (the randomized default is a heuristic, not a synthesis)."""
    if candidates is None:
        candidates = default_p_candidates(sys.n, seed=seed)
    candidates = list(candidates)
    if not candidates:
        raise ValueError("candidate list must be nonempty")
    best = None
    for P in candidates:
        cert = lmi_stable(sys, P)
        if best is None or cert.margin > best.margin:
            best = cert
    best.details["candidates_tried"] = len(candidates)
    return best
