"""Quasi-Monte Carlo estimation of multivariate normal rectangle probabilities.

Implements the separation-of-variables transform of Genz: the rectangle
probability is mapped to an integral over the unit cube, variables are
reordered for numerical stability (smallest conditional interval first), and
the cube integral is averaged over a randomized low-discrepancy point set.
Randomization over independent shifts provides a standard-error estimate,
which the rectangle-quantile bisection uses as its stopping safeguard.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack
from scipy.special import ndtr, ndtri

from .errors import NumericError, ParameterError, SolverError
from .rng import RngStream, std_normal_quantile

__all__ = [
    "RectProbRequest",
    "RectProbResult",
    "mvn_rectangle_prob",
    "solve_rectangle_quantile",
]

_JITTER_REL = 1e-10  # max diagonal jitter, relative to trace
_MIN_SHIFTS = 8

# square roots of primes drive the Richtmyer (Kronecker) low-discrepancy sequence
_PRIMES = np.array(
    [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71,
     73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151,
     157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229, 233,
     239, 241, 251, 257, 263, 269, 271, 277, 281, 283, 293, 307, 311, 313, 317],
    dtype=float,
)


@dataclass
class RectProbRequest:
    """Rectangle probability query for an m-variate normal distribution."""

    lower: np.ndarray
    upper: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray
    n_points: int = 4096
    seed: int = 0
    n_shifts: int = _MIN_SHIFTS

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        m = self.lower.shape[0]
        if self.upper.shape != (m,) or self.mean.shape != (m,):
            raise ParameterError("lower, upper, mean must share length")
        if self.covariance.shape != (m, m):
            raise ParameterError(
                f"covariance must be {m}x{m}, got {self.covariance.shape}"
            )
        if np.any(self.lower > self.upper):
            raise ParameterError("requires lower[i] <= upper[i]")
        if self.n_shifts < _MIN_SHIFTS:
            raise ParameterError(f"n_shifts must be >= {_MIN_SHIFTS}")
        if m > _PRIMES.shape[0]:
            raise ParameterError(f"dimension {m} exceeds supported maximum")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


@dataclass
class RectProbResult:
    probability: float
    mc_error: float


def _factor_with_jitter(cov: np.ndarray) -> np.ndarray:
    """Covariance made factorizable by at most 1e-10*trace of diagonal jitter."""
    _, info = lapack.dpotrf(cov, lower=1)
    if info == 0:
        return cov
    jitter = _JITTER_REL * np.trace(cov)
    if jitter <= 0:
        jitter = _JITTER_REL
    bumped = cov + jitter * np.eye(cov.shape[0])
    _, info = lapack.dpotrf(bumped, lower=1)
    if info != 0:
        raise NumericError(
            "covariance not positive definite even after maximal jitter; "
            "inject noise explicitly before requesting rectangle probabilities"
        )
    return bumped


def _ordered_cholesky(cov, a, b):
    """Pivoted Cholesky with Genz variable ordering.

    At each stage the remaining variable with the smallest conditional
    interval probability (evaluated at the truncated-normal plug-in for the
    earlier coordinates) is processed next. Returns (L, a, b) in the new order.
    """
    m = cov.shape[0]
    C = cov.copy()
    a = a.copy()
    b = b.copy()
    L = np.zeros((m, m))
    y = np.zeros(m)
    order = np.arange(m)
    tiny = np.finfo(float).tiny
    for j in range(m):
        # choose the next variable: smallest conditional probability content
        best, best_p = j, np.inf
        for i in range(j, m):
            s2 = C[i, i] - L[i, :j] @ L[i, :j]
            s = np.sqrt(max(s2, tiny))
            mu = L[i, :j] @ y[:j]
            p = ndtr((b[i] - mu) / s) - ndtr((a[i] - mu) / s)
            if p < best_p:
                best, best_p = i, p
        if best != j:
            for arr in (a, b, order, y):
                arr[[j, best]] = arr[[best, j]]
            C[[j, best], :] = C[[best, j], :]
            C[:, [j, best]] = C[:, [best, j]]
            L[[j, best], :j] = L[[best, j], :j]
        s2 = C[j, j] - L[j, :j] @ L[j, :j]
        L[j, j] = np.sqrt(max(s2, tiny))
        if j + 1 < m:
            L[j + 1 :, j] = (C[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
        # plug-in value: mean of the standard normal truncated to [at, bt]
        mu = L[j, :j] @ y[:j]
        at = (a[j] - mu) / L[j, j]
        bt = (b[j] - mu) / L[j, j]
        lo, hi = ndtr(at), ndtr(bt)
        phi_a = np.exp(-0.5 * at * at) / np.sqrt(2 * np.pi) if np.isfinite(at) else 0.0
        phi_b = np.exp(-0.5 * bt * bt) / np.sqrt(2 * np.pi) if np.isfinite(bt) else 0.0
        y[j] = (phi_a - phi_b) / max(hi - lo, tiny)
    return L, a, b


def _cube_integrand(L, a, b, w):
    """Genz recursive integrand on the unit cube, vectorized over QMC points."""
    m = L.shape[0]
    npts = w.shape[0]
    tiny = np.finfo(float).tiny
    d = np.full(npts, ndtr(a[0] / L[0, 0]))
    e = np.full(npts, ndtr(b[0] / L[0, 0]))
    f = e - d
    y = np.zeros((npts, m - 1)) if m > 1 else None
    for j in range(1, m):
        u = d + w[:, j - 1] * (e - d)
        np.clip(u, tiny, 1.0 - 1e-16, out=u)
        y[:, j - 1] = ndtri(u)
        mu = y[:, :j] @ L[j, :j]
        d = ndtr((a[j] - mu) / L[j, j])
        e = ndtr((b[j] - mu) / L[j, j])
        f = f * (e - d)
    return f


def mvn_rectangle_prob(req: RectProbRequest) -> RectProbResult:
    """Probability that an N(mean, covariance) vector lies in [lower, upper].

    Randomized QMC (Richtmyer sequence with independent uniform shifts); the
    returned ``mc_error`` is the standard error across shift replicates.
    """
    m = req.dim
    a = req.lower - req.mean
    b = req.upper - req.mean
    cov = _factor_with_jitter(req.covariance)
    L, a, b = _ordered_cholesky(cov, a, b)
    if m == 1:
        p = float(ndtr(b[0] / L[0, 0]) - ndtr(a[0] / L[0, 0]))
        return RectProbResult(probability=p, mc_error=0.0)
    roots = np.sqrt(_PRIMES[: m - 1])
    idx = np.arange(1, req.n_points + 1)[:, None]
    base = idx * roots[None, :]  # frac() applied after shifting
    estimates = np.empty(req.n_shifts)
    for r in range(req.n_shifts):
        shift_rng = RngStream(req.seed, stream_id=r)
        shift = shift_rng.gen.random(m - 1)
        w = np.modf(base + shift)[0]
        estimates[r] = np.mean(_cube_integrand(L, a, b, w))
    prob = float(np.mean(estimates))
    err = float(np.std(estimates, ddof=1) / np.sqrt(req.n_shifts))
    prob = min(max(prob, 0.0), 1.0)
    return RectProbResult(probability=prob, mc_error=err)


def solve_rectangle_quantile(
    alpha: float,
    v_diag: np.ndarray,
    covariance: np.ndarray,
    tol: float = 1e-3,
    n_points: int = 4096,
    seed: int = 0,
    max_iter: int = 80,
) -> float:
    """Solve for xi with N_m(prod_i [-xi sqrt(v_i), xi sqrt(v_i)]; 0, cov) = 1 - alpha.

    Bisection on the bracket [z*_{1-alpha/2}, z*_{1-alpha/(2m)}], which always
    contains the solution. The same QMC point set is reused at every xi, so
    the evaluated probability is monotone along the bisection trace.
    """
    if not 0.0 < alpha < 1.0:
        raise ParameterError("alpha must lie in (0, 1)")
    v_diag = np.asarray(v_diag, dtype=float)
    covariance = np.asarray(covariance, dtype=float)
    m = v_diag.shape[0]
    if covariance.shape != (m, m):
        raise ParameterError("covariance shape does not match v_diag")
    if np.any(v_diag <= 0):
        raise ParameterError("v_diag entries must be positive")
    rel = np.abs(np.diag(covariance) - v_diag) / np.maximum(np.abs(v_diag), 1e-300)
    if np.any(rel > 1e-9):
        raise ParameterError("covariance diagonal inconsistent with v_diag")

    lo = float(std_normal_quantile(1.0 - alpha / 2.0))
    hi = float(std_normal_quantile(1.0 - alpha / (2.0 * m)))
    if m == 1:
        return lo
    sqrt_v = np.sqrt(v_diag)
    target = 1.0 - alpha

    def prob_at(xi):
        req = RectProbRequest(
            lower=-xi * sqrt_v,
            upper=xi * sqrt_v,
            mean=np.zeros(m),
            covariance=covariance,
            n_points=n_points,
            seed=seed,
        )
        return mvn_rectangle_prob(req)

    res_lo = prob_at(lo)
    res_hi = prob_at(hi)
    slack = max(tol, 4.0 * max(res_lo.mc_error, res_hi.mc_error))
    if res_lo.probability > target + slack or res_hi.probability < target - slack:
        raise SolverError(
            "bracket endpoints do not straddle the target probability: "
            f"p({lo:.6f})={res_lo.probability:.6f}, "
            f"p({hi:.6f})={res_hi.probability:.6f}, target={target:.6f}"
        )
    if res_lo.probability >= target:
        return lo
    if res_hi.probability <= target:
        return hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        p = prob_at(mid).probability
        if abs(p - target) <= tol or hi - lo < 1e-12:
            return mid
        if p < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
