"""Reversible jump sampler for probit regression with spike-and-slab selection.

A model is an inclusion vector k over the r predictors; its parameter block
is the intercept followed by the included coefficients in increasing index
order. The within-model move is the classic truncated-normal data
augmentation sweep; birth/death moves flip one inclusion indicator with a
1-D Laplace-approximation normal proposal for the new coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr

from .errors import ParameterError, TraceParseError
from .rng import RngStream, sample_truncated_normal_onesided
from .uq import Trace

__all__ = [
    "ProbitData",
    "ProbitState",
    "log_unnorm_posterior",
    "da_update",
    "mode_and_curvature",
    "move_probs_spike_slab",
    "rj_step",
    "load_spambase",
    "initial_state",
    "run_probit_chain",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class ProbitData:
    """Binary responses, predictors and the spike-and-slab hyperparameters."""

    y: np.ndarray
    x: np.ndarray
    sigma: float
    p_slab: float
    _x_full: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.y = np.asarray(self.y)
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if self.y.ndim != 1 or self.y.shape[0] != self.x.shape[0]:
            raise ParameterError("y must pair with the rows of x")
        if not np.all(np.isin(self.y, (0, 1))):
            raise ParameterError("responses must be 0/1")
        if self.y.shape[0] < 1 or self.x.shape[1] < 1:
            raise ParameterError("need at least one observation and one predictor")
        if self.sigma <= 0:
            raise ParameterError("prior scale sigma must be positive")
        if not 0.0 < self.p_slab < 1.0:
            raise ParameterError("spike-and-slab weight must lie in (0, 1)")
        self.y = self.y.astype(np.int8)
        # design with intercept column; model designs are column subsets
        self._x_full = np.column_stack([np.ones(self.x.shape[0]), self.x])
        self._gram = self._x_full.T @ self._x_full

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def r(self) -> int:
        return self.x.shape[1]


@dataclass
class ProbitState:
    """Inclusion vector k and coefficient block z = (intercept, included coefs).

    Included coefficients are stored in increasing predictor-index order;
    ``logpost`` caches the log posterior of this exact state, filled lazily.
    """

    k: np.ndarray
    z: np.ndarray
    logpost: float | None = field(default=None, repr=False, compare=False)

    def validate(self):
        k = np.asarray(self.k)
        if not np.all(np.isin(k, (0, 1))):
            raise ParameterError("inclusion indicators must be 0/1")
        if np.asarray(self.z).shape != (int(k.sum()) + 1,):
            raise ParameterError("z must hold the intercept plus one value per inclusion")
        return self

    @property
    def size(self) -> int:
        return int(self.k.sum())


def _columns(state_k: np.ndarray) -> np.ndarray:
    """Design column indices for a model: intercept, then included predictors."""
    return np.concatenate([[0], np.flatnonzero(state_k) + 1])


def log_unnorm_posterior(data: ProbitData, state: ProbitState) -> float:
    """Log spike-and-slab posterior density of (k, z), up to the constant."""
    size = state.size
    cols = _columns(state.k)
    mu = data._x_full[:, cols] @ state.z
    loglik = float(np.where(data.y == 1, log_ndtr(mu), log_ndtr(-mu)).sum())
    log_prior = (
        size * math.log(data.p_slab)
        - (size + 1) * (0.5 * _LOG_2PI + math.log(data.sigma))
        - float(state.z @ state.z) / (2.0 * data.sigma**2)
    )
    return loglik + log_prior


def _cached_logpost(data: ProbitData, state: ProbitState) -> float:
    if state.logpost is None:
        state.logpost = log_unnorm_posterior(data, state)
    return state.logpost


def da_update(data: ProbitData, state: ProbitState, rng: RngStream) -> ProbitState:
    """One truncated-normal data augmentation sweep at fixed model k.

    Latent u_i ~ N(x_i*(k)' z, 1) truncated to the side dictated by y_i,
    then z' from its Gaussian conditional with precision X(k)'X(k) +
    I/sigma^2.
    """
    cols = _columns(state.k)
    z_full = np.zeros(data.r + 1)
    z_full[cols] = state.z
    mu = data._x_full @ z_full
    u = sample_truncated_normal_onesided(mu, 1.0, data.y == 1, rng)
    d = cols.shape[0]
    M = data._gram[np.ix_(cols, cols)].copy()
    M[np.arange(d), np.arange(d)] += 1.0 / data.sigma**2
    L = np.linalg.cholesky(M)
    b = (data._x_full.T @ u)[cols]
    mean = np.linalg.solve(L.T, np.linalg.solve(L, b))
    z_new = mean + np.linalg.solve(L.T, rng.gen.standard_normal(d))
    return ProbitState(k=state.k, z=z_new)


def mode_and_curvature(
    data: ProbitData, k_new: np.ndarray, z_partial: np.ndarray, j: int
) -> tuple[float, float]:
    """Laplace-approximation parameters of the proposal for coefficient j.

    Maximizes the log posterior of model ``k_new`` over the single
    coefficient ``j`` with every other coordinate held at ``z_partial``
    (Newton with analytic derivatives; the objective is strictly concave).
    Returns (mode, variance) with variance the inverse negative curvature
    at the mode.
    """
    k_new = np.asarray(k_new)
    if k_new[j] != 1:
        raise ParameterError("index j must be included in k_new")
    cols = _columns(k_new)
    pos = int(np.searchsorted(np.flatnonzero(k_new), j)) + 1
    z_full = np.zeros(data.r + 1)
    z_full[np.delete(cols, pos)] = z_partial
    base = data._x_full @ z_full
    xj = data._x_full[:, j + 1]
    sign = np.where(data.y == 1, 1.0, -1.0)
    xs = xj * sign
    prior_prec = 1.0 / data.sigma**2

    def derivs(b):
        t = sign * (base + xj * b)
        log_phi = -0.5 * (_LOG_2PI + t * t)
        inv_mills = np.exp(log_phi - log_ndtr(t))
        grad = float(xs @ inv_mills) - b * prior_prec
        curv = -float((xs * xs) @ (inv_mills * (inv_mills + t))) - prior_prec
        return grad, curv

    b = 0.0
    for _ in range(50):
        grad, curv = derivs(b)
        if abs(grad) < 1e-10:
            break
        step = -grad / curv
        b = b + step
        if not np.isfinite(b):
            b = _bisect_gradient(derivs)
            break
    else:
        b = _bisect_gradient(derivs)
    grad, curv = derivs(b)
    return float(b), float(-1.0 / curv)


def _bisect_gradient(derivs, span: float = 1.0) -> float:
    """Fallback root bracket and bisection on the concave gradient."""
    lo, hi = -span, span
    for _ in range(200):
        if derivs(lo)[0] > 0 and derivs(hi)[0] < 0:
            break
        lo *= 2.0
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g = derivs(mid)[0]
        if abs(g) < 1e-10:
            return mid
        if g > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def move_probs_spike_slab(p_slab: float, r: int, size: int) -> tuple[float, float, float]:
    """(q_u, q_b, q_d) for a model with ``size`` included predictors."""
    if not 0 <= size <= r:
        raise ParameterError("size must lie in 0..r")
    q_b = min(1.0, p_slab * (r - size) / (size + 1)) / 3.0
    q_d = min(1.0, size / (p_slab * (r - size + 1))) / 3.0
    return 1.0 - q_b - q_d, q_b, q_d


def rj_step(data: ProbitData, state: ProbitState, rng: RngStream) -> ProbitState:
    """One reversible jump transition: update, birth, or death."""
    r = data.r
    size = state.size
    q_u, q_b, q_d = move_probs_spike_slab(data.p_slab, r, size)
    move = rng.gen.random()
    if move < q_u:
        return da_update(data, state, rng)
    if move < q_u + q_b:
        excluded = np.flatnonzero(state.k == 0)
        j = int(excluded[rng.gen.integers(excluded.shape[0])])
        k_new = _flip(state.k, j, 1)
        mean, var = mode_and_curvature(data, k_new, state.z, j)
        b = mean + math.sqrt(var) * rng.gen.standard_normal()
        pos = int(np.searchsorted(np.flatnonzero(k_new), j)) + 1
        z_new = np.insert(state.z, pos, b)
        proposal = ProbitState(k=k_new, z=z_new)
        q_d_new = move_probs_spike_slab(data.p_slab, r, size + 1)[2]
        log_ratio = (
            _cached_logpost(data, proposal)
            + math.log(q_d_new)
            - math.log(size + 1)
            - _cached_logpost(data, state)
            - math.log(q_b)
            + math.log(r - size)
            - _log_normal_pdf(b, mean, var)
        )
    else:
        included = np.flatnonzero(state.k == 1)
        j = int(included[rng.gen.integers(included.shape[0])])
        pos = int(np.searchsorted(included, j)) + 1
        b = float(state.z[pos])
        k_new = _flip(state.k, j, 0)
        z_new = np.delete(state.z, pos)
        proposal = ProbitState(k=k_new, z=z_new)
        mean, var = mode_and_curvature(data, state.k, z_new, j)
        q_b_new = move_probs_spike_slab(data.p_slab, r, size - 1)[1]
        log_ratio = (
            _cached_logpost(data, proposal)
            + math.log(q_b_new)
            - math.log(r - size + 1)
            + _log_normal_pdf(b, mean, var)
            - _cached_logpost(data, state)
            - math.log(q_d)
            + math.log(size)
        )
    if math.log(rng.gen.random()) < log_ratio:
        return proposal
    return state


def _flip(k: np.ndarray, j: int, value: int) -> np.ndarray:
    out = k.copy()
    out[j] = value
    return out


def _log_normal_pdf(x: float, mean: float, var: float) -> float:
    return -0.5 * (_LOG_2PI + math.log(var)) - 0.5 * (x - mean) ** 2 / var


def initial_state(data: ProbitData) -> ProbitState:
    return ProbitState(k=np.zeros(data.r, dtype=np.int8), z=np.zeros(1))


def run_probit_chain(
    data: ProbitData,
    n: int,
    rng: RngStream,
    burn_in: int = 0,
    log_states: bool = False,
) -> Trace:
    """Run the reversible jump chain recording the r inclusion indicators."""
    state = initial_state(data).validate()
    for _ in range(burn_in):
        state = rj_step(data, state, rng)
    f_values = np.zeros((n, data.r))
    state_log = [] if log_states else None
    for t in range(n):
        state = rj_step(data, state, rng)
        f_values[t] = state.k
        if log_states:
            state_log.append((int(state.k.sum()), state.z.copy()))
    return Trace(
        f_values=f_values,
        state_log=state_log,
        meta={"sampler_id": "probit_rj", "seed": rng.seed},
    )


def load_spambase(
    path, sigma: float = 1.0, p_slab: float = 0.5, standardize: bool = True
) -> ProbitData:
    """Parse the 57-feature comma-separated spam dataset (label last).

    ``standardize`` (default on) centers every feature column and scales it
    to unit variance; the raw attribute scales differ by orders of
    magnitude. Ragged rows or non-binary labels raise with the row number.
    """
    rows = []
    labels = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
                if width < 2:
                    raise TraceParseError("need at least one feature and a label", line=lineno)
            if len(parts) != width:
                raise TraceParseError(
                    f"expected {width} comma-separated fields, found {len(parts)}",
                    line=lineno,
                )
            try:
                vals = [float(v) for v in parts]
            except ValueError:
                raise TraceParseError("non-numeric field", line=lineno)
            if vals[-1] not in (0.0, 1.0):
                raise TraceParseError(f"non-binary label {vals[-1]!r}", line=lineno)
            rows.append(vals[:-1])
            labels.append(int(vals[-1]))
    if not rows:
        raise TraceParseError("empty dataset file")
    x = np.array(rows)
    y = np.array(labels)
    if standardize:
        mean = x.mean(axis=0)
        sd = x.std(axis=0)
        if np.any(sd == 0):
            bad = int(np.flatnonzero(sd == 0)[0])
            raise TraceParseError(f"feature column {bad} is constant; cannot standardize")
        x = (x - mean) / sd
    return ProbitData(y=y, x=x, sigma=sigma, p_slab=p_slab)
