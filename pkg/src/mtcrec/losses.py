"""Risk functions for the multitask playlist ranking model.

The scorer is f(m, u, i) = (alpha_u + beta_i + mu) . x_m. This module
provides the exact bottom-push 0/1 ranking risk, its exponential surrogate,
the log-sum-exp smoothed ranking risk, the classification risk used for
training together with its analytic gradient, and the mixed L2/L1
regulariser.

All exponential sums run through max-shifted log-sum-exp, and raw scores
are clamped to [-SCORE_CLAMP, SCORE_CLAMP] before exponentiation; a
module-level counter records how many scores were clamped so runs can
report it.
"""

from __future__ import annotations

import concurrent.futures
import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .corpus import Corpus, Membership
from .errors import OverflowGuardError
from .features import FeatureMatrix

SCORE_CLAMP = 50.0
_LOG_GUARD = 700.0  # exp() beyond this overflows float64

_clamp_events = 0
_clamp_lock = threading.Lock()
_n_threads = 1


def clamp_events() -> int:
    """Number of scores clamped since the last reset."""
    return _clamp_events


def reset_clamp_events() -> None:
    global _clamp_events
    _clamp_events = 0


def set_threads(n: int) -> None:
    """Cap the per-playlist worker count (1 disables threading)."""
    global _n_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _n_threads = int(n)


def get_threads() -> int:
    return _n_threads


@dataclass(frozen=True)
class Hyperparams:
    """Regularisation constants and the push exponent."""

    lambda1: float = 0.0
    lambda2: float = 0.0
    lambda3: float = 0.0
    p: float = 1.0

    def __post_init__(self):
        lams = (self.lambda1, self.lambda2, self.lambda3)
        if not all(math.isfinite(v) and v >= 0 for v in lams):
            raise ValueError(f"regularisation constants must be finite and nonnegative, got {lams}")
        if not (math.isfinite(self.p) and self.p > 0):
            raise ValueError(f"push exponent must be positive, got {self.p}")


class ModelParams:
    """Per-user weights alpha (U x D), per-playlist weights beta (N x D)
    and shared weights mu (D,)."""

    def __init__(self, alpha: np.ndarray, beta: np.ndarray, mu: np.ndarray):
        alpha = np.asarray(alpha, dtype=np.float64)
        beta = np.asarray(beta, dtype=np.float64)
        mu = np.asarray(mu, dtype=np.float64)
        if alpha.ndim != 2 or beta.ndim != 2 or mu.ndim != 1:
            raise ValueError("alpha/beta must be matrices and mu a vector")
        if alpha.shape[1] != mu.size or beta.shape[1] != mu.size:
            raise ValueError("alpha, beta and mu disagree on feature dimension")
        if not (np.isfinite(alpha).all() and np.isfinite(beta).all() and np.isfinite(mu).all()):
            raise ValueError("model parameters must be finite")
        self.alpha = alpha
        self.beta = beta
        self.mu = mu

    @classmethod
    def zeros(cls, n_users: int, n_playlists: int, dim: int) -> "ModelParams":
        return cls(np.zeros((n_users, dim)), np.zeros((n_playlists, dim)), np.zeros(dim))

    @property
    def n_users(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_playlists(self) -> int:
        return self.beta.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.size

    def copy(self) -> "ModelParams":
        return ModelParams(self.alpha.copy(), self.beta.copy(), self.mu.copy())

    def pack(self) -> np.ndarray:
        """Flatten to a single vector in (alpha, beta, mu) order."""
        return np.concatenate([self.alpha.ravel(), self.beta.ravel(), self.mu])

    @classmethod
    def unpack(cls, x: np.ndarray, n_users: int, n_playlists: int, dim: int) -> "ModelParams":
        x = np.asarray(x, dtype=np.float64)
        if x.size != (n_users + n_playlists + 1) * dim:
            raise ValueError("packed vector length mismatch")
        a = x[: n_users * dim].reshape(n_users, dim)
        b = x[n_users * dim : (n_users + n_playlists) * dim].reshape(n_playlists, dim)
        return cls(a, b, x[(n_users + n_playlists) * dim :])


@dataclass(frozen=True)
class RiskBreakdown:
    total: float
    per_playlist: np.ndarray


def score(theta: ModelParams, x: FeatureMatrix, m: int, u: int, i: int) -> float:
    """Affinity of song ``m`` for playlist ``i`` of user ``u``."""
    w = theta.alpha[u] + theta.beta[i] + theta.mu
    return float(w @ x.row(m))


def _playlist_scores(theta: ModelParams, x: FeatureMatrix, u: int, i: int) -> np.ndarray:
    return x.values @ (theta.alpha[u] + theta.beta[i] + theta.mu)


def _clamp(f: np.ndarray) -> np.ndarray:
    global _clamp_events
    clipped = np.clip(f, -SCORE_CLAMP, SCORE_CLAMP)
    n = int(np.count_nonzero(clipped != f))
    if n:
        with _clamp_lock:
            _clamp_events += n
    return clipped


def _guarded_exp(log_term: float, what: str) -> float:
    if log_term > _LOG_GUARD:
        raise OverflowGuardError(f"{what} overflows: log magnitude {log_term:.1f} > {_LOG_GUARD}")
    return math.exp(log_term)


def bottom_push_risk(scores: np.ndarray, membership: Membership) -> float:
    """Fraction of negatives scored at or above the lowest-scored positive.

    Ties count as violations (the indicator is <=).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if membership.n_pos < 1 or membership.n_neg < 1:
        raise ValueError("bottom-push risk needs at least one positive and one negative")
    mask = membership.mask()
    lowest_pos = scores[mask].min()
    violations = int(np.count_nonzero(scores[~mask] >= lowest_pos))
    return violations / membership.n_neg


def _foreach_playlist(corpus: Corpus, fn) -> list:
    """Apply ``fn(i, u, members)`` per playlist, optionally threaded;
    results are always collected in ascending playlist order."""
    args = [(i, int(corpus.playlist_owner[i]), corpus.playlist_members[i]) for i in range(corpus.n_playlists)]
    if _n_threads == 1 or corpus.n_playlists < 2:
        return [fn(*a) for a in args]
    with concurrent.futures.ThreadPoolExecutor(max_workers=_n_threads) as pool:
        return list(pool.map(lambda a: fn(*a), args))


def rank_risk_surrogate(theta: ModelParams, x: FeatureMatrix, corpus: Corpus, breakdown: bool = False):
    """Exponential surrogate of the bottom-push ranking risk, with the
    exact minimum over positives."""

    def term(i, u, members):
        f = _clamp(_playlist_scores(theta, x, u, i))
        mask = np.zeros(f.size, dtype=bool)
        mask[members] = True
        m_neg = f.size - members.size
        log_term = logsumexp(f[~mask]) - f[mask].min() - math.log(m_neg)
        return _guarded_exp(log_term, "ranking surrogate term")

    per = np.array(_foreach_playlist(corpus, term))
    total = float(per.mean())
    return RiskBreakdown(total, per) if breakdown else total


def rank_risk_lse(theta: ModelParams, x: FeatureMatrix, corpus: Corpus, p: float, breakdown: bool = False):
    """Log-sum-exp smoothed ranking risk; converges to the exact-min
    surrogate from above as p grows."""
    if p <= 0:
        raise ValueError("p must be positive")

    def term(i, u, members):
        f = _clamp(_playlist_scores(theta, x, u, i))
        mask = np.zeros(f.size, dtype=bool)
        mask[members] = True
        m_neg = f.size - members.size
        log_neg = logsumexp(f[~mask])
        log_pos_pow = logsumexp(-p * f[mask]) / p
        return _guarded_exp(log_neg + log_pos_pow - math.log(m_neg), "smoothed ranking term")

    per = np.array(_foreach_playlist(corpus, term))
    total = float(per.mean())
    return RiskBreakdown(total, per) if breakdown else total


def rank_risk_lse_grad(theta: ModelParams, x: FeatureMatrix, corpus: Corpus, p: float):
    """Value and gradient of the smoothed ranking risk.

    Used for stationarity checks; training goes through the classification
    risk instead.
    """
    if p <= 0:
        raise ValueError("p must be positive")
    n = corpus.n_playlists
    grad_a = np.zeros_like(theta.alpha)
    grad_b = np.zeros_like(theta.beta)
    grad_mu = np.zeros_like(theta.mu)

    def term(i, u, members):
        raw = _playlist_scores(theta, x, u, i)
        f = _clamp(raw)
        inside = np.abs(raw) < SCORE_CLAMP
        mask = np.zeros(f.size, dtype=bool)
        mask[members] = True
        m_neg = f.size - members.size
        log_neg = logsumexp(f[~mask])
        log_pos_pow = logsumexp(-p * f[mask]) / p
        t_i = _guarded_exp(log_neg + log_pos_pow - math.log(m_neg), "smoothed ranking term")
        # weighted feature means; clamped scores contribute no gradient
        w_neg = softmax(f[~mask]) * inside[~mask]
        w_pos = softmax(-p * f[mask]) * inside[mask]
        mean_neg = x.values[~mask].T @ w_neg
        mean_pos = x.values[mask].T @ w_pos
        return t_i, (t_i / n) * (mean_neg - mean_pos)

    per = []
    for i in range(n):
        u = int(corpus.playlist_owner[i])
        t_i, g_i = term(i, u, corpus.playlist_members[i])
        per.append(t_i)
        grad_b[i] += g_i
        grad_a[u] += g_i
        grad_mu += g_i
    value = float(np.mean(per))
    grad = ModelParams(grad_a, grad_b, grad_mu)
    return value, grad


def mtc_risk(theta: ModelParams, x: FeatureMatrix, corpus: Corpus, p: float, breakdown: bool = False):
    """Classification risk: exponential losses on positives (pushed by p)
    and negatives, averaged over playlists."""
    if p <= 0:
        raise ValueError("p must be positive")

    def term(i, u, members):
        f = _clamp(_playlist_scores(theta, x, u, i))
        mask = np.zeros(f.size, dtype=bool)
        mask[members] = True
        m_pos = members.size
        m_neg = f.size - m_pos
        pos = _guarded_exp(logsumexp(-p * f[mask]) - math.log(p * m_pos), "positive classification term")
        neg = _guarded_exp(logsumexp(f[~mask]) - math.log(m_neg), "negative classification term")
        return pos + neg

    per = np.array(_foreach_playlist(corpus, term))
    total = float(per.mean())
    return RiskBreakdown(total, per) if breakdown else total


def mtc_risk_grad(theta: ModelParams, x: FeatureMatrix, corpus: Corpus, p: float):
    """Classification risk value together with its analytic gradient.

    The per-playlist gradient with respect to the effective weights
    w = alpha_u + beta_i + mu is accumulated into beta_i, alpha_u and mu.
    """
    if p <= 0:
        raise ValueError("p must be positive")
    n = corpus.n_playlists
    grad_a = np.zeros_like(theta.alpha)
    grad_b = np.zeros_like(theta.beta)
    grad_mu = np.zeros_like(theta.mu)

    def term(i, u, members):
        raw = _playlist_scores(theta, x, u, i)
        f = _clamp(raw)
        inside = np.abs(raw) < SCORE_CLAMP
        mask = np.zeros(f.size, dtype=bool)
        mask[members] = True
        m_pos = members.size
        m_neg = f.size - m_pos

        a_pos = -p * f[mask]
        shift_pos = a_pos.max()
        sum_pos = np.exp(a_pos - shift_pos).sum()
        a_neg = f[~mask]
        shift_neg = a_neg.max()
        sum_neg = np.exp(a_neg - shift_neg).sum()

        val = _guarded_exp(shift_pos + math.log(sum_pos) - math.log(p * m_pos), "positive classification term")
        val += _guarded_exp(shift_neg + math.log(sum_neg) - math.log(m_neg), "negative classification term")

        with np.errstate(over="ignore"):
            w_pos = np.exp(a_pos - shift_pos) * np.exp(shift_pos) / m_pos * inside[mask]
            w_neg = np.exp(a_neg - shift_neg) * np.exp(shift_neg) / m_neg * inside[~mask]
        g = (x.values[~mask].T @ w_neg - x.values[mask].T @ w_pos) / n
        return val, g

    per = np.empty(n)
    results = _foreach_playlist(corpus, term)
    for i, (val, g) in enumerate(results):
        per[i] = val
        u = int(corpus.playlist_owner[i])
        grad_b[i] += g
        grad_a[u] += g
        grad_mu += g
    if not (np.isfinite(grad_a).all() and np.isfinite(grad_b).all() and np.isfinite(grad_mu).all()):
        raise OverflowGuardError("classification gradient overflowed")
    return float(per.mean()), ModelParams(grad_a, grad_b, grad_mu)


def regulariser(theta: ModelParams, hp: Hyperparams):
    """Smooth L2 part on alpha plus per-coordinate L1 weights.

    Returns ``(smooth_value, smooth_gradient, l1_weights)`` where the L1
    weights follow the pack() coordinate order: 0 for alpha coordinates,
    lambda2 for beta, lambda3 for mu. The L1 term itself is handled by the
    optimiser, not differentiated here.
    """
    smooth = hp.lambda1 * float(np.sum(theta.alpha * theta.alpha))
    grad = ModelParams(2.0 * hp.lambda1 * theta.alpha, np.zeros_like(theta.beta), np.zeros_like(theta.mu))
    l1 = np.concatenate(
        [
            np.zeros(theta.alpha.size),
            np.full(theta.beta.size, hp.lambda2),
            np.full(theta.mu.size, hp.lambda3),
        ]
    )
    return smooth, grad, l1
