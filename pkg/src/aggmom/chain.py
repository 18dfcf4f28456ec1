"""Individual-level Markov chain and the population moments it induces.

Everything here is analytic: given a transition matrix ``P`` and a population
size ``N`` we compute the stationary distribution, the single and pairwise
marginals, and the first/second moments of the aggregate count process. These
serve both as building blocks for the estimators and as test oracles.

States are 0-based throughout.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import linalg

ROW_SUM_TOL = 1e-12
DIRICHLET_FLOOR = 1e-12


class NonErgodicChainError(ValueError):
    """The chain does not have a unique stationary distribution."""


def check_transition_matrix(P, tol: float = ROW_SUM_TOL) -> np.ndarray:
    """Validate a row-stochastic matrix and return it as a float array."""
    P = linalg.as_matrix(P, "P")
    if P.shape[0] != P.shape[1]:
        raise ValueError(f"transition matrix must be square, got {P.shape}")
    if np.any(P < 0):
        raise ValueError("transition matrix has negative entries")
    dev = np.max(np.abs(P.sum(axis=1) - 1.0))
    if dev > tol:
        raise ValueError(f"rows of transition matrix do not sum to 1 (max deviation {dev:.3e})")
    return P


def check_probability_vector(mu, tol: float = ROW_SUM_TOL, strict: bool = False) -> np.ndarray:
    mu = linalg.as_vector(mu, "mu")
    if np.any(mu < 0) or (strict and np.any(mu <= 0)):
        raise ValueError("probability vector must have " + ("positive" if strict else "nonnegative") + " entries")
    if abs(mu.sum() - 1.0) > tol:
        raise ValueError(f"probability vector sums to {mu.sum()!r}, not 1")
    return mu


@dataclass(frozen=True)
class Marginals:
    mu: np.ndarray
    mu_pair: np.ndarray


@dataclass(frozen=True)
class AnalyticMoments:
    """Population moments of the stationary aggregate process.

    ``Sigma0``/``Lambda0`` are the zero-lag covariance and non-central second
    moment of ``n_t``; ``Sigma1``/``Lambda1`` are the lag-one versions between
    ``n_t`` and ``n_{t+1}``.
    """

    N: int
    m: np.ndarray
    Sigma0: np.ndarray
    Sigma1: np.ndarray
    Lambda0: np.ndarray
    Lambda1: np.ndarray


def stationary_distribution(P) -> np.ndarray:
    """Solve ``pi^T P = pi^T`` with ``sum(pi) = 1``.

    The balance equations ``(P^T - I) pi = 0`` have one redundant row; it is
    replaced by the normalization constraint. A singular system means the
    chain has more than one recurrent class.
    """
    P = check_transition_matrix(P)
    S = P.shape[0]
    a = P.T - np.eye(S)
    a[-1, :] = 1.0
    b = np.zeros(S)
    b[-1] = 1.0
    try:
        pi = linalg.solve_linear(a, b)
    except linalg.SingularMatrixError as exc:
        raise NonErgodicChainError("stationary distribution is not unique") from exc
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def pairwise_marginal(P, mu) -> np.ndarray:
    """``mu_pair(i, j) = mu(i) P(i, j)``: joint law of ``(x_t, x_{t+1})``."""
    P = check_transition_matrix(P)
    mu = check_probability_vector(mu, tol=1e-10, strict=True)
    if mu.shape[0] != P.shape[0]:
        raise ValueError("mu and P disagree on the number of states")
    return mu[:, None] * P


def marginals(P) -> Marginals:
    pi = stationary_distribution(P)
    return Marginals(mu=pi, mu_pair=pi[:, None] * np.asarray(P, dtype=float))


def analytic_moments(P, N: int, mu=None) -> AnalyticMoments:
    """First and second moments of the aggregate process.

    With ``mu=None`` the chain is taken to be stationary (``mu_t = pi``).
    Passing ``mu`` gives the moments between ``n_t`` and ``n_{t+1}`` when the
    time-``t`` marginal is ``mu``; then ``m`` is the time-``t`` mean.
    """
    P = check_transition_matrix(P)
    if N < 1:
        raise ValueError("N must be >= 1")
    mu_t = stationary_distribution(P) if mu is None else check_probability_vector(mu, tol=1e-10)
    mu_next = mu_t @ P
    pair = mu_t[:, None] * P
    m = N * mu_t
    Sigma0 = N * (np.diag(mu_t) - np.outer(mu_t, mu_t))
    Sigma1 = N * (pair - np.outer(mu_t, mu_next))
    Lambda0 = N * (np.diag(mu_t) + (N - 1) * np.outer(mu_t, mu_t))
    Lambda1 = N * (pair + (N - 1) * np.outer(mu_t, mu_next))
    return AnalyticMoments(N=N, m=m, Sigma0=Sigma0, Sigma1=Sigma1, Lambda0=Lambda0, Lambda1=Lambda1)


def second_moment_inverse(mu, N: int) -> np.ndarray:
    """Closed-form inverse of ``N (diag(mu) + (N-1) mu mu^T)``.

    Sherman-Morrison applied to a diagonal plus rank-one matrix collapses to
    ``N^{-1} (diag(mu)^{-1} - (N-1)/N * 11^T)`` because ``diag(mu)^{-1} mu = 1``
    and ``1^T mu = 1``.
    """
    mu = check_probability_vector(mu, tol=1e-10, strict=True)
    S = mu.shape[0]
    return (np.diag(1.0 / mu) - (N - 1) / N * np.ones((S, S))) / N


def single_individual_autocovariance(P, i: int, j: int, k: int) -> float:
    """Autocovariance at lag ``k`` of the indicator ``[x_t = i][x_{t+1} = j]``.

    For one stationary individual this is
    ``mu(i,j) * (P^{k-1})[j, i] * P[i, j] - mu(i,j)^2``.
    """
    P = check_transition_matrix(P)
    S = P.shape[0]
    if not (0 <= i < S and 0 <= j < S):
        raise IndexError(f"state index out of range for S={S}")
    if k < 1:
        raise ValueError("lag k must be >= 1")
    pi = _cached_stationary(P.tobytes(), S)
    pair = pi[i] * P[i, j]
    Pk = np.linalg.matrix_power(P, k - 1)
    return float(pair * Pk[j, i] * P[i, j] - pair * pair)


@lru_cache(maxsize=64)
def _cached_stationary(key: bytes, S: int) -> np.ndarray:
    # sweeps over (i, j, k) reuse one chain many times
    pi = stationary_distribution(np.frombuffer(key, dtype=float).reshape(S, S))
    pi.setflags(write=False)
    return pi


def time_average_variance(gamma, T: int) -> float:
    """Variance of a length-``T`` time average of a stationary scalar process.

    ``gamma[k]`` is the autocovariance at lag ``k`` for ``k = 0..T-1``;
    negative lags follow by symmetry.
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape[0] < T:
        raise ValueError("need autocovariances for lags 0..T-1")
    lags = np.arange(T)
    weights = 1.0 - lags / T
    return float((gamma[0] + 2.0 * np.sum(weights[1:] * gamma[1:T])) / T)


def generate_random_chain(S: int, D: float, rng: np.random.Generator) -> np.ndarray:
    """Random transition matrix with Dirichlet rows of mean ``1/S`` and precision ``D``.

    Each row is a normalized vector of Gamma(D/S, 1) draws. Rows are floored at
    ``1e-12`` and renormalized so that no transition underflows to exactly zero.
    """
    if S < 2:
        raise ValueError("S must be >= 2")
    if not D > 0:
        raise ValueError("precision D must be positive")
    g = rng.standard_gamma(D / S, size=(S, S))
    sums = g.sum(axis=1, keepdims=True)
    # all-zero row from extreme underflow: fall back to uniform
    g = np.where(sums > 0, g / np.where(sums > 0, sums, 1.0), 1.0 / S)
    g = np.maximum(g, DIRICHLET_FLOOR)
    return g / g.sum(axis=1, keepdims=True)


def cls_noisy_limit(P, N: int, noise_var) -> np.ndarray:
    """Large-sample limit of least squares on observations with additive noise.

    Zero-lag second moments pick up the noise covariance while lag-one moments
    do not, so the estimator converges to ``(Lambda0 + V)^{-1} Lambda1``.
    """
    mom = analytic_moments(P, N)
    V = linalg.as_matrix(noise_var, "noise_var")
    if V.shape != mom.Lambda0.shape:
        raise ValueError(f"noise covariance shape {V.shape} does not match {mom.Lambda0.shape}")
    return linalg.invert(mom.Lambda0 + V) @ mom.Lambda1
