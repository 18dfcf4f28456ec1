"""Transition-matrix estimators for noisy aggregate count data.

All estimators take observations ``y`` shaped ``(K, T, S)`` (or a single
``(T, S)`` series, or an :class:`~aggmom.simulate.Ensemble`) and return an
:class:`EstimatedTransition` holding the raw estimate and its projection onto
row-stochastic matrices.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import chain, linalg
from .noise import NoiseModel
from .simulate import Ensemble

MARGINAL_FLOOR = 1e-12


class InsufficientDataError(ValueError):
    """Some state has (numerically) zero estimated mass, so its row is undefined."""


class LimleOptimizationError(RuntimeError):
    """Every LIMLE restart produced a non-finite objective."""


@dataclass(frozen=True)
class MomentEstimates:
    """Moments computed from data, already corrected for the noise model.

    ``m_y`` is the raw observation mean, ``mu_hat`` the normalized marginal,
    ``Sigma_hat`` the recovered lag-one covariance of the true counts.
    """

    m_y: np.ndarray
    mu_hat: np.ndarray
    Sigma_hat: np.ndarray
    T: int
    K: int

    @property
    def n_pairs(self) -> int:
        return (self.T - 1) * self.K


@dataclass
class EstimatedTransition:
    P_raw: np.ndarray
    P_projected: np.ndarray
    estimator: str
    warnings: list[str] = field(default_factory=list)
    info: dict = field(default_factory=dict)


def _observations(y) -> np.ndarray:
    if isinstance(y, Ensemble):
        y = y.counts
    y = np.asarray(y, dtype=float)
    if y.ndim == 2:
        y = y[None]
    if y.ndim != 3:
        raise ValueError(f"observations must have shape (K, T, S), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("observations contain non-finite values")
    return y


def _result(P_raw, tag, warns=(), **info) -> EstimatedTransition:
    return EstimatedTransition(
        P_raw=P_raw, P_projected=project_to_stochastic(P_raw), estimator=tag,
        warnings=list(warns), info=info,
    )


# -- projection and metrics ----------------------------------------------------

def project_to_stochastic(P_raw) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex.

    Sort-based: with ``u`` the row sorted descending, find the largest ``r``
    with ``u_r > (sum_{k<=r} u_k - 1) / r`` and shift by that threshold.
    """
    V = linalg.as_matrix(P_raw, "P_raw")
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    idx = np.arange(1, V.shape[1] + 1)
    rho = np.count_nonzero(U - css / idx > 0, axis=1)
    theta = css[np.arange(V.shape[0]), rho - 1] / rho
    return np.maximum(V - theta[:, None], 0.0)


def error_metric(P_hat, P_true) -> float:
    """Entrywise mean squared error ``||P_hat - P||_F^2 / S^2``."""
    P_hat = linalg.as_matrix(P_hat, "P_hat")
    P_true = linalg.as_matrix(P_true, "P_true")
    if P_hat.shape != P_true.shape:
        raise ValueError(f"shape mismatch {P_hat.shape} vs {P_true.shape}")
    return float(np.mean((P_hat - P_true) ** 2))


def stationary_error_metric(P_hat, P_true) -> float:
    """``||pi(P_hat) - pi(P)||^2 / S``; NaN when the projected estimate is not ergodic."""
    P_hat = project_to_stochastic(P_hat)
    try:
        pi_hat = chain.stationary_distribution(P_hat / P_hat.sum(axis=1, keepdims=True))
    except chain.NonErgodicChainError:
        return float("nan")
    pi = chain.stationary_distribution(P_true)
    return float(np.mean((pi_hat - pi) ** 2))


# -- method of moments ---------------------------------------------------------

def transition_from_moments(mu_t, mu_next, Sigma_lag, N: float) -> np.ndarray:
    """``diag(mu_t)^{-1} (Sigma_lag / N + mu_t mu_next^T)``."""
    mu_t = np.asarray(mu_t, dtype=float)
    if np.any(mu_t <= MARGINAL_FLOOR):
        bad = np.flatnonzero(mu_t <= MARGINAL_FLOOR).tolist()
        raise InsufficientDataError(f"estimated marginal is ~0 for states {bad}")
    pair = np.asarray(Sigma_lag, dtype=float) / N + np.outer(mu_t, mu_next)
    return pair / mu_t[:, None]


def transition_from_second_moments(Lambda0, Lambda1) -> np.ndarray:
    """Plug-in ``Lambda0^{-1} Lambda1``."""
    return linalg.invert(Lambda0) @ linalg.as_matrix(Lambda1, "Lambda1")


def moment_estimates(y, model: NoiseModel | None = None) -> MomentEstimates:
    """Noise-corrected mean and lag-one covariance pooled over all ``t`` and ``k``."""
    y = _observations(y)
    K, T, S = y.shape
    if T < 2:
        raise ValueError("need T >= 2 for lagged moments")
    model = model or NoiseModel.none()
    Ainv = linalg.invert(model.mean_matrix(S))
    m_y = y.mean(axis=(0, 1))
    m_n = Ainv @ m_y
    total = m_n.sum()
    if not total > 0:
        raise InsufficientDataError("recovered mean counts do not have positive total")
    r = y - m_y
    lagged = r[:, :-1].reshape(-1, S).T @ r[:, 1:].reshape(-1, S) / ((T - 1) * K)
    return MomentEstimates(m_y=m_y, mu_hat=m_n / total, Sigma_hat=Ainv @ lagged @ Ainv.T, T=T, K=K)


def estimate_mom(y, model: NoiseModel | None = None, N: float | None = None) -> EstimatedTransition:
    """Method of moments with noise correction.

    Parameters
    ----------
    y : array, shape (K, T, S)
        Observed counts.
    model : NoiseModel
        Observation model; only its conditional-mean matrix is used.
    N : float
        Population size. Defaults to the mean observed total, which is exact
        for noise-free data.
    """
    mom = moment_estimates(y, model)
    if N is None:
        N = float(_observations(y).sum(axis=2).mean())
    if not N > 0:
        raise ValueError("N must be positive")
    P_raw = transition_from_moments(mom.mu_hat, mom.mu_hat, mom.Sigma_hat, N)
    return _result(P_raw, "mom", moments=mom, N=N)


def estimate_mom_nonstationary(y, model: NoiseModel | None = None, N: float | None = None) -> EstimatedTransition:
    """Average of per-time-step moment estimates across realizations.

    For each ``t`` the marginals and lag-one covariance are estimated over the
    ``K`` realizations only, which stays valid when the marginals drift.
    Steps with a ~zero marginal entry are skipped and reported in ``warnings``.
    """
    y = _observations(y)
    K, T, S = y.shape
    if K < 2:
        raise ValueError("per-time-step moments need K >= 2 realizations")
    if T < 2:
        raise ValueError("need T >= 2")
    model = model or NoiseModel.none()
    if N is None:
        N = float(y.sum(axis=2).mean())
    Ainv = linalg.invert(model.mean_matrix(S))
    m_t = y.mean(axis=0)
    m_n = m_t @ Ainv.T
    mu = m_n / m_n.sum(axis=1, keepdims=True)
    r = y - m_t

    estimates, skipped = [], []
    for t in range(T - 1):
        cov = r[:, t].T @ r[:, t + 1] / (K - 1)
        try:
            estimates.append(transition_from_moments(mu[t], mu[t + 1], Ainv @ cov @ Ainv.T, N))
        except InsufficientDataError:
            skipped.append(t)
    if not estimates:
        raise InsufficientDataError("every time step has a state with ~zero estimated mass")
    warns = []
    if skipped:
        warns.append(f"skipped {len(skipped)} of {T - 1} time steps with ~zero marginal mass: {skipped}")
    return _result(np.mean(estimates, axis=0), "mom_nonstationary", warns, used_steps=len(estimates), N=N)


# -- conditional least squares -------------------------------------------------

def estimate_cls(y, model: NoiseModel | None = None, N: float | None = None) -> EstimatedTransition:
    """Conditional least squares ``(X^T X)^{-1} X^T Y``.

    Consecutive pairs from every realization are stacked into ``X`` (times
    ``1..T-1``) and ``Y`` (times ``2..T``). Noise is ignored by design.
    """
    y = _observations(y)
    K, T, S = y.shape
    if T < 2:
        raise ValueError("need T >= 2")
    X = y[:, :-1].reshape(-1, S)
    Y = y[:, 1:].reshape(-1, S)
    n = X.shape[0]
    return _result(transition_from_second_moments(X.T @ X / n, X.T @ Y / n), "cls")


# -- baselines -----------------------------------------------------------------

def estimate_naive(y, model: NoiseModel | None = None, N: float | None = None) -> EstimatedTransition:
    """Every row set to the estimated stationary distribution."""
    y = _observations(y)
    S = y.shape[2]
    model = model or NoiseModel.none()
    m_n = linalg.invert(model.mean_matrix(S)) @ y.mean(axis=(0, 1))
    if not m_n.sum() > 0:
        raise InsufficientDataError("recovered mean counts do not have positive total")
    pi_hat = m_n / m_n.sum()
    return _result(np.tile(pi_hat, (S, 1)), "naive")


@dataclass(frozen=True)
class LimleOptions:
    """Optimizer settings for :func:`estimate_limle`.

    ``method`` is ``"lbfgs"`` (default) or ``"gradient"`` for plain gradient
    ascent with fixed ``step``. Convergence: objective gains below ``tol``
    over ``patience`` iterations.
    """

    method: str = "lbfgs"
    restarts: int = 8
    max_iter: int = 2000
    step: float = 0.1
    tol: float = 1e-9
    patience: int = 10
    init_scale: float = 1.0


def _limle_counts(y, model, S):
    Ainv = linalg.invert(model.mean_matrix(S))
    n_tilde = np.clip(y @ Ainv.T, 0.0, None)
    return n_tilde.sum(axis=0)


def _gradient_ascent(fg, x0, opts):
    x = x0.copy()
    value, grad = fg(x)
    history = [value]
    it = 0
    for it in range(1, opts.max_iter + 1):
        x_new = x + opts.step * grad
        v_new, g_new = fg(x_new)
        if not np.isfinite(v_new):
            return x, float("nan"), it
        x, value, grad = x_new, v_new, g_new
        history.append(value)
        if len(history) > opts.patience and history[-1] - history[-1 - opts.patience] < opts.tol:
            break
    return x, value, it


def _lbfgs(fg, x0, opts):
    from scipy.optimize import minimize

    def neg(x):
        v, g = fg(x)
        if not np.isfinite(v):
            return np.inf, np.zeros_like(x)
        return -v, -g

    res = minimize(neg, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": opts.max_iter, "ftol": opts.tol, "gtol": 1e-10})
    return res.x, -float(res.fun), int(res.nit)


def estimate_limle(y, model: NoiseModel | None = None, N: float | None = None,
                   seed: int = 0, options: LimleOptions | None = None) -> EstimatedTransition:
    """Limited-information maximum likelihood.

    Treats each ``n_t`` as an independent Multinomial(N, mu_t) draw with
    ``mu_t^T = mu_1^T P^{t-1}`` and maximizes the pooled log-likelihood of the
    recovered counts ``max(A^{-1} y, 0)`` over ``(mu_1, P)``, both
    softmax-parameterized. The objective is divided by the total recovered
    count, which leaves the maximizer unchanged. ``N`` does not enter.
    """
    from ._kernels import limle_value_and_grad

    y = _observations(y)
    K, T, S = y.shape
    model = model or NoiseModel.none()
    opts = options or LimleOptions()
    if T == 1:
        P_raw = np.full((S, S), 1.0 / S)
        msg = "T=1: transition matrix is not identified; returning uniform P"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        return _result(P_raw, "limle", [msg])
    counts = np.ascontiguousarray(_limle_counts(y, model, S))
    weight = counts.sum()
    if not weight > 0:
        raise InsufficientDataError("recovered counts are all zero")

    def fg(x):
        v, ga, gB = limle_value_and_grad(x[:S], x[S:].reshape(S, S), counts, weight)
        return v, np.concatenate([ga, gB.ravel()])

    run = _lbfgs if opts.method == "lbfgs" else _gradient_ascent
    if opts.method not in ("lbfgs", "gradient"):
        raise ValueError(f"unknown LIMLE method {opts.method!r}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(opts.restarts):
        x0 = opts.init_scale * rng.standard_normal(S + S * S)
        x, value, iters = run(fg, x0, opts)
        if np.isfinite(value) and (best is None or value > best[1]):
            best = (x, value, iters)
    if best is None:
        raise LimleOptimizationError("all LIMLE restarts diverged")
    B = best[0][S:].reshape(S, S)
    P_raw = np.exp(B - B.max(axis=1, keepdims=True))
    P_raw /= P_raw.sum(axis=1, keepdims=True)
    return _result(P_raw, "limle", objective=best[1], iterations=best[2])


ESTIMATORS = {
    "mom": estimate_mom,
    "cls": estimate_cls,
    "limle": estimate_limle,
    "naive": estimate_naive,
    "mom_nonstationary": estimate_mom_nonstationary,
}
