"""Observation models ``p(y | n)`` with a linear conditional mean ``E[y | n] = A n``.

Only the conditional-mean matrix ``A`` is needed to undo the noise in the
mean and in lagged (lag >= 1) second moments; zero-lag moments are not
recoverable this way and are never touched here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg

KINDS = ("none", "binomial", "poisson", "gaussian", "laplace", "state_binomial")


class DegenerateTotalsError(ValueError):
    """Observed totals are not under-dispersed, so binomial moment matching fails."""


@dataclass(frozen=True)
class NoiseModel:
    """A noise model.

    ``param`` is alpha for binomial/poisson, the variance for gaussian, the
    scale ``b`` for laplace (variance ``2 b^2``), and a tuple of per-state
    detection probabilities for state_binomial.
    """

    kind: str = "none"
    param: float | tuple[float, ...] | None = None

    def __post_init__(self):
        kind, p = self.kind, self.param
        if kind not in KINDS:
            raise ValueError(f"unknown noise kind {kind!r}; expected one of {KINDS}")
        if kind == "none":
            if p is not None:
                raise ValueError("noise kind 'none' takes no parameter")
        elif kind == "state_binomial":
            if p is None or np.ndim(p) != 1 or len(p) == 0:
                raise ValueError("state_binomial needs a sequence of detection probabilities")
            p = tuple(float(a) for a in p)
            if not all(0.0 < a <= 1.0 for a in p):
                raise ValueError("state_binomial probabilities must lie in (0, 1]")
            object.__setattr__(self, "param", p)
        else:
            if p is None or np.ndim(p) != 0:
                raise ValueError(f"{kind} noise needs a scalar parameter")
            p = float(p)
            if not np.isfinite(p):
                raise ValueError("noise parameter must be finite")
            if kind == "binomial" and not 0.0 < p <= 1.0:
                raise ValueError("binomial alpha must lie in (0, 1]")
            if kind == "poisson" and not p > 0.0:
                raise ValueError("poisson alpha must be positive")
            if kind in ("gaussian", "laplace") and p < 0.0:
                raise ValueError(f"{kind} noise parameter must be >= 0")
            object.__setattr__(self, "param", p)

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def binomial(cls, alpha):
        return cls("binomial", alpha)

    @classmethod
    def poisson(cls, alpha):
        return cls("poisson", alpha)

    @classmethod
    def gaussian(cls, sigma2):
        return cls("gaussian", sigma2)

    @classmethod
    def laplace(cls, b):
        return cls("laplace", b)

    @classmethod
    def state_binomial(cls, alphas):
        return cls("state_binomial", tuple(alphas))

    def mean_matrix(self, S: int) -> np.ndarray:
        """The matrix ``A`` with ``E[y_t | n_t] = A n_t``."""
        if self.kind == "state_binomial":
            if len(self.param) != S:
                raise ValueError(f"state_binomial has {len(self.param)} probabilities, data has S={S}")
            return np.diag(self.param)
        if self.kind in ("binomial", "poisson"):
            return self.param * np.eye(S)
        return np.eye(S)

    def noise_variance(self, S: int) -> np.ndarray:
        """Covariance of additive noise; defined for additive models only."""
        if self.kind == "gaussian":
            return self.param * np.eye(S)
        if self.kind == "laplace":
            return 2.0 * self.param**2 * np.eye(S)
        if self.kind == "none":
            return np.zeros((S, S))
        raise ValueError(f"{self.kind} noise is not additive")

    @property
    def param_str(self) -> str:
        if self.param is None:
            return ""
        if isinstance(self.param, tuple):
            return ";".join(repr(a) for a in self.param)
        return repr(self.param)

    def __str__(self):
        return self.kind if self.param is None else f"{self.kind}:{self.param_str.replace(';', ',')}"


def parse_noise(text: str) -> NoiseModel:
    """Parse ``KIND[:PARAM[,PARAM...]]``, e.g. ``binomial:0.5`` or ``state_binomial:0.9,0.5``."""
    text = text.strip()
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    if kind == "none":
        if rest.strip():
            raise ValueError("noise kind 'none' takes no parameter")
        return NoiseModel.none()
    if not rest.strip():
        raise ValueError(f"noise kind {kind!r} needs a parameter")
    values = [float(v) for v in rest.replace(";", ",").split(",") if v.strip()]
    if kind == "state_binomial":
        return NoiseModel.state_binomial(values)
    if len(values) != 1:
        raise ValueError(f"noise kind {kind!r} takes exactly one parameter")
    return NoiseModel(kind, values[0])


def apply_noise(model: NoiseModel, counts, rng: np.random.Generator) -> np.ndarray:
    """Draw observations ``y`` given true counts, independently per entry.

    Works on any array whose last axis indexes states. Thinning models keep
    integer output; additive models return floats.
    """
    n = np.asarray(counts)
    kind, p = model.kind, model.param
    if kind in ("binomial", "state_binomial"):
        if not np.issubdtype(n.dtype, np.integer):
            if np.any(n != np.round(n)):
                raise ValueError(f"{kind} noise needs integer counts")
            n = n.astype(np.int64)
        if np.any(n < 0):
            raise ValueError(f"{kind} noise needs nonnegative counts")
    if kind == "none":
        return n.copy()
    if kind == "binomial":
        return n.copy() if p == 1.0 else rng.binomial(n, p)
    if kind == "state_binomial":
        if len(p) != n.shape[-1]:
            raise ValueError("state_binomial probabilities do not match the number of states")
        return rng.binomial(n, np.asarray(p))
    if kind == "poisson":
        if np.any(n < 0):
            raise ValueError("poisson noise needs nonnegative counts")
        return rng.poisson(p * n)
    if kind == "gaussian":
        y = n.astype(float)
        if p > 0:
            y = y + rng.normal(0.0, np.sqrt(p), size=n.shape)
        return y
    # laplace
    y = n.astype(float)
    if p > 0:
        y = y + rng.laplace(0.0, p, size=n.shape)
    return y


def _inverse_mean_matrix(model: NoiseModel, S: int) -> np.ndarray:
    return linalg.invert(model.mean_matrix(S))


def recover_mean(model: NoiseModel, y_mean) -> np.ndarray:
    """``E[n] = A^{-1} E[y]``."""
    y_mean = linalg.as_vector(y_mean, "y_mean")
    return _inverse_mean_matrix(model, y_mean.shape[0]) @ y_mean


def recover_lagged_cov(model: NoiseModel, cov_y) -> np.ndarray:
    """``Cov(n_s, n_t) = A^{-1} Cov(y_s, y_t) A^{-T}`` for ``s != t``.

    Do not pass zero-lag covariances: the noise's own variance is not removed.
    """
    cov_y = linalg.as_matrix(cov_y, "cov_y")
    if cov_y.shape[0] != cov_y.shape[1]:
        raise ValueError("lagged covariance must be square")
    Ainv = _inverse_mean_matrix(model, cov_y.shape[0])
    return Ainv @ cov_y @ Ainv.T


def recover_lagged_second_moment(model: NoiseModel, lambda_y) -> np.ndarray:
    """``E[n_s n_t^T] = A^{-1} E[y_s y_t^T] A^{-T}`` for ``s != t``."""
    return recover_lagged_cov(model, lambda_y)


def estimate_binomial_params(totals) -> tuple[float, float]:
    """Moment-matching estimate of ``(N, alpha)`` from iid Binomial(N, alpha) totals.

    ``alpha = 1 - var/mean`` and ``N = mean/alpha``, with the unbiased sample
    variance.
    """
    z = np.asarray(totals, dtype=float).ravel()
    if z.size < 2:
        raise ValueError("need at least two totals")
    m = z.mean()
    v = z.var(ddof=1)
    if not m > 0 or v >= m:
        raise DegenerateTotalsError(
            f"sample variance {v:.4g} is not below sample mean {m:.4g}; totals are not binomial-like"
        )
    alpha = 1.0 - v / m
    return m / alpha, alpha
