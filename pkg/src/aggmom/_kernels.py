"""Compiled inner loops. Kept separate so import of the pure-numpy API stays cheap."""
import numpy as np
from numba import njit


@njit(cache=True)
def aggregate_steps(P, n1, T, rng):
    """Propagate counts ``T - 1`` steps; each state's occupants split multinomially.

    Multinomial draws use sequential binomial conditionals.
    """
    S = P.shape[0]
    out = np.zeros((T, S), dtype=np.int64)
    out[0] = n1
    for t in range(1, T):
        for i in range(S):
            rem = out[t - 1, i]
            mass = 1.0
            for j in range(S - 1):
                if rem == 0:
                    break
                pij = P[i, j]
                if mass <= pij:
                    d = rem
                elif pij <= 0.0:
                    d = 0
                else:
                    d = rng.binomial(rem, pij / mass)
                out[t, j] += d
                rem -= d
                mass -= pij
            out[t, S - 1] += rem
    return out


@njit(cache=True)
def limle_value_and_grad(a, B, counts, weight):
    """Normalized LIMLE log-likelihood and its gradient w.r.t. softmax logits.

    ``a`` are the logits of the initial marginal, ``B`` the row logits of P,
    ``counts[t]`` the pooled recovered counts at time ``t``.
    """
    T, S = counts.shape
    mu1 = np.exp(a - a.max())
    mu1 /= mu1.sum()
    P = np.empty((S, S))
    for i in range(S):
        row = np.exp(B[i] - B[i].max())
        P[i] = row / row.sum()

    mus = np.empty((T, S))
    mus[0] = mu1
    for t in range(1, T):
        for j in range(S):
            acc = 0.0
            for i in range(S):
                acc += mus[t - 1, i] * P[i, j]
            mus[t, j] = acc

    value = 0.0
    for t in range(T):
        for i in range(S):
            if counts[t, i] > 0.0:
                value += counts[t, i] * np.log(max(mus[t, i], 1e-300))
    value /= weight

    # backward pass through mu_{t+1} = P^T mu_t
    gP = np.zeros((S, S))
    g = np.empty(S)
    for i in range(S):
        g[i] = counts[T - 1, i] / (weight * max(mus[T - 1, i], 1e-300))
    for t in range(T - 2, -1, -1):
        gprev = np.empty(S)
        for i in range(S):
            acc = 0.0
            for j in range(S):
                gP[i, j] += mus[t, i] * g[j]
                acc += P[i, j] * g[j]
            gprev[i] = acc + counts[t, i] / (weight * max(mus[t, i], 1e-300))
        g = gprev

    ga = mu1 * (g - np.dot(mu1, g))
    gB = np.empty((S, S))
    for i in range(S):
        gB[i] = P[i] * (gP[i] - np.dot(P[i], gP[i]))
    return value, ga, gB
