"""Simulation of aggregate count series.

A count series is a ``(T, S)`` integer array whose row ``t`` holds the number
of individuals in each state at time ``t``. An ensemble stacks ``K``
independent series into a ``(K, T, S)`` array.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import chain
from ._kernels import aggregate_steps


@dataclass
class Ensemble:
    """``K`` independent realizations sharing ``S`` and ``T``.

    ``counts`` has shape ``(K, T, S)``. Noise-free ensembles are integer;
    observations under additive noise are float (``integral`` is False).
    """

    counts: np.ndarray
    N: int | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 3:
            raise ValueError(f"ensemble counts must have shape (K, T, S), got {self.counts.shape}")

    @property
    def K(self) -> int:
        return self.counts.shape[0]

    @property
    def T(self) -> int:
        return self.counts.shape[1]

    @property
    def S(self) -> int:
        return self.counts.shape[2]

    @property
    def integral(self) -> bool:
        return np.issubdtype(self.counts.dtype, np.integer)

    def __len__(self):
        return self.K

    def __getitem__(self, k):
        return self.counts[k]


def realization_rng(seed: int, k: int) -> np.random.Generator:
    """Generator for realization ``k``; independent of how many others are drawn."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))


def _initial(P, N, T, initial):
    P = chain.check_transition_matrix(P)
    if N < 1:
        raise ValueError("N must be >= 1")
    if T < 2:
        raise ValueError("T must be >= 2")
    if initial is None:
        initial = chain.stationary_distribution(P)
    else:
        initial = chain.check_probability_vector(initial, tol=1e-10)
        if initial.shape[0] != P.shape[0]:
            raise ValueError("initial distribution has the wrong number of states")
    return P, initial


def simulate_aggregate(P, N: int, T: int, rng: np.random.Generator, initial=None) -> np.ndarray:
    """Draw ``n_1 ~ Multinomial(N, initial)`` and propagate the aggregate chain.

    ``initial`` defaults to the stationary distribution of ``P``.
    """
    P, initial = _initial(P, N, T, initial)
    n1 = rng.multinomial(N, initial).astype(np.int64)
    return aggregate_steps(P, n1, T, rng)


def simulate_individuals(P, N: int, T: int, rng: np.random.Generator, initial=None) -> np.ndarray:
    """Slow reference simulator: follow every individual and tally states.

    Same law as :func:`simulate_aggregate`, sampled by an unrelated route.
    """
    P, initial = _initial(P, N, T, initial)
    S = P.shape[0]
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = np.inf
    x = np.searchsorted(np.cumsum(initial)[:-1], rng.random(N), side="right")
    out = np.empty((T, S), dtype=np.int64)
    out[0] = np.bincount(x, minlength=S)
    for t in range(1, T):
        u = rng.random(N)
        x = (u[:, None] >= cum[x]).sum(axis=1)
        out[t] = np.bincount(x, minlength=S)
    return out


def simulate_ensemble(P, N: int, T: int, K: int, seed: int, initial=None) -> Ensemble:
    """``K`` independent aggregate series; realization ``k`` uses ``realization_rng(seed, k)``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    P, initial = _initial(P, N, T, initial)
    counts = np.empty((K, T, P.shape[0]), dtype=np.int64)
    for k in range(K):
        counts[k] = simulate_aggregate(P, N, T, realization_rng(seed, k), initial)
    return Ensemble(counts, N=N, seed=seed)


# -- CSV serialization ---------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 2**53 else repr(v)


def write_series_csv(series, path) -> None:
    """Write one ``(T, S)`` series as ``t,s1,...,sS`` with ``t`` starting at 1."""
    series = np.asarray(series)
    T, S = series.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"s{i + 1}" for i in range(S)])
        for t in range(T):
            w.writerow([t + 1] + [_fmt(v) for v in series[t]])


def read_series_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise ValueError(f"{path}: missing 't,s1,...' header")
    data = [[float(v) for v in r[1:]] for r in rows[1:] if r]
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != len(rows[0]) - 1:
        raise ValueError(f"{path}: ragged rows")
    if np.all(arr == np.round(arr)):
        return arr.astype(np.int64)
    return arr


def series_filename(k: int) -> str:
    return f"series_{k:04d}.csv"


def write_ensemble(ens: Ensemble, directory, extra: dict | None = None) -> Path:
    """One CSV per realization plus ``manifest.json`` with K, S, T, N, seed."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for k in range(ens.K):
        name = series_filename(k)
        write_series_csv(ens.counts[k], directory / name)
        files.append(name)
    manifest = {"K": ens.K, "S": ens.S, "T": ens.T, "N": ens.N, "seed": ens.seed, "files": files}
    manifest.update(ens.meta)
    if extra:
        manifest.update(extra)
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def read_ensemble(directory) -> Ensemble:
    """Load an ensemble directory; without a manifest every ``*.csv`` is a realization."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    meta = {}
    if manifest_path.exists():
        with open(manifest_path) as fh:
            meta = json.load(fh)
        files = [directory / f for f in meta.get("files", [])]
    else:
        files = sorted(directory.glob("*.csv"))
    if not files:
        raise FileNotFoundError(f"no series CSV files in {directory}")
    series = [read_series_csv(f) for f in files]
    if len({s.shape for s in series}) != 1:
        raise ValueError("realizations disagree on (T, S)")
    counts = np.stack(series)
    if any(np.issubdtype(s.dtype, np.floating) for s in series):
        counts = counts.astype(float)
    for key in ("K", "S", "T"):
        if key in meta and meta[key] != {"K": counts.shape[0], "T": counts.shape[1], "S": counts.shape[2]}[key]:
            raise ValueError(f"manifest {key}={meta[key]} does not match files")
    return Ensemble(counts, N=meta.get("N"), seed=meta.get("seed"),
                    meta={k: v for k, v in meta.items() if k not in ("K", "S", "T", "N", "seed", "files")})
