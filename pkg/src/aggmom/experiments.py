"""Seeded estimation sweeps, TK aggregation and log-log slope fits.

A sweep visits every cell ``(N, T, K, trial)`` of the configured grid. Within
a cell one ensemble of true counts is simulated and reused for every noise
level and estimator. The chain depends only on ``(master_seed, trial)``, so
trial ``i`` uses the same chain in every cell.
"""
from __future__ import annotations

import csv
import math
import os
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import chain, noise, simulate
from .estimators import ESTIMATORS, LimleOptions, error_metric, stationary_error_metric

NOISE_PARAM_KEYS = {
    "binomial": "noise.alpha",
    "poisson": "noise.alpha",
    "gaussian": "noise.sigma2",
    "laplace": "noise.b",
    "state_binomial": "noise.alphas",
}

MIN_T = {"mom": 2, "cls": 2, "limle": 1, "naive": 1, "mom_nonstationary": 2}
MIN_K = {"mom_nonstationary": 2}


class ConfigError(ValueError):
    pass


class InsufficientPointsError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    S: int = 10
    D: float = 0.5
    N_list: tuple[int, ...] = (100,)
    T_list: tuple[int, ...] = (10, 100, 1000, 10000)
    K_list: tuple[int, ...] = (1, 2, 5, 10, 20, 50)
    TK_list: tuple[int, ...] | None = None
    noise_kind: str = "none"
    noise_params: tuple = ()
    estimators: tuple[str, ...] = ("mom", "cls")
    trials: int = 10
    master_seed: int = 0
    estimate_params: bool = False
    initial_distribution: tuple[float, ...] | None = None
    record_timing: bool = False
    min_stationary_mass: float = 0.0
    limle: LimleOptions = field(default_factory=LimleOptions)

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.S < 2:
            raise ConfigError("S must be >= 2")
        if not self.D > 0:
            raise ConfigError("D must be positive")
        if not self.N_list or min(self.N_list) < 1:
            raise ConfigError("N values must be >= 1")
        if not self.T_list or not self.K_list:
            raise ConfigError("T_list and K_list must be non-empty")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            raise ConfigError(f"unknown estimators {sorted(unknown)}; choose from {sorted(ESTIMATORS)}")
        for est in self.estimators:
            if min(self.T_list) < MIN_T[est]:
                raise ConfigError(f"estimator {est} needs T >= {MIN_T[est]}")
            if min(self.K_list) < MIN_K.get(est, 1):
                raise ConfigError(f"estimator {est} needs K >= {MIN_K[est]}")
        if not 0.0 <= self.min_stationary_mass < 1.0 / self.S:
            raise ConfigError("min_stationary_mass must lie in [0, 1/S)")
        if self.initial_distribution is not None and len(self.initial_distribution) != self.S:
            raise ConfigError("initial_distribution must have S entries")
        self.noise_models()  # validates
        if self.estimate_params and self.noise_kind not in ("binomial", "none"):
            raise ConfigError("estimate_params applies to binomial (or no) noise only")

    def noise_models(self) -> list[noise.NoiseModel]:
        try:
            if self.noise_kind == "none":
                return [noise.NoiseModel.none()]
            if self.noise_kind == "state_binomial":
                if len(self.noise_params) != self.S:
                    raise ConfigError("noise.alphas must have S entries")
                return [noise.NoiseModel.state_binomial(self.noise_params)]
            if not self.noise_params:
                raise ConfigError(f"missing {NOISE_PARAM_KEYS.get(self.noise_kind, 'noise parameter')}")
            return [noise.NoiseModel(self.noise_kind, p) for p in self.noise_params]
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def cells(self) -> list[tuple[int, int, int, int]]:
        out = []
        for N in self.N_list:
            for T in self.T_list:
                for K in self.K_list:
                    if self.TK_list is not None and T * K not in self.TK_list:
                        continue
                    for trial in range(self.trials):
                        out.append((N, T, K, trial))
        return out


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(float(x)) for x in v.split(",") if x.strip())


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(",") if x.strip())


def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat ``key=value`` lines; ``#`` starts a comment."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value

    kw: dict = {}
    limle_kw: dict = {}
    kind = raw.pop("noise.kind", "none").lower()
    kw["noise_kind"] = kind
    try:
        for key, value in raw.items():
            if key == "S":
                kw["S"] = int(value)
            elif key == "D":
                kw["D"] = float(value)
            elif key in ("N", "N_list"):
                kw["N_list"] = _ints(value)
            elif key in ("T", "T_list"):
                kw["T_list"] = _ints(value)
            elif key in ("K", "K_list"):
                kw["K_list"] = _ints(value)
            elif key == "TK_list":
                kw["TK_list"] = _ints(value)
            elif key == "estimators":
                kw["estimators"] = tuple(e.strip() for e in value.split(",") if e.strip())
            elif key == "trials":
                kw["trials"] = int(value)
            elif key in ("master_seed", "seed"):
                kw["master_seed"] = int(value)
            elif key == "estimate_params":
                kw["estimate_params"] = _bool(value)
            elif key == "record_timing":
                kw["record_timing"] = _bool(value)
            elif key == "min_stationary_mass":
                kw["min_stationary_mass"] = float(value)
            elif key == "initial_distribution":
                kw["initial_distribution"] = _floats(value)
            elif key.startswith("noise."):
                if NOISE_PARAM_KEYS.get(kind) != key:
                    raise ConfigError(f"key {key!r} does not apply to noise.kind={kind}")
                kw["noise_params"] = _floats(value)
            elif key.startswith("limle."):
                name = key[len("limle."):]
                if name == "method":
                    limle_kw[name] = value
                elif name in ("restarts", "max_iter", "patience"):
                    limle_kw[name] = int(value)
                elif name in ("step", "tol", "init_scale"):
                    limle_kw[name] = float(value)
                else:
                    raise ConfigError(f"unknown LIMLE option {key!r}")
            else:
                raise ConfigError(f"unknown config key {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if limle_kw:
        kw["limle"] = LimleOptions(**limle_kw)
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# -- records -------------------------------------------------------------------

@dataclass
class ExperimentRecord:
    S: int
    D: float
    N: int
    T: int
    K: int
    noise_kind: str
    noise_param: str
    estimator: str
    trial: int
    seed: int
    mse_raw: float = math.nan
    mse_projected: float = math.nan
    stat_err: float = math.nan
    wall_ms: float = math.nan
    status: str = "ok"
    N_hat: float = math.nan
    alpha_hat: float = math.nan

    @property
    def TK(self) -> int:
        return self.T * self.K

    @property
    def ok(self) -> bool:
        return self.status == "ok"


RECORD_FIELDS = [f.name for f in fields(ExperimentRecord)]
_INT_FIELDS = {"S", "N", "T", "K", "trial", "seed"}
_STR_FIELDS = {"noise_kind", "noise_param", "estimator", "status"}


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def write_records_csv(records, path_or_file) -> None:
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            d = asdict(r)
            w.writerow([_cell(d[k]) for k in RECORD_FIELDS])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)


def read_records_csv(path) -> list[ExperimentRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RECORD_FIELDS[:15]) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: records CSV lacks columns {sorted(missing)}")
        out = []
        for row in reader:
            kw = {}
            for k in RECORD_FIELDS:
                v = row.get(k, "")
                if k in _STR_FIELDS:
                    kw[k] = v
                elif k in _INT_FIELDS:
                    kw[k] = int(v)
                else:
                    kw[k] = float(v) if v != "" else math.nan
            out.append(ExperimentRecord(**kw))
    return out


# -- sweep ---------------------------------------------------------------------

MAX_CHAIN_DRAWS = 10_000


def trial_chain(config: ExperimentConfig, trial: int) -> np.ndarray:
    """The transition matrix used by ``trial`` in every cell of a sweep.

    With ``min_stationary_mass > 0`` draws are repeated from the same stream
    until every stationary probability reaches the threshold.
    """
    rng = np.random.default_rng(np.random.SeedSequence(config.master_seed, spawn_key=(0, trial)))
    for _ in range(MAX_CHAIN_DRAWS):
        P = chain.generate_random_chain(config.S, config.D, rng)
        if config.min_stationary_mass <= 0.0:
            return P
        if chain.stationary_distribution(P).min() >= config.min_stationary_mass:
            return P
    raise RuntimeError(f"no chain with min stationary mass >= {config.min_stationary_mass} "
                       f"in {MAX_CHAIN_DRAWS} draws")


def cell_seed(config: ExperimentConfig, N: int, T: int, K: int, trial: int) -> int:
    ss = np.random.SeedSequence(config.master_seed, spawn_key=(1, N, T, K, trial))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _failed_tag(exc: BaseException) -> str:
    return f"failed:{type(exc).__name__}"


def run_cell(config: ExperimentConfig, cell) -> list[ExperimentRecord]:
    N, T, K, trial = cell
    seed = cell_seed(config, N, T, K, trial)
    base = dict(S=config.S, D=config.D, N=N, T=T, K=K, trial=trial, seed=seed)
    models = config.noise_models()
    records: list[ExperimentRecord] = []

    def fail_all(model, tag):
        for est in config.estimators:
            records.append(ExperimentRecord(noise_kind=model.kind, noise_param=model.param_str,
                                            estimator=est, status=tag, **base))

    try:
        P = trial_chain(config, trial)
        ens = simulate.simulate_ensemble(P, N, T, K, seed, config.initial_distribution)
    except Exception as exc:  # noqa: BLE001 - recorded, never aborts the sweep
        for m in models:
            fail_all(m, _failed_tag(exc))
        return records

    for level, model in enumerate(models):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, level)))
        y = noise.apply_noise(model, ens.counts, rng)
        use_model, use_N = model, float(N)
        N_hat = alpha_hat = math.nan
        if config.estimate_params:
            try:
                N_hat, alpha_hat = noise.estimate_binomial_params(y.sum(axis=2))
            except Exception as exc:  # noqa: BLE001
                fail_all(model, _failed_tag(exc))
                continue
            use_N = N_hat
            use_model = noise.NoiseModel.binomial(min(alpha_hat, 1.0))
        for est in config.estimators:
            rec = ExperimentRecord(noise_kind=model.kind, noise_param=model.param_str, estimator=est,
                                   N_hat=N_hat, alpha_hat=alpha_hat, **base)
            t0 = time.perf_counter()
            try:
                if est == "limle":
                    res = ESTIMATORS[est](y, use_model, use_N, seed=seed, options=config.limle)
                else:
                    res = ESTIMATORS[est](y, use_model, use_N)
                rec.mse_raw = error_metric(res.P_raw, P)
                rec.mse_projected = error_metric(res.P_projected, P)
                rec.stat_err = stationary_error_metric(res.P_projected, P)
                if not math.isfinite(rec.mse_raw):
                    rec.status = "failed:NonFiniteEstimate"
            except Exception as exc:  # noqa: BLE001
                rec.status = _failed_tag(exc)
            if config.record_timing:
                rec.wall_ms = (time.perf_counter() - t0) * 1e3
            records.append(rec)
    return records


def _run_cell_star(args):
    return run_cell(*args)


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("AGGMOM_JOBS", "1")))
    except ValueError:
        return 1


def run_sweep(config: ExperimentConfig, jobs: int | None = None) -> list[ExperimentRecord]:
    """Run every cell; output order is canonical regardless of ``jobs``."""
    jobs = default_jobs() if jobs is None else max(1, jobs)
    cells = config.cells()
    if jobs == 1 or len(cells) <= 1:
        results = [run_cell(config, c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_star, [(config, c) for c in cells], chunksize=1))
    est_order = {e: i for i, e in enumerate(config.estimators)}
    level_order = {m.param_str: i for i, m in enumerate(config.noise_models())}
    records = [r for rs in results for r in rs]
    records.sort(key=lambda r: (level_order[r.noise_param], r.N, r.T, r.K, est_order[r.estimator], r.trial))
    return records


# -- aggregation ---------------------------------------------------------------

@dataclass
class AggregateRow:
    noise_kind: str
    noise_param: str
    N: int
    estimator: str
    TK: int
    metric: str
    mean: float
    ci_low: float
    ci_high: float
    count: int
    failed: int


AGGREGATE_FIELDS = [f.name for f in fields(AggregateRow)]


def aggregate_by_TK(records, metric: str = "mse_raw") -> list[AggregateRow]:
    """Mean and normal-approximation 95% CI of ``metric`` per TK product.

    Groups are keyed by (noise level, N, estimator, TK). Failed records and
    missing metric values are excluded and counted in ``failed``. A group with
    a single value gets a missing (NaN) CI.
    """
    if not records:
        raise ValueError("no records to aggregate")
    if metric not in ("mse_raw", "mse_projected", "stat_err"):
        raise ValueError(f"unknown metric {metric!r}")
    groups: dict[tuple, list] = defaultdict(list)
    for r in records:
        groups[(r.noise_kind, r.noise_param, r.N, r.estimator, r.TK)].append(r)
    rows = []
    for key in sorted(groups):
        vals = np.array([getattr(r, metric) for r in groups[key] if r.ok and math.isfinite(getattr(r, metric))])
        failed = len(groups[key]) - vals.size
        if vals.size == 0:
            mean = lo = hi = math.nan
        else:
            mean = float(vals.mean())
            if vals.size > 1:
                half = 1.96 * float(vals.std(ddof=1)) / math.sqrt(vals.size)
                lo, hi = mean - half, mean + half
            else:
                lo = hi = math.nan
        rows.append(AggregateRow(*key, metric=metric, mean=mean, ci_low=lo, ci_high=hi,
                                 count=int(vals.size), failed=failed))
    return rows


def write_aggregate_csv(rows, path_or_file) -> None:
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_FIELDS)
        for r in rows:
            d = asdict(r)
            w.writerow([_cell(d[k]) for k in AGGREGATE_FIELDS])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)


def fit_loglog_slope(rows, min_TK: int | None = None) -> tuple[float, float]:
    """Least-squares slope and R^2 of log(mean error) against log(TK).

    ``rows`` are aggregate rows (or ``(TK, mean)`` pairs) for one estimator.
    """
    pts = [(r.TK, r.mean) if isinstance(r, AggregateRow) else (r[0], r[1]) for r in rows]
    pts = [(tk, m) for tk, m in pts if (min_TK is None or tk >= min_TK) and math.isfinite(m) and m > 0]
    if len({tk for tk, _ in pts}) < 3:
        raise InsufficientPointsError("need at least 3 distinct TK values with positive mean error")
    x = np.log([tk for tk, _ in pts])
    yv = np.log([m for _, m in pts])
    slope, intercept = np.polyfit(x, yv, 1)
    resid = yv - (slope * x + intercept)
    ss_tot = float(np.sum((yv - yv.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2
