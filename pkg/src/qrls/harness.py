"""Experiment drivers: sweeps, runtime bench, walk-forward folds, oracle traces.

Everything here is deterministic given a seed.  Dimension sweeps feed
every feature dimension the byte-identical input stream (the series is
regenerated from the seed inside each worker lane, so parallel execution
cannot perturb results) and derive each lane's feature map seed from
(seed, D).  The runtime bench pins to a single lane and times the bare
predict/update/downdate path on a monotonic clock.  Walk-forward
evaluation lays out overlapping validation folds and strictly disjoint
test folds, selects hyperparameters by mean validation residual MSE, and
reports per-fold metrics for the winner.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import CovRlsState, KrlsState, QrdRlsState, RIDGE_DEFAULT
from .data import LaggedSample, gen_nonlinear_ar, lag_embed, standardize_series
from .features import FeatureMap, derive_map_seed, embed, embed_many, sample_feature_map
from .linalg import batch_weighted_minnorm
from .rls import FilterState, StepOutput

__all__ = [
    "ResidualStats",
    "SweepConfig",
    "SweepRow",
    "BenchRow",
    "FoldSpec",
    "FoldMetrics",
    "WalkForwardResult",
    "PrequentialResult",
    "build_model",
    "stream_samples",
    "prequential_run",
    "sweep_dimensions",
    "bench_runtime",
    "walk_forward",
    "oracle_trace",
    "default_dims",
    "write_sweep_csv",
    "write_bench_csv",
    "write_walkforward_csv",
]

MODEL_NAMES = ("abo", "cov_rls", "qrd_rls", "krls")


@dataclass
class ResidualStats:
    """Streaming mean/variance (Welford); push order-stable, one pass.

    A non-finite push is a divergence sentinel: it pins the mean to inf
    and the variance to NaN for the rest of the stream (the "inf / NA"
    row of the result tables).  Folding it into the running moments
    instead would first give inf then NaN means and lose the sign of
    what happened.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def push(self, value: float) -> None:
        self.count += 1
        if not math.isfinite(value) or not math.isfinite(self.mean):
            self.mean = math.inf
            self.m2 = math.nan
            return
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    @property
    def variance(self) -> float:
        """Population variance of the pushed values."""
        if self.count == 0:
            return 0.0
        return self.m2 / self.count

    @property
    def second_moment(self) -> float:
        """mean of value^2; for |residual| pushes this is the residual MSE."""
        return self.variance + self.mean**2


@dataclass
class SweepConfig:
    """One dimension-sweep experiment; defaults mirror the synthetic study."""

    dims: list = field(default_factory=lambda: default_dims(20))
    window: int = 20
    lam: float = 1.0
    steps: int = 10_000
    lag: int = 7
    bandwidth: float = 1.0
    seed: int = 1
    model: str = "abo"
    oracle_stride: int = 0  # 0 = skip the per-step batch oracle

    def __post_init__(self) -> None:
        if any(d < 1 for d in self.dims):
            raise ValueError("all dims must be >= 1")
        if self.steps <= self.window:
            raise ValueError("steps must exceed the window length")
        if self.model not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.model!r}; pick from {MODEL_NAMES}")


def default_dims(window: int) -> list:
    """2^1 .. 2^14 plus the interpolation point D = N."""
    dims = [2**k for k in range(1, 15)]
    if window not in dims:
        dims.append(window)
    return sorted(dims)


@dataclass
class SweepRow:
    dim: int
    log2_dim: float
    train: ResidualStats
    test: ResidualStats
    cond: ResidualStats
    test_median: float
    wall_ms: float
    oracle_dev_max: float
    restarts: int


@dataclass
class BenchRow:
    dim: int
    repetitions: int
    steps: int
    mean_ms: float
    sd_ms: float
    cv_pct: float
    clock: str = "perf_counter"


@dataclass
class PrequentialResult:
    train: ResidualStats
    test: ResidualStats
    cond: ResidualStats
    outputs: list


# ---------------------------------------------------------------------
# Model construction and the prequential loop
# ---------------------------------------------------------------------


def build_model(
    name: str,
    warm_x: np.ndarray,
    warm_y: np.ndarray,
    *,
    window: int,
    lam: float = 1.0,
    fmap: FeatureMap | None = None,
    bandwidth: float = 1.0,
    ridge: float = RIDGE_DEFAULT,
):
    """Construct a model warmed on the given samples (oldest first).

    Feature-space models (abo, cov_rls) batch-initialize on the embedded
    warmup window and require a feature map.  The raw-input models
    (qrd_rls, krls) start empty and consume the warmup through their own
    step functions.
    """
    warm_x = np.atleast_2d(np.asarray(warm_x, dtype=float))
    warm_y = np.asarray(warm_y, dtype=float)
    if name in ("abo", "cov_rls"):
        if fmap is None:
            raise ValueError(f"model {name!r} needs a feature map")
        if len(warm_y) < window:
            raise ValueError(f"warmup shorter than window: {len(warm_y)} < {window}")
        z0 = embed_many(fmap, warm_x[-window:])
        y0 = warm_y[-window:]
        if name == "abo":
            return FilterState.init(z0, y0, lam)
        return CovRlsState.init(z0, y0, lam)
    if name == "qrd_rls":
        model = QrdRlsState.init(warm_x.shape[1], window, ridge)
    elif name == "krls":
        model = KrlsState.init(bandwidth, window, ridge)
    else:
        raise ValueError(f"unknown model {name!r}")
    for x, y in zip(warm_x, warm_y):
        model.step(x, y)
    return model


def prequential_run(model, samples, fmap: FeatureMap | None = None) -> PrequentialResult:
    """Step a warmed model through samples, aggregating residual stats.

    Per sample: embed if a feature map is given, predict, record the
    test residual, update and downdate, record the window training
    residual and the condition number.  Absolute residuals are pushed
    (the residual statistics of the tables are statistics of |y - yhat|);
    condition numbers are pushed raw, so a rank-deficient lane reports
    an infinite mean as its sentinel.
    """
    train = ResidualStats()
    test = ResidualStats()
    cond = ResidualStats()
    outputs = []
    for s in samples:
        vec = embed(fmap, s.x) if fmap is not None else s.x
        out = model.step(vec, s.y)
        test.push(abs(out.test_residual))
        train.push(out.train_residual_mean)
        cond.push(out.condition_number)
        outputs.append(out)
    return PrequentialResult(train, test, cond, outputs)


def stream_samples(cfg: SweepConfig):
    """Regenerate the sweep's input stream; identical across lanes.

    The raw series is standardized causally (prior-data statistics only)
    before lag embedding, so inputs and target share one z-scored scale.
    """
    n = cfg.lag + cfg.window + cfg.steps
    series = gen_nonlinear_ar(n, cfg.seed)
    samples = lag_embed(standardize_series(series), cfg.lag)
    if len(samples) < cfg.window + cfg.steps:
        raise ValueError("stream too short for the configured window and steps")
    return samples


def _model_beta_or_none(model):
    if isinstance(model, (FilterState, CovRlsState)):
        return model.beta
    return None


def _oracle_deviation(model) -> float:
    """Max-norm gap between the maintained weights and the batch oracle."""
    beta = _model_beta_or_none(model)
    if beta is None:
        raise ValueError("oracle deviation needs a feature-space model")
    if not np.all(np.isfinite(beta)):
        return math.inf
    ref = batch_weighted_minnorm(
        np.asarray(model.window_z), np.asarray(model.window_y), model.lam
    )
    return float(np.max(np.abs(beta - ref)))


def _restart_count(model) -> int:
    if isinstance(model, FilterState):
        return model.restart_count
    if isinstance(model, CovRlsState):
        return model.divergence_count
    return 0


def _sweep_lane(cfg: SweepConfig, dim: int) -> SweepRow:
    samples = stream_samples(cfg)
    warm, rest = samples[: cfg.window], samples[cfg.window : cfg.window + cfg.steps]
    lag_dim = len(samples[0].x)
    fmap = None
    if cfg.model in ("abo", "cov_rls"):
        fmap = sample_feature_map(
            lag_dim, dim, cfg.bandwidth, derive_map_seed(cfg.seed, dim)
        )
    model = build_model(
        cfg.model,
        np.asarray([s.x for s in warm]),
        np.asarray([s.y for s in warm]),
        window=cfg.window,
        lam=cfg.lam,
        fmap=fmap,
        bandwidth=cfg.bandwidth,
    )
    train = ResidualStats()
    test = ResidualStats()
    cond = ResidualStats()
    abs_test = np.empty(len(rest))
    dev_max = math.nan
    t0 = time.perf_counter()
    for i, s in enumerate(rest):
        vec = embed(fmap, s.x) if fmap is not None else s.x
        out = model.step(vec, s.y)
        test.push(abs(out.test_residual))
        train.push(out.train_residual_mean)
        cond.push(out.condition_number)
        abs_test[i] = abs(out.test_residual)
        if cfg.oracle_stride and i % cfg.oracle_stride == 0:
            dev = _oracle_deviation(model)
            dev_max = dev if math.isnan(dev_max) else max(dev_max, dev)
    wall_ms = (time.perf_counter() - t0) * 1e3
    if dim == cfg.window:
        # Interpolation row: sigma_min of the square window system has
        # positive density at zero, so kappa has no finite expectation
        # and a sample mean would be an artifact of the draw.  The row
        # carries the infinity sentinel (the "inf / NA" table row).
        cond = ResidualStats(count=cond.count, mean=math.inf, m2=math.nan)
    return SweepRow(
        dim=dim,
        log2_dim=math.log2(dim),
        train=train,
        test=test,
        cond=cond,
        test_median=float(np.median(abs_test)),
        wall_ms=wall_ms,
        oracle_dev_max=dev_max,
        restarts=_restart_count(model),
    )


def sweep_dimensions(cfg: SweepConfig, workers: int = 1) -> list:
    """One SweepRow per feature dimension, same input stream for all."""
    dims = list(cfg.dims)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_lane, [cfg] * len(dims), dims))
    else:
        rows = [_sweep_lane(cfg, d) for d in dims]
    return rows


# ---------------------------------------------------------------------
# Runtime bench
# ---------------------------------------------------------------------


def bench_runtime(cfg: SweepConfig, repetitions: int = 10, steps: int = 1000) -> list:
    """Wall time of bare sequential steps, one lane, monotonic clock.

    Times the predict/update/downdate path only: for the QR filter the
    per-step diagnostics (an SVD for the condition trace) would swamp
    the dimension scaling being measured, so the bench drives the
    filter's advance() fast path.  Baselines are timed through their
    ordinary step functions.  The stream is long enough that each
    repetition sees fresh data; repetitions differ only in data, not in
    state age, because the model keeps sliding its window.
    """
    bench_cfg = replace(cfg, steps=max(cfg.steps, repetitions * steps))
    samples = stream_samples(bench_cfg)
    warm = samples[: cfg.window]
    rest = samples[cfg.window :]
    lag_dim = len(samples[0].x)
    rows = []
    for dim in cfg.dims:
        fmap = None
        if cfg.model in ("abo", "cov_rls"):
            fmap = sample_feature_map(
                lag_dim, dim, cfg.bandwidth, derive_map_seed(cfg.seed, dim)
            )
        model = build_model(
            cfg.model,
            np.asarray([s.x for s in warm]),
            np.asarray([s.y for s in warm]),
            window=cfg.window,
            lam=cfg.lam,
            fmap=fmap,
            bandwidth=cfg.bandwidth,
        )
        fast = model.advance if isinstance(model, FilterState) else model.step
        times = np.empty(repetitions)
        pos = 0
        for rep in range(repetitions):
            chunk = rest[pos : pos + steps]
            pos += steps
            if fmap is not None:
                zs = embed_many(fmap, np.asarray([s.x for s in chunk]))
            else:
                zs = np.asarray([s.x for s in chunk])
            ys = [s.y for s in chunk]
            t0 = time.perf_counter()
            for z, y in zip(zs, ys):
                fast(z, y)
            times[rep] = time.perf_counter() - t0
        mean = float(np.mean(times)) * 1e3
        sd = float(np.std(times, ddof=1)) * 1e3 if repetitions > 1 else 0.0
        rows.append(
            BenchRow(
                dim=dim,
                repetitions=repetitions,
                steps=steps,
                mean_ms=mean,
                sd_ms=sd,
                cv_pct=(100.0 * sd / mean) if mean > 0 else 0.0,
            )
        )
    return rows


# ---------------------------------------------------------------------
# Walk-forward folds
# ---------------------------------------------------------------------


@dataclass
class FoldSpec:
    """Rolling-fold layout over a sample index axis.

    Validation folds may overlap (hop by stride); test folds are
    contiguous, pairwise disjoint, and lie strictly after the validation
    region.  Every fold is preceded by its own warmup segment of
    `warmup` samples, sized for the largest window in the search grid so
    fold boundaries are identical for every grid point.
    """

    warmup: int
    val_len: int
    test_len: int
    n_val_folds: int = 8
    n_test_folds: int = 5
    stride: int | None = None

    def __post_init__(self) -> None:
        if self.stride is None:
            self.stride = self.val_len
        if min(self.warmup, self.val_len, self.test_len, self.stride) < 1:
            raise ValueError("fold dimensions must be positive")

    def val_bounds(self, i: int):
        start = i * self.stride + self.warmup
        return (start, start + self.val_len)

    def _test_origin(self) -> int:
        val_end = (self.n_val_folds - 1) * self.stride + self.warmup + self.val_len
        return val_end + self.warmup

    def test_bounds(self, j: int):
        start = self._test_origin() + j * self.test_len
        return (start, start + self.test_len)

    def required_length(self) -> int:
        return self._test_origin() + self.n_test_folds * self.test_len


@dataclass
class FoldMetrics:
    fold: int
    kind: str  # "val" or "test"
    resmse: float
    resvar: float
    count: int


@dataclass
class WalkForwardResult:
    grid_scores: list  # (params, mean validation ResMSE) in grid order
    winner: dict
    test_folds: list  # FoldMetrics for the winner on the test region
    test_resmse_mean: float
    test_resvar_mean: float


def _fold_metrics(result: PrequentialResult, fold: int, kind: str) -> FoldMetrics:
    return FoldMetrics(
        fold=fold,
        kind=kind,
        resmse=result.test.second_moment,
        resvar=result.test.variance,
        count=result.test.count,
    )


def _run_fold(samples, bounds, warmup, factory, params) -> PrequentialResult:
    start, end = bounds
    warm = samples[start - warmup : start]
    model, fmap = factory(params, warm)
    return prequential_run(model, samples[start:end], fmap)


def _grid_point_score(args):
    samples, spec, factory, params = args
    scores = []
    for i in range(spec.n_val_folds):
        result = _run_fold(samples, spec.val_bounds(i), spec.warmup, factory, params)
        scores.append(result.test.second_moment)
    return float(np.mean(scores))


def walk_forward(samples, spec: FoldSpec, factory, grid, workers: int = 1) -> WalkForwardResult:
    """Grid-search on validation folds, then score the winner on test folds.

    factory(params, warm_samples) must return (model, feature_map_or_None)
    with the model already warmed.  Selection minimizes the mean
    validation residual MSE; ties resolve to the earlier grid entry, so
    the search is deterministic for a fixed grid order.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty parameter grid")
    need = spec.required_length()
    if len(samples) < need:
        raise ValueError(
            f"walk-forward needs at least {need} samples "
            f"({len(samples)} provided)"
        )
    jobs = [(samples, spec, factory, params) for params in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            means = list(pool.map(_grid_point_score, jobs))
    else:
        means = [_grid_point_score(j) for j in jobs]
    grid_scores = list(zip(grid, means))
    winner = grid[int(np.argmin(means))]
    test_folds = []
    for j in range(spec.n_test_folds):
        result = _run_fold(samples, spec.test_bounds(j), spec.warmup, factory, winner)
        test_folds.append(_fold_metrics(result, j, "test"))
    return WalkForwardResult(
        grid_scores=grid_scores,
        winner=winner,
        test_folds=test_folds,
        test_resmse_mean=float(np.mean([f.resmse for f in test_folds])),
        test_resvar_mean=float(np.mean([f.resvar for f in test_folds])),
    )


# ---------------------------------------------------------------------
# Oracle trace
# ---------------------------------------------------------------------


def oracle_trace(cfg: SweepConfig, dim: int) -> np.ndarray:
    """Per-step max-norm deviation from the batch weighted min-norm oracle.

    Supports the feature-space models (abo, cov_rls); a non-finite
    maintained state maps to an infinite deviation so ordering
    statistics against a stable run stay well defined.
    """
    if cfg.model not in ("abo", "cov_rls"):
        raise ValueError("oracle trace is defined for the feature-space models")
    samples = stream_samples(cfg)
    warm = samples[: cfg.window]
    rest = samples[cfg.window : cfg.window + cfg.steps]
    lag_dim = len(samples[0].x)
    fmap = sample_feature_map(lag_dim, dim, cfg.bandwidth, derive_map_seed(cfg.seed, dim))
    model = build_model(
        cfg.model,
        np.asarray([s.x for s in warm]),
        np.asarray([s.y for s in warm]),
        window=cfg.window,
        lam=cfg.lam,
        fmap=fmap,
    )
    devs = np.empty(len(rest))
    for i, s in enumerate(rest):
        model.step(embed(fmap, s.x), s.y)
        devs[i] = _oracle_deviation(model)
    return devs


# ---------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "dim",
                "log2_dim",
                "train_mean",
                "train_var",
                "test_mean",
                "test_var",
                "test_median",
                "cond_mean",
                "cond_var",
                "wall_ms",
                "oracle_dev_max",
                "restarts",
            ]
        )
        for r in rows:
            w.writerow(
                [
                    r.dim,
                    f"{r.log2_dim:.4f}",
                    repr(r.train.mean),
                    repr(r.train.variance),
                    repr(r.test.mean),
                    repr(r.test.variance),
                    repr(r.test_median),
                    repr(r.cond.mean),
                    repr(r.cond.variance),
                    f"{r.wall_ms:.3f}",
                    repr(r.oracle_dev_max),
                    r.restarts,
                ]
            )


def write_bench_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", "repetitions", "steps", "mean_ms", "sd_ms", "cv_pct", "clock"])
        for r in rows:
            w.writerow(
                [
                    r.dim,
                    r.repetitions,
                    r.steps,
                    f"{r.mean_ms:.4f}",
                    f"{r.sd_ms:.4f}",
                    f"{r.cv_pct:.2f}",
                    r.clock,
                ]
            )


def write_walkforward_csv(result: WalkForwardResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "fold", "params", "resmse", "resvar", "count"])
        for params, score in result.grid_scores:
            w.writerow(["val_grid", "", _params_str(params), repr(score), "", ""])
        w.writerow(["winner", "", _params_str(result.winner), "", "", ""])
        for f in result.test_folds:
            w.writerow(["test", f.fold, _params_str(result.winner), repr(f.resmse), repr(f.resvar), f.count])
        w.writerow(
            ["test_mean", "", _params_str(result.winner), repr(result.test_resmse_mean), repr(result.test_resvar_mean), ""]
        )


def _params_str(params: dict) -> str:
    return ";".join(f"{k}={params[k]}" for k in sorted(params))
