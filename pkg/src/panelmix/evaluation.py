"""Rolling out-of-sample evaluation and forecast-comparison inference.

The protocol: for each test year, four one-quarter-ahead forecasts are
produced, each from a model refit on every quarter strictly before the
target.  The training window starts `train_years` before the test year and
expands within it (20 -> 23 quarters used at train_years=5; the 24th
quarter only enters the following year's window).

Window-level accuracy differentials then feed a battery of comparison
tests: paired percentile bootstrap, Diebold-Mariano with the
Harvey-Leybourne-Newbold small-sample factor, Newey-West HAC t-statistics,
a moving-block bootstrap, the exact binomial sign test, an
autocorrelation-adjusted effective sample size, and Holm-Bonferroni
multiple-comparison control.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .architectures import ArchitectureSpec, fit_architecture, forecast_architecture
from .panel import Panel, RollingWindowSpec, quarter_label


@dataclass(frozen=True)
class WindowResult:
    """Forecasts and actuals for the four quarters of one test year."""

    test_year: int
    forecasts: np.ndarray  # N x 4
    actuals: np.ndarray  # N x 4
    per_actor_test_means: np.ndarray
    train_means: np.ndarray  # means of the year's base training window

    @property
    def n_actors(self) -> int:
        return self.actuals.shape[0]


def year_origins(cal: RollingWindowSpec, year: int):
    """(train_first, train_last, target) quarter labels for one test year."""
    start = quarter_label((year - cal.train_years) * 4)
    out = []
    for q in range(4):
        target_idx = year * 4 + q
        out.append((start, quarter_label(target_idx - 1), quarter_label(target_idx)))
    return out


def rolling_oos_evaluate(panel: Panel, spec, cal: RollingWindowSpec) -> list[WindowResult]:
    """Run the quarterly-refit rolling protocol for one forecaster.

    `spec` is an ArchitectureSpec, or any callable mapping a training panel
    to the N-vector forecast for the quarter after its last column (used
    for baselines that live outside the architecture catalogue).
    """
    cal.validate_against(panel)
    results = []
    for year in cal.test_years:
        forecasts = np.empty((panel.n_actors, 4))
        actuals = np.empty((panel.n_actors, 4))
        train_means = None
        for q, (start, last_train, target) in enumerate(year_origins(cal, year)):
            train = panel.window(start, last_train)
            if train_means is None:
                train_means = train.values.mean(axis=1)
            if isinstance(spec, ArchitectureSpec):
                fit = fit_architecture(spec, train)
                forecasts[:, q] = forecast_architecture(fit, train)
            else:
                forecasts[:, q] = spec(train)
            actuals[:, q] = panel.values[:, panel.column_of(target)]
        results.append(WindowResult(year, forecasts, actuals,
                                    actuals.mean(axis=1), train_means))
    return results


# ---------------------------------------------------------------------------
# Accuracy metrics
# ---------------------------------------------------------------------------


def oos_r2(result: WindowResult, convention: str = "test_mean") -> float:
    """Out-of-sample R-squared for one window.

    1 - SSE / SS_ref with the reference mean chosen per convention:
    'test_mean' uses each actor's test-window mean, 'train_mean' the
    training-window mean.  Sums run over all actors and the four quarters.
    """
    if convention == "test_mean":
        ref = result.per_actor_test_means
    elif convention == "train_mean":
        ref = result.train_means
    else:
        raise ValueError(f"unknown convention {convention!r}")
    denom = float(np.sum((result.actuals - ref[:, None]) ** 2))
    if denom == 0.0:
        raise ValueError("degenerate window: zero reference variance")
    sse = float(np.sum((result.actuals - result.forecasts) ** 2))
    return 1.0 - sse / denom


def window_r2(results, convention: str = "test_mean") -> np.ndarray:
    return np.array([oos_r2(r, convention) for r in results])


def mean_oos_r2(results, convention: str = "test_mean") -> float:
    return float(np.mean(window_r2(results, convention)))


def _as_result_list(results):
    return [results] if isinstance(results, WindowResult) else list(results)


def mae(results) -> float:
    """Mean absolute error over every cell of the given window(s)."""
    rs = _as_result_list(results)
    return float(np.mean([np.abs(r.actuals - r.forecasts) for r in rs]))


def per_block_r2(results, partition, panel, convention: str = "test_mean") -> dict:
    """Mean out-of-sample R2 per block, the per-block decomposition view.

    Each block's R2 restricts both sums to that block's actors, so the
    size-weighted average of block values does not reproduce the panel R2.
    """
    rs = _as_result_list(results)
    row_of = {a: i for i, a in enumerate(panel.actor_ids)}
    out = {}
    for block in partition.block_ids():
        members = partition.members(block, panel)
        if not members:
            continue
        rows = np.array([row_of[a] for a in members], dtype=int)
        vals = []
        for r in rs:
            sub = WindowResult(r.test_year, r.forecasts[rows], r.actuals[rows],
                               r.per_actor_test_means[rows], r.train_means[rows])
            vals.append(oos_r2(sub, convention))
        out[block] = float(np.mean(vals))
    return out


def forecast_error_correlation(results_a, results_b) -> float:
    """Correlation of two forecasters' error paths over the same windows.

    Values near one say the models make functionally identical predictions,
    not merely equally accurate ones.
    """
    ra, rb = _as_result_list(results_a), _as_result_list(results_b)
    if len(ra) != len(rb):
        raise ValueError("window lists must align")
    errs_a = np.concatenate([(r.actuals - r.forecasts).ravel() for r in ra])
    errs_b = np.concatenate([(r.actuals - r.forecasts).ravel() for r in rb])
    return float(np.corrcoef(errs_a, errs_b)[0, 1])


def spearman_ic(results) -> list[float]:
    """Per-quarter Spearman rank correlation between forecast and actual.

    Quarters with a constant cross-section have no defined rank
    correlation and are emitted as NaN.
    """
    rs = _as_result_list(results)
    if rs[0].n_actors < 3:
        raise ValueError("need at least 3 actors for rank correlations")
    out = []
    for r in rs:
        for q in range(r.actuals.shape[1]):
            f, a = r.forecasts[:, q], r.actuals[:, q]
            if np.ptp(f) == 0 or np.ptp(a) == 0:
                out.append(float("nan"))
            else:
                out.append(float(stats.spearmanr(f, a).statistic))
    return out


# ---------------------------------------------------------------------------
# Forecast-comparison inference
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DmResult:
    t: float
    p: float
    hln_factor: float


def hln_factor(n: int, h: int = 1) -> float:
    """Harvey-Leybourne-Newbold small-sample multiplier."""
    return math.sqrt((n + 1 - 2 * h + h * (h - 1) / n) / n)


def dm_test(deltas, horizon: int = 1) -> DmResult:
    """Diebold-Mariano test on loss differentials with the HLN correction.

    Two-sided p from a t distribution with n-1 degrees of freedom.  A
    zero-variance differential series has an undefined statistic and is
    rejected as degenerate.
    """
    d = np.asarray(deltas, dtype=float)
    n = d.size
    if n < 2:
        raise ValueError("need at least 2 loss differentials")
    dbar = d.mean()
    centered = d - dbar
    gamma0 = float(centered @ centered) / n
    for lag in range(1, horizon):
        gamma0 += 2.0 * float(centered[lag:] @ centered[:-lag]) / n
    # relative floor so an all-equal series is degenerate despite float dust
    if gamma0 <= 1e-16 * max(float(np.mean(d * d)), np.finfo(float).tiny):
        raise ValueError("degenerate DM: zero variance differentials")
    t_plain = dbar / math.sqrt(gamma0 / n)
    factor = hln_factor(n, horizon)
    t_stat = factor * t_plain
    p = 2.0 * float(stats.t.sf(abs(t_stat), df=n - 1))
    return DmResult(float(t_stat), p, factor)


def nw_hac_t(deltas, bandwidth: int) -> float:
    """t-statistic with Newey-West (Bartlett kernel) HAC variance."""
    d = np.asarray(deltas, dtype=float)
    n = d.size
    if bandwidth >= n:
        raise ValueError("bandwidth must be smaller than the sample")
    centered = d - d.mean()
    var = float(centered @ centered) / n
    for j in range(1, bandwidth + 1):
        w = 1.0 - j / (bandwidth + 1.0)
        var += 2.0 * w * float(centered[j:] @ centered[:-j]) / n
    return float(d.mean() / math.sqrt(var / n))


def paired_bootstrap_ci(deltas, resamples: int = 10000, level: float = 0.95,
                        seed: int = 0) -> tuple[float, float]:
    """Percentile CI of the mean under with-replacement window resampling."""
    d = np.asarray(deltas, dtype=float)
    n = d.size
    if n < 2:
        raise ValueError("need at least 2 windows")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(resamples, n))
    means = d[idx].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, 1 - (1 - level) / 2])
    return float(lo), float(hi)


def moving_block_bootstrap_ci(deltas, block_len: int, resamples: int = 10000,
                              level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile CI from overlapping-block resampling (truncated to n).

    With block_len=1 this reproduces the ordinary bootstrap draw for draw
    under the same seed.
    """
    d = np.asarray(deltas, dtype=float)
    n = d.size
    if not 1 <= block_len <= n:
        raise ValueError("block length must be in [1, n]")
    n_starts = n - block_len + 1
    n_blocks = math.ceil(n / block_len)
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, n_starts, size=(resamples, n_blocks))
    idx = (starts[:, :, None] + np.arange(block_len)[None, None, :])
    idx = idx.reshape(resamples, n_blocks * block_len)[:, :n]
    means = d[idx].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, 1 - (1 - level) / 2])
    return float(lo), float(hi)


def sign_test(wins: int, total: int) -> float:
    """One-sided exact binomial tail P(X >= wins) under a fair coin."""
    if not 0 <= wins <= total:
        raise ValueError("wins must lie in [0, total]")
    return float(stats.binom.sf(wins - 1, total, 0.5))


def effective_sample_size_from_rho(rho: float, n: int) -> float:
    return n * (1.0 - rho) / (1.0 + rho)


def effective_sample_size(deltas) -> float:
    """n adjusted for lag-1 autocorrelation of the differentials."""
    d = np.asarray(deltas, dtype=float)
    n = d.size
    if n < 3:
        raise ValueError("need at least 3 differentials")
    centered = d - d.mean()
    gamma0 = float(centered @ centered) / n
    if gamma0 == 0.0:
        return float(n)
    rho = (float(centered[1:] @ centered[:-1]) / n) / gamma0
    return effective_sample_size_from_rho(rho, n)


def holm_bonferroni(pvals, alpha: float = 0.05) -> list[bool]:
    """Step-down Holm rejection decisions, in the input order.

    The boundary uses <=, so p exactly at a threshold is rejected.
    """
    p = list(pvals)
    if not p:
        raise ValueError("empty p-value list")
    m = len(p)
    order = sorted(range(m), key=lambda i: p[i])
    reject = [False] * m
    for k, i in enumerate(order):
        if p[i] <= alpha / (m - k):
            reject[i] = True
        else:
            break
    return reject


# ---------------------------------------------------------------------------
# Head-to-head comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonReport:
    """Everything the architecture-comparison table reports for one pair."""

    label_a: str
    label_b: str
    r2_a: float
    r2_b: float
    delta_mean: float
    per_window_deltas: np.ndarray
    bootstrap_ci: tuple[float, float]
    dm_t: float
    dm_p: float
    hac_t: dict[int, float]
    sign_wins: int
    sign_total: int
    sign_p: float
    n_eff: float
    seed: int
    convention: str

    def summary_line(self) -> str:
        lo, hi = self.bootstrap_ci
        return (f"{self.label_a} vs {self.label_b}: delta={self.delta_mean:+.4f} "
                f"CI[{lo:+.4f},{hi:+.4f}] t={self.dm_t:.2f} p={self.dm_p:.4g} "
                f"W={self.sign_wins}/{self.sign_total} n_eff={self.n_eff:.1f}")


def compare_windows(results_a, results_b, *, label_a="A", label_b="B",
                    convention: str = "test_mean", resamples: int = 10000,
                    level: float = 0.95, seed: int = 0,
                    hac_bandwidths=(1, 2, 3),
                    loss: str = "window_r2") -> ComparisonReport:
    """Comparison report from two aligned lists of WindowResults.

    The default differential is the window-level R2 gap; loss='squared_error'
    switches to per-window mean squared error differentials (B minus A, so a
    positive delta still favors A).
    """
    if len(results_a) != len(results_b):
        raise ValueError("window lists must align")
    r2a = window_r2(results_a, convention)
    r2b = window_r2(results_b, convention)
    if loss == "window_r2":
        deltas = r2a - r2b
    elif loss == "squared_error":
        mse_a = np.array([np.mean((r.actuals - r.forecasts) ** 2) for r in results_a])
        mse_b = np.array([np.mean((r.actuals - r.forecasts) ** 2) for r in results_b])
        deltas = mse_b - mse_a
    else:
        raise ValueError(f"unknown loss {loss!r}")
    wins = int(np.sum(deltas > 0))
    dm = dm_test(deltas)
    hac = {bw: nw_hac_t(deltas, bw) for bw in hac_bandwidths if bw < deltas.size}
    n_eff = effective_sample_size(deltas) if deltas.size >= 3 else float("nan")
    return ComparisonReport(
        label_a, label_b, float(r2a.mean()), float(r2b.mean()),
        float(deltas.mean()), deltas,
        paired_bootstrap_ci(deltas, resamples, level, seed),
        dm.t, dm.p, hac, wins, deltas.size, sign_test(wins, deltas.size),
        n_eff, seed, convention)


def compare_architectures(panel: Panel, spec_a, spec_b, cal: RollingWindowSpec,
                          **kwargs) -> ComparisonReport:
    """Evaluate two forecasters on the same calendar and compare them."""
    kwargs.setdefault("label_a", getattr(spec_a, "kind", "A"))
    kwargs.setdefault("label_b", getattr(spec_b, "kind", "B"))
    results_a = rolling_oos_evaluate(panel, spec_a, cal)
    results_b = rolling_oos_evaluate(panel, spec_b, cal)
    return compare_windows(results_a, results_b, **kwargs)
