"""Monte Carlo estimation, distribution comparison, and tail fitting.

Estimates of the survival probability come with Wilson score intervals so
that all-extinct and all-survived cells deep in the tail stay informative.
The extinction-time limit law is checked by centering lambda*T at
ln(C * sum_k k z_k), exactly the predicted location, and measuring the
Kolmogorov-Smirnov distance to the standard Gumbel CDF exp(-exp(-w)); C is
supplied analytically, never refit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .analytic import SurvivalCurve
from .model import ModelParams
from .simulator import DEFAULT_MAX_EVENTS, PopulationState, run_batch

WILSON_Z = 1.96  # 95% score interval


class WindowError(ValueError):
    """Fit window contains unusable (nonpositive or too few) curve points."""


@dataclass(frozen=True)
class EstimateWithCI:
    point: float
    ci_low: float
    ci_high: float
    n: int
    method: str

    def __post_init__(self) -> None:
        if not self.ci_low <= self.point <= self.ci_high:
            raise ValueError("interval must bracket the point estimate")

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


def wilson_interval(successes: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion; valid at 0 and n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= successes <= n:
        raise ValueError("successes must lie in [0, n]")
    phat = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (phat + z2 / (2.0 * n)) / denom
    half = z * math.sqrt(phat * (1.0 - phat) / n + z2 / (4.0 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def estimate_qk(
    k: int,
    t: float,
    m: ModelParams,
    seed: int,
    n: int,
    max_events: int = DEFAULT_MAX_EVENTS,
    threads: int = 1,
) -> EstimateWithCI:
    """Monte Carlo survival probability from one type-k host at horizon t.

    Replicate i runs on stream (seed, i); the point estimate is the survival
    fraction with a 95% Wilson interval.
    """
    init = PopulationState.from_counts({k: 1})
    outcomes = run_batch(
        init, m, seed, replicates=n, horizon=t, max_events=max_events, threads=threads
    )
    survived = sum(1 for o in outcomes if o.censored)
    low, high = wilson_interval(survived, n)
    return EstimateWithCI(point=survived / n, ci_low=low, ci_high=high, n=n, method="wilson-95")


def survival_curve_mc(
    k: int,
    ts: np.ndarray,
    m: ModelParams,
    seed: int,
    n: int,
    max_events: int = DEFAULT_MAX_EVENTS,
    threads: int = 1,
) -> SurvivalCurve:
    """Whole Monte Carlo survival curve from one batch of extinction times.

    Replicates are censored at the last grid time; q(t) is the fraction of
    extinction times beyond t and err holds the Wilson half-width per point.
    """
    ts = np.asarray(ts, dtype=float)
    horizon = float(ts[-1])
    init = PopulationState.from_counts({k: 1})
    outcomes = run_batch(
        init, m, seed, replicates=n, horizon=horizon, max_events=max_events, threads=threads
    )
    times = np.array(
        [math.inf if o.censored else o.extinction_time for o in outcomes], dtype=float
    )
    qs = np.empty_like(ts)
    err = np.empty_like(ts)
    for i, t in enumerate(ts):
        survived = int((times > t).sum())
        low, high = wilson_interval(survived, n)
        qs[i] = survived / n
        err[i] = (high - low) / 2.0
    return SurvivalCurve(k=k, ts=ts, qs=qs, err=err, source="monte_carlo")


@dataclass(frozen=True)
class GrowthConditionReport:
    """Finite-n reading of the initial-condition growth requirement
    sum k^2 z_k = o((sum k z_k)^(1 + a/lambda)); advisory only."""

    spores: float  # sum k z_k
    second_moment: float  # sum k^2 z_k
    exponent: float  # 1 + a/lambda
    ratio: float


def check_growth_condition(z: dict[int, int], a: float, lam: float) -> GrowthConditionReport:
    if not z:
        raise ValueError("initial counts must be nonempty")
    if a <= 0.0 or lam <= 0.0:
        raise ValueError("a and lambda must be positive")
    spores = float(sum(k * n for k, n in z.items()))
    second = float(sum(k * k * n for k, n in z.items()))
    exponent = 1.0 + a / lam
    return GrowthConditionReport(
        spores=spores,
        second_moment=second,
        exponent=exponent,
        ratio=second / spores**exponent,
    )


def gumbel_cdf(w: float) -> float:
    return math.exp(-math.exp(-w))


def gumbel_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    return -math.log(-math.log(p))


GUMBEL_MEDIAN = gumbel_quantile(0.5)  # -ln ln 2


def ks_distance(sample, cdf: Callable[[float], float]) -> float:
    """Sup distance between the empirical CDF of the sample and ``cdf``."""
    xs = np.sort(np.asarray(sample, dtype=float))
    n = len(xs)
    if n == 0:
        raise ValueError("sample must be nonempty")
    d = 0.0
    for i, x in enumerate(xs):
        f = cdf(float(x))
        d = max(d, (i + 1) / n - f, f - i / n)
    return d


@dataclass(frozen=True)
class GumbelReport:
    """Empirical extinction-time law against the predicted Gumbel limit."""

    location: float  # ln(C * sum k z_k) / lambda, on the T scale
    scale: float  # 1 / lambda
    n: int
    ks: float
    median_w: float  # empirical median of lambda*T - ln(C sum k z_k)
    quantiles: tuple[tuple[float, float, float], ...]  # (p, empirical, predicted)
    extinction_times: np.ndarray

    def __post_init__(self) -> None:
        if not 0.0 <= self.ks <= 1.0:
            raise ValueError("KS distance must lie in [0, 1]")


def gumbel_experiment(
    z: dict[int, int],
    m: ModelParams,
    C: float,
    seed: int,
    replicates: int,
    max_events: int = DEFAULT_MAX_EVENTS,
    threads: int = 1,
) -> GumbelReport:
    """Extinction times of a large initial population against the Gumbel law.

    Simulates ``replicates`` full extinction times from initial counts ``z``,
    transforms them to w = lambda*T - ln(C * sum_k k z_k), and reports the
    KS distance to exp(-exp(-w)) plus a decile table.  C must come from a
    closed form or from the backward-system estimate, not from the sample.
    """
    lam = m.decay_rate
    if lam <= 0.0:
        raise ValueError("extinction-time experiment requires a subcritical model")
    if not 0.0 < C <= 1.0:
        raise ValueError("leading constant must lie in (0, 1]")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    init = PopulationState.from_counts(z)
    if init.extinct:
        raise ValueError("initial counts must contain at least one host")

    outcomes = run_batch(
        init, m, seed, replicates=replicates, horizon=None, max_events=max_events, threads=threads
    )
    times = np.array([o.extinction_time for o in outcomes], dtype=float)
    center = math.log(C * init.n_spores)
    w = lam * times - center
    ks = ks_distance(w, gumbel_cdf)
    ps = [i / 10.0 for i in range(1, 10)]
    emp = np.quantile(w, ps)
    quantiles = tuple((p, float(e), gumbel_quantile(p)) for p, e in zip(ps, emp))
    return GumbelReport(
        location=center / lam,
        scale=1.0 / lam,
        n=replicates,
        ks=ks,
        median_w=float(np.median(w)),
        quantiles=quantiles,
        extinction_times=times,
    )


def fit_decay_rate(
    curve: SurvivalCurve, window: tuple[float, float]
) -> tuple[float, float]:
    """Least-squares slope of -ln q over a time window: (rate, stderr).

    Scaling the curve by a constant shifts the log without tilting it, so
    the fitted rate is scale-invariant.
    """
    lo, hi = window
    mask = (curve.ts >= lo) & (curve.ts <= hi)
    if mask.sum() < 3:
        raise WindowError(f"window [{lo:g}, {hi:g}] covers fewer than 3 grid points")
    q = curve.qs[mask]
    if np.any(q <= 0.0):
        raise WindowError(f"curve is not positive throughout [{lo:g}, {hi:g}]")
    x = curve.ts[mask]
    y = -np.log(q)
    n = len(x)
    xbar = x.mean()
    sxx = float(((x - xbar) ** 2).sum())
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    var = float((resid**2).sum()) / (n - 2) if n > 2 else 0.0
    stderr = math.sqrt(var / sxx)
    return float(slope), stderr
