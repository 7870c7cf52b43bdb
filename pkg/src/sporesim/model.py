"""Offspring laws, process parameters, and validation of the standing assumptions.

The population consists of hosts, each carrying k >= 1 spores.  A spore is
released at rate ``beta`` and spawns a new host whose spore count J is drawn
from an offspring law (p_j); a host (with all its spores) is removed at rate
``rho`` regardless of its spore count.  The survival probability of the
population decays at rate

    lambda = rho + beta * (1 - mean(J)),

and the process is subcritical exactly when lambda > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

# Table probabilities may deviate from sum 1 by at most this much without
# correction; deviations below _RENORM_TOL are silently renormalized, larger
# ones are a hard error (bad config files should not drift quietly).
_EXACT_TOL = 1e-12
_RENORM_TOL = 1e-9

KINDS = ("table", "poisson", "geometric")


@dataclass(frozen=True)
class OffspringDistribution:
    """Law of the spore count J of a newly spawned host.

    Three kinds are supported:

    * ``table``: finite support, explicit probabilities ``probs = (p_0 .. p_J)``.
    * ``poisson``: mean ``param > 0``, support {0, 1, 2, ...}.
    * ``geometric``: success probability ``param in (0, 1)``, support
      {0, 1, 2, ...} with P(J = j) = (1 - param)^j * param.

    All kinds have finite mean and second moment and support exact sampling;
    nothing is ever truncated at the sampling stage.
    """

    kind: str
    probs: tuple[float, ...] = ()
    param: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown offspring kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "table":
            if len(self.probs) == 0:
                raise ValueError("table offspring law needs at least one probability")
            p = np.asarray(self.probs, dtype=float)
            if not np.all(np.isfinite(p)) or np.any(p < 0.0):
                raise ValueError("table probabilities must be finite and nonnegative")
            total = float(p.sum())
            if abs(total - 1.0) > _RENORM_TOL:
                raise ValueError(
                    f"table probabilities sum to {total!r}, more than {_RENORM_TOL:g} away from 1"
                )
            if abs(total - 1.0) > _EXACT_TOL:
                p = p / total
            object.__setattr__(self, "probs", tuple(float(x) for x in p))
        else:
            if self.probs:
                raise ValueError(f"{self.kind} offspring law takes no probability table")
            if not math.isfinite(self.param) or self.param <= 0.0:
                raise ValueError(f"{self.kind} offspring law needs a positive parameter")
            if self.kind == "geometric" and self.param >= 1.0:
                raise ValueError("geometric success probability must lie in (0, 1)")

    @classmethod
    def table(cls, probs) -> "OffspringDistribution":
        return cls(kind="table", probs=tuple(float(x) for x in probs))

    @classmethod
    def poisson(cls, mean: float) -> "OffspringDistribution":
        return cls(kind="poisson", param=float(mean))

    @classmethod
    def geometric(cls, success: float) -> "OffspringDistribution":
        return cls(kind="geometric", param=float(success))

    @cached_property
    def mean(self) -> float:
        if self.kind == "table":
            return float(sum(j * p for j, p in enumerate(self.probs)))
        if self.kind == "poisson":
            return self.param
        return (1.0 - self.param) / self.param

    @cached_property
    def second_moment(self) -> float:
        if self.kind == "table":
            return float(sum(j * j * p for j, p in enumerate(self.probs)))
        if self.kind == "poisson":
            m = self.param
            return m + m * m
        p = self.param
        return (1.0 - p) * (2.0 - p) / (p * p)

    @property
    def max_support(self) -> int | None:
        """Largest attainable value, or None for unbounded support."""
        return len(self.probs) - 1 if self.kind == "table" else None

    def pmf(self, j: int) -> float:
        if j < 0:
            return 0.0
        if self.kind == "table":
            return self.probs[j] if j < len(self.probs) else 0.0
        if self.kind == "poisson":
            m = self.param
            return math.exp(-m + j * math.log(m) - math.lgamma(j + 1))
        return (1.0 - self.param) ** j * self.param

    def pmf_table(self, kmax: int) -> np.ndarray:
        """Probabilities (p_0 .. p_kmax) as an array; entries above the table
        support are zero."""
        out = np.zeros(kmax + 1)
        if self.kind == "table":
            n = min(len(self.probs), kmax + 1)
            out[:n] = self.probs[:n]
        elif self.kind == "poisson":
            # stable recursion p_{j+1} = p_j * m / (j + 1)
            m = self.param
            out[0] = math.exp(-m)
            for j in range(kmax):
                out[j + 1] = out[j] * m / (j + 1)
        else:
            p = self.param
            out[0] = p
            for j in range(kmax):
                out[j + 1] = out[j] * (1.0 - p)
        return out

    @cached_property
    def cumulative(self) -> tuple[float, ...]:
        """Cumulative table for inverse-CDF sampling (table kind only)."""
        if self.kind != "table":
            raise ValueError("cumulative table only exists for the table kind")
        cum = np.cumsum(self.probs)
        cum[-1] = 1.0  # guard against rounding shortfall at the top
        return tuple(float(x) for x in cum)


def mean_and_second_moment(d: OffspringDistribution) -> tuple[float, float]:
    """Exact mean and second moment of the offspring law.

    Closed forms for the parametric kinds, direct summation for tables.
    """
    return d.mean, d.second_moment


@dataclass(frozen=True)
class ModelParams:
    """Process parameters: release rate per spore, removal rate per host,
    and the offspring law."""

    beta: float
    rho: float
    offspring: OffspringDistribution

    def __post_init__(self) -> None:
        if not math.isfinite(self.beta) or self.beta <= 0.0:
            raise ValueError("beta must be positive and finite")
        if not math.isfinite(self.rho) or self.rho < 0.0:
            raise ValueError("rho must be nonnegative and finite")

    @property
    def decay_rate(self) -> float:
        return self.rho + self.beta * (1.0 - self.offspring.mean)

    @property
    def subcritical(self) -> bool:
        return self.decay_rate > 0.0


def decay_rate(m: ModelParams) -> float:
    """Survival-probability decay rate rho + beta * (1 - mean offspring).

    No sign restriction; callers decide whether subcriticality is required.
    """
    return m.decay_rate


@dataclass(frozen=True)
class DecayWindow:
    """Tail-control exponent ``a`` and slack ``epsilon``.

    Valid when 0 < a < min(lambda, beta) and 0 < epsilon < min(lambda, beta) - a.
    Defaults pick the midpoints a = min(lambda, beta)/2, epsilon = min/4 for
    robustness; any admissible pair is accepted.
    """

    a: float
    epsilon: float

    @classmethod
    def for_model(
        cls, m: ModelParams, a: float | None = None, epsilon: float | None = None
    ) -> "DecayWindow":
        cap = min(m.decay_rate, m.beta)
        if cap <= 0.0:
            raise ValueError("decay window requires a subcritical model (decay rate > 0)")
        if a is None:
            a = cap / 2.0
        if epsilon is None:
            epsilon = min(cap / 4.0, (cap - a) / 2.0)
        window = cls(a=float(a), epsilon=float(epsilon))
        window.check(m)
        return window

    def check(self, m: ModelParams) -> None:
        cap = min(m.decay_rate, m.beta)
        if not 0.0 < self.a < cap:
            raise ValueError(f"a = {self.a!r} must lie in (0, {cap!r})")
        if not 0.0 < self.epsilon < cap - self.a:
            raise ValueError(f"epsilon = {self.epsilon!r} must lie in (0, {cap - self.a!r})")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    required: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.required)

    @property
    def flags(self) -> tuple[str, ...]:
        """Names of non-required checks that did not pass (informational)."""
        return tuple(c.name for c in self.checks if not c.required and not c.passed)

    def __str__(self) -> str:
        lines = []
        for c in self.checks:
            status = "pass" if c.passed else ("FAIL" if c.required else "flag")
            lines.append(f"[{status}] {c.name}: {c.detail}")
        return "\n".join(lines)


def validate(m: ModelParams, require_subcritical: bool = False) -> ValidationReport:
    """Check the standing assumptions and report each one.

    A zero mean offspring count is flagged rather than failed: the process is
    then a pure death process with an exact closed-form survival probability,
    but the exponential-tail machinery does not apply.
    """
    mu, m2 = mean_and_second_moment(m.offspring)
    lam = m.decay_rate
    checks = [
        CheckResult("beta_positive", m.beta > 0.0, True, f"beta = {m.beta:g}"),
        CheckResult("rho_nonnegative", m.rho >= 0.0, True, f"rho = {m.rho:g}"),
        CheckResult(
            "second_moment_finite",
            math.isfinite(m2),
            True,
            f"sum k^2 p_k = {m2:g}",
        ),
        CheckResult(
            "mean_offspring_positive",
            mu > 0.0,
            False,
            f"mean offspring = {mu:g}"
            + ("" if mu > 0.0 else " (pure death process; closed form available)"),
        ),
        CheckResult(
            "subcritical",
            lam > 0.0,
            require_subcritical,
            f"decay rate = {lam:g}",
        ),
    ]
    return ValidationReport(checks=tuple(checks))


def truncation_level(d: OffspringDistribution, epsilon: float, beta: float) -> int:
    """Smallest k0 >= 1 whose truncated mean exceeds mean - epsilon/beta.

    Offspring counts above k0 mapped to zero still carry enough mean to keep
    the truncated decay rate within epsilon of the true one.
    """
    if epsilon <= 0.0 or beta <= 0.0:
        raise ValueError("epsilon and beta must be positive")
    target = d.mean - epsilon / beta
    if target < 0.0:
        return 1
    partial = 0.0
    k = 0
    limit = len(d.probs) - 1 if d.kind == "table" else 10_000_000
    while k < limit:
        k += 1
        partial += k * d.pmf(k)
        if partial > target and k >= 1:
            return k
    if d.kind == "table":
        # full support reached; the complete mean always satisfies the bound
        return max(1, len(d.probs) - 1)
    raise RuntimeError("truncation level search did not terminate")


def sample_offspring(d: OffspringDistribution, rng) -> int:
    """Draw one exact sample of J.

    Table kind uses inverse CDF on the precomputed cumulative table (one
    uniform); parametric kinds use the generator's exact samplers.
    """
    if d.kind == "table":
        u = rng.uniform01()
        cum = d.cumulative
        j = 0
        while u > cum[j]:
            j += 1
        return j
    if d.kind == "poisson":
        return int(rng.generator.poisson(d.param))
    return int(rng.generator.geometric(d.param)) - 1
