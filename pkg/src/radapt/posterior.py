"""Beta-Bernoulli inference for the binary adaptation endpoint.

Success counts come from dichotomised outcomes only; the conjugate update and
the two comparison probabilities here feed the allocation rules. Everything is
a pure function over immutable inputs: Monte Carlo state is caller-provided,
never global.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "BetaPosterior",
    "SuccessCount",
    "MonteCarlo",
    "update",
    "prob_greater",
    "prob_max",
    "prob_max_all",
]


@dataclass(frozen=True)
class BetaPosterior:
    """Beta(alpha, beta) state for one arm's success probability."""

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        for p in (self.alpha, self.beta):
            if not (math.isfinite(p) and p > 0):
                raise ValueError(f"Beta parameters must be positive finite, got {self}")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


@dataclass(frozen=True)
class SuccessCount:
    """Dichotomised outcome tally for one arm."""

    successes: int
    failures: int

    def __post_init__(self) -> None:
        if self.successes < 0 or self.failures < 0:
            raise ValueError(f"counts must be non-negative, got {self}")


@dataclass(frozen=True)
class MonteCarlo:
    """Seeded Monte Carlo configuration for the sampling-based estimators."""

    draws: int = 100_000
    seed: int | np.random.SeedSequence | None = None

    def __post_init__(self) -> None:
        if self.draws < 1:
            raise ValueError(f"draws must be >= 1, got {self.draws}")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def update(prior: BetaPosterior, counts: SuccessCount) -> BetaPosterior:
    """Conjugate update: Beta(a, b) + (s, f) -> Beta(a + s, b + f)."""
    return BetaPosterior(prior.alpha + counts.successes, prior.beta + counts.failures)


def _is_integral(x: float) -> bool:
    return float(x).is_integer()


@lru_cache(maxsize=65536)
def _prob_greater_int(aa: int, ab: int, ba: int, bb: int) -> float:
    # P(X > Y), X ~ Beta(aa, ab), Y ~ Beta(ba, bb), all parameters integers.
    # Finite sum over i < aa of exp(log-Beta ratios); every term is positive
    # so fsum keeps the result well below the 1e-9 error budget.
    def lbeta(x: float, y: float) -> float:
        return math.lgamma(x) + math.lgamma(y) - math.lgamma(x + y)

    terms = [
        math.exp(
            lbeta(ba + i, ab + bb)
            - math.log(ab + i)
            - lbeta(1 + i, ab)
            - lbeta(ba, bb)
        )
        for i in range(aa)
    ]
    return min(1.0, math.fsum(terms))


def _pg_quad_oriented(a: BetaPosterior, b: BetaPosterior) -> float:
    # P(X > Y) = int_0^1 S_X(y) f_Y(y) dy with S_X the survival function of
    # X.  Shape parameters below 1 make f_Y singular at an endpoint, and no
    # float64 quadrature node can resolve mass closer to 1 than ~1e-16, so:
    # split at 1/2, rewrite the upper half in u = 1 - y via the reflection
    # S_X(1-u) = I_u(a.beta, a.alpha) so nothing is evaluated near 1, then
    # remove each algebraic singularity exactly with the power substitution
    # y = w**(1/shape) (y**(shape-1) dy = dw / shape).  Both integrands are
    # then bounded on their intervals and tanh-sinh quadrature resolves the
    # remaining endpoint derivative cusps to well below the 1e-9 budget.
    from scipy.integrate import tanhsinh
    from scipy.special import betainc, betaincc, betaln

    aa, ab, ba, bb = a.alpha, a.beta, b.alpha, b.beta
    lb = betaln(ba, bb)

    def lower(w: np.ndarray) -> np.ndarray:
        y = np.power(w, 1.0 / ba)
        return betaincc(aa, ab, y) * np.exp((bb - 1.0) * np.log1p(-y) - lb) / ba

    def upper(w: np.ndarray) -> np.ndarray:
        u = np.power(w, 1.0 / bb)
        return betainc(ab, aa, u) * np.exp((ba - 1.0) * np.log1p(-u) - lb) / bb

    total = 0.0
    for integrand, shape in ((lower, ba), (upper, bb)):
        top = 0.5**shape
        if top > 0.0:
            res = tanhsinh(integrand, 0.0, top, atol=5e-13, rtol=0.0)
            total += float(res.integral)
    return total


def _prob_greater_quad(a: BetaPosterior, b: BetaPosterior) -> float:
    # Canonical orientation: both orderings of a pair are answered from the
    # same quadrature value, so the complement identity holds to one ulp no
    # matter what the quadrature error is.
    ka = (a.alpha, a.beta)
    kb = (b.alpha, b.beta)
    if ka == kb:
        return 0.5
    if kb < ka:
        return min(1.0, max(0.0, 1.0 - _pg_quad_oriented(b, a)))
    return min(1.0, max(0.0, _pg_quad_oriented(a, b)))


def prob_greater(
    a: BetaPosterior,
    b: BetaPosterior,
    method: str | MonteCarlo = "exact",
) -> float:
    """P(X > Y) for X ~ a and Y ~ b.

    method="exact" evaluates deterministically: a closed-form finite sum when
    all four parameters are integers (the only case reachable from integer
    priors and counts), adaptive quadrature otherwise; absolute error <= 1e-9
    either way. Passing a MonteCarlo config estimates by seeded sampling.
    """
    if isinstance(method, MonteCarlo):
        rng = method.rng()
        x = rng.beta(a.alpha, a.beta, method.draws)
        y = rng.beta(b.alpha, b.beta, method.draws)
        return float(np.mean(x > y))
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")
    params = (a.alpha, a.beta, b.alpha, b.beta)
    if all(_is_integral(p) for p in params):
        return _prob_greater_int(*(int(p) for p in params))
    return _prob_greater_quad(a, b)


def prob_max_all(
    posteriors: list[BetaPosterior] | tuple[BetaPosterior, ...],
    mc: MonteCarlo,
) -> np.ndarray:
    """P(each arm has the maximum success probability), jointly estimated.

    One common sample of shape (draws, K) is drawn; each draw credits exactly
    one arm, with argmax ties broken uniformly, so the K estimates sum to
    exactly 1.
    """
    k = len(posteriors)
    if k < 2:
        raise ValueError("need at least two posteriors")
    rng = mc.rng()
    samples = np.column_stack(
        [rng.beta(p.alpha, p.beta, mc.draws) for p in posteriors]
    )
    winners = np.argmax(samples, axis=1)
    row_max = samples[np.arange(mc.draws), winners]
    tied = (samples == row_max[:, None]).sum(axis=1) > 1
    if tied.any():
        for row in np.nonzero(tied)[0]:
            options = np.nonzero(samples[row] == row_max[row])[0]
            winners[row] = options[rng.integers(len(options))]
    counts = np.bincount(winners, minlength=k)
    probs = counts / mc.draws
    # counts sum to draws exactly; fold the per-entry division rounding (at
    # most a few ulps) into the last entry so the float sum is exactly 1
    partial = 0.0
    for i in range(k - 1):
        partial = partial + float(probs[i])
    probs[k - 1] = 1.0 - partial
    return probs


def prob_max(
    posteriors: list[BetaPosterior] | tuple[BetaPosterior, ...],
    arm: int,
    mc: MonteCarlo,
) -> float:
    """P(arm's success probability is the maximum of all arms)."""
    if not 0 <= arm < len(posteriors):
        raise ValueError(f"arm index {arm} out of range for {len(posteriors)} arms")
    return float(prob_max_all(posteriors, mc)[arm])
