"""Continuous randomisation probability vectors for the unmapped rules.

Three rules are provided: fixed equal randomisation, posterior-probability-of-
maximum weighting with exponent gamma, and the control-protected rule whose
active arms are weighted by their posterior probability of beating control
while the control weight grows with its sample-size lag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .posterior import BetaPosterior, MonteCarlo, prob_greater, prob_max_all

__all__ = ["ProbVector", "ArmCounts", "fixed_equal", "ts_brar", "trippa_brar"]

_SUM_TOL = 1e-12


@dataclass(frozen=True)
class ProbVector:
    """Per-arm randomisation probabilities; entries in [0,1] summing to 1."""

    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if any(not (0.0 <= p <= 1.0) for p in self.probs):
            raise ValueError(f"probabilities outside [0,1]: {self.probs}")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")

    def __len__(self) -> int:
        return len(self.probs)

    def __getitem__(self, i: int) -> float:
        return self.probs[i]


@dataclass(frozen=True)
class ArmCounts:
    """Accrued allocation counts per arm."""

    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(c < 0 for c in self.counts):
            raise ValueError(f"counts must be non-negative: {self.counts}")

    def __len__(self) -> int:
        return len(self.counts)

    def __getitem__(self, i: int) -> int:
        return self.counts[i]


def _normalised(weights: list[float]) -> ProbVector:
    total = math.fsum(weights)
    if total <= 0 or not math.isfinite(total):
        raise RuntimeError(f"degenerate weight vector {weights}")
    return ProbVector(tuple(w / total for w in weights))


def fixed_equal(k: int) -> ProbVector:
    """Equal probability 1/K for each of K >= 2 arms."""
    if k < 2:
        raise ValueError(f"need at least two arms, got {k}")
    return ProbVector((1.0 / k,) * k)


def _prob_max_canonical(
    posteriors: list[BetaPosterior] | tuple[BetaPosterior, ...],
    mc: MonteCarlo,
) -> list[float]:
    # Estimate on a canonically sorted copy and average estimates across arms
    # with identical parameters; each arm's value then depends only on its own
    # parameters and the multiset, so permuting the input permutes the output
    # bit-exactly instead of re-randomising the draw stream.
    order = sorted(range(len(posteriors)), key=lambda i: (posteriors[i].alpha, posteriors[i].beta))
    pm = prob_max_all([posteriors[i] for i in order], mc)
    out = [0.0] * len(posteriors)
    i = 0
    while i < len(order):
        j = i
        key = (posteriors[order[i]].alpha, posteriors[order[i]].beta)
        while j < len(order) and (posteriors[order[j]].alpha, posteriors[order[j]].beta) == key:
            j += 1
        avg = math.fsum(float(pm[t]) for t in range(i, j)) / (j - i)
        for t in range(i, j):
            out[order[t]] = avg
        i = j
    return out


def ts_brar(
    posteriors: list[BetaPosterior] | tuple[BetaPosterior, ...],
    gamma: float,
    mc: MonteCarlo,
) -> ProbVector:
    """Probability-of-maximum weighting: pi_k proportional to P(k is best)^gamma.

    gamma = 0 returns fixed_equal exactly without touching the Monte Carlo
    stream; gamma = 1 is vanilla posterior-probability weighting.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    k = len(posteriors)
    if gamma == 0:
        return fixed_equal(k)
    pm = _prob_max_canonical(posteriors, mc)
    weights = [p**gamma for p in pm]
    if all(w == 0.0 for w in weights):
        raise RuntimeError("all probability-of-maximum estimates are zero")
    return _normalised(weights)


def trippa_brar(
    posteriors: list[BetaPosterior] | tuple[BetaPosterior, ...],
    counts: ArmCounts,
    gamma_t: float,
    eta_t: float,
    form: str = "ProductForm",
) -> ProbVector:
    """Control-protected rule for one control (arm 0) and two active arms.

    Raw active weights are p(theta_k > theta_C)^gamma_t normalised over the
    actives (so they sum to 1 before the control term joins); the control's
    raw weight is (1/K) * g(dn, eta_t) with dn = max(n_T1, n_T2) - n_C and g
    either exp(eta_t * dn) (ProductForm, default) or
    exp(sign(dn) * |dn|^eta_t) (PowerForm). The joint raw vector is then
    normalised to a probability vector.
    """
    if gamma_t < 0 or eta_t < 0:
        raise ValueError(f"gamma_t and eta_t must be >= 0, got {gamma_t}, {eta_t}")
    if len(posteriors) != 3 or len(counts) != 3:
        raise ValueError("rule is defined for exactly 3 arms with arm 0 as control")

    control = posteriors[0]
    beats = [prob_greater(p, control, method="exact") for p in posteriors[1:]]
    raw_active = [b**gamma_t for b in beats]
    active_total = math.fsum(raw_active)
    if active_total <= 0:
        raise RuntimeError("active-arm weights vanished")
    raw_active = [w / active_total for w in raw_active]

    dn = max(counts[1], counts[2]) - counts[0]
    if form == "ProductForm":
        g = math.exp(eta_t * dn)
    elif form == "PowerForm":
        g = math.exp(math.copysign(abs(dn) ** eta_t, dn)) if dn != 0 else 1.0
    else:
        raise ValueError(f"unknown control exponent form {form!r}")
    w_control = (1.0 / 3.0) * g
    return _normalised([w_control] + raw_active)
