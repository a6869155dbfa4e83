"""Closed-form outage probability of the greedy system and its estimators.

For i.i.d. resources the greedy allocator's outage probability is an exact
mixture of two limiting systems: with probability (1 - F_Q)^(R-1) every
scanned resource is rejected and the user lands on the last one (outage
rate P1); otherwise some resource is accepted (outage rate P_inf, the
outage probability conditional on acceptance). The finite-sample estimators
here plug empirical frequencies into that expression and report binomial
standard errors so Monte Carlo runs can be compared at principled
tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEstimateError


@dataclass(frozen=True)
class OutageInputs:
    """The three probabilities the closed form needs, plus the pool size."""

    p1: float
    fq: float
    pinf: float
    resource_count: int

    def __post_init__(self):
        for name in ("p1", "fq", "pinf"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.resource_count < 1:
            raise ValueError(
                f"resource_count must be >= 1, got {self.resource_count}"
            )


@dataclass(frozen=True)
class OutageEstimate:
    value: float
    n_samples: int
    standard_error: float
    method: str  # "monte_carlo" or "closed_form_plugin"


def binomial_se(p: float, n: int) -> float:
    if n < 1:
        return math.nan
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def closed_form_outage(inputs: OutageInputs) -> float:
    """p1*(1-fq)^(R-1) + pinf*(1 - (1-fq)^(R-1))."""
    g = (1.0 - inputs.fq) ** (inputs.resource_count - 1)
    return inputs.p1 * g + inputs.pinf * (1.0 - g)


def empirical_p1(labels) -> float:
    """Outage fraction of a label vector."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size == 0:
        raise ValueError("empty label vector")
    return float(np.mean(labels))


def empirical_fq(q, q_th: float) -> float:
    """Fraction of outputs at or below the threshold (ties accepted)."""
    q = np.asarray(q, dtype=np.float64)
    if q.size == 0:
        raise ValueError("empty output vector")
    return float(np.mean(q <= q_th))


def empirical_pinf(q, labels, q_th: float) -> float:
    """Outage fraction among accepted samples, |T_n| / |V_n|."""
    q = np.asarray(q, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if q.shape != labels.shape or q.size == 0:
        raise ValueError("q and labels must be equal-length nonempty vectors")
    accepted = q <= q_th
    n_acc = int(np.count_nonzero(accepted))
    if n_acc == 0:
        raise DegenerateEstimateError(
            "no accepted samples: conditional outage estimate is undefined"
        )
    return float(np.sum(labels[accepted]) / n_acc)


def geometric_series_check(p: float, fq: float, n_terms: int) -> float:
    """Truncated sum of p*(1-fq)^(i-1)*fq; converges to p as terms grow."""
    if not 0.0 < fq <= 1.0:
        raise ValueError(f"fq must be in (0, 1], got {fq}")
    if n_terms < 1:
        raise ValueError(f"n_terms must be >= 1, got {n_terms}")
    i = np.arange(n_terms, dtype=np.float64)
    return float(p * fq * np.sum((1.0 - fq) ** i))
