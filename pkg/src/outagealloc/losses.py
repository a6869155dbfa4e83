"""Confusion-matrix functionals and training losses over predictor outputs.

The four tallies TN/FN/TP/FP are weighted sums over a batch: the weight of
the "accept" side of sample i is f(q_th - q_i) and the "reject" side gets
the complement, so the tallies always partition the batch size exactly.
With the Heaviside step for f they are plain counts (ties at q_th count as
accepted); with the logistic surrogate they are smooth in q, which is what
makes the outage-rate objective differentiable.

The batch objective mirrors the closed-form outage expression of a greedy
multi-resource system: single-resource outage rate times the probability
that every resource is rejected, plus the accepted-conditional outage rate
times its complement. It is a functional of the whole batch (ratios of
tallies), not a mean of per-sample terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEstimateError

EPS_GUARD = 1e-12

LOSS_KINDS = ("custom", "bce", "mse", "mae")


@dataclass(frozen=True)
class ConfusionTally:
    """TN/FN/TP/FP sums for one batch under a chosen weighting."""

    tn: float
    fn: float
    tp: float
    fp: float
    n: int
    f_kind: str  # "heaviside" or "logistic"
    alpha: float | None
    q_th: float

    @property
    def total(self) -> float:
        return self.tn + self.fn + self.tp + self.fp


@dataclass
class LossValue:
    value: float
    grad: np.ndarray  # d value / d q_i, one entry per sample


def heaviside(x):
    """Step function with the tie convention 1(0) = 1."""
    out = (np.asarray(x, dtype=np.float64) >= 0.0).astype(np.float64)
    if out.ndim == 0:
        return float(out)
    return out


def logistic(alpha: float, x):
    """Smooth step 1/(1 + exp(-alpha*x)); exact Heaviside as alpha -> inf."""
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    ax = np.asarray(alpha * np.asarray(x, dtype=np.float64))
    out = np.empty_like(ax, dtype=np.float64)
    pos = ax >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-ax[pos]))
    ex = np.exp(ax[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def _check_batch(q, b):
    q = np.asarray(q, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if q.ndim != 1 or q.shape != b.shape:
        raise ValueError(f"q and b must be equal-length vectors, got {q.shape} vs {b.shape}")
    if q.size == 0:
        raise ValueError("empty batch")
    return q, b


def accept_weights(q, q_th: float, f_kind: str, alpha: float | None = None):
    """Weight of the accepted ('no outage predicted') side per sample."""
    q = np.asarray(q, dtype=np.float64)
    if f_kind == "heaviside":
        return heaviside(q_th - q)
    if f_kind == "logistic":
        if alpha is None:
            raise ValueError("logistic weighting needs alpha")
        return logistic(alpha, q_th - q)
    raise ValueError(f"unknown f_kind {f_kind!r}")


def confusion(
    q, b, q_th: float, f_kind: str = "heaviside", alpha: float | None = None
) -> ConfusionTally:
    """Weighted TN/FN/TP/FP; reject-side weight is the accept complement."""
    q, b = _check_batch(q, b)
    w_acc = accept_weights(q, q_th, f_kind, alpha)
    w_rej = 1.0 - w_acc
    return ConfusionTally(
        tn=float(np.sum(w_acc * (1.0 - b))),
        fn=float(np.sum(w_acc * b)),
        tp=float(np.sum(w_rej * b)),
        fp=float(np.sum(w_rej * (1.0 - b))),
        n=q.size,
        f_kind=f_kind,
        alpha=alpha,
        q_th=q_th,
    )


def p1_hat(t: ConfusionTally) -> float:
    """Outage fraction of the batch: (TP + FN) / total."""
    if t.n < 1:
        raise ValueError("empty batch")
    return (t.tp + t.fn) / max(t.total, EPS_GUARD)


def fq_hat(t: ConfusionTally) -> float:
    """Accepted fraction of the batch: (TN + FN) / total."""
    if t.n < 1:
        raise ValueError("empty batch")
    return (t.tn + t.fn) / max(t.total, EPS_GUARD)


def pinf_hat(t: ConfusionTally) -> float:
    """Outage fraction among accepted samples: FN / (TN + FN)."""
    if t.n < 1:
        raise ValueError("empty batch")
    den = t.tn + t.fn
    if t.f_kind == "heaviside" and den == 0.0:
        raise DegenerateEstimateError(
            "no accepted samples: FN/(TN+FN) is undefined under heaviside weighting"
        )
    return t.fn / max(den, EPS_GUARD)


def custom_loss(
    q, b, q_th: float, alpha: float, resource_count: int
) -> LossValue:
    """Smooth batch-level outage-rate objective with analytic gradient.

    value = p1h * (1 - fqh)^(R-1) + pinfh * (1 - (1 - fqh)^(R-1)) where the
    hatted ratios come from logistic-weighted tallies. Under the complement
    weighting p1h is just the label mean, so the gradient flows through the
    acceptance mass S = sum_i w_i and the accepted-outage mass S_b.
    """
    q, b = _check_batch(q, b)
    if resource_count < 1:
        raise ValueError(f"resource_count must be >= 1, got {resource_count}")
    n = q.size
    w = accept_weights(q, q_th, "logistic", alpha)  # (n,)
    s = float(np.sum(w))
    s_b = float(np.sum(w * b))
    p1h = float(np.mean(b))
    fqh = s / n
    pinfh = s_b / max(s, EPS_GUARD)

    r1 = resource_count - 1
    g_pow = (1.0 - fqh) ** r1
    value = p1h * g_pow + pinfh * (1.0 - g_pow)

    # dw_i/dq_i for w_i = logistic(alpha * (q_th - q_i))
    dw = -alpha * w * (1.0 - w)
    if r1 == 0:
        dg = np.zeros(n)
    else:
        dg = -r1 * (1.0 - fqh) ** (r1 - 1) * (dw / n)
    dpinf = dw * (b - pinfh) / max(s, EPS_GUARD)
    grad = (p1h - pinfh) * dg + (1.0 - g_pow) * dpinf
    return LossValue(value=value, grad=grad)


def bce(q, b) -> LossValue:
    """Mean binary cross-entropy; logs clamped away from 0 by 1e-12."""
    q, b = _check_batch(q, b)
    n = q.size
    qc = np.clip(q, EPS_GUARD, 1.0 - EPS_GUARD)
    value = float(np.mean(-(b * np.log(qc) + (1.0 - b) * np.log(1.0 - qc))))
    grad = (-b / qc + (1.0 - b) / (1.0 - qc)) / n
    return LossValue(value=value, grad=grad)


def mse(q, b) -> LossValue:
    q, b = _check_batch(q, b)
    n = q.size
    d = q - b
    return LossValue(value=float(np.mean(d * d)), grad=2.0 * d / n)


def mae(q, b) -> LossValue:
    """Mean absolute error; subgradient 0 at q == b."""
    q, b = _check_batch(q, b)
    n = q.size
    d = q - b
    return LossValue(value=float(np.mean(np.abs(d))), grad=np.sign(d) / n)


def batch_loss(
    kind: str,
    q,
    b,
    q_th: float = 0.5,
    alpha: float = 10.0,
    resource_count: int = 1,
) -> LossValue:
    """Dispatch on loss kind with shared argument conventions."""
    if kind == "custom":
        return custom_loss(q, b, q_th, alpha, resource_count)
    if kind == "bce":
        return bce(q, b)
    if kind == "mse":
        return mse(q, b)
    if kind == "mae":
        return mae(q, b)
    raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {kind!r}")
