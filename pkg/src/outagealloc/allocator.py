"""Greedy first-acceptance allocation and Monte Carlo outage evaluation.

The policy scans resources in index order and takes the first one whose
predictor output is at or below the classification threshold; if every
resource is rejected the last one is assigned anyway. An episode counts as
an outage when the selected resource's future window cannot support the
rate threshold.

The Monte Carlo engine evaluates the predictor on every resource of every
episode in vectorized blocks (provably equivalent to the lazy scan), and
alongside the outage rate accumulates first-resource estimates of the
single-resource outage rate, the acceptance probability, and the
accepted-conditional outage rate, so each run can be cross-checked against
the closed-form expression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import channel as ch
from . import predictor as pr
from .analysis import OutageEstimate, OutageInputs, binomial_se, closed_form_outage

INDEPENDENCE_MODES = ("shared_fft", "independent_episodes")


@dataclass
class AllocationOutcome:
    """Result of running the policy on one episode (resources count from 1)."""

    selected_resource: int
    predicted_outputs: np.ndarray  # outputs actually computed (prefix scan)
    fallback_used: bool
    outage: int


@dataclass
class EpisodeEvaluation:
    """Cached per-episode, per-resource predictor outputs and outage labels."""

    q: np.ndarray  # (n_episodes, R) predictor outputs
    labels: np.ndarray  # (n_episodes, R) outage bits
    resource_count: int


@dataclass
class MonteCarloResult:
    outage: OutageEstimate
    plugin: OutageEstimate
    p1: float
    p1_se: float
    fq: float
    fq_se: float
    pinf: float  # NaN when no first-resource sample was accepted
    pinf_se: float
    n_accepted: int
    fallback_rate: float
    q_th: float
    resource_count: int


class LstmPredictor:
    """Adapter giving trained parameters the batch-evaluation interface."""

    def __init__(self, params: pr.PredictorParams):
        self.params = params

    def predict_windows(self, windows: np.ndarray) -> np.ndarray:
        return pr.predict_windows(self.params, windows)


class LastMagnitudeStub:
    """q_high iff the newest sample's magnitude is below c, else q_low."""

    def __init__(self, c: float, q_low: float = 0.1, q_high: float = 0.9):
        self.c = c
        self.q_low = q_low
        self.q_high = q_high

    def predict_windows(self, windows: np.ndarray) -> np.ndarray:
        mags = np.abs(np.asarray(windows)[:, -1])
        return np.where(mags < self.c, self.q_high, self.q_low)


class MeanMagnitudeStub:
    """q_high iff the window's mean magnitude is below c, else q_low."""

    def __init__(self, c: float, q_low: float = 0.15, q_high: float = 0.85):
        self.c = c
        self.q_low = q_low
        self.q_high = q_high

    def predict_windows(self, windows: np.ndarray) -> np.ndarray:
        mags = np.mean(np.abs(np.asarray(windows)), axis=1)
        return np.where(mags < self.c, self.q_high, self.q_low)


class ScaledMagnitudeStub:
    """Continuous stub: newest magnitude scaled and clipped into (0, 1)."""

    def __init__(self, scale: float = 0.5):
        self.scale = scale

    def predict_windows(self, windows: np.ndarray) -> np.ndarray:
        mags = np.abs(np.asarray(windows)[:, -1])
        return np.clip(mags * self.scale, 0.005, 0.995)


class ConstantStub:
    def __init__(self, value: float):
        self.value = value

    def predict_windows(self, windows: np.ndarray) -> np.ndarray:
        return np.full(np.asarray(windows).shape[0], self.value)


def _as_predictor(obj):
    if isinstance(obj, pr.PredictorParams):
        return LstmPredictor(obj)
    if hasattr(obj, "predict_windows"):
        return obj
    raise TypeError(f"not a predictor: {type(obj).__name__}")


def greedy_select(q_values, q_th: float) -> tuple[int, bool]:
    """First index (1-based) with q <= q_th, else (R, fallback=True)."""
    q = np.asarray(q_values, dtype=np.float64)
    if q.ndim != 1 or q.size == 0:
        raise ValueError("q_values must be a nonempty vector")
    accepted = np.flatnonzero(q <= q_th)
    if accepted.size:
        return int(accepted[0]) + 1, False
    return q.size, True


def run_episode(
    episode: ch.ChannelEpisode,
    predictor,
    q_th: float,
    gamma_th: float,
    mode: str = "mean",
) -> AllocationOutcome:
    """Scan one episode lazily, stopping at the first accepted resource."""
    predictor = _as_predictor(predictor)
    k = episode.k
    outputs = []
    selected = episode.resource_count
    fallback = True
    for r in range(episode.resource_count):
        q_r = float(predictor.predict_windows(episode.samples[r, :k][None])[0])
        outputs.append(q_r)
        if q_r <= q_th:
            selected = r + 1
            fallback = False
            break
    future = episode.samples[selected - 1, k:]
    return AllocationOutcome(
        selected_resource=selected,
        predicted_outputs=np.array(outputs),
        fallback_used=fallback,
        outage=ch.label(future, gamma_th, mode),
    )


def select_outcomes(q: np.ndarray, labels: np.ndarray, q_th: float):
    """Vectorized greedy over cached outputs: (selected0, fallback, outage)."""
    accepted = q <= q_th
    any_acc = accepted.any(axis=1)
    first = np.argmax(accepted, axis=1)
    selected0 = np.where(any_acc, first, q.shape[1] - 1)
    outage = labels[np.arange(q.shape[0]), selected0]
    return selected0, ~any_acc, outage


def evaluate_episodes(
    cfg: ch.SimConfig,
    predictor,
    n_episodes: int,
    independence_mode: str = "shared_fft",
    seed: int | None = None,
) -> EpisodeEvaluation:
    """Predictor outputs and outage labels for every (episode, resource)."""
    if independence_mode not in INDEPENDENCE_MODES:
        raise ValueError(
            f"independence_mode must be one of {INDEPENDENCE_MODES}, "
            f"got {independence_mode!r}"
        )
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    predictor = _as_predictor(predictor)
    if seed is None:
        seed = cfg.seed
    independent = independence_mode == "independent_episodes"
    r = cfg.resource_count
    q = np.empty((n_episodes, r))
    labels = np.empty((n_episodes, r), dtype=np.uint8)
    for start, series in ch.iter_episode_blocks(cfg, seed, n_episodes, independent):
        count = series.shape[0]
        inputs = series[:, :, : cfg.k].reshape(count * r, cfg.k)
        q[start : start + count] = predictor.predict_windows(inputs).reshape(count, r)
        labels[start : start + count] = ch.window_labels(
            series[:, :, cfg.k :], cfg.gamma_th, cfg.capacity_mode
        )
    return EpisodeEvaluation(q=q, labels=labels, resource_count=r)


def summarize(evaluation: EpisodeEvaluation, q_th: float) -> MonteCarloResult:
    """Outage estimate plus first-resource plug-in inputs at one threshold."""
    n = evaluation.q.shape[0]
    r = evaluation.resource_count
    _, fallback, outage = select_outcomes(evaluation.q, evaluation.labels, q_th)
    mc_value = float(np.mean(outage))
    mc = OutageEstimate(
        value=mc_value,
        n_samples=n,
        standard_error=binomial_se(mc_value, n),
        method="monte_carlo",
    )

    # first-resource samples are identically distributed and independent of
    # the selection process, so they estimate (p1, fq, pinf) without bias
    q1 = evaluation.q[:, 0]
    b1 = evaluation.labels[:, 0].astype(np.float64)
    p1 = float(np.mean(b1))
    fq = float(np.mean(q1 <= q_th))
    accepted = q1 <= q_th
    n_acc = int(np.count_nonzero(accepted))
    if n_acc > 0:
        pinf = float(np.mean(b1[accepted]))
        pinf_se = binomial_se(pinf, n_acc)
    else:
        pinf = float("nan")
        pinf_se = float("nan")

    r1 = r - 1
    g = (1.0 - fq) ** r1
    plugin_value = closed_form_outage(
        OutageInputs(p1=p1, fq=fq, pinf=pinf if n_acc > 0 else 0.0, resource_count=r)
    )
    p1_se = binomial_se(p1, n)
    fq_se = binomial_se(fq, n)
    if r1 == 0 or fq >= 1.0:
        dfq = 0.0
    else:
        dfq = abs(p1 - (pinf if n_acc > 0 else 0.0)) * r1 * (1.0 - fq) ** (r1 - 1)
    plugin_se = float(
        np.sqrt(
            (g * p1_se) ** 2
            + ((1.0 - g) * (pinf_se if n_acc > 0 else 0.0)) ** 2
            + (dfq * fq_se) ** 2
        )
    )
    plugin = OutageEstimate(
        value=plugin_value,
        n_samples=n,
        standard_error=plugin_se,
        method="closed_form_plugin",
    )
    return MonteCarloResult(
        outage=mc,
        plugin=plugin,
        p1=p1,
        p1_se=p1_se,
        fq=fq,
        fq_se=fq_se,
        pinf=pinf,
        pinf_se=pinf_se,
        n_accepted=n_acc,
        fallback_rate=float(np.mean(fallback)),
        q_th=q_th,
        resource_count=r,
    )


def monte_carlo(
    cfg: ch.SimConfig,
    predictor,
    q_th: float,
    n_episodes: int,
    independence_mode: str = "shared_fft",
    seed: int | None = None,
) -> MonteCarloResult:
    """Fresh-episode outage rate of the greedy policy under a predictor."""
    evaluation = evaluate_episodes(cfg, predictor, n_episodes, independence_mode, seed)
    return summarize(evaluation, q_th)
