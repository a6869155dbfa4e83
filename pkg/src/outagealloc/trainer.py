"""Mini-batch gradient training of the outage predictor.

Plain shuffled mini-batch descent with ADAM. The outage-rate objective is a
functional of the whole mini-batch (ratio estimates need mass), so its
gradient is taken jointly through all batch members; the pointwise losses
(BCE/MSE/MAE) reduce to per-sample gradient vectors fed through the same
backward pass. No class weighting or imbalance correction anywhere.

The replicate protocol retrains from `replicate_count` consecutive seeds
and reports the spread of Monte Carlo outage rates across the retrained
predictors.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import allocator as al
from . import channel as ch
from . import losses as ls
from . import predictor as pr
from .errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "custom"
    q_th_train: float = 0.5
    alpha: float = 10.0
    resource_count: int = 6
    batch_size: int = 256
    epochs: int = 5
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    replicate_count: int = 10
    feature_mode: str = "magnitude"
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.loss_kind not in ls.LOSS_KINDS:
            raise ConfigError(
                f"loss_kind must be one of {ls.LOSS_KINDS}, got {self.loss_kind!r}"
            )
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1 or (self.loss_kind == "custom" and self.batch_size < 2):
            raise ConfigError(
                f"batch_size too small for loss {self.loss_kind!r}: {self.batch_size}"
            )
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.replicate_count < 1:
            raise ConfigError(
                f"replicate_count must be >= 1, got {self.replicate_count}"
            )
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(
                f"val_fraction must be in [0, 1), got {self.val_fraction}"
            )
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.resource_count < 1:
            raise ConfigError(
                f"resource_count must be >= 1, got {self.resource_count}"
            )


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: pr.PredictorParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(a) for name, a in params.tensors()},
            v={name: np.zeros_like(a) for name, a in params.tensors()},
        )


@dataclass
class TrainHistory:
    loss_kind: str
    steps: list = field(default_factory=list)  # (step, epoch, loss_value)
    val_tallies: list = field(default_factory=list)  # (epoch, ConfusionTally)
    wall_clock_s: float = 0.0


def adam_step(
    params: pr.PredictorParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    step_index: int,
    cfg: TrainConfig,
):
    """Bias-corrected ADAM update, applied tensor by tensor in place."""
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**step_index
    c2 = 1.0 - b2**step_index
    for name, a in params.tensors():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        a -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return params, state


def _batch_fingerprint(feats: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(feats).tobytes()).hexdigest()[:12]


def train(
    cfg: TrainConfig, data: ch.WindowBatch, rng: np.random.Generator | None = None
):
    """Train one predictor; returns (params, history).

    Deterministic for a fixed (cfg, data): the rng defaults to a fresh
    Philox stream seeded from cfg.seed and drives initialization, the
    train/validation split, and every epoch's shuffle.
    """
    if data.n < 1:
        raise ValueError("empty dataset")
    if rng is None:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    t_start = time.perf_counter()

    feats = pr.featurize_batch(data.inputs, cfg.feature_mode)
    labels = data.labels.astype(np.float64)

    arch = pr.PredictorArch(feature_mode=cfg.feature_mode)
    params = pr.init_params(arch, rng)
    state = AdamState.zeros_like(params)

    perm = rng.permutation(data.n)
    n_val = int(round(data.n * cfg.val_fraction))
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    if train_idx.size == 0:
        raise ValueError("validation split leaves no training samples")

    history = TrainHistory(loss_kind=cfg.loss_kind)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = train_idx[rng.permutation(train_idx.size)]
        for lo in range(0, order.size, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            q, cache = pr.forward_batch(params, feats[batch])
            lv = ls.batch_loss(
                cfg.loss_kind,
                q,
                labels[batch],
                q_th=cfg.q_th_train,
                alpha=cfg.alpha,
                resource_count=cfg.resource_count,
            )
            step += 1
            if not np.isfinite(lv.value) or not np.all(np.isfinite(lv.grad)):
                raise RuntimeError(
                    f"non-finite loss at step {step} "
                    f"(batch {_batch_fingerprint(feats[batch])})"
                )
            grads = pr.backward_batch(params, cache, lv.grad)
            adam_step(params, grads, state, step, cfg)
            history.steps.append((step, epoch, lv.value))
        if val_idx.size:
            q_val = pr.forward_batch(params, feats[val_idx], need_cache=False)[0]
            tally = ls.confusion(q_val, labels[val_idx], cfg.q_th_train, "heaviside")
            history.val_tallies.append((epoch, tally))
    history.wall_clock_s = time.perf_counter() - t_start
    return params, history


def write_history_csv(history: TrainHistory, path: str) -> None:
    """Per-step loss rows; validation tallies fill the epoch's last row."""
    val_by_epoch = {epoch: t for epoch, t in history.val_tallies}
    last_step_of_epoch = {}
    for step, epoch, _ in history.steps:
        last_step_of_epoch[epoch] = step
    with open(path, "w", newline="") as f:
        f.write("step,epoch,loss_kind,loss_value,val_tp,val_fp,val_tn,val_fn\n")
        for step, epoch, value in history.steps:
            cols = [str(step), str(epoch), history.loss_kind, repr(value)]
            tally = val_by_epoch.get(epoch)
            if tally is not None and step == last_step_of_epoch[epoch]:
                cols += [
                    repr(tally.tp),
                    repr(tally.fp),
                    repr(tally.tn),
                    repr(tally.fn),
                ]
            else:
                cols += ["", "", "", ""]
            f.write(",".join(cols) + "\n")


@dataclass(frozen=True)
class EvalConfig:
    """Monte Carlo evaluation settings attached to a training run."""

    sim: ch.SimConfig
    q_th: float
    n_episodes: int
    independence_mode: str = "shared_fft"
    seed: int = 10_000_019


@dataclass
class ReplicateEvaluation:
    """Spread of Monte Carlo outage across retrained predictors."""

    outages: np.ndarray  # per-replicate outage rates
    mean_outage: float
    std_outage: float
    min_outage: float
    max_outage: float
    results: list  # per-replicate MonteCarloResult
    params: list  # per-replicate PredictorParams
    histories: list


def replicate_train_eval(
    cfg: TrainConfig, data: ch.WindowBatch, eval_cfg: "EvalConfig"
) -> ReplicateEvaluation:
    """Train replicate_count predictors (seeds seed..seed+r-1) and evaluate.

    Each replicate is trained independently and scored on its own stream of
    fresh evaluation episodes; the mean over replicates is the headline
    number, min/max/std describe the spread.
    """
    outages = []
    results = []
    params_list = []
    histories = []
    for r in range(cfg.replicate_count):
        rcfg = replace(cfg, seed=cfg.seed + r)
        params, history = train(rcfg, data)
        mc = al.monte_carlo(
            eval_cfg.sim,
            params,
            eval_cfg.q_th,
            eval_cfg.n_episodes,
            eval_cfg.independence_mode,
            seed=eval_cfg.seed + r,
        )
        outages.append(mc.outage.value)
        results.append(mc)
        params_list.append(params)
        histories.append(history)
    outages = np.array(outages)
    return ReplicateEvaluation(
        outages=outages,
        mean_outage=float(np.mean(outages)),
        std_outage=float(np.std(outages, ddof=1)) if outages.size > 1 else 0.0,
        min_outage=float(np.min(outages)),
        max_outage=float(np.max(outages)),
        results=results,
        params=params_list,
        histories=histories,
    )
