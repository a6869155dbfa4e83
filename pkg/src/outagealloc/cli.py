"""Experiment orchestration: generate | train | sweep | verify.

A single JSON config describes the channel, the dataset, the training
protocol, and the evaluation grids; unknown keys are rejected so typos in
sweep grids fail loudly. All commands are deterministic functions of
(config, seed): rerunning produces byte-identical datasets, parameter
files, and CSVs.

Exit codes: 0 success, 2 config error, 3 verification failure, 4 I/O or
file-format error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import allocator as al
from . import channel as ch
from . import losses as ls
from . import predictor as pr
from . import trainer as tr
from .analysis import OutageInputs, binomial_se, closed_form_outage
from .errors import ConfigError, DataFormatError
from .verification import run_verify

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3
EXIT_IO = 4

SWEEP_AXES = ("q_th", "gamma", "l")

_DEFAULTS = {
    "n_taps": 1024,
    "k": 100,
    "l_list": [10],
    "resource_count": 6,
    "phase_half_width": 0.1,
    "gamma_list": [0.575],
    "capacity_mode": "mean",
    "n_windows": 20000,
    "loss_kinds": ["custom", "bce", "mse", "mae"],
    "q_th_train": 0.5,
    "alpha": 10.0,
    "batch_size": 256,
    "epochs": 5,
    "learning_rate": 1e-3,
    "replicate_count": 10,
    "feature_mode": "magnitude",
    "val_fraction": 0.1,
    "q_th_list": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
    "q_th_eval": 0.1,
    "n_episodes": 10000,
    "independence_mode": "shared_fft",
    "seed": 1234,
}


@dataclass(frozen=True)
class ExperimentConfig:
    n_taps: int
    k: int
    l_list: tuple
    resource_count: int
    phase_half_width: float
    gamma_list: tuple
    capacity_mode: str
    n_windows: int
    loss_kinds: tuple
    q_th_train: float
    alpha: float
    batch_size: int
    epochs: int
    learning_rate: float
    replicate_count: int
    feature_mode: str
    val_fraction: float
    q_th_list: tuple
    q_th_eval: float
    n_episodes: int
    independence_mode: str
    seed: int

    def sim(self, l: int, gamma: float) -> ch.SimConfig:
        return ch.SimConfig(
            n_taps=self.n_taps,
            k=self.k,
            l=l,
            resource_count=self.resource_count,
            phase_half_width=self.phase_half_width,
            gamma_th=gamma,
            capacity_mode=self.capacity_mode,
            seed=self.seed,
        )

    def train_config(self, kind: str, seed: int) -> tr.TrainConfig:
        return tr.TrainConfig(
            loss_kind=kind,
            q_th_train=self.q_th_train,
            alpha=self.alpha,
            resource_count=self.resource_count,
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            seed=seed,
            replicate_count=self.replicate_count,
            feature_mode=self.feature_mode,
            val_fraction=self.val_fraction,
        )


def load_config(path: str, seed_override: int | None = None) -> ExperimentConfig:
    """Parse and fully validate a JSON experiment config."""
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = sorted(set(raw) - set(_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    merged = {**_DEFAULTS, **raw}
    if seed_override is not None:
        merged["seed"] = seed_override

    if merged["loss_kinds"] == "all":
        merged["loss_kinds"] = list(ls.LOSS_KINDS)
    if not isinstance(merged["loss_kinds"], list) or not merged["loss_kinds"]:
        raise ConfigError("loss_kinds must be a nonempty list or 'all'")
    for kind in merged["loss_kinds"]:
        if kind not in ls.LOSS_KINDS:
            raise ConfigError(
                f"loss_kinds entry {kind!r} not in {ls.LOSS_KINDS}"
            )
    for grid in ("l_list", "gamma_list", "q_th_list"):
        if not isinstance(merged[grid], list) or not merged[grid]:
            raise ConfigError(f"{grid} must be a nonempty list")
    for q in list(merged["q_th_list"]) + [merged["q_th_eval"], merged["q_th_train"]]:
        if not 0.0 <= q <= 1.0:
            raise ConfigError(f"q_th values must be in [0, 1], got {q}")
    if merged["n_windows"] < 1:
        raise ConfigError(f"n_windows must be >= 1, got {merged['n_windows']}")
    if merged["n_episodes"] < 1:
        raise ConfigError(f"n_episodes must be >= 1, got {merged['n_episodes']}")
    if merged["independence_mode"] not in al.INDEPENDENCE_MODES:
        raise ConfigError(
            f"independence_mode must be one of {al.INDEPENDENCE_MODES}, "
            f"got {merged['independence_mode']!r}"
        )

    cfg = ExperimentConfig(
        **{
            **merged,
            "l_list": tuple(merged["l_list"]),
            "gamma_list": tuple(merged["gamma_list"]),
            "q_th_list": tuple(merged["q_th_list"]),
            "loss_kinds": tuple(merged["loss_kinds"]),
        }
    )
    # channel and trainer field validation (raises ConfigError on bad values)
    for l in cfg.l_list:
        for gamma in cfg.gamma_list:
            cfg.sim(l, gamma)
    cfg.train_config(cfg.loss_kinds[0], cfg.seed)
    return cfg


def dataset_path(out: str, l: int) -> str:
    return os.path.join(out, f"dataset_l{l}.outageds")


def params_path(out: str, kind: str, l: int, gamma: float, rep: int) -> str:
    return os.path.join(out, f"params_{kind}_l{l}_g{gamma:g}_r{rep}.outageqp")


def history_path(out: str, kind: str, l: int, gamma: float, rep: int) -> str:
    return os.path.join(out, f"history_{kind}_l{l}_g{gamma:g}_r{rep}.csv")


def _train_seed(cfg: ExperimentConfig, kind_i: int, l_i: int, g_i: int, rep: int) -> int:
    return cfg.seed + 100_000 * kind_i + 10_000 * l_i + 1_000 * g_i + rep


def _eval_seed(cfg: ExperimentConfig, rep: int) -> int:
    return cfg.seed + 900_000 + rep


def cmd_generate(cfg: ExperimentConfig, out: str) -> int:
    """One dataset file per prediction length; labels at gamma_list[0]."""
    os.makedirs(out, exist_ok=True)
    for l in cfg.l_list:
        sim = cfg.sim(l, cfg.gamma_list[0])
        path = dataset_path(out, l)
        batch = ch.build_dataset(sim, cfg.n_windows, path=path, seed=cfg.seed + l)
        print(
            f"wrote {path}: {batch.n} records "
            f"(k={batch.k}, l={batch.l}), outage label rate {batch.labels.mean():.4f}"
        )
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, out: str) -> int:
    """Train replicates for every (loss kind, l, gamma) grid point."""
    os.makedirs(out, exist_ok=True)
    for l_i, l in enumerate(cfg.l_list):
        dpath = dataset_path(out, l)
        if not os.path.exists(dpath):
            raise FileNotFoundError(
                f"dataset {dpath} not found; run the generate command first"
            )
        stored = ch.load_dataset(dpath)
        for g_i, gamma in enumerate(cfg.gamma_list):
            data = ch.relabel(stored, gamma)
            for k_i, kind in enumerate(cfg.loss_kinds):
                losses = []
                for rep in range(cfg.replicate_count):
                    tcfg = cfg.train_config(kind, _train_seed(cfg, k_i, l_i, g_i, rep))
                    params, history = tr.train(tcfg, data)
                    pr.save_params(params, params_path(out, kind, l, gamma, rep))
                    tr.write_history_csv(
                        history, history_path(out, kind, l, gamma, rep)
                    )
                    losses.append(history.steps[-1][2])
                print(
                    f"trained {kind} l={l} gamma={gamma:g}: "
                    f"{cfg.replicate_count} replicate(s), "
                    f"final loss mean {np.mean(losses):.6f}"
                )
    return EXIT_OK


def _aggregate(results: list) -> dict:
    """Pool per-replicate Monte Carlo summaries into one sweep row."""
    outages = np.array([r.outage.value for r in results])
    n_total = int(sum(r.outage.n_samples for r in results))
    mean_outage = float(np.mean(outages))
    p1 = float(np.mean([r.p1 for r in results]))
    fq = float(np.mean([r.fq for r in results]))
    acc = [(r.pinf, r.n_accepted) for r in results if r.n_accepted > 0]
    if acc:
        den = sum(n for _, n in acc)
        pinf = sum(p * n for p, n in acc) / den
    else:
        pinf = 0.0
    plugin = closed_form_outage(
        OutageInputs(
            p1=p1, fq=fq, pinf=pinf, resource_count=results[0].resource_count
        )
    )
    return {
        "mean_outage": mean_outage,
        "stderr": binomial_se(mean_outage, n_total),
        "min_outage": float(np.min(outages)),
        "max_outage": float(np.max(outages)),
        "n_episodes": n_total,
        "empirical_p1": p1,
        "closed_form_plugin": plugin,
    }


def _replicate_summaries(
    cfg: ExperimentConfig,
    out: str,
    sim: ch.SimConfig,
    kind: str,
    l: int,
    gamma: float,
    q_ths: list[float],
) -> dict[float, list]:
    """Evaluate each trained replicate once, summarized at every threshold."""
    by_q = {q: [] for q in q_ths}
    for rep in range(cfg.replicate_count):
        ppath = params_path(out, kind, l, gamma, rep)
        if not os.path.exists(ppath):
            raise FileNotFoundError(
                f"parameters {ppath} not found; run the train command first"
            )
        params = pr.load_params(ppath)
        evaluation = al.evaluate_episodes(
            sim,
            params,
            cfg.n_episodes,
            cfg.independence_mode,
            seed=_eval_seed(cfg, rep),
        )
        for q_th in q_ths:
            by_q[q_th].append(al.summarize(evaluation, q_th))
    return by_q


def cmd_sweep(cfg: ExperimentConfig, out: str, axis: str) -> int:
    """Evaluate trained predictors along one grid axis; write a CSV."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    os.makedirs(out, exist_ok=True)
    l0 = cfg.l_list[0]
    g0 = cfg.gamma_list[0]
    rows = []
    if axis == "q_th":
        sim = cfg.sim(l0, g0)
        for kind in cfg.loss_kinds:
            by_q = _replicate_summaries(
                cfg, out, sim, kind, l0, g0, list(cfg.q_th_list)
            )
            for q_th, results in by_q.items():
                rows.append((q_th, kind, _aggregate(results)))
    elif axis == "gamma":
        for gamma in cfg.gamma_list:
            sim = cfg.sim(l0, gamma)
            for kind in cfg.loss_kinds:
                by_q = _replicate_summaries(
                    cfg, out, sim, kind, l0, gamma, [cfg.q_th_eval]
                )
                rows.append((gamma, kind, _aggregate(by_q[cfg.q_th_eval])))
    else:
        for l in cfg.l_list:
            sim = cfg.sim(l, g0)
            for kind in cfg.loss_kinds:
                by_q = _replicate_summaries(
                    cfg, out, sim, kind, l, g0, [cfg.q_th_eval]
                )
                rows.append((l, kind, _aggregate(by_q[cfg.q_th_eval])))

    rows.sort(key=lambda r: (r[0], r[1]))
    path = os.path.join(out, f"sweep_{axis}.csv")
    columns = [
        "axis",
        "axis_value",
        "loss_kind",
        "mean_outage",
        "stderr",
        "min_outage",
        "max_outage",
        "n_episodes",
        "empirical_p1",
        "closed_form_plugin",
    ]
    with open(path, "w", newline="") as f:
        f.write(",".join(columns) + "\n")
        for value, kind, agg in rows:
            f.write(
                ",".join(
                    [
                        axis,
                        repr(value),
                        kind,
                        repr(agg["mean_outage"]),
                        repr(agg["stderr"]),
                        repr(agg["min_outage"]),
                        repr(agg["max_outage"]),
                        str(agg["n_episodes"]),
                        repr(agg["empirical_p1"]),
                        repr(agg["closed_form_plugin"]),
                    ]
                )
                + "\n"
            )
    print(f"wrote {path}: {len(rows)} rows")
    return EXIT_OK


def cmd_verify(quick: bool = False) -> int:
    """Run the consistency suite; nonzero exit if anything fails."""
    results = run_verify(quick)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    if failed:
        print(f"{len(failed)} check(s) failed: " + ", ".join(r.name for r in failed))
        return EXIT_CHECK
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="outagealloc",
        description="Greedy resource allocation with a learned outage predictor",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="synthesize labelled datasets")
    p_train = sub.add_parser("train", help="train predictors on generated data")
    p_sweep = sub.add_parser("sweep", help="evaluate predictors along a grid axis")
    p_sweep.add_argument("--axis", choices=SWEEP_AXES, required=True)
    for p in (p_gen, p_train, p_sweep):
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")

    p_verify = sub.add_parser("verify", help="run the consistency check suite")
    p_verify.add_argument("--quick", action="store_true", help="smaller samples, wider tolerances")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args.quick)
        cfg = load_config(args.config, args.seed)
        if args.command == "generate":
            return cmd_generate(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.out)
        return cmd_sweep(cfg, args.out, args.axis)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DataFormatError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
