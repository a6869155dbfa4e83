"""Self-contained consistency checks between simulation, theory, and code.

Each check returns a CheckResult with the measured-vs-expected numbers in
its detail string, so a failing run says what was off and by how much. The
checks are deterministic (fixed seeds) and sized to finish in minutes; the
quick variants shrink sample counts and widen statistical tolerances for
fast smoke runs.

Finite-difference comparisons use relative error with the denominator
max(|fd|, |analytic|, floor). The floor keeps central-difference roundoff
(absolute noise ~1e-11 at step 1e-5 in f64) from registering on near-zero
components; a genuinely wrong gradient still shows up at full scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import allocator as al
from . import analysis as an
from . import channel as ch
from . import losses as ls
from . import predictor as pr


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _fd_relative_errors(value_fn, params: pr.PredictorParams, analytic, eps, floor):
    """Max relative error of analytic parameter gradients vs central FD."""
    worst = 0.0
    for name, a in params.tensors():
        g = analytic[name]
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = value_fn()
            flat[j] = orig - eps
            dn = value_fn()
            flat[j] = orig
            fd = (up - dn) / (2.0 * eps)
            rel = abs(fd - gflat[j]) / max(abs(fd), abs(gflat[j]), floor)
            if rel > worst:
                worst = rel
    return worst


def check_closed_form(quick: bool = False) -> CheckResult:
    """Monte Carlo outage vs the closed-form plug-in, i.i.d. resources.

    Three stub predictors and three (R, q_th, gamma_th) settings; the
    plug-in inputs come from an independently seeded run so the two sides
    share no randomness.
    """
    n = 20_000 if quick else 100_000
    tol_sigma = 4.0 if quick else 3.0
    settings = [
        (2, 0.5, 0.3, al.LastMagnitudeStub(0.8)),
        (6, 0.5, 0.575, al.MeanMagnitudeStub(0.85)),
        (10, 0.4, 0.8, al.ScaledMagnitudeStub(0.5)),
    ]
    details = []
    ok = True
    for i, (r, q_th, gamma, stub) in enumerate(settings):
        cfg = ch.SimConfig(
            n_taps=32, k=6, l=4, resource_count=r, gamma_th=gamma, seed=0
        )
        mc = al.monte_carlo(
            cfg, stub, q_th, n, "independent_episodes", seed=1_000 + i
        )
        est = al.monte_carlo(
            cfg, stub, q_th, n, "independent_episodes", seed=2_000 + i
        )
        diff = abs(mc.outage.value - est.plugin.value)
        bound = tol_sigma * float(
            np.hypot(mc.outage.standard_error, est.plugin.standard_error)
        )
        ok &= diff < bound
        details.append(
            f"R={r}: |{mc.outage.value:.5f} - {est.plugin.value:.5f}| = "
            f"{diff:.5f} vs {bound:.5f}"
        )
    return CheckResult("closed_form_plugin", ok, "; ".join(details))


def check_endpoints(quick: bool = False) -> CheckResult:
    """At thresholds 0 and 1 the system must match a single resource."""
    n = 5_000 if quick else 30_000
    cfg = ch.SimConfig(n_taps=64, k=6, l=4, resource_count=6, gamma_th=0.575, seed=0)
    stub = al.LastMagnitudeStub(0.8)
    details = []
    ok = True
    for q_th in (0.0, 1.0):
        mc = al.monte_carlo(cfg, stub, q_th, n, "shared_fft", seed=31)
        diff = abs(mc.outage.value - mc.p1)
        bound = 3.0 * float(np.hypot(mc.outage.standard_error, mc.p1_se))
        ok &= diff <= bound
        details.append(
            f"q_th={q_th:g}: |{mc.outage.value:.4f} - {mc.p1:.4f}| vs {bound:.4f}"
        )
    return CheckResult("endpoint_limits", ok, "; ".join(details))


def check_geometric_series() -> CheckResult:
    """Truncated acceptance-time series must collapse to p."""
    val = an.geometric_series_check(0.2, 0.5, 60)
    err = abs(val - 0.2)
    one_term = an.geometric_series_check(0.7, 1.0, 1)
    zero = an.geometric_series_check(0.0, 0.3, 25)
    ok = err < 1e-12 and one_term == 0.7 and zero == 0.0
    return CheckResult(
        "geometric_series", ok, f"|sum - p| = {err:.2e} (tol 1e-12)"
    )


def check_loss_gradients(quick: bool = False) -> CheckResult:
    """Analytic batch-loss gradient vs central differences on q."""
    n_batches = 5 if quick else 20
    rng = np.random.default_rng(77)
    eps = 1e-6
    worst = 0.0
    for _ in range(n_batches):
        q = rng.uniform(0.01, 0.99, 32)
        b = (rng.uniform(0, 1, 32) < 0.4).astype(float)
        lv = ls.custom_loss(q, b, 0.5, 10.0, 5)
        for j in range(q.size):
            qp = q.copy()
            qp[j] += eps
            qm = q.copy()
            qm[j] -= eps
            fd = (
                ls.custom_loss(qp, b, 0.5, 10.0, 5).value
                - ls.custom_loss(qm, b, 0.5, 10.0, 5).value
            ) / (2 * eps)
            rel = abs(fd - lv.grad[j]) / max(abs(fd), abs(lv.grad[j]), 1e-8)
            worst = max(worst, rel)
    ok = worst < 1e-6
    return CheckResult(
        "loss_gradient", ok, f"max rel err {worst:.2e} (tol 1e-6)"
    )


def check_lstm_gradients(quick: bool = False) -> CheckResult:
    """Batch loss differentiated through the full recurrent stack vs FD."""
    n_instances = 3 if quick else 10
    rng = np.random.default_rng(4242)
    arch = pr.PredictorArch()
    k, batch, r_count = 8, 6, 4
    eps = 1e-5
    worst = 0.0
    for _ in range(n_instances):
        params = pr.init_params(arch, rng)
        windows = rng.standard_normal((batch, k)) + 1j * rng.standard_normal(
            (batch, k)
        )
        b = (rng.uniform(0, 1, batch) < 0.5).astype(float)
        feats = pr.featurize_batch(windows, params.feature_mode)

        def loss_value() -> float:
            q = pr.forward_batch(params, feats, need_cache=False)[0]
            return ls.custom_loss(q, b, 0.5, 10.0, r_count).value

        q, cache = pr.forward_batch(params, feats)
        lv = ls.custom_loss(q, b, 0.5, 10.0, r_count)
        grads = pr.backward_batch(params, cache, lv.grad)
        worst = max(
            worst, _fd_relative_errors(loss_value, params, grads, eps, 1e-6)
        )
    ok = worst < 1e-4
    return CheckResult(
        "lstm_gradient", ok, f"max rel err {worst:.2e} over {n_instances} instances (tol 1e-4)"
    )


def check_rayleigh(quick: bool = False) -> CheckResult:
    """Extracted magnitudes vs the Rayleigh law, and drift magnitude safety."""
    n_episodes = 3_000 if quick else 10_000
    cfg = ch.SimConfig(n_taps=64, k=4, l=1, resource_count=4, gamma_th=0.5, seed=0)
    series = np.empty(n_episodes, dtype=np.complex128)
    for start, block in ch.iter_episode_blocks(cfg, 90, n_episodes):
        series[start : start + block.shape[0]] = block[:, 2, 3]
    pvalue = float(
        stats.kstest(np.abs(series), "rayleigh", args=(0, np.sqrt(0.5))).pvalue
    )

    rng = np.random.default_rng(123)
    v = ch.init_impulse_response(1024, rng)
    mags0 = np.abs(v.taps)
    for _ in range(1000):
        v = ch.advance(v, 0.1, rng)
    drift = float(np.max(np.abs(np.abs(v.taps) - mags0)))

    ok = pvalue >= 0.01 and drift < 1e-9
    return CheckResult(
        "rayleigh_channel",
        ok,
        f"KS p={pvalue:.4f} (need >= 0.01); tap magnitude drift {drift:.2e} "
        f"after 1000 steps (tol 1e-9)",
    )


def check_confusion_oracle(quick: bool = False) -> CheckResult:
    """Weighted tallies vs independent brute-force counting."""
    n_batches = 25 if quick else 100
    rng = np.random.default_rng(5)
    ok = True
    partition_worst = 0.0
    for _ in range(n_batches):
        n = int(rng.integers(1, 64))
        q = rng.uniform(0, 1, n)
        b = (rng.uniform(0, 1, n) < 0.5).astype(float)
        q_th = float(rng.uniform(0, 1))
        t = ls.confusion(q, b, q_th, "heaviside")
        tn = fn = tp = fp = 0
        for qi, bi in zip(q, b):
            if qi <= q_th:
                if bi == 0:
                    tn += 1
                else:
                    fn += 1
            else:
                if bi == 0:
                    fp += 1
                else:
                    tp += 1
        ok &= (t.tn, t.fn, t.tp, t.fp) == (tn, fn, tp, fp)
        tl = ls.confusion(q, b, q_th, "logistic", 10.0)
        partition_worst = max(partition_worst, abs(tl.total - n))
    ok &= partition_worst < 1e-9
    return CheckResult(
        "confusion_oracle",
        ok,
        f"{n_batches} batches exact; logistic partition worst |dev| = "
        f"{partition_worst:.2e} (tol 1e-9)",
    )


VERIFY_CHECKS = (
    check_closed_form,
    check_geometric_series,
    check_loss_gradients,
    check_lstm_gradients,
    check_rayleigh,
)


def run_verify(quick: bool = False) -> list[CheckResult]:
    results = []
    for fn in VERIFY_CHECKS:
        if fn is check_geometric_series:
            results.append(fn())
        else:
            results.append(fn(quick))
    return results
