"""Oracle suites behind ``nuvmpc verify``.

Each suite returns a list of :class:`Check` rows.  Suites are independent and
may run in parallel; each is internally sequential and seeded.
"""

from __future__ import annotations

import gc
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import scalar_lab as sl
from .mbf import smooth
from .oracles import dense_smooth, random_problem, smoother_discrepancy
from .priors import NuvKind, NuvSpec


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    detail: str


def smoother_suite(seed: int, n_models: int = 50) -> list[Check]:
    """Message passing against the dense joint-Gaussian solve on random models."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_models):
        K = int(rng.integers(1, 51))
        N = int(rng.integers(1, 5))
        L = int(rng.integers(1, 3))
        H = int(rng.integers(1, 3))
        m, bc, pri = random_problem(rng, K, N, L, H, terminal=bool(i % 2))
        worst = max(worst, smoother_discrepancy(smooth(m, bc, pri), dense_smooth(m, bc, pri)))
    return [Check("smoother", f"{n_models} random models vs dense solve", worst <= 1e-8,
                  f"max rel diff {worst:.2e}")]


def _feasible(x, a, b, tol=1e-6):
    return a - tol <= x <= b + tol


def threshold_suite(seed: int, n_mu: int = 60) -> list[Check]:
    """Box/half-space dichotomies and the binarizing thresholds."""
    rng = np.random.default_rng(seed)
    out = []
    a, b, gamma = -1.0, 1.0, 1.0
    box = NuvSpec(NuvKind.BOX, gamma=gamma, a=a, b=b)
    mus = rng.uniform(-4.0, 4.0, n_mu)
    bad = 0
    tried = 0
    for mu in mus:
        if min(abs(mu - a), abs(mu - b)) < 1e-3 or a <= mu <= b:
            continue
        thr = sl.box_threshold(a, b, gamma, mu)
        for f, expect in ((0.8, False), (1.2, True)):
            tried += 1
            x = sl.run_scalar(box, sl.ScalarLikelihood(mu, f * thr), max_iters=20_000,
                              tol=1e-12).x_hat
            bad += _feasible(x, a, b) != expect
    out.append(Check("thresholds", "box dichotomy", bad == 0, f"{bad}/{tried} mismatches"))
    hs = NuvSpec(NuvKind.HALF_SPACE_LOWER, gamma=gamma, a=0.0)
    bad = tried = 0
    for mu in mus:
        if mu > -1e-3:
            continue
        thr = sl.half_space_threshold("lower", 0.0, gamma, mu)
        for f, expect in ((0.8, False), (1.2, True)):
            tried += 1
            x = sl.run_scalar(hs, sl.ScalarLikelihood(mu, f * thr), max_iters=20_000,
                              tol=1e-12).x_hat
            bad += (x >= -1e-6) != expect
    out.append(Check("thresholds", "half-space dichotomy", bad == 0, f"{bad}/{tried} mismatches"))
    em = sl.em_threshold(0.0, 1.0, 0.3)
    em_num = sl.em_threshold_numeric(0.0, 1.0, 0.3)
    out.append(Check("thresholds", "EM threshold closed form vs scan", abs(em - em_num) <= 1e-3,
                     f"{em:.6f} vs {em_num:.6f}"))
    am = sl.am_threshold_numeric(0.0, 1.0, 0.3)
    out.append(Check("thresholds", "AM threshold near 0.028", abs(am - 0.028) <= 1e-3,
                     f"{am:.6f}"))
    return out


def dac_suite(seed: int, n_runs: int = 20) -> list[Check]:
    """Short-horizon DAC against exhaustive search."""
    from .scenarios.dac import short_horizon_comparison

    rows = short_horizon_comparison(seed, n_runs=n_runs)
    good = sum(mi <= 1.05 * mo for mi, mo in rows)
    need = int(np.ceil(0.9 * n_runs))
    return [Check("dac-exhaustive", f"IAKE within 5% of optimum in >= {need}/{n_runs}",
                  good >= need, f"{good}/{n_runs}")]


def _timed_problem(K: int, seed: int):
    rng = np.random.default_rng(seed)
    return random_problem(rng, K, 3, 1, 1, inactive_frac=0.0)


def _one_pass(problem) -> float:
    gc_was_on = gc.isenabled()
    gc.disable()
    try:
        t0 = time.perf_counter()
        smooth(*problem)
        return time.perf_counter() - t0
    finally:
        if gc_was_on:
            gc.enable()


def time_smoother(K: int, repeats: int = 5, seed: int = 0) -> float:
    """Best-of-``repeats`` wall time of one smoothing pass (after a warm-up run)."""
    prob = _timed_problem(K, seed)
    smooth(*prob)
    return min(_one_pass(prob) for _ in range(repeats))


def time_smoothers(Ks, repeats: int = 7, seed: int = 0) -> list[float]:
    """Best-of-``repeats`` times for several horizons, measured in interleaved rounds
    so that slow drifts in machine load affect every horizon alike."""
    probs = [_timed_problem(K, seed) for K in Ks]
    for p in probs:
        smooth(*p)
    best = [np.inf] * len(Ks)
    for _ in range(repeats):
        for i, p in enumerate(probs):
            best[i] = min(best[i], _one_pass(p))
    return best


def linear_fit_r2(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    return float(1.0 - resid @ resid / np.sum((y - y.mean()) ** 2))


def timing_suite(seed: int, Ks=(1000, 2000, 4000, 8000)) -> list[Check]:
    times = time_smoothers(Ks, seed=seed)
    r2 = linear_fit_r2(Ks, times)
    detail = ", ".join(f"K={K}: {t * 1e3:.1f} ms" for K, t in zip(Ks, times))
    return [Check("timing", "smoother time linear in K (R^2 > 0.99)", r2 > 0.99,
                  f"R^2={r2:.4f}; {detail}")]


SUITES = {
    "smoother": smoother_suite,
    "thresholds": threshold_suite,
    "dac-exhaustive": dac_suite,
    "timing": timing_suite,
}


def run_suites(names, seed: int, workers: int = 1) -> list[Check]:
    def one(name):
        try:
            return SUITES[name](seed)
        except Exception as err:  # a crashing suite is a failed suite
            return [Check(name, "suite raised", False, f"{type(err).__name__}: {err}")]

    names = list(names)
    # Timing runs alone so concurrent suites do not distort it.
    timed = [n for n in names if n == "timing"]
    rest = [n for n in names if n != "timing"]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, rest))
    else:
        parts = [one(n) for n in rest]
    parts += [one(n) for n in timed]
    return [c for part in parts for c in part]


def format_table(checks) -> str:
    w1 = max([len(c.suite) for c in checks] + [5])
    w2 = max([len(c.name) for c in checks] + [5])
    lines = [f"{'suite':<{w1}}  {'check':<{w2}}  result  detail"]
    for c in checks:
        lines.append(f"{c.suite:<{w1}}  {c.name:<{w2}}  {'PASS' if c.passed else 'FAIL':<6}  {c.detail}")
    return "\n".join(lines)
