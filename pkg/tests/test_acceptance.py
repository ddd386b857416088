"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Expected values come from independent oracles (closed forms recomputed
here, numerical integration, brute-force enumeration), never from the
code under test.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest
from scipy import integrate

from catlab import environments as envs
from catlab import harness as hs
from catlab import policies as pol
from catlab.core import check_prod_vs_add, regret_additive, regret_multiplicative
from catlab.hedge import run_hedge_with_queries


def run_cfg(algo, env: hs.EnvSpec, T, seeds, **kw):
    return hs.ExperimentConfig(algo=algo, env=env, T=tuple(T), seeds=seeds, **kw)


def mean_se(values):
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def endpoint_decrease(means, ses) -> bool:
    return means[-1] + ses[-1] < means[0] - ses[0]


# ---------------------------------------------------------------------------
# criteria 1-3: DBWRQ exact bounds


DBWRQ_T = (1_000, 10_000, 100_000)
DBWRQ_SEEDS = 3


@pytest.fixture(scope="module")
def dbwrq_runs():
    runs = []
    for K in (2, 5):
        for process in ("uniform", "sweep"):
            env = hs.EnvSpec("ksegments", K=K, L=1.0, process=process)
            cfg = run_cfg("dbwrq", env, DBWRQ_T, DBWRQ_SEEDS)
            for T in DBWRQ_T:
                for seed in range(DBWRQ_SEEDS):
                    start = time.perf_counter()
                    rec = hs.run_once(cfg, T, seed, keep_trace=True)
                    runs.append((K, process, T, seed, rec, time.perf_counter() - start))
    return runs


def test_criterion_01_dbwrq_query_bound(dbwrq_runs, criterion):
    violations, slowest = 0, 0.0
    for K, process, T, seed, rec, secs in dbwrq_runs:
        g = math.ceil(T**0.75)
        xs = rec.trace.xs[:, 0]
        ceiling = (float(xs.max() - xs.min()) + 4) * g
        violations += rec.queries > ceiling
        if T == 100_000:
            slowest = max(slowest, secs)
    ok = violations == 0 and slowest < 5.0
    criterion(1, ok, f"{len(dbwrq_runs)} runs, {violations} query-bound violations, "
                     f"slowest T=1e5 run {slowest:.2f}s (< 5s)")


def test_criterion_02_dbwrq_regret_ceilings(dbwrq_runs, criterion):
    violations, scripted = 0, 0
    worst = 0.0
    for K, process, T, seed, rec, _ in dbwrq_runs:
        g = math.ceil(T**0.75)
        L, mu_min = 1.0, 1.0
        add_ceiling = 2 * L * K * T / g**2
        mul_ceiling = 4 * L * K * T / (g**2 * mu_min)
        assert g >= 2 * L / mu_min
        violations += rec.regret_add > add_ceiling + 1e-9
        violations += float(rec.regret_mul) > mul_ceiling + 1e-9
        worst = max(worst, rec.regret_add / add_ceiling)
        scripted += process == "sweep"
    ok = violations == 0 and scripted > 0
    criterion(2, ok, f"{violations} violations of 2LKT/g^2 or 4LKT/(g^2 mu_min) "
                     f"({scripted} boundary-sweep runs); worst R+/ceiling {worst:.3f}")


def test_criterion_03_dbwrq_per_step_loss(dbwrq_runs, criterion):
    violations, checked = 0, 0
    for *_, rec, _ in dbwrq_runs:
        tr = rec.trace
        acting = tr.actions >= 0
        assert not np.isnan(tr.radii[acting]).any()
        gap = tr.mentor_payoffs[acting] - tr.payoffs[acting]
        violations += int(np.count_nonzero(gap > 1.0 * tr.radii[acting] + 1e-12))
        checked += int(acting.sum())
    criterion(3, violations == 0, f"{checked} acting steps, {violations} exceed L*len(B_t) + 1e-12")


# ---------------------------------------------------------------------------
# criterion 4: OOD-Hedge per-step loss


def test_criterion_04_ood_hedge_per_step_loss(criterion):
    T, seeds, L = 2**14, 32, 1.0
    eps = T ** (-2 / 3)
    cfg = run_cfg("ood-hedge", hs.EnvSpec("smooth-thresholds", L=L), (T,), seeds)
    violations, acting_steps = 0, 0
    for seed in range(seeds):
        tr = hs.run_once(cfg, T, seed, keep_trace=True).trace
        acting = tr.actions >= 0
        gap = tr.mentor_payoffs[acting] - tr.payoffs[acting]
        violations += int(np.count_nonzero(gap > L * eps + 1e-12))
        acting_steps += int(acting.sum())
    criterion(4, violations == 0, f"{seeds} seeds x T=2^14: {acting_steps} acting steps, "
                                  f"{violations} exceed L*eps^(1/n)")


# ---------------------------------------------------------------------------
# criterion 5: Hedge regret bound


def scripted_losses(T: int, n: int) -> np.ndarray:
    """Indicator losses with close expert error rates, so the best expert is hard to pin down."""
    rng = np.random.default_rng(12345)
    rates = np.linspace(0.30, 0.45, n)
    return (rng.random((T, n)) < rates).astype(float)


def test_criterion_05_hedge_regret(criterion):
    start = time.perf_counter()
    losses = scripted_losses(1000, 16)
    details, ok = [], True
    for p in (0.1, 0.3, 1.0):
        regrets = []
        for seed in range(200):
            total, best = run_hedge_with_queries(losses, p, np.random.default_rng(seed))
            regrets.append(total - best)
        m, se = mean_se(regrets)
        bound = math.log(16) / p**2
        ok &= m <= bound + 3 * se
        details.append(f"p={p}: {m:.2f} <= {bound:.2f}")
    secs = time.perf_counter() - start
    ok &= secs < 60
    criterion(5, ok, "; ".join(details) + f"; {secs:.1f}s (< 60s)")


# ---------------------------------------------------------------------------
# criterion 6: scaling trends of OOD-Hedge


def test_criterion_06_scaling_trends(criterion):
    start = time.perf_counter()
    Ts = tuple(2**k for k in range(10, 17))
    cfg = run_cfg("ood-hedge", hs.EnvSpec("smooth-thresholds", L=1.0, sigma=1.0), Ts, 32)
    res = hs.sweep(cfg)
    assert all(r.bounds_ok for r in res.records)
    by_T = {T: [r for r in res.records if r.T == T] for T in Ts}
    reg = [mean_se([r.regret_add for r in by_T[T]]) for T in Ts]
    rate = [mean_se([r.queries / T for r in by_T[T]]) for T in Ts]
    reg_ok = endpoint_decrease([m for m, _ in reg], [s for _, s in reg])
    rate_ok = endpoint_decrease([m for m, _ in rate], [s for _, s in rate])
    secs = time.perf_counter() - start
    ok = reg_ok and rate_ok and secs < 600
    criterion(6, ok, f"R+ {reg[0][0]:.4f}->{reg[-1][0]:.4f}, Q/T {rate[0][0]:.3f}->{rate[-1][0]:.3f} "
                     f"over T=2^10..2^16 x 32 seeds; {secs:.0f}s (< 600s)")


# ---------------------------------------------------------------------------
# criterion 7: lower-bound demonstration


def random_guess_oracle(L: float, f: int, T: int) -> float:
    mid = 0.5 / f
    area, _ = integrate.quad(lambda x: L * (1 / (2 * f) - abs(mid - x)), 0.0, 1.0 / f)
    return T * 0.5 * area * f


def test_criterion_07_lower_bound(criterion):
    Ts = tuple(2**k for k in range(12, 21, 2))
    Q, L, seeds = 64, 1.0, 6
    env = hs.EnvSpec("lowerbound", L=L, budget_hint=Q)
    slopes, near, details = {}, True, []
    for algo in (f"budget:{Q}", "never-random"):
        res = hs.sweep(run_cfg(algo, env, Ts, seeds))
        means = [a.mean_regret_add for a in res.aggregates]
        slopes[algo] = np.polyfit(np.log(Ts), np.log(means), 1)[0]
        if algo == "never-random":
            for a in res.aggregates:
                f = max(math.ceil(math.sqrt(Q * a.T)), 1)
                oracle = random_guess_oracle(L, f, a.T)
                near &= abs(a.mean_regret_add - oracle) <= 3 * a.stderr_regret_add
                details.append(f"{a.mean_regret_add:.2f}~{oracle:.2f}")
    ok = all(s >= 0.4 for s in slopes.values()) and near
    slope_txt = ", ".join(f"{k} slope {v:.3f}" for k, v in slopes.items())
    criterion(7, ok, f"{slope_txt}; never-random vs LT/(8f): {' '.join(details)}")


# ---------------------------------------------------------------------------
# criterion 8: cover validity and size


def test_criterion_08_covers(criterion):
    start = time.perf_counter()
    rows, ok = [], True
    for name, cls in (("thresholds", pol.PolicyClass.thresholds()), ("intervals", pol.PolicyClass.intervals())):
        for eps in (0.2, 0.1, 0.05, 0.02):
            cover = pol.build_smooth_cover(cls, eps)
            probes = pol.probe_policies(cls, eps, 1000, np.random.default_rng(0))
            report = pol.verify_smooth_cover(cover, probes)
            # oracle sizes by counting grid points
            m = math.ceil(1 / eps - 1e-9) + 1 if name == "thresholds" else math.ceil(2 / eps - 1e-9) + 1
            expected = m if name == "thresholds" else m * (m + 1) // 2
            ceiling = (41 / eps) ** cls.vc_dim
            ok &= report.passed and report.within_ceiling and len(cover) == expected <= ceiling
            ok &= report.ceiling == pytest.approx(ceiling)
            rows.append(f"{name}@{eps}:{len(cover)}")
    secs = time.perf_counter() - start
    ok &= secs < 10
    criterion(8, ok, f"{' '.join(rows)}; {secs:.1f}s (< 10s)")


# ---------------------------------------------------------------------------
# criterion 9: local generalization certification


def test_criterion_09_local_generalization(criterion):
    rng = np.random.default_rng(0)
    lb = envs.LowerBoundPayoff(envs.LowerBoundEnv(2, (0, 1), 1.0))
    lb_many = envs.LowerBoundPayoff(envs.make_lowerbound_env(10_000, 64, 0.5, rng))
    nolg = envs.NoLgPayoff(envs.NoLgEnv(20, 7), L=1.0)
    c1 = envs.certify_local_generalization(lb, 100_000, rng)
    c2 = envs.certify_local_generalization(lb_many, 100_000, rng)
    c3 = envs.certify_local_generalization(nolg, 100_000, rng)
    ok = c1.max_ratio <= 1.0 + 1e-9 and c2.max_ratio <= 0.5 + 1e-9 and c1.passed and c2.passed
    ok &= (not c3.passed) and c3.max_ratio > 10 * nolg.L
    criterion(9, ok, f"lowerbound ratios {c1.max_ratio:.4f} (L=1), {c2.max_ratio:.4f} (L=0.5); "
                     f"no-LG ratio {c3.max_ratio:.3g} > 10L")


# ---------------------------------------------------------------------------
# criterion 10: regret algebra


def test_criterion_10_prod_vs_add(criterion):
    rng = np.random.default_rng(2024)
    counter, tested_first, tested_second = 0, 0, 0
    for i in range(10_000):
        n = int(rng.integers(1, 60))
        a = rng.random(n)
        if i % 3 == 0:
            m = np.minimum(1.0, a + rng.random(n) * (1 - a))  # dominating mentor
        else:
            m = rng.uniform(0.05, 1.0, n)
        if i % 7 == 0:
            a[rng.integers(n)] = 0.0
        m = np.maximum(m, 1e-6)
        res = check_prod_vs_add(m, a)
        # independent evaluation of each inequality where its hypothesis holds
        dominated = bool(np.all(m >= a))
        add = math.fsum(m) - math.fsum(a)
        if dominated:
            tested_first += 1
            mul = math.inf if np.any(a == 0) else math.fsum(math.log(x / y) for x, y in zip(m, a))
            counter += not (add <= mul + 1e-9) or res.additive_le_mul is not True
            if np.all(a > 0):
                tested_second += 1
                counter += not (mul <= add / a.min() + 1e-9) or res.mul_le_scaled_additive is not True
    assert regret_additive([1, 1], [1, 0.5]) <= float(regret_multiplicative([1, 1], [1, 0.5]))
    criterion(10, counter == 0, f"10^4 series: first inequality tested {tested_first}x, "
                                f"second {tested_second}x, {counter} counterexamples")


# ---------------------------------------------------------------------------
# criterion 11: multi-action correctness


def test_criterion_11_multi_action(criterion):
    seeds, T = 16, 2**14
    multi = hs.sweep(run_cfg("multi", hs.EnvSpec("explicit", n_actions=4), (T,), seeds))
    binary = hs.sweep(run_cfg("ood-hedge", hs.EnvSpec("explicit", n_actions=2), (T,), seeds))
    m_mis = sum(r.mismatches for r in multi.records)
    b_mis = sum(r.mismatches for r in binary.records)
    Ts = tuple(2**k for k in range(10, 15))
    trend = hs.sweep(run_cfg("multi", hs.EnvSpec("explicit", n_actions=4), Ts[:-1], seeds))
    records = trend.records + multi.records
    rate = [mean_se([r.queries / t for r in records if r.T == t]) for t in Ts]
    means = [m for m, _ in rate]
    decreasing = endpoint_decrease(means, [s for _, s in rate]) and all(b < a for a, b in zip(means, means[1:]))
    ok = m_mis <= 4 * b_mis and decreasing and all(r.bounds_ok for r in records)
    criterion(11, ok, f"mismatches multi {m_mis} <= 4 x binary {b_mis}; "
                      f"Q/T {' '.join(f'{m:.3f}' for m in means)}")
