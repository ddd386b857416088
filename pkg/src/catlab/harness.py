"""Seeded simulation loop, sweeps over horizons, aggregation and CSV output.

The loop keeps learner and scorer apart: the learner sees inputs and
mentor answers, and payoffs are only evaluated afterwards by the scorer.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from catlab import environments as envs
from catlab import learners as lrn
from catlab import policies as pol
from catlab.core import QUERY, ExtendedReal, RegretReport, StepRecord, diameter

log = logging.getLogger(__name__)

RUN_HEADER = [
    "run_id", "algo", "env", "T", "seed", "regret_add", "regret_mul",
    "queries", "diam_s", "wall_ms", "bounds_ok",
]
AGG_HEADER = [
    "algo", "env", "T", "n_seeds", "mean_regret_add", "stderr_regret_add",
    "mean_queries", "stderr_queries",
]
ALGOS = ("ood-hedge", "dbwrq", "multi", "always", "never-random", "never-majority", "budget:<Q>")
ENV_KINDS = ("lowerbound", "nolg", "smooth-thresholds", "intervals", "ksegments", "explicit")
PROCESS_KINDS = ("uniform", "slab", "scripted", "sweep", "zigzag", "hostile")

# substream tags
INPUT, LEARNER, ENV, HEDGE, CERT = 0, 1, 2, 3, 4
CERT_PAIRS = 2000

ARITH_SLACK = 1e-12


class ConfigError(ValueError):
    pass


def derive_rng_stream(master_seed: int, run_index: int, component_tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(run_index), int(component_tag)]))


@dataclass(frozen=True)
class EnvSpec:
    kind: str = "lowerbound"
    L: float = 1.0
    f: Optional[int] = None
    budget_hint: int = 64
    bits_seed: Optional[int] = None
    j_m: Optional[int] = None
    K: int = 2
    theta: Optional[float] = None
    sigma: float = 1.0
    process: str = "uniform"
    slab_lo: float = 0.0
    script: Optional[str] = None
    n_actions: int = 2
    class_size: int = 16
    grid_size: int = 32

    def __post_init__(self):
        if self.kind not in ENV_KINDS:
            raise ConfigError(f"unknown env {self.kind!r}; choose from {', '.join(ENV_KINDS)}")
        if self.process not in PROCESS_KINDS:
            raise ConfigError(f"unknown input process {self.process!r}; choose from {', '.join(PROCESS_KINDS)}")
        if not (0 < self.sigma <= 1):
            raise ConfigError("sigma must lie in (0, 1]")
        if self.process == "scripted" and not self.script:
            raise ConfigError("scripted input needs a script path")

    @classmethod
    def from_dict(cls, data: dict) -> "EnvSpec":
        known = {f.name for f in fields(cls)}
        clean = {k.replace("-", "_"): v for k, v in data.items()}
        unknown = set(clean) - known
        if unknown:
            raise ConfigError(f"unknown env keys: {sorted(unknown)}")
        return cls(**clean)


@dataclass(frozen=True)
class ExperimentConfig:
    algo: str
    env: EnvSpec = field(default_factory=EnvSpec)
    T: tuple = (1000,)
    seeds: int = 1
    master_seed: int = 0
    eps: Optional[float] = None
    g_exponent: float = 0.75
    out: Optional[str] = None
    record_timing: bool = True

    def __post_init__(self):
        parse_algo(self.algo)
        if not self.T:
            raise ConfigError("T list must be nonempty")
        if any(int(t) < 1 for t in self.T):
            raise ConfigError("every T must be >= 1")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if not (0 < self.g_exponent <= 1):
            raise ConfigError("g exponent must lie in (0, 1]")


def parse_algo(text: str) -> tuple[str, Optional[int], Optional[str]]:
    """``name`` or ``budget:Q[:inner]`` -> (name, budget, inner)."""
    if text.startswith("budget:"):
        parts = text.split(":")
        try:
            q = int(parts[1])
        except (IndexError, ValueError):
            raise ConfigError(f"bad budget spec {text!r}; use budget:<Q>[:inner]") from None
        if q < 0:
            raise ConfigError("budget must be >= 0")
        inner = parts[2] if len(parts) > 2 else "always"
        if inner not in ALGOS[:-1]:
            raise ConfigError(f"unknown inner algo {inner!r}")
        return "budget", q, inner
    if text not in ALGOS[:-1]:
        raise ConfigError(f"unknown algo {text!r}; choose from {', '.join(ALGOS)}")
    return text, None, None


# ---------------------------------------------------------------------------
# builders


@dataclass
class World:
    env: envs.PayoffEnvironment
    cls: Optional[pol.PolicyClass]
    label: str


def _f_for(spec: EnvSpec, T: int) -> int:
    if spec.f is not None:
        return int(spec.f)
    return max(math.ceil(math.sqrt(spec.budget_hint * T)), 1)


def build_world(spec: EnvSpec, T: int, rng: np.random.Generator) -> World:
    bits_rng = np.random.default_rng(spec.bits_seed) if spec.bits_seed is not None else rng
    if spec.kind == "lowerbound":
        f = _f_for(spec, T)
        lb = envs.LowerBoundEnv(f, tuple(int(b) for b in bits_rng.integers(0, 2, f)), spec.L)
        return World(envs.LowerBoundPayoff(lb), pol.PolicyClass.ksegments(f), spec.kind)
    if spec.kind == "nolg":
        f = _f_for(spec, T)
        j_m = spec.j_m if spec.j_m is not None else int(bits_rng.integers(1, f + 1))
        return World(envs.NoLgPayoff(envs.NoLgEnv(f, j_m), spec.L), pol.PolicyClass.intervals(), spec.kind)
    if spec.kind == "smooth-thresholds":
        theta = spec.theta if spec.theta is not None else float(bits_rng.uniform(0.2, 0.8))
        mentor = pol.threshold(theta)
        return World(envs.DistancePayoff(mentor, spec.L, label=spec.kind), pol.PolicyClass.thresholds(), spec.kind)
    if spec.kind == "intervals":
        a, b = np.sort(bits_rng.uniform(0.1, 0.9, 2))
        mentor = pol.interval(float(a), float(b))
        return World(envs.DistancePayoff(mentor, spec.L, label=spec.kind), pol.PolicyClass.intervals(), spec.kind)
    if spec.kind == "ksegments":
        K = spec.K
        bounds = np.sort(bits_rng.uniform(0.05, 0.95, K - 1))
        first = int(bits_rng.integers(2))
        labels = [(first + i) % 2 for i in range(K)]
        mentor = pol.ksegment(bounds, labels)
        return World(envs.DistancePayoff(mentor, spec.L, label=spec.kind), pol.PolicyClass.ksegments(K), spec.kind)
    if spec.kind == "explicit":
        cls = pol.random_explicit_class(spec.class_size, spec.grid_size, spec.n_actions, bits_rng)
        mentor = cls.members[int(bits_rng.integers(len(cls.members)))]
        env = envs.DistancePayoff(mentor, spec.L, n_actions=spec.n_actions, label=spec.kind)
        return World(env, cls, spec.kind)
    raise ConfigError(f"unknown env {spec.kind!r}")


def load_script(path: str) -> np.ndarray:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = [float(tok) for tok in text.split()]
    return np.asarray(data, dtype=float)


def build_process(spec: EnvSpec, world: World, T: int, rng: np.random.Generator, learner: lrn.Learner):
    kind = spec.process
    if kind == "uniform":
        return envs.IIDUniform(world.env.n)
    if kind == "slab":
        return envs.IIDSmooth(envs.SmoothDensity.slab(spec.slab_lo, spec.sigma))
    if kind == "scripted":
        return envs.Scripted(load_script(spec.script))
    if kind == "sweep":
        bounds, _ = world.env.mentor.segments()
        return envs.Scripted(envs.boundary_sweep_script(bounds, T, rng))
    if kind == "zigzag":
        return envs.Scripted(envs.zigzag_script(T))
    if kind == "hostile":
        return envs.AdaptiveSmoothHostile(spec.sigma, learner.boundaries)
    raise ConfigError(f"unknown input process {kind!r}")


def resolve_epsilon(eps: Optional[float], T: int, n: int) -> float:
    e = lrn.default_epsilon(T, n) if eps is None else float(eps)
    if e * T < 1.0 - 1e-12:
        raise ConfigError(f"eps below 1/T: eps={e:g}, 1/T={1.0 / T:g}")
    return e


def build_learner(algo: str, world: World, T: int, eps: Optional[float], g_exponent: float) -> lrn.Learner:
    name, budget, inner = parse_algo(algo)
    if name == "budget":
        return lrn.BudgetCapped(build_learner(inner, world, T, eps, g_exponent), budget)
    env = world.env
    if name == "ood-hedge":
        if world.cls is None:
            raise ConfigError("ood-hedge needs a policy class for this environment")
        e = resolve_epsilon(eps, T, env.n)
        ceiling = (env.mu_min / (2 * env.L)) ** env.n if env.L > 0 else math.inf
        if e > ceiling:
            log.warning("eps=%g exceeds (mu_min/2L)^n=%g; regret guarantees need eps below it", e, ceiling)
        return lrn.OodHedge(lrn.build_cover_for(world.cls, e), T, e, env.n)
    if name == "multi":
        if world.cls is None or world.cls.kind is not pol.ClassKind.FINITE_EXPLICIT:
            raise ConfigError("multi needs a finite explicit class (env=explicit)")
        return lrn.MultiAction(world.cls, T, resolve_epsilon(eps, T, env.n), env.n)
    if name == "dbwrq":
        if env.n != 1:
            raise ConfigError("dbwrq needs 1-D inputs")
        return lrn.Dbwrq(T, lrn.default_g(T, g_exponent))
    if name == "always":
        return lrn.AlwaysQuery(env.n)
    if name == "never-random":
        return lrn.NeverQueryRandom(env.n_actions)
    if name == "never-majority":
        return lrn.NeverQueryMajority(env.n_actions)
    raise ConfigError(f"unknown algo {algo!r}")


# ---------------------------------------------------------------------------
# running


@dataclass
class Trace:
    xs: np.ndarray
    actions: np.ndarray  # -1 on query steps
    mentor_labels: np.ndarray  # -1 when no query
    radii: np.ndarray  # nan when no support guarantee
    payoffs: np.ndarray
    mentor_payoffs: np.ndarray
    mentor_actions: np.ndarray

    def records(self) -> list[StepRecord]:
        out = []
        for t in range(len(self.xs)):
            q = self.actions[t] < 0
            out.append(StepRecord(
                t=t + 1,
                x=self.xs[t],
                decision=QUERY if q else int(self.actions[t]),
                queried=bool(self.mentor_labels[t] >= 0),
                mentor_action=int(self.mentor_labels[t]) if self.mentor_labels[t] >= 0 else None,
                payoff=float(self.payoffs[t]),
                mentor_payoff=float(self.mentor_payoffs[t]),
            ))
        return out


@dataclass
class RunRecord:
    run_id: str
    algo: str
    env: str
    T: int
    seed: int
    regret_add: float
    regret_mul: ExtendedReal
    queries: int
    diam_s: float
    wall_ms: float
    bound_checks: list = field(default_factory=list)
    mismatches: int = 0
    failure: Optional[str] = None
    report: Optional[RegretReport] = field(default=None, repr=False)
    trace: Optional[Trace] = field(default=None, repr=False)

    @property
    def bounds_ok(self) -> bool:
        return self.failure is None and all(ok for _, ok in self.bound_checks)

    def csv_row(self) -> list[str]:
        return [
            self.run_id, self.algo, self.env, str(self.T), str(self.seed),
            repr(float(self.regret_add)), str(self.regret_mul), str(self.queries),
            repr(float(self.diam_s)), f"{self.wall_ms:.3f}", "1" if self.bounds_ok else "0",
        ]


def score(env: envs.PayoffEnvironment, xs: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """True payoffs for the agent and the mentor; query steps get the mentor payoff."""
    mentor_pay = env.mentor_payoffs(xs)
    pay = mentor_pay.copy()
    acting = np.flatnonzero(actions >= 0)
    if acting.size:
        pay[acting] = env.payoff_many(xs[acting], actions[acting])
    return pay, mentor_pay


def run_once(config: ExperimentConfig, T: int, seed: int, keep_trace: bool = False) -> RunRecord:
    """Simulate one (algo, env, T, seed) cell; deterministic given config and seed."""
    start = time.perf_counter()
    run_id = f"{config.algo}/{config.env.kind}/T{T}/s{seed}"
    env_rng = derive_rng_stream(config.master_seed, seed, ENV)
    in_rng = derive_rng_stream(config.master_seed, seed, INPUT)
    learn_rng = derive_rng_stream(config.master_seed, seed, LEARNER)

    world = build_world(config.env, T, env_rng)
    env = world.env
    if env.local_generalization:
        cert = envs.certify_local_generalization(env, CERT_PAIRS, derive_rng_stream(config.master_seed, seed, CERT))
        if not cert.passed:
            raise ConfigError(f"{config.env.kind}: local generalization ratio {cert.max_ratio:.4g} "
                              f"exceeds declared L={env.L:g}")
    learner = build_learner(config.algo, world, T, config.eps, config.g_exponent)
    process = build_process(config.env, world, T, in_rng, learner)
    try:
        block = process.sample_block(T, in_rng)
    except envs.ScriptExhausted:
        block = None  # replay step by step and abort where the script ends

    mentor = lrn.MentorOracle(env.mentor_action)
    xs = np.empty((T, env.n))
    actions = np.empty(T, dtype=np.int64)
    labels = np.full(T, -1, dtype=np.int64)
    radii = np.full(T, np.nan)
    failure = None
    dbwrq = _unwrap(learner) if isinstance(_unwrap(learner), lrn.Dbwrq) else None
    done = T
    try:
        for t in range(T):
            x = block[t] if block is not None else process.sample(t + 1, xs[:t], in_rng)
            xs[t] = x
            mentor.begin_step()
            out = learner.step(t + 1, x, mentor, learn_rng)
            if out.decision is QUERY:
                actions[t] = -1
                labels[t] = out.mentor_action
            else:
                actions[t] = out.decision
                if out.mentor_action is not None:
                    labels[t] = out.mentor_action
            if out.support_radius is not None and out.decision is not QUERY:
                radii[t] = out.support_radius
            if dbwrq is not None and out.decision is not QUERY:
                radii[t] = dbwrq.last_bucket.length
    except (lrn.MentorFailure, envs.ScriptExhausted) as exc:
        failure = f"aborted at step {t + 1}: {exc}"
        done = t
        log.error("%s: %s", run_id, failure)
    xs, actions, labels, radii = xs[:done], actions[:done], labels[:done], radii[:done]

    # scoring: the only place payoffs are evaluated
    pay, mentor_pay = score(env, xs, actions)
    checks = []
    if done == 0:
        return RunRecord(run_id, config.algo, config.env.kind, T, seed, 0.0, ExtendedReal.of(0.0),
                         0, 0.0, 0.0, [], 0, failure)
    report = RegretReport.from_series(mentor_pay, pay, actions < 0)
    checks.append(("scoring", abs((math.fsum(mentor_pay) - math.fsum(pay)) - report.additive) <= 1e-9))
    mentor_actions = env.mentor_actions(xs)
    mismatches = int(np.count_nonzero((actions >= 0) & (actions != mentor_actions)))
    diam = diameter(xs)
    checks.extend(_bound_checks(env, learner, report, mentor_pay, pay, radii, diam, T))

    wall = (time.perf_counter() - start) * 1000 if config.record_timing else 0.0
    trace = Trace(xs, actions, labels, radii, pay, mentor_pay, mentor_actions) if keep_trace else None
    rec = RunRecord(run_id, config.algo, config.env.kind, T, seed, report.additive, report.multiplicative,
                    report.query_count, diam, wall, checks, mismatches, failure, report, trace)
    if not rec.bounds_ok:
        bad = [name for name, ok in checks if not ok]
        log.error("%s: bound checks failed: %s", run_id, ", ".join(bad) or failure)
    return rec


def _unwrap(learner):
    while isinstance(learner, lrn.BudgetCapped):
        learner = learner.inner
    return learner


def _bound_checks(env, learner, report, mentor_pay, pay, radii, diam, T) -> list[tuple[str, bool]]:
    checks = []
    if env.local_generalization:
        mask = ~np.isnan(radii)
        if mask.any():
            gap = mentor_pay[mask] - pay[mask]
            checks.append(("per_step_loss", bool(np.all(gap <= env.L * radii[mask] + ARITH_SLACK))))
    inner = _unwrap(learner)
    if isinstance(inner, lrn.Dbwrq):
        g = inner.g
        checks.append(("dbwrq_queries", report.query_count <= dbwrq_ceiling_exact(diam, g)))
        if env.local_generalization and isinstance(learner, lrn.Dbwrq):
            K = env.segment_count()
            checks.append(("dbwrq_regret_add", report.additive <= 2 * env.L * K * T / g**2 + 1e-9))
            if g >= 2 * env.L / env.mu_min:
                ceiling = 4 * env.L * K * T / (g**2 * env.mu_min)
                checks.append(("dbwrq_regret_mul", float(report.multiplicative) <= ceiling + 1e-9))
    return checks


def dbwrq_ceiling_exact(diam: float, g: int) -> float:
    return (diam + 4) * g


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class Aggregate:
    algo: str
    env: str
    T: int
    n_seeds: int
    mean_regret_add: float
    stderr_regret_add: float
    mean_queries: float
    stderr_queries: float
    mean_query_rate: float
    stderr_query_rate: float

    def csv_row(self) -> list[str]:
        return [self.algo, self.env, str(self.T), str(self.n_seeds), repr(self.mean_regret_add),
                repr(self.stderr_regret_add), repr(self.mean_queries), repr(self.stderr_queries)]


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def aggregate(records: Sequence[RunRecord]) -> list[Aggregate]:
    by_t: dict[int, list[RunRecord]] = {}
    for r in records:
        if r.failure is None:
            by_t.setdefault(r.T, []).append(r)
    out = []
    for T in sorted(by_t):
        rs = by_t[T]
        ma, sa = mean_stderr([r.regret_add for r in rs])
        mq, sq = mean_stderr([r.queries for r in rs])
        mr, sr = mean_stderr([r.queries / r.T for r in rs])
        out.append(Aggregate(rs[0].algo, rs[0].env, T, len(rs), ma, sa, mq, sq, mr, sr))
    return out


@dataclass
class Verdicts:
    regret_decreasing: Optional[bool]
    query_rate_decreasing: Optional[bool]
    regret_slope: Optional[float]
    strictly_decreasing_query_rate_means: Optional[bool]

    def lines(self) -> list[str]:
        def fmt(v):
            return "n/a" if v is None else ("yes" if v is True else "no" if v is False else f"{v:.4f}")
        return [
            f"regret_add decreasing in T: {fmt(self.regret_decreasing)}",
            f"queries/T decreasing in T: {fmt(self.query_rate_decreasing)}",
            f"queries/T means strictly decreasing: {fmt(self.strictly_decreasing_query_rate_means)}",
            f"log-log slope of mean regret_add vs T: {fmt(self.regret_slope)}",
        ]


def loglog_slope(Ts, values) -> Optional[float]:
    Ts = np.asarray(Ts, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = v > 0
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(Ts[ok]), np.log(v[ok]), 1)[0])


def trend_verdicts(aggs: Sequence[Aggregate]) -> Verdicts:
    if len(aggs) < 2:
        return Verdicts(None, None, None, None)
    lo, hi = aggs[0], aggs[-1]
    reg = hi.mean_regret_add + hi.stderr_regret_add < lo.mean_regret_add - lo.stderr_regret_add
    qr = hi.mean_query_rate + hi.stderr_query_rate < lo.mean_query_rate - lo.stderr_query_rate
    rates = [a.mean_query_rate for a in aggs]
    strict = all(b < a for a, b in zip(rates, rates[1:]))
    slope = loglog_slope([a.T for a in aggs], [a.mean_regret_add for a in aggs])
    return Verdicts(bool(reg), bool(qr), slope, strict)


@dataclass
class SweepResult:
    records: list
    aggregates: list
    verdicts: Verdicts


def sweep(config: ExperimentConfig, keep_trace: bool = False) -> SweepResult:
    records = []
    for T in config.T:
        for seed in range(config.seeds):
            try:
                records.append(run_once(config, int(T), seed, keep_trace))
            except (ValueError, RuntimeError) as exc:
                log.error("run T=%s seed=%s failed: %s", T, seed, exc)
                records.append(RunRecord(f"{config.algo}/{config.env.kind}/T{T}/s{seed}", config.algo,
                                         config.env.kind, int(T), seed, math.nan, ExtendedReal.inf(), 0,
                                         0.0, 0.0, [], 0, str(exc)))
    aggs = aggregate(records)
    return SweepResult(records, aggs, trend_verdicts(aggs))


# ---------------------------------------------------------------------------
# persistence


def runs_csv(records: Sequence[RunRecord], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(RUN_HEADER)
    for r in records:
        w.writerow(r.csv_row())
    return buf.getvalue()


def aggregates_csv(aggs: Sequence[Aggregate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGG_HEADER)
    for a in aggs:
        w.writerow(a.csv_row())
    return buf.getvalue()


def append_runs(path: Path, records: Sequence[RunRecord]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists() or path.stat().st_size == 0
    if not new:
        with path.open() as fh:
            first = fh.readline().strip()
        if first.split(",") != RUN_HEADER:
            raise ConfigError(f"{path} exists with a different header")
    with path.open("a", newline="") as fh:
        fh.write(runs_csv(records, header=new))


def read_runs(path: Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RUN_HEADER:
            raise ConfigError(f"unexpected header in {path}: {reader.fieldnames}")
        rows = list(reader)
    for row in rows:
        row["T"] = int(row["T"])
        row["seed"] = int(row["seed"])
        row["regret_add"] = float(row["regret_add"])
        row["regret_mul"] = ExtendedReal.parse(row["regret_mul"])
        row["queries"] = int(row["queries"])
        row["diam_s"] = float(row["diam_s"])
        row["wall_ms"] = float(row["wall_ms"])
        row["bounds_ok"] = row["bounds_ok"] == "1"
    return rows


def default_out_dir() -> Path:
    return Path(os.environ.get("CATLAB_OUT_DIR", "catlab_out"))
