"""Monte Carlo experiments over the voting engine.

Each trial gets its own generator, seeded from ``(master seed, n, trial index)``
by :func:`derive_trial_seed`, so results do not depend on how trials are spread
over worker processes.  Aggregation only ever happens after all trial outcomes
are collected in index order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np

from . import engine
from .engine import ConfigurationError
from .signal_model import GaussianModel, SignalModel, validate_model

KINDS = ("consensus", "round_accuracy", "learning_curve", "majority_baseline")
CSV_HEADER = ("experiment", "n", "round", "estimate", "stderr", "trials", "extra")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    model: SignalModel
    agents: tuple[int, ...]
    trials: int
    seed: int
    max_rounds: int = engine.DEFAULT_MAX_ROUNDS
    #: Fix the state of the world instead of drawing it uniformly.
    state: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown experiment {self.kind!r}; expected one of {KINDS}")
        if self.trials < 1:
            raise ConfigurationError("trials must be at least 1")
        if not self.agents or min(self.agents) < 1:
            raise ConfigurationError("agent counts must be positive")
        if self.max_rounds < 1:
            raise ConfigurationError("max_rounds must be positive")
        if self.state not in (None, 0, 1):
            raise ConfigurationError("state must be 0 or 1")
        if self.seed is None or self.seed < 0:
            raise ConfigurationError("a non-negative seed is required")
        report = validate_model(self.model)
        if not report.ok:
            raise ConfigurationError("invalid model: " + "; ".join(report.violations))
        if self.kind == "majority_baseline" and any(n % 2 == 0 for n in self.agents):
            raise ConfigurationError("majority_baseline needs odd agent counts")
        if self.kind == "learning_curve":
            if len(self.agents) < 4:
                raise ConfigurationError("learning_curve needs at least 4 agent counts")
            rate = learning_rate_constants(self.model)
            if rate.alpha1 == rate.alpha0:
                raise ConfigurationError("P(X>0|S=1) == P(X>0|S=0): round-1 votes carry no information")

    def echo(self) -> dict:
        return {"experiment": self.kind, "model": self.model.describe(),
                "n": list(self.agents), "trials": self.trials, "max_rounds": self.max_rounds,
                "seed": self.seed, "state": self.state}

    def run_id(self) -> str:
        blob = json.dumps(self.echo(), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()


@dataclass
class Row:
    experiment: str
    n: int
    round: int | None
    estimate: float
    stderr: float
    trials: int
    extra: dict = field(default_factory=dict)

    def cells(self) -> list[str]:
        extra = ";".join(f"{k}={_fmt(v)}" for k, v in self.extra.items())
        rnd = "" if self.round is None else str(self.round)
        return [self.experiment, str(self.n), rnd, _fmt(self.estimate), _fmt(self.stderr),
                str(self.trials), extra]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class LearningRateEstimate:
    alpha1: float
    alpha0: float
    #: KL divergence of Bernoulli(alpha1) from Bernoulli(alpha0).
    kl_divergence: float
    #: d log(failure rate) / dn; None when it cannot be estimated.
    slope: float | None = None
    #: "fit", "upper_bound" (failures vanished), or "none".
    slope_kind: str = "none"
    fit_points: int = 0

    def as_dict(self) -> dict:
        return {"alpha1": self.alpha1, "alpha0": self.alpha0, "D": self.kl_divergence,
                "slope": self.slope, "slope_kind": self.slope_kind, "fit_points": self.fit_points}


@dataclass
class ResultTable:
    experiment: str
    rows: list[Row] = field(default_factory=list)
    learning_rate: LearningRateEstimate | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow(row.cells())
        return buf.getvalue()

    def select(self, **match) -> list[Row]:
        out = []
        for row in self.rows:
            if all(getattr(row, k, row.extra.get(k)) == v for k, v in match.items()):
                out.append(row)
        return out


def binomial_stderr(p: float, trials: int) -> float:
    return math.sqrt(p * (1.0 - p) / trials) if trials else math.nan


def proportion_row(kind, n, rnd, successes, trials, **extra) -> Row:
    p = successes / trials if trials else math.nan
    return Row(kind, n, rnd, p, binomial_stderr(p, trials), trials, extra)


def derive_trial_seed(master: int, index: int, stream: int = 0) -> int:
    """64-bit seed for one trial.

    Hashes ``(master, stream, index)`` through numpy's ``SeedSequence``, which
    is stable across numpy versions and platforms.  The harness uses the agent
    count as ``stream``.
    """
    ss = np.random.SeedSequence(int(master), spawn_key=(int(stream), int(index)))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


def run_trials(trial: Callable[[int], object], seeds: Sequence[int], workers: int = 1) -> list:
    """Apply ``trial`` to every seed; output order follows ``seeds``."""
    if workers <= 1 or len(seeds) < 2:
        return [trial(s) for s in seeds]
    chunksize = max(1, len(seeds) // (8 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(trial, seeds, chunksize=chunksize))


def _seeds(config: ExperimentConfig, n: int) -> list[int]:
    return [derive_trial_seed(config.seed, k, stream=n) for k in range(config.trials)]


# Trial functions live at module level so worker processes can unpickle them.

def consensus_trial(model, n, max_rounds, state, seed):
    res = engine.run_to_consensus(model, n, max_rounds, np.random.default_rng(seed),
                                  true_state=state)
    return (res.true_state, res.converged, res.certified_round or 0, res.t_u or 0,
            res.correct, len(res.rounds))


def round_accuracy_trial(model, n, rounds, state, seed):
    sim = engine.sample_state(model, n, np.random.default_rng(seed), state)
    records = engine.run_rounds(sim, rounds)
    return tuple(int(r.votes[0] == sim.true_state) for r in records)


def second_round_trial(model, n, state, seed):
    """(state, round-1 majority correct, round-2 unanimous and correct)."""
    sim = engine.sample_state(model, n, np.random.default_rng(seed), state)
    first, second = engine.run_rounds(sim, 2)
    majority = int(2 * sum(first.votes) > n)
    all_correct = second.unanimous and second.votes[0] == sim.true_state
    return sim.true_state, int(majority == sim.true_state), int(all_correct)


def run_consensus_experiment(config: ExperimentConfig, workers: int = 1) -> ResultTable:
    """Certified fraction, unanimity fraction and convergence-time summary per n."""
    table = ResultTable("consensus")
    for n in config.agents:
        trial = partial(consensus_trial, config.model, n, config.max_rounds, config.state)
        out = run_trials(trial, _seeds(config, n), workers)
        trials = len(out)
        converged = [o for o in out if o[1]]
        t_u = np.array([o[3] for o in converged], dtype=float)
        certified = sum(1 for o in out if o[2])
        table.rows.append(proportion_row("consensus", n, None, certified, trials,
                                         metric="certified"))
        summary = {"metric": "unanimous", "capped": trials - len(converged)}
        if len(t_u):
            summary.update(tu_mean=float(t_u.mean()), tu_q50=float(np.quantile(t_u, 0.5)),
                           tu_q90=float(np.quantile(t_u, 0.9)),
                           tu_q99=float(np.quantile(t_u, 0.99)), tu_max=int(t_u.max()))
        table.rows.append(proportion_row("consensus", n, None, len(converged), trials, **summary))
        table.rows.append(proportion_row("consensus", n, None, sum(o[4] for o in out), trials,
                                         metric="correct"))
    return table


def run_round_accuracy(config: ExperimentConfig, workers: int = 1) -> ResultTable:
    """P(V_1(t) = S) for t = 1..max_rounds, per n."""
    table = ResultTable("round_accuracy")
    for n in config.agents:
        trial = partial(round_accuracy_trial, config.model, n, config.max_rounds, config.state)
        hits = np.array(run_trials(trial, _seeds(config, n), workers), dtype=np.int64)
        for t in range(config.max_rounds):
            table.rows.append(proportion_row("round_accuracy", n, t + 1, int(hits[:, t].sum()),
                                             len(hits), agent=1))
    return table


def learning_rate_constants(model: SignalModel) -> LearningRateEstimate:
    alpha1 = 1.0 - model.llr_cdf(0.0, 1)
    alpha0 = 1.0 - model.llr_cdf(0.0, 0)
    return LearningRateEstimate(alpha1, alpha0, bernoulli_kl(alpha1, alpha0))


def bernoulli_kl(p: float, q: float) -> float:
    """KL(Bernoulli(p) || Bernoulli(q))."""
    out = 0.0
    if p > 0:
        out += p * math.log(p / q)
    if p < 1:
        out += (1 - p) * math.log((1 - p) / (1 - q))
    return out


def fit_failure_slope(agents: Sequence[int], failures: Sequence[int], trials: int,
                      min_failures: int = 10) -> tuple[float | None, str, int]:
    """Slope of log failure rate against n.

    Fitted by least squares over points with at least ``min_failures``
    failures.  With fewer than two such points, a point with no failures is
    replaced by the rule-of-three rate 3/trials, which makes the result an
    upper bound on the slope.
    """
    pts = [(n, f / trials) for n, f in zip(agents, failures) if f >= min_failures]
    if len(pts) >= 2:
        x, y = np.array(pts).T
        return float(np.polyfit(x, np.log(y), 1)[0]), "fit", len(pts)
    zeros = [n for n, f in zip(agents, failures) if f == 0]
    if pts and zeros and zeros[-1] > pts[-1][0]:
        n0, rate = pts[-1]
        return (math.log(3.0 / trials) - math.log(rate)) / (zeros[-1] - n0), "upper_bound", 1
    return None, "none", len(pts)


def run_learning_curve(config: ExperimentConfig, workers: int = 1) -> ResultTable:
    """P(all round-2 votes equal S) per n, with the fitted decay of the failure rate."""
    table = ResultTable("learning_curve")
    failures = []
    for n in config.agents:
        trial = partial(second_round_trial, config.model, n, config.state)
        out = run_trials(trial, _seeds(config, n), workers)
        ok = sum(o[2] for o in out)
        failures.append(len(out) - ok)
        table.rows.append(proportion_row("learning_curve", n, 2, ok, len(out),
                                         failures=len(out) - ok))
    estimate = learning_rate_constants(config.model)
    estimate.slope, estimate.slope_kind, estimate.fit_points = fit_failure_slope(
        config.agents, failures, config.trials)
    table.learning_rate = estimate
    return table


def majority_correct_probability(model: SignalModel, n: int, state: int) -> float:
    """Exact P(one-round majority equals S=state) from the binomial law of round-1 votes."""
    from scipy.stats import binom

    q = 1.0 - model.llr_cdf(0.0, state)
    half = n // 2
    return float(binom.sf(half, n, q) if state == 1 else binom.cdf(half, n, q))


def run_majority_baseline(config: ExperimentConfig, workers: int = 1) -> ResultTable:
    """One-round majority versus the unanimous round-2 vote, per n and state."""
    table = ResultTable("majority_baseline")
    for n in config.agents:
        if n % 2 == 0:
            raise ConfigurationError(f"majority undefined for even n={n}")
        trial = partial(second_round_trial, config.model, n, config.state)
        out = run_trials(trial, _seeds(config, n), workers)
        for s in (0, 1):
            sub = [o for o in out if o[0] == s]
            if not sub:
                continue
            table.rows.append(proportion_row(
                "majority_baseline", n, 1, sum(o[1] for o in sub), len(sub), method="majority",
                state=s, exact=majority_correct_probability(config.model, n, s)))
            table.rows.append(proportion_row(
                "majority_baseline", n, 2, sum(o[2] for o in sub), len(sub), method="consensus",
                state=s))
    return table


RUNNERS = {
    "consensus": run_consensus_experiment,
    "round_accuracy": run_round_accuracy,
    "learning_curve": run_learning_curve,
    "majority_baseline": run_majority_baseline,
}


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ResultTable:
    return RUNNERS[config.kind](config, workers)


def summary(config: ExperimentConfig, table: ResultTable) -> dict:
    out = {"run_id": config.run_id(), "config": config.echo(), "rows": len(table.rows)}
    if table.learning_rate is not None:
        out["learning_rate"] = table.learning_rate.as_dict()
    return out


def default_model() -> GaussianModel:
    return GaussianModel(-1.0, 1.0, 1.0)
