"""Tractable repeated-voting engine.

Every agent's public information about a peer ``j`` is an interval
``(lower_j, upper_j]`` known to contain ``X_j``.  An agent's log posterior
odds before voting is its own LLR plus the interval LLRs of all peers, so a
round costs O(n): sum the cached interval LLRs once and subtract each
agent's own term.  After the votes are published, agent ``i``'s vote reveals
which side of ``-(sum - cache_i)`` its LLR lies on, which tightens one of its
bounds.

A round in which every agent votes the same way only raises lower bounds (all
voted 1) or only lowers upper bounds (all voted 0); interval LLRs are monotone
in both endpoints, so each agent's posterior log odds moves further in the
direction of the common vote and the next round is unanimous again.  Runs
therefore stop at the first unanimous round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .signal_model import InconsistentHistoryError, SignalModel, interval_llrs

DEFAULT_MAX_ROUNDS = 200


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class AgentBounds:
    lower: float
    upper: float
    interval_llr_cache: float


@dataclass
class Bounds:
    """Public bounds for all agents, stored column-wise.

    ``total`` is the sum of all cached interval LLRs.
    """

    lower: np.ndarray
    upper: np.ndarray
    cache: np.ndarray
    total: float = 0.0

    def __len__(self) -> int:
        return len(self.lower)

    def __getitem__(self, i: int) -> AgentBounds:
        return AgentBounds(float(self.lower[i]), float(self.upper[i]), float(self.cache[i]))

    def __iter__(self) -> Iterator[AgentBounds]:
        return (self[i] for i in range(len(self)))

    def thresholds(self) -> np.ndarray:
        """Per-agent vote thresholds: agent i votes 1 iff X_i > threshold_i."""
        return -(self.total - self.cache)

    def width_sum(self) -> float:
        return float(np.sum(self.upper - self.lower))

    def copy(self) -> "Bounds":
        return Bounds(self.lower.copy(), self.upper.copy(), self.cache.copy(), self.total)


@dataclass(frozen=True)
class RoundRecord:
    votes: tuple[int, ...]
    unanimous: bool
    #: The bound-width certificate held after this round's update.
    certified: bool

    def bitstring(self) -> str:
        return "".join(str(v) for v in self.votes)


@dataclass
class SimulationState:
    model: SignalModel
    true_state: int
    private_llrs: np.ndarray
    bounds: Bounds
    history: list[RoundRecord] = field(default_factory=list)
    #: True once a round left every bound unchanged; later rounds repeat it.
    stationary: bool = False

    @property
    def round(self) -> int:
        return len(self.history)

    @property
    def n(self) -> int:
        return len(self.private_llrs)

    @property
    def sum_of_interval_llrs(self) -> float:
        return self.bounds.total


@dataclass
class SimulationResult:
    true_state: int
    private_llrs: np.ndarray
    rounds: list[RoundRecord]
    #: First round of the final unanimous run, None if never unanimous.
    t_u: int | None
    consensus_vote: int | None
    #: First round after which the bound-width certificate held.
    certified_round: int | None
    #: Stopped because of unanimity (or the certificate), not the round cap.
    converged: bool

    @property
    def certified(self) -> bool:
        return self.certified_round is not None

    @property
    def correct(self) -> bool:
        return self.consensus_vote == self.true_state

    @property
    def first_unanimous_round(self) -> int | None:
        return next((k + 1 for k, r in enumerate(self.rounds) if r.unanimous), None)

    def votes(self) -> np.ndarray:
        return np.array([r.votes for r in self.rounds], dtype=np.int8)


def init_bounds(n: int) -> Bounds:
    if n < 1:
        raise ConfigurationError(f"need at least one agent, got n={n}")
    return Bounds(np.full(n, -np.inf), np.full(n, np.inf), np.zeros(n), 0.0)


def compute_vote(private_llr: float, bounds: Bounds, self_index: int) -> int:
    """Agent ``self_index``'s vote given the bounds through the previous round.

    Votes 1 iff ``private_llr + sum_{j != self} cache_j > 0``; a posterior of
    exactly one half is a 0 vote.
    """
    others = bounds.total - bounds.cache[self_index]
    return int(private_llr + others > 0)


def compute_votes(private_llrs: np.ndarray, bounds: Bounds) -> np.ndarray:
    return (private_llrs > bounds.thresholds()).astype(np.int8)


def update_bounds(model: SignalModel, bounds: Bounds, votes) -> Bounds:
    """Fold one round of published votes into the bounds.

    ``bounds`` must reflect the rounds before ``votes``; it is not modified.

    Raises:
        InconsistentHistoryError: the votes contradict earlier ones.
    """
    return _update(model, bounds, votes)[0]


def _update(model: SignalModel, bounds: Bounds, votes) -> tuple[Bounds, bool]:
    votes = np.asarray(votes, dtype=bool)
    if votes.shape != bounds.lower.shape:
        raise ValueError(f"expected {len(bounds)} votes, got {votes.shape}")
    theta = bounds.thresholds()
    lower = np.where(votes, np.maximum(bounds.lower, theta), bounds.lower)
    upper = np.where(votes, bounds.upper, np.minimum(bounds.upper, theta))
    bad = ~(lower < upper)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise InconsistentHistoryError(
            f"agent {i}: bounds ({lower[i]}, {upper[i]}] are empty after this vote")
    moved = (lower != bounds.lower) | (upper != bounds.upper)
    if not moved.any():
        return Bounds(lower, upper, bounds.cache, bounds.total), False
    cache = bounds.cache.copy()
    cache[moved] = interval_llrs(model, lower[moved], upper[moved])
    return Bounds(lower, upper, cache, math.fsum(cache)), True


def bound_certificate(bounds: Bounds, private_llrs: np.ndarray) -> bool:
    """``sum_i (upper_i - lower_i) < |sum_i X_i|``.

    Sufficient for every later round to be unanimous.  Any infinite bound
    makes the left side infinite, so the test fails.
    """
    return bounds.width_sum() < abs(math.fsum(private_llrs))


def consensus_certificate(state: SimulationState) -> bool:
    """The bound-width certificate on the current state (uses ground truth)."""
    return bound_certificate(state.bounds, state.private_llrs)


def new_state(model: SignalModel, private_llrs, true_state: int) -> SimulationState:
    llrs = np.asarray(private_llrs, dtype=float)
    if llrs.ndim != 1:
        raise ValueError("private_llrs must be one-dimensional")
    return SimulationState(model, int(true_state), llrs, init_bounds(len(llrs)))


def sample_state(model: SignalModel, n: int, rng: np.random.Generator,
                 true_state: int | None = None) -> SimulationState:
    """Draw the state of the world uniformly (unless fixed), then n conditionally i.i.d. signals."""
    if n < 1:
        raise ConfigurationError(f"need at least one agent, got n={n}")
    if true_state is None:
        true_state = int(rng.integers(2))
    signals = model.sample(true_state, n, rng)
    return new_state(model, model.llr(signals), true_state)


def run_round(state: SimulationState) -> RoundRecord:
    votes = compute_votes(state.private_llrs, state.bounds)
    updated, moved = _update(state.model, state.bounds, votes)
    state.stationary = not moved
    state.bounds = updated
    first = votes[0]
    unanimous = bool((votes == first).all())
    record = RoundRecord(tuple(int(v) for v in votes), unanimous,
                         bound_certificate(updated, state.private_llrs))
    state.history.append(record)
    return record


def run_rounds(state: SimulationState, rounds: int) -> list[RoundRecord]:
    """Play a fixed number of further rounds regardless of consensus."""
    return [run_round(state) for _ in range(rounds)]


def run(state: SimulationState, max_rounds: int = DEFAULT_MAX_ROUNDS,
        extra_rounds: int = 0) -> SimulationResult:
    """Play rounds until consensus, a stall, or ``max_rounds``.

    A run stops after the first unanimous round, after the bound-width
    certificate first holds, or after a round that changed no bound (every
    later round would repeat it).  ``extra_rounds`` further rounds are then
    played and recorded, which is how permanence is checked empirically.
    """
    if max_rounds < 1:
        raise ConfigurationError("max_rounds must be positive")
    converged = False
    while state.round < max_rounds:
        record = run_round(state)
        if record.unanimous or record.certified:
            converged = True
            break
        if state.stationary:
            break
    if extra_rounds:
        run_rounds(state, extra_rounds)
    return summarize(state, converged)


def summarize(state: SimulationState, converged: bool) -> SimulationResult:
    history = state.history
    certified_round = next((k + 1 for k, r in enumerate(history) if r.certified), None)
    t_u = consensus_vote = None
    if history and history[-1].unanimous:
        consensus_vote = history[-1].votes[0]
        t_u = len(history)
        while t_u > 1 and history[t_u - 2].unanimous and history[t_u - 2].votes[0] == consensus_vote:
            t_u -= 1
    return SimulationResult(state.true_state, state.private_llrs, list(history), t_u,
                            consensus_vote, certified_round, converged)


def run_to_consensus(model: SignalModel, n: int, max_rounds: int,
                     rng: np.random.Generator, extra_rounds: int = 0,
                     true_state: int | None = None) -> SimulationResult:
    return run(sample_state(model, n, rng, true_state), max_rounds, extra_rounds)


def format_transcript(result: SimulationResult) -> str:
    llrs = ",".join(repr(float(x)) for x in result.private_llrs)
    lines = [f"n={len(result.private_llrs)} state={result.true_state} llrs={llrs}"]
    for t, r in enumerate(result.rounds, start=1):
        lines.append(f"t={t} votes={r.bitstring()} unanimous={int(r.unanimous)} "
                     f"certified={int(r.certified)}")
    return "\n".join(lines) + "\n"


def parse_transcript(text: str) -> tuple[int, np.ndarray, list[tuple[int, ...]]]:
    """Inverse of :func:`format_transcript`: (state, llrs, per-round votes)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = dict(tok.split("=", 1) for tok in lines[0].split())
    llrs = np.array([float(x) for x in header["llrs"].split(",")])
    votes = []
    for ln in lines[1:]:
        fields = dict(tok.split("=", 1) for tok in ln.split())
        votes.append(tuple(int(c) for c in fields["votes"]))
    if int(header["n"]) != len(llrs):
        raise ValueError("header n does not match the number of llrs")
    return int(header["state"]), llrs, votes


def replay(model: SignalModel, votes_by_round, n: int) -> Bounds:
    """Rebuild public bounds from a published vote history."""
    bounds = init_bounds(n)
    for votes in votes_by_round:
        bounds = update_bounds(model, bounds, votes)
    return bounds
