"""Exhaustive reference implementation of the vote rule for finite signal spaces.

The oracle knows nothing about interval bounds.  For every round it groups
signal vectors by the vote history they generate, and computes each agent's
posterior by summing the joint likelihood of every vector that shares the
agent's own signal and the public history.  Cost is exponential in the
number of agents, so instances are capped at ``ENUMERATION_BUDGET`` vectors.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import engine
from .signal_model import DiscreteModel, hiring_model

ENUMERATION_BUDGET = 10**6
TIE_GUARD = 1e-12


class BudgetError(ValueError):
    """Instance too large to enumerate."""


@dataclass(frozen=True)
class DiscreteInstance:
    model: DiscreteModel
    n: int
    horizon: int

    def __post_init__(self):
        if self.n < 1 or self.horizon < 1:
            raise ValueError("n and horizon must be positive")
        if self.model.size < 2:
            raise ValueError("need at least two atoms")
        if self.model.size**self.n > ENUMERATION_BUDGET:
            raise BudgetError(f"{self.model.size}^{self.n} vectors exceeds the budget "
                              f"of {ENUMERATION_BUDGET}")

    @property
    def vector_count(self) -> int:
        return self.model.size**self.n

    def vectors(self) -> list[tuple[int, ...]]:
        return list(itertools.product(range(self.model.size), repeat=self.n))


@dataclass
class VoteTable:
    """votes[v, t-1, i] is agent i's round-t vote when the signal vector is vectors[v]."""

    vectors: list[tuple[int, ...]]
    votes: np.ndarray
    #: Smallest |P(S=1 | ...) - 1/2| seen anywhere in the table.
    min_margin: float

    def vote(self, vector: tuple[int, ...], round_: int, agent: int) -> int:
        return int(self.votes[self.vectors.index(tuple(vector)), round_ - 1, agent])


def enumerate_vote_table(instance: DiscreteInstance) -> VoteTable:
    """Votes of every agent, in every round, for every signal vector."""
    model, n = instance.model, instance.n
    vectors = instance.vectors()
    sig = np.array(vectors, dtype=np.intp)
    p0, p1 = model.probabilities(0), model.probabilities(1)
    # The uniform prior on S cancels in the posterior.
    w0 = np.prod(p0[sig], axis=1)
    w1 = np.prod(p1[sig], axis=1)
    votes = np.zeros((len(vectors), instance.horizon, n), dtype=np.int8)
    histories: list[tuple] = [()] * len(vectors)
    min_margin = math.inf
    for t in range(instance.horizon):
        for i in range(n):
            classes: dict[tuple, list[int]] = {}
            for v, hist in enumerate(histories):
                classes.setdefault((hist, vectors[v][i]), []).append(v)
            for members in classes.values():
                mass1 = math.fsum(w1[members])
                mass0 = math.fsum(w0[members])
                posterior = mass1 / (mass1 + mass0)
                min_margin = min(min_margin, abs(posterior - 0.5))
                votes[members, t, i] = posterior > 0.5
        histories = [h + (tuple(votes[v, t]),) for v, h in enumerate(histories)]
    return VoteTable(vectors, votes, min_margin)


@dataclass
class EquivalenceReport:
    vectors: int
    rounds: int
    #: (vector, round, agent) of the first mismatch, rounds counted from 1.
    divergence: tuple[tuple[int, ...], int, int] | None
    min_margin: float

    @property
    def match(self) -> bool:
        return self.divergence is None

    def line(self, instance_id) -> str:
        if self.match:
            result = "MATCH"
        else:
            vec, t, i = self.divergence
            result = f"DIVERGE({''.join(map(str, vec))},{t},{i})"
        return f"instance={instance_id} vectors={self.vectors} rounds={self.rounds} result={result}"


def engine_votes(model: DiscreteModel, vector, horizon: int) -> np.ndarray:
    state = engine.new_state(model, model.llr(np.asarray(vector, dtype=np.intp)), 0)
    return np.array([r.votes for r in engine.run_rounds(state, horizon)], dtype=np.int8)


def check_equivalence(instance: DiscreteInstance, table: VoteTable | None = None) -> EquivalenceReport:
    """Compare the engine with the oracle on every signal vector."""
    table = table or enumerate_vote_table(instance)
    for v, vector in enumerate(table.vectors):
        got = engine_votes(instance.model, vector, instance.horizon)
        diff = np.argwhere(got != table.votes[v])
        if len(diff):
            t, i = diff[0]
            return EquivalenceReport(instance.vector_count, instance.horizon,
                                     (vector, int(t) + 1, int(i)), table.min_margin)
    return EquivalenceReport(instance.vector_count, instance.horizon, None, table.min_margin)


def random_model(rng: np.random.Generator, atoms: int, min_mass: float = 1e-3) -> DiscreteModel:
    """Uniform weights renormalized per column; draws with a near-zero atom are redrawn."""
    while True:
        p0 = rng.random(atoms)
        p1 = rng.random(atoms)
        p0 /= p0.sum()
        p1 /= p1.sum()
        if p0.min() >= min_mass and p1.min() >= min_mass:
            return DiscreteModel.from_rows(
                [(f"s{k}", float(p0[k]), float(p1[k])) for k in range(atoms)])


def random_instance(rng: np.random.Generator, n: int = 3, max_atoms: int = 4,
                    horizon: int = 5) -> tuple[DiscreteInstance, VoteTable]:
    """A random instance whose oracle posteriors all clear the tie guard band."""
    while True:
        m = int(rng.integers(2, max_atoms + 1))
        instance = DiscreteInstance(random_model(rng, m), n, horizon)
        table = enumerate_vote_table(instance)
        if table.min_margin > TIE_GUARD:
            return instance, table


def tie_model() -> DiscreteModel:
    """Has an atom with likelihood ratio exactly 1, so round-1 posteriors of 1/2 occur."""
    return DiscreteModel.from_rows([("even", 0.5, 0.5), ("low", 0.3125, 0.125),
                                    ("high", 0.1875, 0.375)])


def fixed_instances(n: int = 3, horizon: int = 5) -> list[tuple[str, DiscreteInstance]]:
    return [("hiring", DiscreteInstance(hiring_model(), n, horizon)),
            ("tie", DiscreteInstance(tie_model(), n, horizon))]


def fuzz(count: int, seed: int, n: int = 3, max_atoms: int = 4, horizon: int = 5,
         on_report: Callable[[str, EquivalenceReport], None] | None = None,
         ) -> list[tuple[str, EquivalenceReport]]:
    """Fixed instances followed by ``count`` random ones; empty when count is 0."""
    if count <= 0:
        return []
    rng = np.random.default_rng(seed)
    out = []
    for name, inst in fixed_instances(n, horizon):
        report = check_equivalence(inst)
        out.append((name, report))
        if on_report:
            on_report(name, report)
    for k in range(count):
        inst, table = random_instance(rng, n, max_atoms, horizon)
        report = check_equivalence(inst, table)
        out.append((str(k), report))
        if on_report:
            on_report(str(k), report)
    return out
