"""Trajectory rewards: answer F1, sufficiency, thinking quality, reflection.

The combined reward is::

    total = answer + a_t * (w_t * thinking + w_s * sufficient + w_r * reflect)

where ``a_t`` is a sigmoid annealing weight over training steps.  The
sufficiency and thinking scores come from a judge: either the programmatic
oracle over a synthetic world, or an external process speaking the JSON line
protocol in :mod:`tiresrag.judge`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

from .grammar import Kind, Trajectory, intermediate_answers, render_trajectory, strip_answers
from .judge import ExternalJudge
from .metrics import cem, f1
from .world import Question, WorldSpec, hop_query

SCHEDULES = ("main", "alg1")


@dataclass(frozen=True)
class RewardWeights:
    w_t: float = 0.6
    w_s: float = 0.3
    w_r: float = 0.3

    def __post_init__(self):
        for name in ("w_t", "w_s", "w_r"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class RewardBreakdown:
    answer: float
    sufficient: int
    thinking: float
    reflect: int
    anneal: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# component rewards
# ---------------------------------------------------------------------------


def answer_reward(pred: str, gold: str) -> float:
    return f1(pred, gold)


def reflect_reward(answers: Sequence[str], gold: str) -> int:
    # >2 answers: compare first and last only
    if len(answers) < 2:
        return 0
    first, last = cem(answers[0], gold), cem(answers[-1], gold)
    if not first and last:
        return 1
    if first and not last:
        return -1
    return 0


def dynamic_weight(t: float, T: float, mode: str = "main") -> float:
    """Annealing weight a_t.

    ``main``: 1 / (1 + exp((t - 0.9 T) / 10)), about 1 early, 0.5 at 0.9 T.
    ``alg1``: 1 / (1 + exp((T - 0.9 t) / 10)), the transposed variant.
    """
    if T <= 0:
        raise ValueError("T must be > 0")
    if mode == "main":
        x = (10 * t - 9 * T) / 100
    elif mode == "alg1":
        x = (10 * T - 9 * t) / 100
    else:
        raise ValueError(f"unknown schedule {mode!r}")
    return 1.0 / (1.0 + math.exp(min(x, 700.0)))


def total_reward(answer: float, thinking: float, sufficient: float, reflect: float,
                 w: RewardWeights, a_t: float) -> float:
    return answer + a_t * (w.w_t * thinking + w.w_s * sufficient + w.w_r * reflect)


# ---------------------------------------------------------------------------
# judges
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RubricWeights:
    grounded: float = 0.25
    ordered: float = 0.25
    no_repeat: float = 0.25
    budget: float = 0.25


def rubric_clauses(world: WorldSpec, q: Question, t: Trajectory) -> dict[str, bool]:
    """The four oracle rubric checks behind the thinking score."""
    seen = set(world.entities_in(q.text))
    grounded = True
    for seg in t.segments:
        if seg.kind is Kind.THINK:
            if grounded and any(e not in seen for e in world.entities_in(seg.text)):
                grounded = False
        elif seg.kind is Kind.INFORMATION:
            seen.update(world.entities_in(seg.text))

    hop_index = {hop_query(s, r): j for j, (s, r, _) in enumerate(q.hop_chain)}
    searches = [s.text.strip() for s in t.segments if s.kind is Kind.SEARCH]
    ordered = True
    top = -1
    for s in searches:
        j = hop_index.get(s)
        if j is None or j > top + 1:
            ordered = False
            break
        top = max(top, j)
    return {
        "grounded": grounded,
        "ordered": ordered,
        "no_repeat": len(set(searches)) == len(searches),
        "budget": t.n_retrievals <= q.hops + 1,
    }


class OracleJudge:
    """Programmatic stand-in for the LLM judge, grounded in a synthetic world."""

    mode = "oracle"

    def __init__(self, world: WorldSpec, rubric: RubricWeights = RubricWeights()):
        self.world = world
        self.rubric = rubric

    def sufficient(self, q: Question, rd: Trajectory, gold: str) -> int:
        return self.world.oracle_sufficient(q, rd)

    def thinking(self, q: Question, t: Trajectory) -> float:
        c = rubric_clauses(self.world, q, t)
        r = self.rubric
        return (r.grounded * c["grounded"] + r.ordered * c["ordered"]
                + r.no_repeat * c["no_repeat"] + r.budget * c["budget"])


class ExternalJudgeBinding:
    """Routes sufficiency and thinking scoring to an external judge process."""

    mode = "external"

    def __init__(self, client: ExternalJudge):
        self.client = client

    def sufficient(self, q: Question, rd: Trajectory, gold: str) -> int:
        return self.client.sufficient(q.text, render_trajectory(rd), gold)

    def thinking(self, q: Question, t: Trajectory) -> float:
        return self.client.thinking(q.text, render_trajectory(t), q.gold_answer)


def sufficient_reward(judge, q: Question, rd: Trajectory, gold: str) -> int:
    return judge.sufficient(q, strip_answers(rd), gold)


def thinking_reward(judge, q: Question, t: Trajectory) -> float:
    return judge.thinking(q, t)


def score_trajectory(judge, q: Question, t: Trajectory, w: RewardWeights, a_t: float) -> RewardBreakdown:
    answers = intermediate_answers(t)
    ans = answer_reward(answers[-1], q.gold_answer) if answers else 0.0
    suff = sufficient_reward(judge, q, t, q.gold_answer)
    think = thinking_reward(judge, q, t)
    refl = reflect_reward(answers, q.gold_answer)
    return RewardBreakdown(ans, suff, think, refl, a_t, total_reward(ans, think, suff, refl, w, a_t))
