"""From per-rollout rewards to final advantages.

Steps for one group of G rollouts of the same question:

1. raw advantage A_i: z-score of total rewards (within the group for GRPO,
   across the batch for Reinforce++);
2. component advantages A^S, A^T, A^A: z-scores of the sufficient, thinking
   and answer components;
3. consistency penalty A^P when sign(A^S A^T A^A) < 0;
4. difficulty weight W from the group's mean sufficiency;
5. final A'_i = (A_i - A^P_i) * W.

Groups whose answer rewards are saturated are filtered out beforehand.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .rewards import RewardBreakdown

FILTER_MODES = ("prose", "alg1", "none")
PENALTY_MODES = ("verbatim", "sta")
AUDIT_COLUMNS = ("question_id", "rollout_index", "r_sum", "A_i", "A_S", "A_T", "A_A",
                 "penalty", "W", "A_final", "filtered")


@dataclass(frozen=True)
class DifficultyParams:
    A: float = 0.4
    B: float = 1.5
    rho0: float = 0.75
    k: float = 10.0

    def __post_init__(self):
        if not (self.B >= self.A > 0):
            raise ValueError(f"difficulty params need B >= A > 0, got A={self.A}, B={self.B}")


@dataclass(frozen=True)
class GroupBatch:
    question_id: str
    rewards: tuple[RewardBreakdown, ...]

    def __post_init__(self):
        object.__setattr__(self, "rewards", tuple(self.rewards))
        if len(self.rewards) < 2:
            raise ValueError("a group needs at least 2 rollouts")

    @property
    def answer_rewards(self) -> list[float]:
        return [r.answer for r in self.rewards]

    @property
    def sufficient_avg(self) -> float:
        return math.fsum(r.sufficient for r in self.rewards) / len(self.rewards)


@dataclass(frozen=True)
class AdvantageRecord:
    raw_advantage: float
    suff_adv: float
    think_adv: float
    answer_adv: float
    penalty: float
    weight: float
    final: float
    filtered: bool = False


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def normalize_group(values: Sequence[float]) -> list[float]:
    """(v - mean) / population std; a constant vector maps to zeros."""
    if len(values) < 2:
        raise ValueError("normalize_group needs at least 2 values")
    return _kernels.zscore(np.asarray(values, dtype=np.float64)).tolist()


def normalize_batch(groups: Sequence[Sequence[float]]) -> list[list[float]]:
    """Normalize with the whole-batch mean and std, ignoring group boundaries."""
    sizes = [len(g) for g in groups]
    flat = [v for g in groups for v in g]
    if len(flat) < 2:
        raise ValueError("normalize_batch needs at least 2 values in total")
    z = _kernels.zscore(np.asarray(flat, dtype=np.float64)).tolist()
    out, at = [], 0
    for n in sizes:
        out.append(z[at:at + n])
        at += n
    return out


def difficulty_weight(suff_avg: float, p: DifficultyParams = DifficultyParams()) -> float:
    x = p.k * (suff_avg - p.rho0)
    return p.A + (p.B - p.A) / (1.0 + math.exp(min(x, 700.0)))


def consistency_penalty(a_s: float, a_t: float, a_a: float, lambda_p: float = 0.1,
                        mode: str = "verbatim") -> float:
    """Penalty when sufficiency, thinking and answer advantages disagree in sign.

    ``verbatim`` returns -lambda * a_t * a_t * a_a as written;
    ``sta`` returns -lambda * a_s * a_t * a_a.
    """
    if a_s * a_t * a_a >= 0:
        return 0.0
    if mode == "verbatim":
        return -lambda_p * a_t * a_t * a_a
    if mode == "sta":
        return -lambda_p * a_s * a_t * a_a
    raise ValueError(f"unknown penalty mode {mode!r}")


def filter_group(answer_rewards: Sequence[float], low: float = 0.1, high: float = 0.9,
                 mode: str = "prose") -> bool:
    """True if the group is kept.

    ``prose``: drop iff every reward >= high or every reward <= low.
    ``alg1``: keep iff every reward lies strictly inside (low, high).
    ``none``: always keep.
    """
    if not low < high:
        raise ValueError("filter needs low < high")
    if mode == "prose":
        return not (all(r >= high for r in answer_rewards) or all(r <= low for r in answer_rewards))
    if mode == "alg1":
        return all(low < r < high for r in answer_rewards)
    if mode == "none":
        return True
    raise ValueError(f"unknown filter mode {mode!r}")


# ---------------------------------------------------------------------------
# finalize
# ---------------------------------------------------------------------------


def _records(totals, a_s, a_t, a_a, weight, lambda_p, penalty_mode):
    out = []
    for i in range(len(totals)):
        pen = consistency_penalty(a_s[i], a_t[i], a_a[i], lambda_p, penalty_mode)
        out.append(AdvantageRecord(totals[i], a_s[i], a_t[i], a_a[i], pen, weight, (totals[i] - pen) * weight))
    return out


def finalize(group: GroupBatch, p: DifficultyParams = DifficultyParams(), lambda_p: float = 0.1,
             penalty_mode: str = "verbatim") -> list[AdvantageRecord]:
    """Group-normalized (GRPO) final advantages for one group."""
    rs = group.rewards
    return _records(
        normalize_group([r.total for r in rs]),
        normalize_group([r.sufficient for r in rs]),
        normalize_group([r.thinking for r in rs]),
        normalize_group([r.answer for r in rs]),
        difficulty_weight(group.sufficient_avg, p),
        lambda_p,
        penalty_mode,
    )


def finalize_batch(groups: Sequence[GroupBatch], p: DifficultyParams = DifficultyParams(),
                   lambda_p: float = 0.1, penalty_mode: str = "verbatim",
                   mode: str = "group") -> list[list[AdvantageRecord]]:
    """Final advantages for every group; ``mode`` is "group" (GRPO) or "batch" (Reinforce++)."""
    if mode == "group":
        return [finalize(g, p, lambda_p, penalty_mode) for g in groups]
    if mode != "batch":
        raise ValueError(f"unknown normalization mode {mode!r}")
    if not groups:
        return []
    cols = {}
    for name in ("total", "sufficient", "thinking", "answer"):
        cols[name] = normalize_batch([[getattr(r, name) for r in g.rewards] for g in groups])
    return [
        _records(cols["total"][gi], cols["sufficient"][gi], cols["thinking"][gi], cols["answer"][gi],
                 difficulty_weight(g.sufficient_avg, p), lambda_p, penalty_mode)
        for gi, g in enumerate(groups)
    ]


def filtered_records(group: GroupBatch) -> list[AdvantageRecord]:
    nan = float("nan")
    return [AdvantageRecord(nan, nan, nan, nan, nan, nan, 0.0, True) for _ in group.rewards]


def audit_rows(groups: Iterable[GroupBatch], records: Iterable[list[AdvantageRecord]], step: int | None = None):
    for g, recs in zip(groups, records):
        for i, (rb, rec) in enumerate(zip(g.rewards, recs)):
            row = {
                "question_id": g.question_id,
                "rollout_index": i,
                "r_sum": rb.total,
                "A_i": rec.raw_advantage,
                "A_S": rec.suff_adv,
                "A_T": rec.think_adv,
                "A_A": rec.answer_adv,
                "penalty": rec.penalty,
                "W": rec.weight,
                "A_final": rec.final,
                "filtered": int(rec.filtered),
            }
            if step is not None:
                row = {"step": step, **row}
            yield row


def format_audit(rows: Iterable[dict], with_step: bool = True) -> str:
    buf = io.StringIO()
    cols = (("step",) if with_step else ()) + AUDIT_COLUMNS
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()
