"""Answer metrics (EM / F1 / CEM) and the reasoning-sufficiency taxonomy."""

from __future__ import annotations

import collections
import enum
import logging
import math
import re
import string
from dataclasses import dataclass, field
from typing import Iterable

from .grammar import GrammarError, Kind, Trajectory, final_answer

log = logging.getLogger(__name__)

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    s = s.lower().translate(_PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def f1(pred: str, gold: str) -> float:
    p = normalize_answer(pred).split()
    g = normalize_answer(gold).split()
    if not p or not g:
        return 0.0
    same = sum((collections.Counter(p) & collections.Counter(g)).values())
    if same == 0:
        return 0.0
    precision = same / len(p)
    recall = same / len(g)
    return 2 * precision * recall / (precision + recall)


def em(pred: str, gold: str) -> int:
    g = normalize_answer(gold)
    return int(bool(g) and normalize_answer(pred) == g)


def cem(pred: str, gold: str) -> int:
    """1 if the normalized gold answer occurs inside the normalized prediction."""
    g = normalize_answer(gold)
    return int(bool(g) and g in normalize_answer(pred))


# ---------------------------------------------------------------------------
# thinking taxonomy
# ---------------------------------------------------------------------------


class Thinking(str, enum.Enum):
    OVER = "overthinking"
    GOOD = "good_thinking"
    UNDER = "underthinking"


def classify_thinking(world, q, t: Trajectory) -> Thinking:
    point = world.sufficiency_point(q, t)
    if point is None:
        return Thinking.UNDER
    if point == t.n_retrievals:
        return Thinking.GOOD
    return Thinking.OVER


@dataclass
class ThinkingCategoryCounts:
    over_correct: int = 0
    over_incorrect: int = 0
    good_correct: int = 0
    good_incorrect: int = 0
    under_correct: int = 0
    under_incorrect: int = 0

    def add(self, cat: Thinking, correct: bool) -> None:
        name = {Thinking.OVER: "over", Thinking.GOOD: "good", Thinking.UNDER: "under"}[cat]
        name += "_correct" if correct else "_incorrect"
        setattr(self, name, getattr(self, name) + 1)

    def total(self) -> int:
        return sum(self.as_dict().values())

    def as_dict(self) -> dict[str, int]:
        return dict(self.__dict__)

    def table(self) -> str:
        rows = [
            ("Overthinking", self.over_correct, self.over_incorrect),
            ("Good thinking", self.good_correct, self.good_incorrect),
            ("Underthinking", self.under_correct, self.under_incorrect),
        ]
        lines = [f"{'Category':<16}{'Corr.':>8}{'Incorr.':>9}"]
        lines += [f"{name:<16}{c:>8}{i:>9}" for name, c, i in rows]
        return "\n".join(lines)


@dataclass
class MetricsReport:
    n: int = 0
    em: float = 0.0
    f1: float = 0.0
    cem: float = 0.0
    thinking_length: float = 0.0
    search_steps: float = 0.0
    skipped: int = 0
    rows: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "rows"}


def evaluate(world, traces: Iterable[tuple[Trajectory, object]]) -> tuple[MetricsReport, ThinkingCategoryCounts]:
    """Aggregate EM/F1/CEM and the category-by-correctness table.

    Correctness for the table is CEM of the final answer.  Traces without a
    final answer are skipped and counted in ``report.skipped``.
    """
    report = MetricsReport()
    counts = ThinkingCategoryCounts()
    for t, q in traces:
        try:
            pred = final_answer(t)
        except GrammarError:
            log.warning("skipping trace %s: no final answer", t.question_id)
            report.skipped += 1
            continue
        row = {
            "question_id": q.question_id,
            "prediction": pred,
            "gold": q.gold_answer,
            "em": em(pred, q.gold_answer),
            "f1": f1(pred, q.gold_answer),
            "cem": cem(pred, q.gold_answer),
            "category": classify_thinking(world, q, t).value,
            "thinking_length": sum(len(s.text) for s in t.segments if s.kind is Kind.THINK),
            "search_steps": t.n_retrievals,
        }
        counts.add(Thinking(row["category"]), bool(row["cem"]))
        report.rows.append(row)
    report.n = len(report.rows)
    if report.n:
        for key in ("em", "f1", "cem", "thinking_length", "search_steps"):
            setattr(report, key, math.fsum(r[key] for r in report.rows) / report.n)
    return report, counts
