"""Tag-delimited trajectory format: think / search / information / answer.

A trajectory is an ordered list of segments.  The canonical text form wraps
each segment in its tag and joins segments with a single newline::

    <think>...</think>
    <search>...</search>
    <information>...</information>
    <answer>...</answer>

The last ``<answer>`` is the prediction; an earlier one is the pre-reflection
answer.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence


class Kind(str, enum.Enum):
    THINK = "think"
    SEARCH = "search"
    INFORMATION = "information"
    ANSWER = "answer"


class Code(str, enum.Enum):
    UNBALANCED_TAG = "UnbalancedTag"
    ORPHAN_INFORMATION = "OrphanInformation"
    MISSING_INFORMATION = "MissingInformation"
    MISSING_ANSWER = "MissingAnswer"
    NESTED_TAG = "NestedTag"
    EMPTY_SEARCH = "EmptySearch"
    # warnings
    TRAILING_TEXT = "TrailingText"
    EXTRA_ANSWER = "ExtraAnswer"


WARNING_CODES = frozenset({Code.TRAILING_TEXT, Code.EXTRA_ANSWER})

TAG_RE = re.compile(r"<(/?)(think|search|information|answer)>")
MAX_ANSWERS = 2


class GrammarError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    kind: Kind
    text: str

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if TAG_RE.search(self.text):
            raise GrammarError(f"{self.kind.value} segment text contains a tag delimiter")


@dataclass(frozen=True)
class ParseDiagnostic:
    code: Code
    byte_span: tuple[int, int]
    message: str

    @property
    def is_warning(self) -> bool:
        return self.code in WARNING_CODES


@dataclass(frozen=True)
class Trajectory:
    segments: tuple[Segment, ...]
    question_id: str = ""
    step_logprobs: tuple[float, ...] = ()
    meta: dict = field(default_factory=dict, compare=False, hash=False)
    warnings: tuple[ParseDiagnostic, ...] = field(default=(), compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "step_logprobs", tuple(float(x) for x in self.step_logprobs))

    def kinds(self) -> list[Kind]:
        return [s.kind for s in self.segments]

    @property
    def n_retrievals(self) -> int:
        return sum(1 for s in self.segments if s.kind is Kind.INFORMATION)

    def searches(self) -> list[str]:
        return [s.text for s in self.segments if s.kind is Kind.SEARCH]

    def with_segments(self, segments: Iterable[Segment]) -> "Trajectory":
        return Trajectory(tuple(segments), self.question_id, self.step_logprobs, dict(self.meta))


# ---------------------------------------------------------------------------
# structural validation
# ---------------------------------------------------------------------------


def _structure_diagnostics(
    segments: Sequence[Segment],
    spans: Sequence[tuple[int, int]],
    require_answer: bool,
    total: int,
) -> list[ParseDiagnostic]:
    out = []
    n_answers = 0
    for i, seg in enumerate(segments):
        span = spans[i]
        if seg.kind is Kind.SEARCH:
            if not seg.text.strip():
                out.append(ParseDiagnostic(Code.EMPTY_SEARCH, span, "search query is empty"))
            if i + 1 >= len(segments) or segments[i + 1].kind is not Kind.INFORMATION:
                out.append(ParseDiagnostic(Code.MISSING_INFORMATION, span, "search not followed by information"))
        elif seg.kind is Kind.INFORMATION:
            if i == 0 or segments[i - 1].kind is not Kind.SEARCH:
                out.append(ParseDiagnostic(Code.ORPHAN_INFORMATION, span, "information without a preceding search"))
        elif seg.kind is Kind.ANSWER:
            n_answers += 1
            if n_answers == MAX_ANSWERS + 1:
                out.append(ParseDiagnostic(Code.EXTRA_ANSWER, span, f"more than {MAX_ANSWERS} answers"))
    if require_answer and n_answers == 0:
        out.append(ParseDiagnostic(Code.MISSING_ANSWER, (0, total), "no answer segment"))
    return out


def validate(t: Trajectory, require_answer: bool = True) -> list[ParseDiagnostic]:
    """Structural diagnostics for an already-built trajectory (spans are segment indices)."""
    spans = [(i, i + 1) for i in range(len(t.segments))]
    return _structure_diagnostics(t.segments, spans, require_answer, len(t.segments))


# ---------------------------------------------------------------------------
# parsing and rendering
# ---------------------------------------------------------------------------


def _char_bytes(ch: str) -> int:
    try:
        return len(ch.encode("utf-8", "surrogateescape"))
    except UnicodeEncodeError:  # lone surrogate not produced by surrogateescape
        return 3


def _byte_offsets(raw: str) -> list[int]:
    offs = [0] * (len(raw) + 1)
    acc = 0
    if raw.isascii():
        return list(range(len(raw) + 1))
    for i, ch in enumerate(raw):
        offs[i] = acc
        acc += _char_bytes(ch)
    offs[len(raw)] = acc
    return offs


def parse_trajectory(
    raw: str | bytes,
    question_id: str = "",
    require_answer: bool = True,
) -> Trajectory | list[ParseDiagnostic]:
    """Parse tagged text.  Returns a Trajectory, or the list of error diagnostics.

    Never raises on malformed input.  Warnings (stray text between segments,
    more than two answers) are attached to ``Trajectory.warnings``.
    """
    if isinstance(raw, (bytes, bytearray)):
        raw = bytes(raw).decode("utf-8", "surrogateescape")
    boffs = _byte_offsets(raw)

    def span(a: int, b: int) -> tuple[int, int]:
        return boffs[a], boffs[b]

    errors: list[ParseDiagnostic] = []
    warnings: list[ParseDiagnostic] = []
    segments: list[Segment] = []
    seg_spans: list[tuple[int, int]] = []

    open_kind: str | None = None
    open_at = 0
    body_start = 0
    cursor = 0
    for m in TAG_RE.finditer(raw):
        closing, name = m.group(1) == "/", m.group(2)
        if open_kind is None:
            gap = raw[cursor:m.start()]
            if gap.strip():
                warnings.append(ParseDiagnostic(Code.TRAILING_TEXT, span(cursor, m.start()), "text outside any tag"))
            if closing:
                errors.append(ParseDiagnostic(Code.UNBALANCED_TAG, span(m.start(), m.end()), f"</{name}> without opening tag"))
                cursor = m.end()
                continue
            open_kind, open_at, body_start = name, m.start(), m.end()
        elif not closing:
            errors.append(ParseDiagnostic(Code.NESTED_TAG, span(m.start(), m.end()), f"<{name}> inside <{open_kind}>"))
            # resynchronise: treat the nested tag as the start of a new segment
            open_kind, open_at, body_start = name, m.start(), m.end()
        elif name != open_kind:
            errors.append(ParseDiagnostic(Code.UNBALANCED_TAG, span(m.start(), m.end()), f"</{name}> closes <{open_kind}>"))
            open_kind = None
            cursor = m.end()
        else:
            segments.append(Segment(Kind(name), raw[body_start:m.start()]))
            seg_spans.append(span(open_at, m.end()))
            open_kind = None
            cursor = m.end()
    if open_kind is not None:
        errors.append(ParseDiagnostic(Code.UNBALANCED_TAG, span(open_at, len(raw)), f"<{open_kind}> never closed"))
    elif raw[cursor:].strip():
        warnings.append(ParseDiagnostic(Code.TRAILING_TEXT, span(cursor, len(raw)), "text outside any tag"))

    for d in _structure_diagnostics(segments, seg_spans, require_answer, boffs[len(raw)]):
        (warnings if d.is_warning else errors).append(d)
    if errors:
        return errors
    return Trajectory(tuple(segments), question_id, warnings=tuple(warnings))


def render_trajectory(t: Trajectory) -> str:
    return "\n".join(f"<{s.kind.value}>{s.text}</{s.kind.value}>" for s in t.segments)


# ---------------------------------------------------------------------------
# accessors
# ---------------------------------------------------------------------------


def intermediate_answers(t: Trajectory) -> list[str]:
    return [s.text.strip() for s in t.segments if s.kind is Kind.ANSWER]


def final_answer(t: Trajectory) -> str:
    answers = intermediate_answers(t)
    if not answers:
        raise GrammarError("trajectory has no answer segment")
    return answers[-1]


def prefix_upto_retrieval(t: Trajectory, i: int) -> Trajectory:
    """Segments up to and including the i-th (1-based) information segment."""
    if i < 1:
        raise GrammarError(f"retrieval index must be >= 1, got {i}")
    seen = 0
    for pos, seg in enumerate(t.segments):
        if seg.kind is Kind.INFORMATION:
            seen += 1
            if seen == i:
                return t.with_segments(t.segments[: pos + 1])
    raise GrammarError(f"retrieval index {i} exceeds retrieval count {seen}")


def strip_answers(t: Trajectory) -> Trajectory:
    return t.with_segments(s for s in t.segments if s.kind is not Kind.ANSWER)


# ---------------------------------------------------------------------------
# JSONL interchange
# ---------------------------------------------------------------------------


def to_record(t: Trajectory) -> dict:
    return {
        "question_id": t.question_id,
        "segments": [{"kind": s.kind.value, "text": s.text} for s in t.segments],
        "step_logprobs": list(t.step_logprobs),
        "meta": t.meta,
    }


def from_record(rec: dict) -> Trajectory:
    if not isinstance(rec, dict):
        raise GrammarError("record is not an object")
    try:
        segs = tuple(Segment(Kind(s["kind"]), str(s["text"])) for s in rec["segments"])
    except (KeyError, TypeError, ValueError) as exc:
        raise GrammarError(f"bad segments: {exc}") from exc
    t = Trajectory(
        segs,
        str(rec.get("question_id", "")),
        tuple(rec.get("step_logprobs", ()) or ()),
        dict(rec.get("meta", {}) or {}),
    )
    errs = [d for d in validate(t, require_answer=False) if not d.is_warning]
    if errs:
        raise GrammarError("; ".join(f"{d.code.value}: {d.message}" for d in errs))
    return t


def dumps_jsonl(trajectories: Iterable[Trajectory]) -> str:
    return "".join(json.dumps(to_record(t), sort_keys=True) + "\n" for t in trajectories)


def iter_jsonl(lines: Iterable[str]) -> Iterator[tuple[int, Trajectory | Exception]]:
    """Yield (line_number, trajectory-or-error) for each non-blank line."""
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            yield lineno, from_record(json.loads(line))
        except (json.JSONDecodeError, GrammarError) as exc:
            yield lineno, exc
