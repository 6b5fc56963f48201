import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiresrag.grammar import (
    Code,
    GrammarError,
    Kind,
    Segment,
    Trajectory,
    dumps_jsonl,
    final_answer,
    from_record,
    intermediate_answers,
    iter_jsonl,
    parse_trajectory,
    prefix_upto_retrieval,
    render_trajectory,
    strip_answers,
    to_record,
)

# Successful trace from the father-in-law case study, tags as printed.
BLANDUS = (
    "<think> First, I need to identify who Gaius Rubellius Blandus's wife was. "
    "Then I need to find out who her father was. </think>\n"
    "<search> who was Gaius Rubellius Blandus's wife </search>\n"
    "<information> Gaius Rubellius Blandus married Julia Livia, granddaughter of Emperor Tiberius, "
    "in AD 33. ... </information>\n"
    "<think> Now that I know his wife is Julia Livia, I need to find out who Julia Livia's father was. </think>\n"
    "<search> who was Julia Livia's father </search>\n"
    "<information> Julia Livia was the daughter of Drusus Julius Caesar and Livilla. ... </information>\n"
    "<think> Therefore, Gaius Rubellius Blandus's father-in-law is Drusus Julius Caesar. </think>\n"
    "<answer> Drusus Julius Caesar </answer>"
)

NOLAN = (
    "<think> Let's determine who was born first, Dennis E. Nolan or Humberto Anguiano, "
    "by finding their respective birth years. </think>\n"
    "<search> Dennis E. Nolan birth date </search>\n"
    "<information> ... Dennis E. Nolan (1872-1956), United States Army general. ... </information>\n"
    "<think> From the search results, I can confirm that Dennis E. Nolan is a United States Army "
    "general born in 1872. </think>\n"
    "<search> Humberto Anguiano birth date </search>\n"
    "<information> ... Humberto Anguiano (born 2 November 1910) was a Mexican modern pentathlete. ... "
    "</information>\n"
    "<think> Since Dennis E. Nolan was born in 1872 and Humberto Anguiano was born in 1910, "
    "Dennis E. Nolan was born first. </think>\n"
    "<answer> Dennis E. Nolan </answer>"
)


def T(*pairs):
    return Trajectory(tuple(Segment(Kind(k), v) for k, v in pairs))


def codes(result):
    assert isinstance(result, list)
    return {d.code for d in result}


# -- parse ------------------------------------------------------------------


def test_parse_basic_five_segments():
    t = parse_trajectory("<think>x</think><search>q</search><information>d</information><think>y</think><answer>A</answer>")
    assert t.kinds() == [Kind.THINK, Kind.SEARCH, Kind.INFORMATION, Kind.THINK, Kind.ANSWER]
    assert [s.text for s in t.segments] == ["x", "q", "d", "y", "A"]


def test_think_only_is_missing_answer():
    assert codes(parse_trajectory("<think>x</think>")) == {Code.MISSING_ANSWER}


def test_case_study_trace_blandus():
    # The printed trace has three think/search/information groups collapsed to
    # think, search, info, think, search, info, think, answer: 8 segments.
    t = parse_trajectory(BLANDUS)
    assert isinstance(t, Trajectory)
    assert len(t.segments) == 8
    assert t.segments[-1].kind is Kind.ANSWER
    assert final_answer(t) == "Drusus Julius Caesar"
    assert t.n_retrievals == 2


def test_case_study_trace_nolan():
    t = parse_trajectory(NOLAN)
    assert final_answer(t) == "Dennis E. Nolan"
    assert intermediate_answers(t) == ["Dennis E. Nolan"]


@pytest.mark.parametrize(
    "raw, code",
    [
        ("<think>x", Code.UNBALANCED_TAG),
        ("<think>x</search><answer>a</answer>", Code.UNBALANCED_TAG),
        ("</answer><answer>a</answer>", Code.UNBALANCED_TAG),
        ("<information>d</information><answer>a</answer>", Code.ORPHAN_INFORMATION),
        ("<search>q</search><answer>a</answer>", Code.MISSING_INFORMATION),
        ("<search>  </search><information>d</information><answer>a</answer>", Code.EMPTY_SEARCH),
        ("<think>a<search>q</search></think><answer>a</answer>", Code.NESTED_TAG),
    ],
)
def test_error_codes(raw, code):
    assert code in codes(parse_trajectory(raw))


def test_warnings_do_not_fail_parse():
    t = parse_trajectory("junk<answer>a</answer><answer>b</answer><answer>c</answer>tail")
    assert isinstance(t, Trajectory)
    assert {w.code for w in t.warnings} == {Code.TRAILING_TEXT, Code.EXTRA_ANSWER}
    assert final_answer(t) == "c"


def test_byte_spans_are_utf8_offsets():
    raw = "<think>é</think><search>q</search>"
    errs = parse_trajectory(raw)
    (d,) = [e for e in errs if e.code is Code.MISSING_INFORMATION]
    start, end = d.byte_span
    assert raw.encode()[start:end] == b"<search>q</search>"


def test_bytes_input_with_invalid_utf8():
    raw = b"<think>\xff\xfe</think><answer>a</answer>"
    assert isinstance(parse_trajectory(raw), Trajectory)
    errs = parse_trajectory(b"<think>\xff</think>")
    (d,) = errs
    assert d.code is Code.MISSING_ANSWER and d.byte_span == (0, len(b"<think>\xff</think>"))


def test_partial_trace_allowed_without_answer():
    t = parse_trajectory("<think>x</think><search>q</search><information>d</information>", require_answer=False)
    assert t.n_retrievals == 1


def test_segment_rejects_tag_text():
    with pytest.raises(GrammarError):
        Segment(Kind.THINK, "a <answer> b")


# -- render and accessors ------------------------------------------------------


def test_render_single_answer():
    assert render_trajectory(T(("answer", "X"))) == "<answer>X</answer>"


def test_render_two_answers_in_order():
    out = render_trajectory(T(("answer", "A1"), ("think", "r"), ("answer", "A2")))
    assert out.index("A1") < out.index("A2")
    assert intermediate_answers(parse_trajectory(out)) == ["A1", "A2"]


def test_final_answer_last_wins():
    assert final_answer(T(("answer", "Ingersheim"), ("answer", "Wilhelmshaven"))) == "Wilhelmshaven"
    assert final_answer(T(("answer", "Tiberius"))) == "Tiberius"
    with pytest.raises(GrammarError):
        final_answer(T(("think", "x")))


def test_prefix_upto_retrieval():
    t = parse_trajectory(BLANDUS)
    p1 = prefix_upto_retrieval(t, 1)
    assert p1.kinds() == [Kind.THINK, Kind.SEARCH, Kind.INFORMATION]
    p2 = prefix_upto_retrieval(t, 2)
    assert p2.kinds()[-1] is Kind.INFORMATION and len(p2.segments) == 6
    with pytest.raises(GrammarError):
        prefix_upto_retrieval(t, 3)
    with pytest.raises(GrammarError):
        prefix_upto_retrieval(t, 0)


def test_strip_answers():
    t = T(("answer", "a"), ("search", "q"), ("information", "d"), ("answer", "b"))
    assert strip_answers(t).kinds() == [Kind.SEARCH, Kind.INFORMATION]


# -- JSONL ---------------------------------------------------------------------


def test_jsonl_round_trip_and_errors():
    t = parse_trajectory(NOLAN, question_id="q1")
    text = dumps_jsonl([t, t])
    lines = text.splitlines() + ["{not json", json.dumps({"segments": [{"kind": "think", "text": "x<answer>"}]})]
    out = list(iter_jsonl(lines))
    assert [n for n, _ in out] == [1, 2, 3, 4]
    assert out[0][1] == t and out[0][1].question_id == "q1"
    assert isinstance(out[2][1], Exception) and isinstance(out[3][1], Exception)


def test_from_record_rejects_structural_errors():
    rec = to_record(T(("information", "d"), ("answer", "a")))
    with pytest.raises(GrammarError):
        from_record(rec)


# -- properties -----------------------------------------------------------------

text = st.text(alphabet=st.characters(blacklist_characters="<>", blacklist_categories=("Cs",)), max_size=20)


@st.composite
def trajectories(draw):
    segs = []
    for _ in range(draw(st.integers(0, 4))):
        if draw(st.booleans()):
            segs.append(Segment(Kind.THINK, draw(text)))
        segs.append(Segment(Kind.SEARCH, "q" + draw(text)))
        segs.append(Segment(Kind.INFORMATION, draw(text)))
    segs.append(Segment(Kind.THINK, draw(text)))
    segs.append(Segment(Kind.ANSWER, draw(text)))
    if draw(st.booleans()):
        segs.append(Segment(Kind.ANSWER, draw(text)))
    return Trajectory(tuple(segs))


@given(trajectories())
@settings(max_examples=200, deadline=None)
def test_render_parse_round_trip(t):
    back = parse_trajectory(render_trajectory(t))
    assert back == t
    assert render_trajectory(back) == render_trajectory(t)


TOKENS = list("<>/abx é") + ["<think>", "</think>", "<search>", "</search>", "<information>",
                             "</information>", "<answer>", "</answer>"]


@given(st.lists(st.sampled_from(TOKENS), max_size=30).map("".join))
@settings(max_examples=300, deadline=None)
def test_parse_never_raises(raw):
    r = parse_trajectory(raw)
    if isinstance(r, list):
        assert r and all(not d.is_warning for d in r)
        n = len(raw.encode("utf-8"))
        assert all(0 <= a <= b <= n for a, b in (d.byte_span for d in r))
    else:
        assert parse_trajectory(render_trajectory(r)) == r
