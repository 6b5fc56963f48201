"""Seeded synthetic multi-hop QA world.

A world is a set of entities, (subject, relation, object) facts, one document
per fact, and ``n_chains`` disjoint 4-hop chains ``e0 -r1-> e1 ... -r4-> e4``
from which questions are drawn.  Documents pad their fact sentence with
distractor sentences built from real entities and relations, so a query with
the wrong subject still retrieves plausible-looking text.

Retrieval is lexical: score = |query tokens ∩ doc tokens| / |query tokens|.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .grammar import Kind, Trajectory

RELATIONS = (
    "mentor",
    "founder",
    "sponsor",
    "rival",
    "successor",
    "publisher",
    "director",
    "patron",
    "spouse",
    "advisor",
)
CHAIN_LEN = 4
_TOKEN_RE = re.compile(r"[a-z0-9]+")
_RESERVED = {"the", "of", "is", "what", "a", "an"} | set(RELATIONS)
_ONSETS = "b c d f g h k l m n p r s t v z br dr kr st tr".split()
_VOWELS = "a e i o u ai ei ou".split()
_CODAS = ["", "", "n", "r", "s", "l"]


class WorldError(ValueError):
    pass


def tokens(text: str) -> set[str]:
    return set(_TOKEN_RE.findall(text.lower()))


def fact_sentence(triple: Sequence[str]) -> str:
    s, r, o = triple
    return f"The {r} of {s} is {o}."


def hop_query(subject: str, relation: str) -> str:
    return f"{subject} {relation}"


@dataclass(frozen=True)
class Question:
    question_id: str
    text: str
    hop_chain: tuple[tuple[str, str, str], ...]
    gold_answer: str

    @property
    def hops(self) -> int:
        return len(self.hop_chain)

    def to_record(self) -> dict:
        return {
            "question_id": self.question_id,
            "text": self.text,
            "hops": self.hops,
            "gold_answer": self.gold_answer,
            "hop_chain": [list(t) for t in self.hop_chain],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Question":
        return cls(rec["question_id"], rec["text"], tuple(tuple(t) for t in rec["hop_chain"]), rec["gold_answer"])


@dataclass(frozen=True)
class RetrievalResult:
    query: str
    docs: tuple[tuple[str, str, float], ...]
    k: int

    def render(self) -> str:
        return "\n".join(f"[{doc_id}] {text}" for doc_id, text, _ in self.docs)


@dataclass(frozen=True, eq=False)
class WorldSpec:
    seed: int
    entities: tuple[str, ...]
    facts: tuple[tuple[str, str, str], ...]
    documents: tuple[tuple[str, str], ...]
    distractor_count: int
    chains: tuple[tuple[int, ...], ...] = ()
    _cache: dict = field(default_factory=dict, repr=False)

    # -- serialization ----------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "entities": list(self.entities),
            "facts": [list(f) for f in self.facts],
            "documents": [list(d) for d in self.documents],
            "distractor_count": self.distractor_count,
            "chains": [list(c) for c in self.chains],
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "WorldSpec":
        d = json.loads(text)
        return cls(
            d["seed"],
            tuple(d["entities"]),
            tuple(tuple(f) for f in d["facts"]),
            tuple(tuple(x) for x in d["documents"]),
            d["distractor_count"],
            tuple(tuple(c) for c in d["chains"]),
        )

    def __eq__(self, other):
        return isinstance(other, WorldSpec) and self.to_json() == other.to_json()

    __hash__ = None

    # -- indexes ----------------------------------------------------------

    @cached_property
    def _doc_tokens(self) -> list[set[str]]:
        return [tokens(text) for _, text in self.documents]

    @cached_property
    def _inverted(self) -> dict[str, list[int]]:
        inv: dict[str, list[int]] = {}
        for i, toks in enumerate(self._doc_tokens):
            for tok in toks:
                inv.setdefault(tok, []).append(i)
        return inv

    @cached_property
    def entity_pattern(self) -> re.Pattern:
        names = sorted(self.entities, key=len, reverse=True)
        return re.compile("|".join(re.escape(n) for n in names))

    def entities_in(self, text: str) -> tuple[str, ...]:
        """Entity names mentioned in ``text`` (memoized; retrieval output repeats)."""
        key = ("entities", text)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = tuple(self.entity_pattern.findall(text))
        return hit

    # -- retrieval --------------------------------------------------------

    def retrieve(self, query: str, k: int = 5) -> RetrievalResult:
        if k < 1:
            raise WorldError("k must be >= 1")
        key = (query, k)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        q = tokens(query)
        counts: dict[int, int] = {}
        for tok in q:
            for i in self._inverted.get(tok, ()):
                counts[i] = counts.get(i, 0) + 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], self.documents[kv[0]][0]))[:k]
        res = RetrievalResult(
            query,
            tuple((self.documents[i][0], self.documents[i][1], c / len(q)) for i, c in ranked),
            k,
        )
        self._cache[key] = res
        return res

    # -- sufficiency oracle -----------------------------------------------

    def oracle_sufficient(self, q: Question, rd: Trajectory) -> int:
        info = [s.text for s in rd.segments if s.kind is Kind.INFORMATION]
        for triple in q.hop_chain:
            sent = fact_sentence(triple)
            if not any(sent in text for text in info):
                return 0
        return 1

    def sufficiency_point(self, q: Question, t: Trajectory) -> int | None:
        """Smallest retrieval count i whose prefix is sufficient, else None."""
        needed = {fact_sentence(tr) for tr in q.hop_chain}
        i = 0
        for seg in t.segments:
            if seg.kind is not Kind.INFORMATION:
                continue
            i += 1
            needed = {s for s in needed if s not in seg.text}
            if not needed:
                return i
        return None

    # -- questions --------------------------------------------------------

    def question_for_chain(self, chain_index: int, hops: int) -> Question:
        if not 1 <= hops <= CHAIN_LEN:
            raise WorldError(f"hops must be in 1..{CHAIN_LEN}, got {hops}")
        if not 0 <= chain_index < len(self.chains):
            raise WorldError(f"no chain {chain_index}")
        chain = [self.facts[i] for i in self.chains[chain_index]]
        sub = tuple(chain[CHAIN_LEN - hops:])
        text = sub[0][0]
        for _, rel, _ in sub:
            text = f"the {rel} of {text}"
        text = f"What is {text}?"
        return Question(f"w{self.seed}-c{chain_index}-h{hops}", text, sub, sub[-1][2])

    def question_by_id(self, question_id: str) -> Question:
        m = re.fullmatch(r"w(-?\d+)-c(\d+)-h(\d+)", question_id)
        if m is None or int(m.group(1)) != self.seed:
            raise WorldError(f"question id {question_id!r} does not belong to world seed {self.seed}")
        return self.question_for_chain(int(m.group(2)), int(m.group(3)))

    def all_questions(self, hops: int) -> list[Question]:
        return [self.question_for_chain(c, hops) for c in range(len(self.chains))]


def sample_question(world: WorldSpec, hops: int, rng_seed: int) -> Question:
    if not world.chains:
        raise WorldError("world has no chains")
    if hops > CHAIN_LEN or hops < 1:
        raise WorldError(f"no chain of length {hops}")
    c = int(np.random.default_rng(rng_seed).integers(len(world.chains)))
    return world.question_for_chain(c, hops)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _make_names(rng: np.random.Generator, n: int) -> list[str]:
    used: set[str] = set()

    def word() -> str:
        while True:
            w = "".join(
                _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                for _ in range(int(rng.integers(2, 4)))
            ) + _CODAS[rng.integers(len(_CODAS))]
            if w not in used and w not in _RESERVED:
                used.add(w)
                return w.capitalize()

    return [f"{word()} {word()}" for _ in range(n)]


def generate_world(seed: int, n_entities: int, n_chains: int, distractors: int) -> WorldSpec:
    """Build a reproducible world with ``n_chains`` disjoint 4-hop chains."""
    if n_chains < 1:
        raise WorldError("need at least one chain")
    if n_entities < 4 * n_chains:
        raise WorldError(f"n_entities={n_entities} < 4*n_chains={4 * n_chains}")
    if n_entities < (CHAIN_LEN + 1) * n_chains:
        raise WorldError(
            f"{n_chains} disjoint {CHAIN_LEN}-hop chains need {(CHAIN_LEN + 1) * n_chains} entities, got {n_entities}"
        )
    if distractors < 0:
        raise WorldError("distractors must be >= 0")
    rng = np.random.default_rng(seed)
    names = _make_names(rng, n_entities)
    nrel = len(RELATIONS)

    facts: list[tuple[str, str, str]] = []
    keys: set[tuple[str, str]] = set()  # (subject, relation)
    rels_of: dict[str, set[str]] = {e: set() for e in names}

    def add(s: str, r: str, o: str) -> int:
        facts.append((s, r, o))
        keys.add((s, r))
        rels_of[s].add(r)
        rels_of[o].add(r)
        return len(facts) - 1

    chains = []
    for c in range(n_chains):
        ents = names[c * (CHAIN_LEN + 1):(c + 1) * (CHAIN_LEN + 1)]
        idx = []
        prev = None
        for h in range(CHAIN_LEN):
            r = RELATIONS[rng.integers(nrel)]
            while r == prev:
                r = RELATIONS[rng.integers(nrel)]
            idx.append(add(ents[h], r, ents[h + 1]))
            prev = r
        chains.append(tuple(idx))

    # extra facts among entities outside the chains; chain terminals stay unique
    rest = names[n_chains * (CHAIN_LEN + 1):]
    if len(rest) >= 2:
        for s in rest:
            o = rest[rng.integers(len(rest))]
            if o == s:
                continue
            free = [r for r in RELATIONS if r not in rels_of[s] and r not in rels_of[o]]
            if not free:
                continue
            add(s, free[rng.integers(len(free))], o)

    def conflicts(doc_idx: int, sentences: list[tuple[str, str, str]]) -> bool:
        ents: set[str] = set()
        rels: set[str] = set()
        for s, r, o in sentences:
            ents.update((s, o))
            rels.add(r)
        own = facts[doc_idx][:2]
        return any((e, r) in keys and (e, r) != own for e in ents for r in rels)

    documents = []
    for i, fact in enumerate(facts):
        for _ in range(10_000):
            extra = []
            while len(extra) < distractors:
                a = names[rng.integers(n_entities)]
                b = names[rng.integers(n_entities)]
                r = RELATIONS[rng.integers(nrel)]
                if a == b or (a, r) in keys:
                    continue
                extra.append((a, r, b))
            if not conflicts(i, [fact, *extra]):
                break
        else:  # pragma: no cover - only with absurd distractor counts
            raise WorldError(f"could not place distractors for fact {i}")
        sents = [fact_sentence(x) for x in extra]
        sents.insert(int(rng.integers(len(sents) + 1)), fact_sentence(fact))
        documents.append((f"d{i:05d}", " ".join(sents)))

    return WorldSpec(seed, tuple(names), tuple(facts), tuple(documents), distractors, tuple(chains))
