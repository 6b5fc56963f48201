"""Tabular softmax agent over the synthetic world, rollouts, and GRPO updates.

The agent state is abstracted to (question hops, resolved-hop bitmask,
phase).  Phase 0 is before the first answer, phase 1 is "answered once"
(choose Stop or Reflect), phase 2 is after Reflect (search again and give the
second, final answer).  Each decision is recorded with its state, action and
log-probability so that the clipped surrogate and its exact gradient can be
recomputed for any parameter table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .grammar import Kind, Segment, Trajectory
from .world import CHAIN_LEN, RELATIONS, Question, WorldSpec, fact_sentence, hop_query

MAX_HOPS = CHAIN_LEN
SEARCH_NOISE = MAX_HOPS
ANSWER_BEST = MAX_HOPS + 1
ANSWER_RANDOM = MAX_HOPS + 2
REFLECT = MAX_HOPS + 3
STOP = MAX_HOPS + 4
N_ACTIONS = MAX_HOPS + 5
N_PHASES = 3
N_STATES = MAX_HOPS * (1 << MAX_HOPS) * N_PHASES
PLACEHOLDER = "unknown"


def action_name(a: int) -> str:
    if a < MAX_HOPS:
        return f"SearchHop({a})"
    return {SEARCH_NOISE: "SearchNoise", ANSWER_BEST: "AnswerBest", ANSWER_RANDOM: "AnswerRandom",
            REFLECT: "Reflect", STOP: "Stop"}[a]


def state_index(hops: int, resolved: int, phase: int) -> int:
    return ((hops - 1) * (1 << MAX_HOPS) + resolved) * N_PHASES + phase


def _legal_table() -> np.ndarray:
    legal = np.zeros((N_STATES, N_ACTIONS), dtype=np.bool_)
    for h in range(1, MAX_HOPS + 1):
        for mask in range(1 << MAX_HOPS):
            for phase in range(N_PHASES):
                row = legal[state_index(h, mask, phase)]
                if phase == 1:
                    row[REFLECT] = row[STOP] = True
                else:
                    row[:h] = True
                    row[SEARCH_NOISE] = row[ANSWER_BEST] = row[ANSWER_RANDOM] = True
    return legal


LEGAL = _legal_table()
_LEGAL_LISTS = [np.flatnonzero(LEGAL[s]).tolist() for s in range(N_STATES)]


@dataclass
class AgentState:
    hops: int
    resolved: int = 0
    steps_taken: int = 0
    answered_once: bool = False
    reflecting: bool = False

    @property
    def phase(self) -> int:
        if self.reflecting:
            return 2
        return 1 if self.answered_once else 0

    @property
    def index(self) -> int:
        return state_index(self.hops, self.resolved, self.phase)

    def legal_actions(self) -> list[int]:
        return _LEGAL_LISTS[self.index]


@dataclass
class PolicyParameters:
    theta: np.ndarray = field(default_factory=lambda: np.zeros((N_STATES, N_ACTIONS)))
    temperature: float = 1.0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (N_STATES, N_ACTIONS):
            raise ValueError(f"theta must have shape {(N_STATES, N_ACTIONS)}")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(self.theta.copy(), self.temperature)

    def log_probs(self, state: int) -> dict[int, float]:
        """Log-probabilities of the legal actions in ``state``."""
        acts = _LEGAL_LISTS[state]
        row = self.theta[state]
        inv = 1.0 / self.temperature
        z = [row[a] * inv for a in acts]
        m = max(z)
        lse = m + math.log(sum(math.exp(v - m) for v in z))
        return {a: v - lse for a, v in zip(acts, z)}

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "theta": self.theta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyParameters":
        return cls(np.asarray(d["theta"], dtype=np.float64), float(d["temperature"]))


@dataclass
class Rollout:
    question: Question
    trajectory: Trajectory
    states: list[int]
    actions: list[int]

    @property
    def logprobs(self) -> list[float]:
        return list(self.trajectory.step_logprobs)


# ---------------------------------------------------------------------------
# environment
# ---------------------------------------------------------------------------


class _Episode:
    def __init__(self, world: WorldSpec, q: Question, k: int, env_rng: np.random.Generator):
        self.world = world
        self.q = q
        self.k = k
        self.rng = env_rng
        self.state = AgentState(q.hops)
        self.segments: list[Segment] = []
        self.sentences = [fact_sentence(t) for t in q.hop_chain]
        self.done = False

    def _entity(self, exclude: str | None = None) -> str:
        ents = self.world.entities
        while True:
            e = ents[int(self.rng.integers(len(ents)))]
            if e != exclude:
                return e

    def _search(self, thought: str, query: str) -> None:
        info = self.world.retrieve(query, self.k).render()
        self.segments += [
            Segment(Kind.THINK, thought),
            Segment(Kind.SEARCH, query),
            Segment(Kind.INFORMATION, info),
        ]
        for j, sent in enumerate(self.sentences):
            if sent in info:
                self.state.resolved |= 1 << j

    def _answer(self, thought: str, ans: str) -> None:
        self.segments += [Segment(Kind.THINK, thought), Segment(Kind.ANSWER, ans)]
        if self.state.reflecting:
            self.done = True
        else:
            self.state.answered_once = True

    def best_answer(self) -> str:
        m = 0
        while m < self.q.hops and self.state.resolved >> m & 1:
            m += 1
        return self.q.hop_chain[m - 1][2] if m else PLACEHOLDER

    def step(self, a: int) -> None:
        st = self.state
        if a < MAX_HOPS:
            subj, rel, _ = self.q.hop_chain[a]
            if a > 0 and not st.resolved >> (a - 1) & 1:
                subj = self._entity(exclude=subj)
            self._search(f"I need the {rel} of {subj}.", hop_query(subj, rel))
        elif a == SEARCH_NOISE:
            subj = self._entity()
            rel = RELATIONS[int(self.rng.integers(len(RELATIONS)))]
            self._search(f"Let me also check the {rel} of {subj}.", hop_query(subj, rel))
        elif a == ANSWER_BEST:
            ans = self.best_answer()
            thought = f"So the answer is {ans}." if ans != PLACEHOLDER else "I could not pin down the answer."
            self._answer(thought, ans)
        elif a == ANSWER_RANDOM:
            ans = self._entity()
            self._answer(f"I will guess {ans}.", ans)
        elif a == REFLECT:
            self.segments.append(Segment(Kind.THINK, "Let me re-examine the evidence behind my answer."))
            st.reflecting = True
        elif a == STOP:
            self.done = True
        else:
            raise ValueError(f"unknown action {a}")
        st.steps_taken += 1


def _run_episode(policy: PolicyParameters, world: WorldSpec, q: Question, max_steps: int, k: int,
                 act_rng: np.random.Generator | None, env_rng: np.random.Generator,
                 forced: Sequence[int] | None = None) -> Rollout:
    if not 1 <= q.hops <= MAX_HOPS:
        raise ValueError(f"question hops must be in 1..{MAX_HOPS}")
    ep = _Episode(world, q, k, env_rng)
    states, actions, logps = [], [], []
    while not ep.done and ep.state.steps_taken < max_steps:
        if forced is not None and len(actions) == len(forced):
            break
        s = ep.state.index
        lp = policy.log_probs(s)
        if forced is not None:
            a = forced[len(actions)]
            if a not in lp:
                raise ValueError(f"action {action_name(a)} is illegal in state {s}")
        else:
            u = act_rng.random()
            acc = 0.0
            a = None
            for a, v in lp.items():
                acc += math.exp(v)
                if u < acc:
                    break
        states.append(s)
        actions.append(a)
        logps.append(lp[a])
        ep.step(a)
    traj = Trajectory(tuple(ep.segments), q.question_id, tuple(logps),
                      {"actions": [action_name(a) for a in actions]})
    return Rollout(q, traj, states, actions)


def _streams(rng: np.random.Generator, G: int):
    ss = np.random.SeedSequence(int(rng.integers(2**63)))
    for child in ss.spawn(G):
        act, env = child.spawn(2)
        yield np.random.default_rng(act), np.random.default_rng(env)


def rollout(policy: PolicyParameters, world: WorldSpec, q: Question, G: int, max_steps: int,
            rng: np.random.Generator, k: int = 5) -> list[Rollout]:
    """G independent rollouts, each with its own action and environment streams."""
    if G < 1:
        raise ValueError("G must be >= 1")
    return [_run_episode(policy, world, q, max_steps, k, act, env) for act, env in _streams(rng, G)]


def replay_actions(policy: PolicyParameters, world: WorldSpec, q: Question, actions: Sequence[int],
                   env_rng: np.random.Generator, max_steps: int = 64, k: int = 5) -> Rollout:
    """Execute a fixed action sequence, recording the policy's log-probs for it."""
    return _run_episode(policy, world, q, max_steps, k, None, env_rng, forced=list(actions))


# ---------------------------------------------------------------------------
# objective and update
# ---------------------------------------------------------------------------


def grpo_surrogate(old_logps: Sequence[float], new_logps: Sequence[float], advantage: float,
                   epsilon: float = 0.2) -> float:
    """Per-step mean of min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)."""
    if len(old_logps) != len(new_logps):
        raise ValueError("log-prob sequences differ in length")
    if not old_logps:
        return 0.0
    total = 0.0
    for o, n in zip(old_logps, new_logps):
        ratio = math.exp(n - o)
        clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
        total += min(ratio * advantage, clipped * advantage)
    return total / len(old_logps)


@dataclass
class FlatBatch:
    states: np.ndarray
    actions: np.ndarray
    old_logp: np.ndarray
    step_coef: np.ndarray
    step_adv: np.ndarray


def flatten(batch: Sequence[tuple[Rollout, float]]) -> FlatBatch:
    states, actions, old, coef, adv = [], [], [], [], []
    for r, a in batch:
        n = len(r.actions)
        if n == 0:
            continue
        states += r.states
        actions += r.actions
        old += r.trajectory.step_logprobs
        coef += [1.0 / n] * n
        adv += [float(a)] * n
    return FlatBatch(
        np.asarray(states, dtype=np.int64),
        np.asarray(actions, dtype=np.int64),
        np.asarray(old, dtype=np.float64),
        np.asarray(coef, dtype=np.float64),
        np.asarray(adv, dtype=np.float64),
    )


def surrogate_and_grad(policy: PolicyParameters, fb: FlatBatch, epsilon: float = 0.2):
    """Summed surrogate over rollouts and its exact gradient w.r.t. theta."""
    return _kernels.surrogate_grad(policy.theta, LEGAL, 1.0 / policy.temperature, fb.states, fb.actions,
                                   fb.old_logp, fb.step_coef, fb.step_adv, epsilon)


class NonFiniteGradient(FloatingPointError):
    pass


def update(policy: PolicyParameters, batch: Sequence[tuple[Rollout, float]], mu: int = 2, lr: float = 0.1,
           epsilon: float = 0.2) -> PolicyParameters:
    """mu gradient-ascent passes on the summed clipped surrogate.

    Old log-probs are the ones recorded at rollout time; advantages stay
    fixed across the mu passes.
    """
    if not batch:
        raise ValueError("empty update batch")
    fb = flatten(batch)
    new = policy.copy()
    for _ in range(mu):
        _, grad = surrogate_and_grad(new, fb, epsilon)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient("non-finite policy gradient")
        new.theta = new.theta + lr * grad
    return new


# ---------------------------------------------------------------------------
# constructed policies
# ---------------------------------------------------------------------------


def scripted_policy(choice: dict[tuple[int, int, int], int], strength: float = 50.0,
                    temperature: float = 1.0) -> PolicyParameters:
    """Policy that puts almost all mass on ``choice[(hops, mask, phase)]``."""
    p = PolicyParameters(temperature=temperature)
    for (h, mask, phase), a in choice.items():
        p.theta[state_index(h, mask, phase), a] = strength
    return p


def perfect_policy(strength: float = 50.0) -> PolicyParameters:
    """Search the next unresolved hop in order, answer once all are resolved, stop."""
    choice = {}
    for h in range(1, MAX_HOPS + 1):
        for mask in range(1 << h):
            m = 0
            while m < h and mask >> m & 1:
                m += 1
            for phase in (0, 2):
                choice[(h, mask, phase)] = ANSWER_BEST if m == h else m
            choice[(h, mask, 1)] = STOP
    return scripted_policy(choice, strength)
