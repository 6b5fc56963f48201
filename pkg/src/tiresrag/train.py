"""Training loop: sample, roll out, score, filter, advantages, update.

Every random draw derives from ``config.seed``: question sampling at step t
uses ``default_rng([seed, t])`` and batch slot b rolls out with
``default_rng([seed, t, b])``.  Rollout scheduling order therefore cannot
change results, and two runs with the same config produce identical files.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .advantage import (
    DifficultyParams,
    GroupBatch,
    audit_rows,
    filter_group,
    filtered_records,
    finalize_batch,
    format_audit,
)
from .config import Config
from .grammar import intermediate_answers, to_record
from .judge import ExternalJudge
from .metrics import cem
from .policy import PolicyParameters, Rollout, rollout, update
from .rewards import (
    ExternalJudgeBinding,
    OracleJudge,
    RewardBreakdown,
    RewardWeights,
    dynamic_weight,
    score_trajectory,
)
from .world import Question, WorldSpec, generate_world

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("step", "answer_reward", "thinking_reward", "suff_rate", "filter_rate")
CHECKPOINT_VERSION = 1


class TrainingCollapse(RuntimeError):
    """Every group was filtered for too many consecutive steps."""


@dataclass(frozen=True)
class StepStats:
    step: int
    answer_reward: float
    thinking_reward: float
    suff_rate: float
    filter_rate: float

    def row(self) -> list[str]:
        return [str(self.step)] + [repr(getattr(self, c)) for c in CURVE_COLUMNS[1:]]


@dataclass
class StepResult:
    stats: StepStats
    groups: list[GroupBatch]
    rollouts: list[list[Rollout]]
    records: list
    kept: list[bool]


@dataclass
class TrainingRun:
    config: Config
    world: WorldSpec
    policy: PolicyParameters
    curves: list[StepStats] = field(default_factory=list)
    completed_steps: int = 0


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def build_world(cfg: Config) -> WorldSpec:
    w = cfg.world
    return generate_world(w.seed, w.entities, w.chains, w.distractors)


def question_pool(world: WorldSpec, cfg: Config) -> list[Question]:
    return [q for h in cfg.world.hops for q in world.all_questions(h)]


def make_judge(cfg: Config, world: WorldSpec):
    if cfg.judge.mode == "external":
        client = ExternalJudge(cfg.judge.endpoint, cfg.judge.timeout, cfg.judge.max_in_flight)
        return ExternalJudgeBinding(client)
    return OracleJudge(world)


def sample_batch(pool: list[Question], n: int, seed: int, step: int) -> list[Question]:
    rng = np.random.default_rng([seed, step])
    idx = rng.choice(len(pool), size=min(n, len(pool)), replace=False)
    return [pool[i] for i in idx]


def _mean(xs) -> float:
    xs = list(xs)
    return math.fsum(xs) / len(xs) if xs else 0.0


# ---------------------------------------------------------------------------
# one step
# ---------------------------------------------------------------------------


def train_step(policy: PolicyParameters, world: WorldSpec, questions: list[Question], cfg: Config,
               judge, step: int, pool_executor: ThreadPoolExecutor | None = None):
    """Run one step of the loop and return (new_policy, StepResult)."""
    r, T = cfg.rollout, cfg.optimizer.steps
    a_t = dynamic_weight(step, T, cfg.reward.schedule)
    w = RewardWeights(cfg.reward.w_t, cfg.reward.w_s, cfg.reward.w_r)

    rollouts = [
        rollout(policy, world, q, r.G, r.max_steps, np.random.default_rng([cfg.seed, step, b]), r.k_retrieve)
        for b, q in enumerate(questions)
    ]
    jobs = [(q, ro) for q, group in zip(questions, rollouts) for ro in group]

    def score(job) -> RewardBreakdown:
        q, ro = job
        return score_trajectory(judge, q, ro.trajectory, w, a_t)

    flat = list(pool_executor.map(score, jobs)) if pool_executor else [score(j) for j in jobs]
    groups = []
    for i, q in enumerate(questions):
        groups.append(GroupBatch(q.question_id, tuple(flat[i * r.G:(i + 1) * r.G])))

    f = cfg.filter
    kept = [filter_group(g.answer_rewards, f.low, f.high, f.mode) for g in groups]
    kept_groups = [g for g, k in zip(groups, kept) if k]
    d = cfg.difficulty
    kept_recs = iter(finalize_batch(
        kept_groups,
        DifficultyParams(d.A, d.B, d.rho0, d.k),
        cfg.penalty.lambda_p,
        cfg.penalty.mode,
        "group" if cfg.optimizer.mode == "grpo" else "batch",
    ))
    records = [next(kept_recs) if k else filtered_records(g) for g, k in zip(groups, kept)]

    stats = StepStats(
        step,
        _mean(b.answer for b in flat),
        _mean(b.thinking for b in flat),
        _mean(b.sufficient for b in flat),
        kept.count(False) / len(groups),
    )
    batch = [
        (ro, rec.final)
        for group, recs, k in zip(rollouts, records, kept) if k
        for ro, rec in zip(group, recs)
    ]
    if batch:
        o = cfg.optimizer
        policy = update(policy, batch, o.mu, o.lr, o.epsilon)
    return policy, StepResult(stats, groups, rollouts, records, kept)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


class _Writer:
    def __init__(self, cfg: Config):
        self.cfg = cfg
        self.dir = cfg.output.dir
        self.header = f"# config_hash={cfg.hash()}\n"
        os.makedirs(self.dir, exist_ok=True)
        with open(self._p("config.json"), "w", encoding="utf-8") as fh:
            fh.write(cfg.to_json())
        self.curves = open(self._p("curves.csv"), "w", encoding="utf-8", newline="")
        self.curves.write(self.header)
        self.curve_csv = csv.writer(self.curves, lineterminator="\n")
        self.curve_csv.writerow(CURVE_COLUMNS)
        self.audit = None
        if cfg.output.audit:
            self.audit = open(self._p("audit.csv"), "w", encoding="utf-8", newline="")
            self.audit.write(self.header)
            self.audit_started = False
        self.traj = open(self._p("trajectories.jsonl"), "w", encoding="utf-8")

    def _p(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def step(self, res: StepResult, last: bool) -> None:
        self.curve_csv.writerow(res.stats.row())
        if self.audit is not None:
            text = format_audit(audit_rows(res.groups, res.records, res.stats.step))
            if self.audit_started:
                text = text.split("\n", 1)[1]
            self.audit.write(text)
            self.audit_started = True
        every = self.cfg.output.trajectory_every
        if last or (every and res.stats.step % every == 0):
            for group, g in zip(res.rollouts, res.groups):
                for i, (ro, rb) in enumerate(zip(group, g.rewards)):
                    rec = to_record(ro.trajectory)
                    rec.update(step=res.stats.step, rollout_index=i, reward=rb.as_dict(),
                               config_hash=self.cfg.hash())
                    self.traj.write(json.dumps(rec, sort_keys=True) + "\n")

    def checkpoint(self, policy: PolicyParameters, step: int, name: str) -> None:
        save_checkpoint(self._p(name), policy, self.cfg, step)

    def close(self) -> None:
        for fh in (self.curves, self.audit, self.traj):
            if fh is not None:
                fh.close()


def save_checkpoint(path: str, policy: PolicyParameters, cfg: Config, step: int) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "step": step,
        "policy": policy.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str) -> tuple[PolicyParameters, dict]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    return PolicyParameters.from_dict(doc["policy"]), doc


def read_curves(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(io.StringIO("".join(lines)))]


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def train(cfg: Config, world: WorldSpec | None = None, policy: PolicyParameters | None = None,
          on_step: Callable[[int, PolicyParameters, StepResult], None] | None = None,
          write: bool = True, judge=None) -> TrainingRun:
    """Run ``cfg.optimizer.steps`` steps; returns the run with its curves and final policy."""
    world = world or build_world(cfg)
    policy = policy or PolicyParameters(temperature=cfg.rollout.temperature)
    run = TrainingRun(cfg, world, policy)
    pool = question_pool(world, cfg)
    if not pool:
        raise ValueError("empty question pool")
    own_judge = judge is None
    judge = judge or make_judge(cfg, world)
    executor = ThreadPoolExecutor(cfg.judge.max_in_flight) if judge.mode == "external" else None
    writer = _Writer(cfg) if write else None
    T = cfg.optimizer.steps
    starved = 0
    try:
        for t in range(1, T + 1):
            questions = sample_batch(pool, cfg.optimizer.batch_size, cfg.seed, t)
            policy, res = train_step(policy, world, questions, cfg, judge, t, executor)
            run.policy = policy
            run.curves.append(res.stats)
            run.completed_steps = t
            if writer:
                writer.step(res, t == T)
                ce = cfg.output.checkpoint_every
                if ce and t % ce == 0:
                    writer.checkpoint(policy, t, f"checkpoint_{t:06d}.json")
            if on_step:
                on_step(t, policy, res)

            if cfg.filter.persist:
                dropped = {g.question_id for g, k in zip(res.groups, res.kept) if not k}
                remaining = [q for q in pool if q.question_id not in dropped]
                if remaining:
                    pool = remaining
            if any(res.kept):
                starved = 0
            else:
                starved += 1
                if starved >= cfg.optimizer.collapse_patience:
                    log.error("all groups filtered for %d consecutive steps; aborting at step %d", starved, t)
                    raise TrainingCollapse(f"all groups filtered for {starved} consecutive steps (step {t})")
        if writer:
            writer.checkpoint(policy, T, "checkpoint_final.json")
    finally:
        if writer:
            writer.close()
        if executor:
            executor.shutdown()
        if own_judge and judge.mode == "external":
            judge.client.close()
    return run


# ---------------------------------------------------------------------------
# evaluation of a policy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicyEval:
    answer_reward: float
    suff_rate: float
    cem: float
    n: int


def evaluate_policy(policy: PolicyParameters, world: WorldSpec, questions: list[Question], rollouts_per_q: int,
                    seed: int, max_steps: int = 10, k: int = 5) -> PolicyEval:
    """Mean answer F1, sufficiency rate and CEM over fresh rollouts."""
    judge = OracleJudge(world)
    w = RewardWeights(0.0, 0.0, 0.0)
    ans, suff, hits = [], [], []
    for i, q in enumerate(questions):
        for ro in rollout(policy, world, q, rollouts_per_q, max_steps, np.random.default_rng([seed, i]), k):
            rb = score_trajectory(judge, q, ro.trajectory, w, 0.0)
            ans.append(rb.answer)
            suff.append(rb.sufficient)
            answers = intermediate_answers(ro.trajectory)
            hits.append(cem(answers[-1], q.gold_answer) if answers else 0)
    return PolicyEval(_mean(ans), _mean(suff), _mean(hits), len(ans))
