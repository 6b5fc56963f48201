"""Command-line entry point: ``tires <subcommand>``.

Exit codes: 0 success, 1 unreadable input records, 2 usage or config error,
3 training collapse, 4 judge failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from .config import Config, ConfigError, build_config, describe_keys, load_config
from .grammar import Kind, iter_jsonl, prefix_upto_retrieval, render_trajectory
from .judge import JudgeError
from .metrics import ThinkingCategoryCounts, evaluate
from .policy import rollout
from .rewards import RewardWeights, dynamic_weight, score_trajectory, sufficient_reward
from .train import (
    TrainingCollapse,
    build_world,
    load_checkpoint,
    make_judge,
    question_pool,
    train,
)
from .world import Question, WorldError, WorldSpec, generate_world

log = logging.getLogger("tiresrag")

EXIT_OK, EXIT_DATA, EXIT_USAGE, EXIT_COLLAPSE, EXIT_JUDGE = 0, 1, 2, 3, 4

SCORE_COLUMNS = ("line", "question_id", "answer", "sufficient", "thinking", "reflect", "anneal", "total")
REPORT_COLUMNS = ("question_id", "prediction", "gold", "em", "f1", "cem", "category",
                  "thinking_length", "search_steps")


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _load_world(path: str) -> WorldSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            return WorldSpec.from_json(fh.read())
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load world {path}: {exc}") from exc


def _csv_text(header: str, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(header)
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _write(out: str, name: str, text: str) -> None:
    with open(os.path.join(out, name), "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _write_report(out: str, cfg_hash: str, report, counts: ThinkingCategoryCounts, extra: dict | None = None):
    os.makedirs(out, exist_ok=True)
    header = f"# config_hash={cfg_hash}\n"
    _write(out, "report.csv", _csv_text(header, REPORT_COLUMNS, report.rows))
    summary = {"config_hash": cfg_hash, "metrics": report.summary(), "categories": counts.as_dict(), **(extra or {})}
    _write(out, "summary.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
    _write(out, "categories.txt", header + counts.table() + "\n")


def _read_traces(path: str, world: WorldSpec):
    """Parsed (lineno, trajectory, question) triples plus a list of error strings."""
    good, errors = [], []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read traces {path}: {exc}") from exc
    with fh:
        for lineno, item in iter_jsonl(fh):
            if isinstance(item, Exception):
                errors.append(f"line {lineno}: {item}")
                continue
            try:
                q = world.question_by_id(item.question_id)
            except WorldError as exc:
                errors.append(f"line {lineno}: {exc}")
                continue
            good.append((lineno, item, q))
    return good, errors


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_world(args) -> int:
    cfg = load_config(args.config, args.override)
    w = cfg.world
    world = generate_world(w.seed, w.entities, w.chains, w.distractors)
    text = world.to_json()
    if args.out == "-":
        sys.stdout.write(text)
    else:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        _write(os.path.dirname(os.path.abspath(args.out)), os.path.basename(args.out), text)
        print(f"wrote {args.out}: {len(world.entities)} entities, {len(world.facts)} facts, "
              f"{len(world.documents)} documents")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.override)
    world = _load_world(args.world) if args.world else None
    log.info("training %d steps, config hash %s, output %s", cfg.optimizer.steps, cfg.hash(), cfg.output.dir)

    def progress(t, policy, res):
        s = res.stats
        if t == 1 or t % max(1, cfg.optimizer.steps // 20) == 0:
            log.info("step %d  answer=%.3f thinking=%.3f suff=%.3f filtered=%.2f",
                     t, s.answer_reward, s.thinking_reward, s.suff_rate, s.filter_rate)

    try:
        train(cfg, world=world, on_step=progress)
    except TrainingCollapse as exc:
        print(f"error: training collapsed: {exc}", file=sys.stderr)
        return EXIT_COLLAPSE
    print(f"wrote run artifacts to {cfg.output.dir}")
    return EXIT_OK


def _eval_questions(args, cfg: Config, world: WorldSpec) -> list[Question]:
    if args.questions:
        qs = []
        with open(args.questions, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        qs.append(Question.from_record(json.loads(line)))
                    except (ValueError, KeyError, TypeError) as exc:
                        raise ConfigError(f"{args.questions} line {lineno}: bad question record: {exc}") from exc
        return qs
    pool = question_pool(world, cfg)
    rng = np.random.default_rng([args.seed, 0xE7A1])
    idx = rng.choice(len(pool), size=args.n, replace=args.n > len(pool))
    return [pool[i] for i in idx]


def cmd_eval(args) -> int:
    try:
        policy, doc = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    cfg = build_config(doc["config"], args.override)
    world = _load_world(args.world) if args.world else build_world(cfg)
    questions = _eval_questions(args, cfg, world)
    traces = []
    for i, q in enumerate(questions):
        ros = rollout(policy, world, q, args.rollouts, cfg.rollout.max_steps,
                      np.random.default_rng([args.seed, i]), cfg.rollout.k_retrieve)
        traces += [(r.trajectory, q) for r in ros]
    report, counts = evaluate(world, traces)
    _write_report(args.out, doc["config_hash"], report, counts,
                  {"checkpoint_step": doc.get("step"), "questions": len(questions), "rollouts": args.rollouts})
    print(counts.table())
    print(json.dumps(report.summary(), sort_keys=True))
    return EXIT_OK


def _anneal(args, cfg: Config) -> float:
    if args.step is None:
        return 1.0
    return dynamic_weight(args.step, cfg.optimizer.steps, cfg.reward.schedule)


def cmd_score_trace(args) -> int:
    cfg = load_config(args.config, args.override)
    world = _load_world(args.world)
    good, errors = _read_traces(args.traces, world)
    judge = make_judge(cfg, world)
    w = RewardWeights(cfg.reward.w_t, cfg.reward.w_s, cfg.reward.w_r)
    a_t = _anneal(args, cfg)
    rows = []
    try:
        for lineno, t, q in good:
            rb = score_trajectory(judge, q, t, w, a_t)
            rows.append({"line": lineno, "question_id": q.question_id, **rb.as_dict()})
    finally:
        if judge.mode == "external":
            judge.client.close()
    report, counts = evaluate(world, [(t, q) for _, t, q in good])
    os.makedirs(args.out, exist_ok=True)
    _write(args.out, "scores.csv", _csv_text(f"# config_hash={cfg.hash()}\n", SCORE_COLUMNS, rows))
    _write_report(args.out, cfg.hash(), report, counts, {"errors": errors, "scored": len(rows)})
    print(counts.table())
    if errors:
        print(f"{len(errors)} unreadable record(s):", file=sys.stderr)
        for e in errors:
            print(f"  {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def annotate(world: WorldSpec, q: Question, t, judge, w: RewardWeights, a_t: float) -> str:
    """Render a trajectory with per-retrieval sufficiency and the reward breakdown."""
    lines = [f"# question {q.question_id}: {q.text}", f"# gold: {q.gold_answer}"]
    i = 0
    for seg in t.segments:
        lines.append(render_trajectory(t.with_segments([seg])))
        if seg.kind is Kind.INFORMATION:
            i += 1
            s = sufficient_reward(judge, q, prefix_upto_retrieval(t, i), q.gold_answer)
            lines.append(f"# retrieval {i}: sufficient={s}")
    rb = score_trajectory(judge, q, t, w, a_t)
    lines.append("# reward " + " ".join(f"{k}={v!r}" for k, v in rb.as_dict().items()))
    return "\n".join(lines) + "\n"


def cmd_replay(args) -> int:
    cfg = load_config(args.config, args.override)
    world = _load_world(args.world)
    good, errors = _read_traces(args.traces, world)
    if args.line is not None:
        good = [g for g in good if g[0] == args.line]
        if not good:
            print(f"error: no readable trace on line {args.line}", file=sys.stderr)
            return EXIT_DATA
    judge = make_judge(cfg, world)
    w = RewardWeights(cfg.reward.w_t, cfg.reward.w_s, cfg.reward.w_r)
    try:
        text = "".join(annotate(world, q, t, judge, w, _anneal(args, cfg)) for _, t, q in good)
    finally:
        if judge.mode == "external":
            judge.client.close()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for e in errors:
        print(f"  {e}", file=sys.stderr)
    return EXIT_DATA if errors else EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default="default", help="JSON config file, or 'default'")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-path override, e.g. reward.w_s=0 (repeatable, last wins)")


def build_parser() -> argparse.ArgumentParser:
    epilog = ("config keys (override with --override key=value or TIRES_OVERRIDES='a.b=1;c.d=2'):\n"
              + describe_keys()
              + "\n\nTIRES_JUDGE_ENDPOINT=<tcp://host:port | cmd:...> selects the external judge.")
    parser = argparse.ArgumentParser(prog="tires", description=__doc__.splitlines()[0], epilog=epilog,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="generate a synthetic world and write it as JSON",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    _config_args(p)
    p.add_argument("--out", default="-", help="output path ('-' for stdout)")
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("train", help="run the training loop and write run artifacts",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    _config_args(p)
    p.add_argument("--world", help="use this world file instead of generating from world.*")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="roll out a checkpoint and write metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--world", help="world file (default: regenerate from the checkpoint config)")
    p.add_argument("--questions", help="JSONL of question records (default: sample from the pool)")
    p.add_argument("--n", type=int, default=50, help="questions to sample when --questions is absent")
    p.add_argument("--rollouts", type=int, default=1, help="rollouts per question")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score-trace", help="score stored trajectories with the reward engine")
    _config_args(p)
    p.add_argument("--traces", required=True, help="trajectory JSONL")
    p.add_argument("--world", required=True)
    p.add_argument("--step", type=int, help="training step for the annealing weight (default: a_t = 1)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_score_trace)

    p = sub.add_parser("replay", help="re-render stored trajectories with reward annotations")
    _config_args(p)
    p.add_argument("--traces", required=True)
    p.add_argument("--world", required=True)
    p.add_argument("--line", type=int, help="only the trace on this line")
    p.add_argument("--step", type=int)
    p.add_argument("--out", help="write here instead of stdout")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except JudgeError as exc:
        print(f"error: judge failure: {exc}", file=sys.stderr)
        return EXIT_JUDGE
    except WorldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
