"""Run configuration: nested dataclasses, JSON files, dotted-path overrides.

Precedence is file < ``TIRES_OVERRIDES`` env var < command-line flags.
``TIRES_JUDGE_ENDPOINT`` switches the judge to external mode.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from typing import Any, Iterable

from .advantage import FILTER_MODES, PENALTY_MODES
from .rewards import SCHEDULES


class ConfigError(ValueError):
    pass


def _f(default, help: str, ref: str | None = None):
    meta = {"help": help}
    if ref is not None:
        meta["ref"] = ref
    if isinstance(default, list):
        return field(default_factory=lambda: list(default), metadata=meta)
    return field(default=default, metadata=meta)


@dataclass
class WorldConfig:
    seed: int = _f(0, "world generator seed")
    entities: int = _f(120, "number of entities (>= 5 * chains)")
    chains: int = _f(20, "number of disjoint 4-hop chains")
    distractors: int = _f(2, "distractor sentences per document")
    hops: list = _f([3], "question hop counts in the training pool")


@dataclass
class RolloutConfig:
    G: int = _f(5, "rollouts per question", "5")
    max_steps: int = _f(10, "maximum agent decisions per rollout")
    temperature: float = _f(1.0, "sampling temperature", "1")
    k_retrieve: int = _f(5, "documents per search", "5")


@dataclass
class RewardConfig:
    w_t: float = _f(0.6, "thinking reward weight", "0.6")
    w_s: float = _f(0.3, "sufficient reward weight", "0.3")
    w_r: float = _f(0.3, "reflect reward weight", "0.3")
    schedule: str = _f("main", "annealing schedule: main | alg1")


@dataclass
class DifficultyConfig:
    A: float = _f(0.4, "difficulty weight lower asymptote", "0.4")
    B: float = _f(1.5, "difficulty weight upper asymptote", "1.5")
    rho0: float = _f(0.75, "difficulty sigmoid midpoint", "0.75")
    k: float = _f(10.0, "difficulty sigmoid slope", "10.0")


@dataclass
class PenaltyConfig:
    lambda_p: float = _f(0.1, "consistency penalty coefficient", "0.1")
    mode: str = _f("verbatim", "penalty product: verbatim (A_T*A_T*A_A) | sta (A_S*A_T*A_A)")


@dataclass
class FilterConfig:
    low: float = _f(0.1, "lower saturation threshold", "0.1")
    high: float = _f(0.9, "upper saturation threshold", "0.9")
    mode: str = _f("prose", "filter rule: prose | alg1 | none")
    persist: bool = _f(False, "drop filtered questions from the pool for the rest of the run")


@dataclass
class OptimizerConfig:
    mode: str = _f("grpo", "advantage normalization: grpo (per group) | reinforce++ (per batch)")
    mu: int = _f(2, "update passes per batch", "2")
    epsilon: float = _f(0.2, "clipping range", "0.2")
    beta: float = _f(0.0, "KL coefficient (only 0 is supported)", "0")
    lr: float = _f(0.1, "learning rate for the tabular policy", "2e-6 for a 3B transformer")
    steps: int = _f(200, "training steps T")
    batch_size: int = _f(12, "questions per step", "108")
    collapse_patience: int = _f(50, "abort after this many consecutive fully-filtered steps")


@dataclass
class JudgeConfig:
    mode: str = _f("oracle", "judge: oracle | external")
    endpoint: str = _f("", "external judge address: tcp://host:port or cmd:<command>")
    timeout: float = _f(30.0, "per-request timeout in seconds")
    max_in_flight: int = _f(8, "concurrent judge requests")


@dataclass
class OutputConfig:
    dir: str = _f("runs/default", "output directory")
    trajectory_every: int = _f(50, "write rollouts to trajectories.jsonl every N steps (and the last)")
    checkpoint_every: int = _f(0, "write a checkpoint every N steps (0: final only)")
    audit: bool = _f(True, "write the per-rollout advantage audit CSV")


@dataclass
class Config:
    seed: int = _f(0, "master seed for rollouts and question sampling")
    world: WorldConfig = field(default_factory=WorldConfig)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    difficulty: DifficultyConfig = field(default_factory=DifficultyConfig)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    judge: JudgeConfig = field(default_factory=JudgeConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("output")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# building and validation
# ---------------------------------------------------------------------------


def _coerce(value: Any, target: type, path: str):
    if target is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in {"true", "false", "1", "0"}:
            return value.lower() in {"true", "1"}
        raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    if target is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if target is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if target is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if target is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported type")  # pragma: no cover


_TYPES = {"int": int, "float": float, "str": str, "bool": bool, "list": list}


def _apply(obj, data: dict, prefix: str = "") -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: expected an object")
    known = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        path = prefix + key
        if key not in known:
            raise ConfigError(f"unknown config key {path!r}")
        f = known[key]
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            _apply(current, value, path + ".")
        else:
            setattr(obj, key, _coerce(value, _TYPES[f.type] if isinstance(f.type, str) else f.type, path))


def validate(cfg: Config) -> Config:
    def need(cond: bool, path: str, what: str):
        if not cond:
            raise ConfigError(f"{path}: {what} (got {_get(cfg, path)!r})")

    w = cfg.world
    need(w.chains >= 1, "world.chains", "must be >= 1")
    need(w.entities >= 5 * w.chains, "world.entities", "must be >= 5 * world.chains")
    need(w.distractors >= 0, "world.distractors", "must be >= 0")
    need(bool(w.hops) and all(isinstance(h, int) and 1 <= h <= 4 for h in w.hops), "world.hops",
         "must be a non-empty list of integers in 1..4")
    r = cfg.rollout
    need(r.G >= 2, "rollout.G", "must be >= 2")
    need(r.max_steps >= 1, "rollout.max_steps", "must be >= 1")
    need(r.temperature > 0, "rollout.temperature", "must be > 0")
    need(r.k_retrieve >= 1, "rollout.k_retrieve", "must be >= 1")
    for name in ("w_t", "w_s", "w_r"):
        need(getattr(cfg.reward, name) >= 0, f"reward.{name}", "must be >= 0")
    need(cfg.reward.schedule in SCHEDULES, "reward.schedule", f"must be one of {SCHEDULES}")
    d = cfg.difficulty
    need(d.A > 0, "difficulty.A", "must be > 0")
    need(d.B >= d.A, "difficulty.B", "must be >= difficulty.A")
    need(cfg.penalty.lambda_p >= 0, "penalty.lambda_p", "must be >= 0")
    need(cfg.penalty.mode in PENALTY_MODES, "penalty.mode", f"must be one of {PENALTY_MODES}")
    need(cfg.filter.low < cfg.filter.high, "filter.low", "must be < filter.high")
    need(cfg.filter.mode in FILTER_MODES, "filter.mode", f"must be one of {FILTER_MODES}")
    o = cfg.optimizer
    need(o.mode in ("grpo", "reinforce++"), "optimizer.mode", "must be grpo or reinforce++")
    need(o.mu >= 1, "optimizer.mu", "must be >= 1")
    need(0 < o.epsilon < 1, "optimizer.epsilon", "must be in (0, 1)")
    need(o.beta == 0, "optimizer.beta", "only 0 is supported")
    need(o.lr > 0, "optimizer.lr", "must be > 0")
    need(o.steps >= 1, "optimizer.steps", "must be >= 1")
    need(o.batch_size >= 1, "optimizer.batch_size", "must be >= 1")
    need(o.collapse_patience >= 1, "optimizer.collapse_patience", "must be >= 1")
    j = cfg.judge
    need(j.mode in ("oracle", "external"), "judge.mode", "must be oracle or external")
    need(j.mode != "external" or bool(j.endpoint), "judge.endpoint", "required when judge.mode=external")
    need(j.timeout > 0, "judge.timeout", "must be > 0")
    need(j.max_in_flight >= 1, "judge.max_in_flight", "must be >= 1")
    need(cfg.output.trajectory_every >= 0, "output.trajectory_every", "must be >= 0")
    need(cfg.output.checkpoint_every >= 0, "output.checkpoint_every", "must be >= 0")
    return cfg


def _get(cfg, path: str):
    obj = cfg
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def parse_override(item: str) -> tuple[str, Any]:
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {item!r} is not of the form key.path=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _nest(path: str, value: Any) -> dict:
    out: Any = value
    for part in reversed(path.split(".")):
        out = {part: out}
    return out


def build_config(data: dict | None = None, overrides: Iterable[str] = (), env: dict | None = None) -> Config:
    env = os.environ if env is None else env
    cfg = Config()
    if data:
        _apply(cfg, data)
    env_items = [s for s in env.get("TIRES_OVERRIDES", "").split(";") if s.strip()]
    for item in [*env_items, *overrides]:
        key, value = parse_override(item)
        _apply(cfg, _nest(key, value))
    endpoint = env.get("TIRES_JUDGE_ENDPOINT")
    if endpoint:
        cfg.judge.mode = "external"
        cfg.judge.endpoint = endpoint
    return validate(cfg)


def load_config(path: str | None, overrides: Iterable[str] = (), env: dict | None = None) -> Config:
    """Load a JSON config; ``None`` or ``"default"`` means the built-in defaults."""
    data = None
    if path not in (None, "default"):
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return build_config(data, overrides, env)


def describe_keys() -> str:
    """One line per config key with its default and, where one exists, the reference value."""
    lines = []

    def walk(obj, prefix):
        for f in fields(obj):
            val = getattr(obj, f.name)
            if dataclasses.is_dataclass(val):
                walk(val, prefix + f.name + ".")
                continue
            extra = f"  [reference: {f.metadata['ref']}]" if "ref" in f.metadata else ""
            lines.append(f"  {prefix + f.name:<28} default={json.dumps(val)}{extra}  {f.metadata.get('help', '')}")

    walk(Config(), "")
    return "\n".join(lines)
