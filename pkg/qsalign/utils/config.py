"""
Run configuration.

A run is described by an INI file with the sections [run] [world] [rm]
[fusion] [pareto] [grpo] [rft] [dedupe]. Parsing is strict: unknown
sections or keys are rejected and ``run.seed`` must be present. Values from
the environment (.env is honoured) override the file; CLI flags override
both.

    QSALIGN_SEED      run.seed
    QSALIGN_OUT       run.out_dir
    QSALIGN_THREADS   run.threads
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

from dotenv import load_dotenv

from ..clicksim import DedupeConfig, WorldConfig
from ..fusion import FusionConfig, ParetoConfig
from ..grpo import GrpoConfig, RftConfig
from ..rmodels import TrainConfig
from .errors import ConfigError, InvalidInputError
from .io import DEFAULT_CONFIG_PATH

ENV_OVERRIDES = {
    "QSALIGN_SEED": ("seed", int),
    "QSALIGN_OUT": ("out_dir", str),
    "QSALIGN_THREADS": ("threads", int),
}


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out_dir: str = "runs/default"
    threads: int = 1
    n_impressions: int = 20000
    feature_dim: int = 64
    rm_kinds: tuple = ("bt", "paired", "garm")
    policy_rm: str = "garm"
    holdout: float = 0.2
    curate_mode: str = "both"
    reference_k: float = 0.1
    sft_epochs: int = 200
    sft_lr: float = 0.05
    temperature: float = 1.0
    drift_step: float = 0.5
    weeks: int = 4
    eval_impressions: int = 20000
    n_bins: int = 10
    pareto: bool = True


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    world: WorldConfig = field(default_factory=WorldConfig)
    rm: TrainConfig = field(default_factory=TrainConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    pareto: ParetoConfig = field(default_factory=ParetoConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    rft: RftConfig = field(default_factory=RftConfig)
    dedupe: DedupeConfig = field(default_factory=DedupeConfig)

    @property
    def seed(self) -> int:
        return self.run.seed

    def to_dict(self) -> dict:
        return {f.name: asdict(getattr(self, f.name)) for f in fields(self)}

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        """Same run with every stage seed tied to ``seed``."""
        return replace(
            self,
            run=replace(self.run, seed=seed),
            rm=replace(self.rm, seed=seed),
            grpo=replace(self.grpo, seed=seed),
            rft=replace(self.rft, seed=seed),
        )


SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


# --------------------------------------------------------------------
# VALUE PARSING
# --------------------------------------------------------------------
def _parse_bool(raw: str, key: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_scalar(raw: str, like: Any, key: str):
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            return _parse_bool(raw, key)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(like).__name__}") from None
    return raw


def _parse_value(raw: str, default: Any, key: str):
    if isinstance(default, tuple):
        items = [p.strip() for p in raw.split(",") if p.strip()]
        if default and isinstance(default[0], tuple):
            pairs = []
            for item in items:
                name, sep, val = item.partition(":")
                if not sep:
                    raise ConfigError(f"{key}: expected name:value pairs, got {item!r}")
                pairs.append((name.strip(), _parse_scalar(val, 0.0, key)))
            return tuple(pairs)
        like = default[0] if default else ""
        return tuple(_parse_scalar(i, like, key) for i in items)
    return _parse_scalar(raw, default, key)


def _build_section(name: str, items: dict) -> Any:
    base = SECTIONS[name]()
    known = {f.name: getattr(base, f.name) for f in fields(base)}
    updates = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f"unknown config key {name}.{key}")
        updates[key] = _parse_value(raw, known[key], f"{name}.{key}")
    return replace(base, **updates)


# --------------------------------------------------------------------
# LOADING
# --------------------------------------------------------------------
def load_config(path: str | None = None, overrides: dict | None = None, use_env: bool = True) -> RunConfig:
    """Parse ``path`` (default config/default.ini), then env, then ``overrides`` (run-section keys)."""
    path = path or DEFAULT_CONFIG_PATH
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e

    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
    if not parser.has_option("run", "seed"):
        raise ConfigError("missing required config key run.seed")

    parts = {name: _build_section(name, dict(parser.items(name))) if parser.has_section(name) else SECTIONS[name]()
             for name in SECTIONS}
    cfg = RunConfig(**parts)

    run_updates = {}
    if use_env:
        load_dotenv()
        for env, (key, cast) in ENV_OVERRIDES.items():
            raw = os.getenv(env)
            if raw:
                try:
                    run_updates[key] = cast(raw)
                except ValueError:
                    raise ConfigError(f"{env}: cannot parse {raw!r}") from None
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in {f.name for f in fields(RunSection)}:
            raise ConfigError(f"unknown config key run.{key}")
        run_updates[key] = val
    if run_updates:
        cfg = replace(cfg, run=replace(cfg.run, **run_updates))
    cfg = cfg.with_seed(cfg.run.seed)
    return validate(cfg)


def validate(cfg: RunConfig) -> RunConfig:
    try:
        cfg.world.validate()
    except InvalidInputError as e:
        raise ConfigError(str(e)) from e
    cfg.rm.validate()
    cfg.pareto.validate()
    cfg.grpo.validate()
    r = cfg.run
    if r.threads < 1:
        raise ConfigError(f"run.threads must be >= 1, got {r.threads}")
    if not 0.0 < r.holdout < 1.0:
        raise ConfigError(f"run.holdout out of range (0,1): {r.holdout}")
    if r.curate_mode not in ("both", "single"):
        raise ConfigError(f"run.curate_mode must be both or single, got {r.curate_mode!r}")
    bad = [k for k in r.rm_kinds if k not in ("bt", "paired", "garm")]
    if bad or r.policy_rm not in r.rm_kinds:
        raise ConfigError(f"run.rm_kinds / run.policy_rm invalid: {r.rm_kinds}, {r.policy_rm}")
    if r.n_impressions < 1 or r.eval_impressions < 1 or r.weeks < 1:
        raise ConfigError("run.n_impressions, run.eval_impressions and run.weeks must be >= 1")
    return cfg
