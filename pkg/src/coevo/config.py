"""Run configuration: dataclasses, YAML loading with strict key checking."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .designers import DesignerConfig
from .errors import ConfigError
from .level import FAMILY_NAMES
from .llm import LLMConfig

POLICY_BASES = ("nash_best", "latest")


@dataclass(frozen=True)
class CoevolutionConfig:
    family: str = "gridworld"
    T: int = 6
    K: int = 5
    n_episodes: int = 100
    selection_episodes: int | None = None
    run_seed: int = 0
    gamma: float = 1.0
    policy_base: str = "nash_best"
    reevaluate: bool = False
    workers: int = 1
    initial_level: dict | None = None
    bootstrap_policy: dict | None = None
    policy_designer: DesignerConfig = field(default_factory=DesignerConfig)
    env_designer: DesignerConfig = field(default_factory=DesignerConfig)
    output_dir: str | None = None

    def __post_init__(self):
        if self.family not in FAMILY_NAMES:
            raise ConfigError(f"family must be one of {FAMILY_NAMES}, got {self.family!r}")
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.n_episodes < 1:
            raise ConfigError("n_episodes must be at least 1")
        if self.selection_episodes is not None and self.selection_episodes < 1:
            raise ConfigError("selection_episodes must be at least 1")
        if self.policy_base not in POLICY_BASES:
            raise ConfigError(f"policy_base must be one of {POLICY_BASES}")
        if self.gamma != 1.0:
            raise ConfigError("gamma is fixed to 1 (payoffs are undiscounted success rates)")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @property
    def selection_n(self) -> int:
        return self.selection_episodes or self.n_episodes

    @property
    def uses_llm(self) -> bool:
        return "llm" in (self.policy_designer.mode, self.env_designer.mode)

    def designer(self, which: str) -> DesignerConfig:
        d = self.policy_designer if which == "policy" else self.env_designer
        return d if d.K == self.K else dataclasses.replace(d, K=self.K)

    def replace(self, **changes) -> "CoevolutionConfig":
        return dataclasses.replace(self, **changes)


def _fields(cls) -> dict:
    return {f.name: f for f in dataclasses.fields(cls)}


def _check_keys(doc: dict, cls, where: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = _fields(cls)
    for key in doc:
        if key not in known:
            name = f"{where}.{key}" if where else key
            raise ConfigError(f"unknown config key {name!r}")


def _tuple(v):
    return tuple(v) if isinstance(v, list) else v


def _designer(doc: dict | None, where: str) -> DesignerConfig:
    doc = dict(doc or {})
    _check_keys(doc, DesignerConfig, where)
    if "llm" in doc:
        llm = doc["llm"] or {}
        if isinstance(llm, dict) and "api_key" in llm:
            raise ConfigError("API keys are read from the LLM_API_KEY environment variable, not from config")
        _check_keys(llm, LLMConfig, f"{where}.llm")
        doc["llm"] = LLMConfig(**llm)
    for k in ("ops", "palette", "max_bounds"):
        if k in doc:
            doc[k] = _tuple(doc[k])
    try:
        return DesignerConfig(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(doc: dict) -> CoevolutionConfig:
    doc = dict(doc or {})
    _check_keys(doc, CoevolutionConfig, "")
    K = doc.get("K", CoevolutionConfig.K)
    for which in ("policy_designer", "env_designer"):
        block = dict(doc.get(which) or {})
        block.setdefault("K", K)
        doc[which] = _designer(block, which)
    try:
        return CoevolutionConfig(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def config_to_dict(cfg: CoevolutionConfig) -> dict:
    def plain(v):
        if dataclasses.is_dataclass(v):
            return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v

    return plain(cfg)


def load_config(path) -> CoevolutionConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return config_from_dict(doc)
