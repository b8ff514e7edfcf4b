"""INI run and generation configs with strict key checking."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError, UsageError
from .model import CONTEXT_MODES, MEMO_ADAPTERS, VARIANTS
from .protocol import TrainConfig


@dataclass(frozen=True)
class GenerateConfig:
    domains: int = 4
    n_per_class: int = 20
    seed: int = 0
    paths: int = 6
    noise: float = 0.02
    jitter: float = 0.04


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    variant: str = "samoe"
    context_mode: str = "attention"
    memo_adapter: str = "sum"
    data_dir: str = "data"
    out_dir: str = "runs"
    val_frac: float = 0.2
    test_frac: float = 0.2
    split_seed: int = 0

    def __post_init__(self):
        for name, value, allowed in (
            ("variant", self.variant, VARIANTS),
            ("context_mode", self.context_mode, CONTEXT_MODES),
            ("memo_adapter", self.memo_adapter, MEMO_ADAPTERS),
        ):
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")

    def as_dict(self) -> dict:
        out = asdict(self)
        out["train"]["domain_order"] = list(self.train.domain_order) if self.train.domain_order else None
        return out


# section -> key -> (target, type); target "train" means a TrainConfig field
_RUN_KEYS = {
    "train": {f.name: "train" for f in fields(TrainConfig)},
    "model": {"variant": "run", "router_context": "run", "memo_adapter": "run"},
    "data": {"dir": "run", "val_frac": "run", "test_frac": "run", "split_seed": "run"},
    "output": {"dir": "run"},
}
_RUN_ALIASES = {("data", "dir"): "data_dir", ("output", "dir"): "out_dir", ("model", "router_context"): "context_mode"}


def _parser(text: str, source: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return cp


def _convert(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            return value.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r}") from exc
    return value.strip()


def _check_keys(cp: configparser.ConfigParser, allowed: dict, source: str) -> None:
    for section in cp.sections():
        if section not in allowed:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key in cp[section]:
            if key not in allowed[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    cp = _parser(text, source)
    _check_keys(cp, _RUN_KEYS, source)
    train_defaults = TrainConfig()
    run_defaults = RunConfig()
    train_kw, run_kw = {}, {}
    for section in cp.sections():
        for key, raw in cp[section].items():
            where = f"[{section}] {key}"
            if _RUN_KEYS[section][key] == "train":
                if key == "domain_order":
                    try:
                        train_kw[key] = tuple(int(v) for v in raw.replace(",", " ").split()) or None
                    except ValueError as exc:
                        raise ConfigError(f"{where}: expected integers, got {raw!r}") from exc
                else:
                    train_kw[key] = _convert(raw, getattr(train_defaults, key), where)
            else:
                name = _RUN_ALIASES.get((section, key), key)
                run_kw[name] = _convert(raw, getattr(run_defaults, name), where)
    try:
        return RunConfig(train=TrainConfig(**train_kw), **run_kw)
    except UsageError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_run_config(text, str(path))


def parse_generate_config(text: str, source: str = "<spec>") -> GenerateConfig:
    cp = _parser(text, source)
    _check_keys(cp, {"generate": {f.name for f in fields(GenerateConfig)}}, source)
    defaults = GenerateConfig()
    kw = {}
    if cp.has_section("generate"):
        for key, raw in cp["generate"].items():
            kw[key] = _convert(raw, getattr(defaults, key), f"[generate] {key}")
    cfg = GenerateConfig(**kw)
    if cfg.domains < 1:
        raise ConfigError(f"{source}: domains must be >= 1")
    return cfg


def load_generate_config(path) -> GenerateConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read spec {path}: {exc}") from exc
    return parse_generate_config(text, str(path))
