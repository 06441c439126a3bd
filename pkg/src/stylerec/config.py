"""Run configuration: a flat INI file with one section per stage.

Every key is optional except ``[run] seed``. Unknown sections or keys are an
error, so typos do not silently fall back to defaults. ``describe_defaults()``
renders the full key list with its defaults (this is what ``stylerec
print-config`` shows).

    [run]      seed (required, unsigned 64-bit)
    [data]     catalog, schema, sales, truth  - input paths, default: files in --out
    [gen]      synthetic market (see GenConfig)
    [static]   hidden (comma list), dim, lr, batch, epochs, val_size
    [dynamic]  loss, n, hidden, lr, epochs, batch, clip, time_mode, val_size
    [eval]     window_start, window_end (minutes), baseline_days, models
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .dynamic_model import TrainConfigDyn
from .static_model import StaticConfig
from .synthgen import MARKET_FILES, GenConfig

SEED_MAX = 2**64 - 1
DEFAULT_MODELS = ("baseline", "static", "dynamic", "oracle")


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    window_start: int | None = None  # default: last test_days of the gen horizon
    window_end: int | None = None
    baseline_days: int = 7
    models: tuple[str, ...] = DEFAULT_MODELS


@dataclass
class RunConfig:
    seed: int
    out: Path
    data: dict[str, Path]
    gen: GenConfig
    static: StaticConfig
    dynamic: TrainConfigDyn
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def window(self) -> tuple[int, int]:
        start, end = self.gen.test_window
        if self.eval.window_start is not None:
            start = self.eval.window_start
        if self.eval.window_end is not None:
            end = self.eval.window_end
        if start >= end:
            raise ConfigError(f"empty evaluation window [{start}, {end})")
        return start, end


def _convert(section: str, key: str, raw: str, default):
    where = f"[{section}] {key}"
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(s) for s in items)
            return tuple(items)
        if isinstance(default, int) or default is None and key != "models":
            if raw.lower() in ("", "none"):
                if default is None:
                    return None
                raise ValueError(raw)
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def _section(cp: configparser.ConfigParser, name: str, cls, fixed: dict):
    defaults = cls()
    values = {}
    known = {f.name for f in dataclasses.fields(cls)} - set(fixed)
    if cp.has_section(name):
        for key, raw in cp.items(name):
            if key not in known:
                raise ConfigError(f"[{name}]: unknown key {key!r}")
            values[key] = _convert(name, key, raw, getattr(defaults, key))
    try:
        obj = cls(**values, **fixed)
        if hasattr(obj, "validate"):
            obj.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from None
    return obj


def parse_seed(raw) -> int:
    try:
        seed = int(str(raw).strip())
    except ValueError:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {raw!r}") from None
    if not 0 <= seed <= SEED_MAX:
        raise ConfigError(f"seed out of range: {seed}")
    return seed


def load_config(path=None, *, seed=None, out=None, text: str | None = None) -> RunConfig:
    """Read and validate a run config; ``seed``/``out`` override the file."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        if text is not None:
            cp.read_string(text)
        elif path is not None:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    allowed = {"run", "data", "gen", "static", "dynamic", "eval"}
    extra = set(cp.sections()) - allowed
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")
    run = dict(cp.items("run")) if cp.has_section("run") else {}
    unknown = set(run) - {"seed", "out"}
    if unknown:
        raise ConfigError(f"[run]: unknown key(s) {', '.join(sorted(unknown))}")
    if seed is None:
        if "seed" not in run:
            raise ConfigError("no seed: set [run] seed or pass --seed")
        seed = run["seed"]
    seed = parse_seed(seed)
    out_dir = Path(out if out is not None else run.get("out", "out"))

    data = {k: out_dir / v for k, v in MARKET_FILES.items()}
    if cp.has_section("data"):
        for key, raw in cp.items("data"):
            if key not in data:
                raise ConfigError(f"[data]: unknown key {key!r}")
            data[key] = Path(raw.strip())

    gen = _section(cp, "gen", GenConfig, {"seed": seed})
    static = _section(cp, "static", StaticConfig, {"seed": seed})
    dynamic = _section(cp, "dynamic", TrainConfigDyn, {"seed": seed})
    ev = _section(cp, "eval", EvalConfig, {})
    bad = [m for m in ev.models if m not in DEFAULT_MODELS]
    if bad or not ev.models:
        raise ConfigError(f"[eval] models: choose from {', '.join(DEFAULT_MODELS)}")
    if ev.baseline_days < 1:
        raise ConfigError("[eval] baseline_days must be >= 1")
    cfg = RunConfig(seed, out_dir, data, gen, static, dynamic, ev)
    cfg.window  # validates the window
    return cfg


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def describe_defaults() -> str:
    """INI text listing every key with its default value."""
    lines = ["[run]", "seed = 0", "out = out", "", "[data]"]
    lines += [f"{k} = <out>/{v}" for k, v in MARKET_FILES.items()]
    for name, cls in (("gen", GenConfig), ("static", StaticConfig),
                      ("dynamic", TrainConfigDyn), ("eval", EvalConfig)):
        lines += ["", f"[{name}]"]
        obj = cls()
        for f in dataclasses.fields(cls):
            if f.name != "seed":
                lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"
