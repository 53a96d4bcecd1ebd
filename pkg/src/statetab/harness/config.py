"""Experiment configuration files.

Grammar (INI style, parsed with :mod:`configparser`)::

    [experiment]      name, preset, total_steps, epoch_every, test_steps,
                      greedy_rollouts, seed, scale, output_dir
    [maze]            scalar MazeSpec overrides (max_steps, step_penalty, ...)
    [tabulator]       kind = grid | lsh | learned, then that tabulator's params
    [agent]           AgentConfig fields
    [sweeper]         gamma, p_min, sweeps_per_step, mode = sync | threaded
    [schedule]        <label> = <step> <event> [argument]

Events are ``enable_teleporter <name>``, ``reverse_rewards``,
``lift_barrier`` and ``forced_run <script>``. Lists are comma separated;
``none`` is the empty value. Every field has a default, so a file only
needs the keys it changes.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple

from .. import envs

EVENT_KINDS = {"enable_teleporter": True, "reverse_rewards": False, "lift_barrier": False, "forced_run": True}

# name -> (start pose, action script) per preset
FORCED_RUNS = {
    "tmaze": {"shortcut": (envs.TMAZE_FORCED_START, envs.TMAZE_FORCED_SCRIPT)},
    "hmaze": {name: (envs.HMAZE_FORCED_START, script) for name, script in envs.HMAZE_FORCED_SCRIPTS.items()},
}

MAZE_FIELDS = {"barrier_up": bool, "step_penalty": float, "step_size": float, "max_steps": int,
               "action_mode": str, "obs_noise": float, "start_heading": int}

TABULATOR_FIELDS = {
    "grid": {"cell_sizes": "floats", "bits": "ints", "lows": "floats", "periods": "floats"},
    "lsh": {"d": int},
    "learned": {"d": int, "k": int, "hidden": "ints", "lr": float, "batch_size": int,
                "lambda_post": float, "lambda_prior": float},
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, section: str = "", key: str = ""):
        where = f"{section}.{key}" if key else section
        loc = f"line {line}: " if line else ""
        super().__init__(f"{loc}[{where}] {message}" if where else f"{loc}{message}")
        self.line = line
        self.section = section
        self.key = key


@dataclass
class ScheduleEvent:
    step: int
    kind: str
    arg: str = ""
    label: str = field(default="", compare=False)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    preset: str = "tmaze"
    total_steps: int = 4000
    epoch_every: int = 500
    test_steps: int = 200
    greedy_rollouts: int = 5
    seed: int = 0
    scale: int = 20
    output_dir: str = "runs"
    maze: Dict[str, object] = field(default_factory=dict)
    tabulator: Dict[str, object] = field(default_factory=lambda: {"kind": "grid"})
    agent: Dict[str, object] = field(default_factory=dict)
    sweeper: Dict[str, object] = field(default_factory=dict)
    schedule: List[ScheduleEvent] = field(default_factory=list)

    def to_text(self) -> str:
        return dumps(self)


_EXPERIMENT_FIELDS = {"name": str, "preset": str, "total_steps": int, "epoch_every": int, "test_steps": int,
                      "greedy_rollouts": int, "seed": int, "scale": int, "output_dir": str}


def _agent_fields():
    from ..agent import AgentConfig
    types = {"int": int, "float": float, "Optional[int]": int}
    return {f.name: types.get(str(f.type), float) for f in fields(AgentConfig) if f.name != "seed"}


SWEEPER_FIELDS = {"gamma": float, "p_min": float, "sweeps_per_step": int, "mode": str}


def _line_index(text: str) -> Dict[Tuple[str, str], int]:
    """Line number of every ``section`` header and ``(section, key)`` for diagnostics."""
    index: Dict[Tuple[str, str], int] = {}
    section = ""
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            index[(section, "")] = i
        elif "=" in line:
            index[(section, line.split("=", 1)[0].strip().lower())] = i
    return index


def _convert(value: str, kind, where) -> object:
    v = value.strip()
    try:
        if v.lower() == "none":
            return None
        if kind is bool:
            if v.lower() in ("1", "true", "yes", "on"):
                return True
            if v.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(v)
        if kind == "floats":
            return tuple(float(x) for x in v.split(","))
        if kind == "ints":
            return tuple(int(x) for x in v.split(","))
        return kind(v)
    except ValueError:
        name = kind if isinstance(kind, str) else kind.__name__
        raise ConfigError(f"expected {name}, got {value!r}", *where) from None


def loads(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None)) from None
    lines = _line_index(text)
    cfg = ExperimentConfig()

    def where(section, key=""):
        return lines.get((section, key)), section, key

    known = {"experiment", "maze", "tabulator", "agent", "sweeper", "schedule"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown section (expected one of {sorted(known)})", *where(section))

    def typed_section(section, spec):
        out = {}
        if not parser.has_section(section):
            return out
        for key, value in parser.items(section):
            if key not in spec:
                raise ConfigError("unknown field", *where(section, key))
            out[key] = _convert(value, spec[key], where(section, key))
        return out

    for key, value in typed_section("experiment", _EXPERIMENT_FIELDS).items():
        setattr(cfg, key, value)
    cfg.maze = typed_section("maze", MAZE_FIELDS)
    cfg.agent = typed_section("agent", _agent_fields())
    cfg.sweeper = typed_section("sweeper", SWEEPER_FIELDS)

    if parser.has_section("tabulator"):
        items = dict(parser.items("tabulator"))
        kind = items.pop("kind", "grid").strip()
        if kind not in TABULATOR_FIELDS:
            raise ConfigError(f"unknown tabulator kind {kind!r}", *where("tabulator", "kind"))
        spec = TABULATOR_FIELDS[kind]
        tab: Dict[str, object] = {"kind": kind}
        for key, value in items.items():
            if key not in spec:
                raise ConfigError(f"unknown field for {kind} tabulator", *where("tabulator", key))
            tab[key] = _convert(value, spec[key], where("tabulator", key))
        cfg.tabulator = tab

    events = []
    if parser.has_section("schedule"):
        for label, value in parser.items("schedule"):
            parts = value.split()
            loc = where("schedule", label)
            if len(parts) < 2:
                raise ConfigError("expected '<step> <event> [argument]'", *loc)
            step = _convert(parts[0], int, loc)
            kind = parts[1]
            if kind not in EVENT_KINDS:
                raise ConfigError(f"unknown event {kind!r}", *loc)
            needs_arg = EVENT_KINDS[kind]
            if needs_arg != (len(parts) == 3) or len(parts) > 3:
                raise ConfigError(f"event {kind!r} takes {'one argument' if needs_arg else 'no argument'}", *loc)
            events.append(ScheduleEvent(step, kind, parts[2] if needs_arg else "", label))
    # stable: events sharing a step keep their file order
    cfg.schedule = sorted(events, key=lambda ev: ev.step)
    validate(cfg, lines)
    return cfg


def validate(cfg: ExperimentConfig, lines: Optional[dict] = None) -> None:
    lines = lines or {}

    def fail(msg, section, key=""):
        raise ConfigError(msg, lines.get((section, key)), section, key)

    if cfg.preset not in envs.PRESETS:
        fail(f"unknown preset {cfg.preset!r} (known: {sorted(envs.PRESETS)})", "experiment", "preset")
    for key in ("total_steps", "epoch_every", "scale"):
        if getattr(cfg, key) <= 0:
            fail("must be positive", "experiment", key)
    if cfg.test_steps < 0:
        fail("must be non-negative", "experiment", "test_steps")
    if cfg.sweeper.get("mode", "sync") not in ("sync", "threaded"):
        fail("mode must be 'sync' or 'threaded'", "sweeper", "mode")
    spec = envs.make_maze(cfg.preset, **cfg.maze) if cfg.maze else envs.make_maze(cfg.preset)
    for ev in cfg.schedule:
        if ev.step < 0 or ev.step > cfg.total_steps:
            fail(f"event step {ev.step} outside [0, total_steps]", "schedule", ev.label)
        if ev.kind == "enable_teleporter" and ev.arg not in spec.teleporters:
            fail(f"preset {cfg.preset!r} has no teleporter {ev.arg!r}", "schedule", ev.label)
        if ev.kind == "forced_run" and ev.arg not in FORCED_RUNS.get(cfg.preset, {}):
            fail(f"preset {cfg.preset!r} has no forced run {ev.arg!r}", "schedule", ev.label)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dumps(cfg: ExperimentConfig) -> str:
    out = io.StringIO()
    out.write("[experiment]\n")
    for key in _EXPERIMENT_FIELDS:
        out.write(f"{key} = {_fmt(getattr(cfg, key))}\n")
    for section in ("maze", "tabulator", "agent", "sweeper"):
        values = getattr(cfg, section)
        if not values:
            continue
        out.write(f"\n[{section}]\n")
        for key, value in values.items():
            out.write(f"{key} = {_fmt(value)}\n")
    if cfg.schedule:
        out.write("\n[schedule]\n")
        for i, ev in enumerate(cfg.schedule):
            label = ev.label or f"event{i}"
            out.write(f"{label} = {ev.step} {ev.kind}{' ' + ev.arg if ev.arg else ''}\n")
    return out.getvalue()


def load(path) -> ExperimentConfig:
    with open(path) as fh:
        return loads(fh.read())
