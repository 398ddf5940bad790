"""Sectioned ``key = value`` scenario files.

    [scenario]
    strategy = representative
    [mobility]
    mode = markov

Every key has a default except ``mobility.mode``. Unknown sections and keys
are rejected with the line they appear on.
"""

from __future__ import annotations

import difflib
import math
import os
import typing
from dataclasses import fields, is_dataclass

from .sim import (ContentConfig, MobilityConfig, PlannerConfig, RadioConfig, Scenario,
                  ScenarioError)

SECTIONS = {
    "scenario": Scenario,
    "radio": RadioConfig,
    "content": ContentConfig,
    "mobility": MobilityConfig,
    "planner": PlannerConfig,
}
# programmatic-only Scenario fields that have no text form
_NOT_IN_FILE = {"trace", "contact_graph", "requests", "catalog", "preload", "lan_peers"}
REQUIRED = {("mobility", "mode")}


class ConfigError(ValueError):
    """Bad config text. ``key`` is the dotted field name when one applies."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


def section_keys(section: str) -> dict[str, type]:
    cls = SECTIONS[section]
    hints = typing.get_type_hints(cls)
    out = {}
    for f in fields(cls):
        if section == "scenario" and (f.name in _NOT_IN_FILE or is_dataclass(hints[f.name])):
            continue
        out[f.name] = hints[f.name]
    return out


def _suggest(word, options) -> str:
    close = difflib.get_close_matches(word, list(options), n=1)
    return f" (did you mean {close[0]!r}?)" if close else ""


def _convert(raw: str, tp, key: str, line: int):
    args = typing.get_args(tp)
    if type(None) in args:
        if raw.lower() in ("none", ""):
            return None
        tp = next(a for a in args if a is not type(None))
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            v = float(raw)
            if math.isnan(v):
                raise ValueError(raw)
            return v
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {tp.__name__}", line, key) from None


def parse_config(text: str) -> Scenario:
    """Build a validated :class:`Scenario` from config text."""
    values: dict[str, dict] = {s: {} for s in SECTIONS}
    seen_at: dict[tuple[str, str], int] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]{_suggest(section, SECTIONS)}",
                                  lineno, section)
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {raw.strip()!r}", lineno)
        if section is None:
            raise ConfigError("key before any [section]", lineno)
        key, val = (p.strip() for p in line.split("=", 1))
        keys = section_keys(section)
        dotted = f"{section}.{key}"
        if key not in keys:
            raise ConfigError(f"unknown key {dotted}{_suggest(key, keys)}", lineno, dotted)
        if (section, key) in seen_at:
            raise ConfigError(f"{dotted} already set on line {seen_at[section, key]}",
                              lineno, dotted)
        seen_at[section, key] = lineno
        values[section][key] = _convert(val, keys[key], dotted, lineno)
    for section, key in sorted(REQUIRED):
        if key not in values[section]:
            raise ConfigError(f"{section}.{key} is required", key=f"{section}.{key}")
    scenario = Scenario(
        radio=RadioConfig(**values["radio"]),
        content=ContentConfig(**values["content"]),
        mobility=MobilityConfig(**values["mobility"]),
        planner=PlannerConfig(**values["planner"]),
        **values["scenario"],
    )
    scenario.validate()
    return scenario


def load_config(path) -> Scenario:
    """Read a config file; a relative ``mobility.trace`` is taken relative to it."""
    with open(path, encoding="utf-8") as fh:
        scenario = parse_config(fh.read())
    trace = scenario.mobility.trace
    if trace and not os.path.isabs(trace):
        scenario.mobility.trace = os.path.join(os.path.dirname(os.path.abspath(path)), trace)
    return scenario


# Comments shown next to defaults in the generated sample file.
_NOTES = {
    ("radio", "wireless_mbps"): "typical effective vehicle-to-AP WiFi rate",
    ("radio", "backhaul_mbps"): "typical residential broadband backhaul (median)",
    ("radio", "lan_mbps"): "inter-AP LAN; assumed fast, not measured",
    ("radio", "origin_latency_s"): "origin server response delay",
    ("radio", "lan_latency_s"): "one-way LAN latency between APs",
    ("scenario", "strategy"): "all | mpp | representative | none",
    ("scenario", "noise"): "per-hop chance a vehicle leaves its predicted route",
    ("scenario", "storage_bytes"): "per-AP cache capacity; inf = unlimited",
    ("mobility", "mode"): "required: markov | trace",
    ("mobility", "map_source"): "learned | truth",
    ("mobility", "lan_scope"): "neighbors | all | none",
    ("planner", "k"): "lookahead depth in hops",
    ("planner", "quota_mode"): "full | split",
}


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return str(v).lower()
    return str(v)


def sample_config() -> str:
    """Config text listing every key at its default value."""
    defaults = {"scenario": Scenario(), "radio": RadioConfig(), "content": ContentConfig(),
                "mobility": MobilityConfig(), "planner": PlannerConfig()}
    out = []
    for section in SECTIONS:
        out.append(f"[{section}]")
        for key in section_keys(section):
            line = f"{key} = {_fmt(getattr(defaults[section], key))}"
            note = _NOTES.get((section, key))
            out.append(f"{line:<34}# {note}" if note else line)
        out.append("")
    return "\n".join(out)


__all__ = ["ConfigError", "ScenarioError", "SECTIONS", "load_config", "parse_config",
           "sample_config", "section_keys"]
