"""INI-style experiment configuration.

Every key is optional; missing keys keep the defaults of the dataclasses,
which follow the measured setup (mu = 0.01, 100 MHz, 3.5 ns gates, 3 us
dead time, 81 ps TDC bins).  Example::

    [source]            ; shared by both lasers unless source1/source2 override
    mu = 0.01
    pulse_fwhm = 100
    rep_period = 10000

    [overlap]
    gamma = 80
    max_overlap = 0.92

    [channel]           ; both detectors, or [channel1] / [channel2]
    efficiency = 0.2
    dark_prob = 1e-5

    [gate]
    gate_width = 3500
    dead_time = 3000000
    tdc_bin = 81
    afterpulse_prob = 0.01

    [response]
    sigma = 22
    t1 = 25
    tau_decay = 75

    [run]
    n_pulses = 100000000
    seed = 1
    block = none
"""
from __future__ import annotations

import configparser
import dataclasses
import re
from pathlib import Path

from .detector import DetectorResponseParams, GateParams
from .physics import ChannelParams, OverlapModel, SourceParams
from .simulator import ExperimentConfig


class ConfigError(ValueError):
    pass


_SECTIONS = {
    "source": SourceParams, "source1": SourceParams, "source2": SourceParams,
    "overlap": OverlapModel,
    "channel": ChannelParams, "channel1": ChannelParams, "channel2": ChannelParams,
    "gate": GateParams, "response": DetectorResponseParams,
}
_RUN_KEYS = {"n_pulses": int, "seed": int, "block": str, "window": int, "pulse_offset": float}


def _line_of(lines, section, key=None):
    current = None
    for no, line in enumerate(lines, start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip().lower()
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None:
            k = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            if k == key:
                return no
    return None


def _convert(raw, kind, where):
    try:
        if kind is int:
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: expected {kind.__name__}, got {raw!r}") from None


def _field_types(cls):
    hints = {"float": float, "int": int}
    return {f.name: hints.get(str(f.type).split(" ")[0], float) for f in dataclasses.fields(cls)}


def parse_config(text, source="<config>"):
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None
    lines = text.splitlines()

    def where(section, key=None):
        no = _line_of(lines, section, key)
        loc = f"{source}:{no}" if no else source
        return f"{loc}: [{section}]" + (f" {key}" if key else "")

    values = {}
    run = {}
    for section in parser.sections():
        name = section.lower()
        if name == "run":
            for key, raw in parser.items(section):
                if key not in _RUN_KEYS:
                    raise ConfigError(f"{where(name, key)}: unknown key")
                run[key] = _convert(raw, _RUN_KEYS[key], where(name, key))
            continue
        if name not in _SECTIONS:
            raise ConfigError(f"{where(name)}: unknown section")
        types = _field_types(_SECTIONS[name])
        got = {}
        for key, raw in parser.items(section):
            if key not in types:
                raise ConfigError(f"{where(name, key)}: unknown key")
            got[key] = _convert(raw, types[key], where(name, key))
        values[name] = got

    def build(cls, *names):
        merged = {}
        for n in names:
            merged.update(values.get(n, {}))
        try:
            return cls(**merged)
        except ValueError as exc:
            present = [n for n in names if n in values]
            raise ConfigError(f"{where(present[-1]) if present else source}: {exc}") from None

    try:
        return ExperimentConfig(
            source1=build(SourceParams, "source", "source1"),
            source2=build(SourceParams, "source", "source2"),
            overlap=build(OverlapModel, "overlap"),
            ch1=build(ChannelParams, "channel", "channel1"),
            ch2=build(ChannelParams, "channel", "channel2"),
            gate=build(GateParams, "gate"),
            response=build(DetectorResponseParams, "response"),
            **run,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))


def config_to_ini(cfg: ExperimentConfig):
    """Render a config back to INI text (used for run records)."""
    parts = []

    def section(name, obj):
        parts.append(f"[{name}]")
        for f in dataclasses.fields(obj):
            parts.append(f"{f.name} = {getattr(obj, f.name)!r}")
        parts.append("")

    section("source1", cfg.source1)
    section("source2", cfg.source2)
    section("overlap", cfg.overlap)
    section("channel1", cfg.ch1)
    section("channel2", cfg.ch2)
    section("gate", cfg.gate)
    section("response", cfg.response)
    parts.append("[run]")
    for key in _RUN_KEYS:
        value = getattr(cfg, key)
        if value is not None:
            parts.append(f"{key} = {value}")
    return "\n".join(parts) + "\n"
