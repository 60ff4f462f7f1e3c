"""Run configuration in INI format (``key = value`` lines grouped in sections)."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .core import AsiConfig
from .wave import WaveConfig


@dataclass
class TikhonovSettings:
    grad_tol: float = 1e-6
    max_iter: int = 200
    memory: int = 10


@dataclass
class RunConfig:
    problem: str = "elliptic"
    n: int = 128
    fine_factor: float = 1.2
    delta_hat: float = 0.02
    seed: int = 0
    phantom: str = "six_discs"
    output_dir: str = "runs/default"
    full_misfit_tau: bool = True
    asi: AsiConfig = field(default_factory=AsiConfig)
    wave: WaveConfig = field(default_factory=WaveConfig)
    tikhonov: TikhonovSettings = field(default_factory=TikhonovSettings)

    def __post_init__(self):
        if self.problem not in ("elliptic", "wave"):
            raise ValueError(f"unknown problem kind {self.problem!r}")
        if self.delta_hat < 0:
            raise ValueError("delta_hat must be nonnegative")
        if self.n < 8:
            raise ValueError("n must be at least 8")


_SECTIONS = {"asi": AsiConfig, "wave": WaveConfig, "tikhonov": TikhonovSettings}


def _convert(raw: str, typ, name):
    typ = typ if isinstance(typ, type) else str(typ)
    text = raw.strip()
    if typ in (bool, "bool"):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if "None" in str(typ) and text.lower() in ("", "none"):
        return None
    if typ in (int, "int") or str(typ).startswith("int"):
        return int(text)
    if typ in (float, "float") or str(typ).startswith("float"):
        return float(text)
    return text


def _apply(obj, items: dict, section: str):
    known = {f.name: f for f in dataclasses.fields(obj) if f.name not in _SECTIONS}
    values = {}
    for key, raw in items.items():
        if key not in known:
            raise ValueError(f"unknown key {key!r} in section [{section}]")
        values[key] = _convert(raw, known[key].type, f"[{section}] {key}")
    return dataclasses.replace(obj, **values)


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys such as K1 and T are case sensitive
    with open(path) as fh:
        parser.read_file(fh)
    return config_from_parser(parser)


def config_from_parser(parser: configparser.ConfigParser) -> RunConfig:
    cfg = RunConfig()
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "run":
            cfg = _apply(cfg, items, section)
        elif section in _SECTIONS:
            setattr(cfg, section, _apply(getattr(cfg, section), items, section))
        else:
            raise ValueError(f"unknown section [{section}]")
    return cfg


def config_to_text(cfg: RunConfig) -> str:
    lines = ["[run]"]
    for f in dataclasses.fields(cfg):
        if f.name not in _SECTIONS:
            lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    for name in _SECTIONS:
        lines += ["", f"[{name}]"]
        sub = getattr(cfg, name)
        for f in dataclasses.fields(sub):
            value = getattr(sub, f.name)
            if callable(value):
                continue
            lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(config_to_text(cfg))
