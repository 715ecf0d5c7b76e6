"""Experiment configuration: a small typed INI dialect.

`key = value` lines under [phantom]/[mask]/[generator]/[optimizer]/[method]
sections, '#' comments. Every key has a schema entry with a type and a
default; unknown sections or keys are errors, so a config cannot silently
misspell a knob. ``dump_config`` emits the fully resolved state (defaults
included, plus a [format] section with file-format versions), which is
what run manifests are made of: parsing a dump reproduces the run exactly.
"""

from __future__ import annotations

import configparser
import copy

from .fileio import FORMAT_VERSION

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Bad configuration text, key, or value."""


def _int(s: str) -> int:
    return int(s, 10)


def _float(s: str) -> float:
    return float(s)


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple:
    parts = s.replace(",", " ").split()
    if not parts:
        raise ValueError("expected at least one integer")
    return tuple(int(p, 10) for p in parts)


def _opt_int(s: str):
    return None if not s.strip() else int(s, 10)


def _str(s: str) -> str:
    return s.strip()


def _choice(*allowed):
    def parse(s: str) -> str:
        v = s.strip()
        if v not in allowed:
            raise ValueError(f"must be one of {allowed}, got {v!r}")
        return v

    return parse


# schema: section -> key -> (parser, default)
SCHEMA = {
    "phantom": {
        "shape": (_ints, (64, 64)),
        "coils": (_int, 8),
        "coil_radius": (_float, 1.0),
        "normalize_maps": (_bool, True),
        "sigma": (_float, 0.01),
        "seed": (_int, 1),
    },
    "mask": {
        "kind": (_choice("full", "even", "caipirinha", "poisson", "lines"), "even"),
        "rx": (_int, 8),
        "ry": (_int, 1),
        "shift": (_opt_int, None),
        "af": (_float, 5.0),
        "calib": (_int, 0),
        "alpha": (_float, 2.0),
        "seed": (_int, 0),
    },
    "generator": {
        "scales": (_int, 3),
        "latent_channels": (_int, 64),
        "stage_channels": (_int, 32),
        "keep_prob": (_float, 0.95),
    },
    "optimizer": {
        "lr": (_float, 1e-3),
        "beta1": (_float, 0.9),
        "beta2": (_float, 0.999),
        "eps": (_float, 1e-8),
        "weight_decay": (_float, 1e-6),
        "iterations": (_int, 7500),
        "mc_samples": (_int, 2),
        "mc_out": (_int, 32),
        "metric_stride": (_int, 250),
        "seed": (_int, 0),
        "sigma0_scale": (_float, 0.01),
        "latent_sigma0": (_float, 0.1),
        "data_norm": (_float, 1.0),
    },
    "method": {
        "name": (_str, "dnlinv"),
        "use_model_maps": (_bool, False),
    },
    "denoise": {
        "sigma": (_float, 0.1),
        "samples": (_int, 8),
        "length": (_int, 128),
    },
    "paths": {
        "kspace": (_str, ""),
        "mask": (_str, ""),
        "maps": (_str, ""),
    },
    "format": {
        "tensor": (_int, FORMAT_VERSION),
        "config": (_int, CONFIG_VERSION),
    },
}

_SECTION_ORDER = ("phantom", "mask", "generator", "optimizer", "method", "denoise", "paths", "format")


def default_config() -> dict:
    return {sec: {k: copy.copy(d) for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def parse_config(text: str) -> dict:
    """Parse config text over the defaults; reject anything off-schema."""
    parser = configparser.ConfigParser(
        interpolation=None,
        inline_comment_prefixes=("#",),
        comment_prefixes=("#",),
        delimiters=("=",),
    )
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config: {e}") from e

    cfg = default_config()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            parse, _ = SCHEMA[section][key]
            try:
                cfg[section][key] = parse(raw)
            except ValueError as e:
                raise ConfigError(f"[{section}] {key}: {e}") from e

    fmt = cfg["format"]
    if fmt["tensor"] != FORMAT_VERSION or fmt["config"] != CONFIG_VERSION:
        raise ConfigError(
            f"format versions (tensor={fmt['tensor']}, config={fmt['config']}) "
            f"do not match this build ({FORMAT_VERSION}, {CONFIG_VERSION})"
        )
    return cfg


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: dict) -> str:
    """Render the fully resolved config, deterministically ordered."""
    lines = []
    for section in _SECTION_ORDER:
        lines.append(f"[{section}]")
        for key in SCHEMA[section]:
            lines.append(f"{key} = {_format_value(cfg[section][key])}")
        lines.append("")
    return "\n".join(lines)


def save_config(cfg: dict, path) -> None:
    from .fileio import _atomic_write

    _atomic_write(path, dump_config(cfg).encode("utf-8"))


def apply_overrides(cfg: dict, overrides: dict) -> dict:
    """Overlay {section: {key: typed value}} onto a config, schema-checked."""
    for section, keys in overrides.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, value in keys.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            cfg[section][key] = value
    return cfg
