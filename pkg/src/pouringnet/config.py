"""Run configuration: defaults, a flat TOML file and command-line flags, merged in that order."""

from __future__ import annotations

import json
import os
import subprocess
from pathlib import Path

import tomli

from . import __version__, acoustics


class ConfigError(ValueError):
    pass


def load_config_file(path) -> dict:
    """Read a flat ``key = value`` TOML file. Tables are rejected."""
    try:
        with open(path, "rb") as f:
            data = tomli.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: config must be flat, found tables {nested}")
    return {k.replace("-", "_"): v for k, v in data.items()}


def merge(defaults: dict, file_values: dict, flags: dict) -> dict:
    """defaults <- file <- flags; a flag left at ``None`` does not override.

    Unknown keys in the file are an error so typos cannot silently fall back
    to a default.
    """
    unknown = sorted(set(file_values) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    merged = dict(defaults)
    merged.update(file_values)
    merged.update({k: v for k, v in flags.items() if v is not None and k in defaults})
    return merged


def load_container_library(path) -> dict[str, acoustics.ContainerSpec]:
    """Container specs from a TOML file with one table per container::

        [tall_glass]
        total_height = 140.0
        inner_diameter = 66.0
        material_damping = 0.4
    """
    with open(path, "rb") as f:
        data = tomli.load(f)
    library = {}
    for name, fields in data.items():
        if not isinstance(fields, dict):
            raise ConfigError(f"{path}: {name!r} must be a table")
        library[name] = acoustics.ContainerSpec(name=name, **fields)
    return library


def version_string() -> str:
    """``git describe`` of the source tree, or the package version outside a checkout."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return __version__
    described = out.stdout.strip()
    return f"{__version__}+{described}" if out.returncode == 0 and described else __version__


def write_meta(out_dir, command: str, resolved: dict, extra: dict | None = None) -> Path:
    """Write ``meta.json`` holding everything needed to rerun ``command``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"command": command, "config": resolved, "version": version_string()}
    if extra:
        meta.update(extra)
    path = out / "meta.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_jsonable) + "\n")
    os.replace(tmp, path)
    return path


def _jsonable(value):
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")
