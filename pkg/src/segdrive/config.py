"""Line-oriented key=value run configuration with override provenance.

Precedence: built-in defaults < config file < command-line overrides. Every
command writes the fully-resolved configuration (with per-key source) next
to its outputs so runs are diffable and reproducible.
"""

from __future__ import annotations

import os
from typing import Optional


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def load_config(path) -> dict[str, str]:
    with open(path) as f:
        return parse_config_text(f.read())


def resolve_config(defaults: dict, config_path: Optional[str] = None,
                   overrides: Optional[list[str]] = None
                   ) -> tuple[dict[str, str], dict[str, str]]:
    """Merged config plus a per-key source map ('default'|'file'|'override')."""
    merged = {k: str(v) for k, v in defaults.items()}
    source = {k: "default" for k in merged}
    if config_path:
        for k, v in load_config(config_path).items():
            merged[k] = v
            source[k] = "file"
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override must be key=value, got {item!r}")
        k, v = item.split("=", 1)
        merged[k.strip()] = v.strip()
        source[k.strip()] = "override"
    return merged, source


def write_resolved(path, config: dict[str, str], source: Optional[dict[str, str]] = None) -> None:
    with open(path, "w") as f:
        for key in sorted(config):
            line = f"{key}={config[key]}"
            if source and key in source:
                line += f"  # {source[key]}"
            f.write(line + "\n")


def as_int(config: dict, key: str, default: Optional[int] = None) -> int:
    if key not in config:
        if default is None:
            raise KeyError(f"missing config key {key!r}")
        return default
    return int(config[key])


def as_float(config: dict, key: str, default: Optional[float] = None) -> float:
    if key not in config:
        if default is None:
            raise KeyError(f"missing config key {key!r}")
        return default
    return float(config[key])


def as_bool(config: dict, key: str, default: Optional[bool] = None) -> bool:
    if key not in config:
        if default is None:
            raise KeyError(f"missing config key {key!r}")
        return default
    val = config[key].strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"config key {key!r} is not a boolean: {config[key]!r}")


def as_list(config: dict, key: str, default: Optional[list[str]] = None) -> list[str]:
    if key not in config:
        if default is None:
            raise KeyError(f"missing config key {key!r}")
        return default
    return [part.strip() for part in config[key].split(",") if part.strip()]


def thread_cap() -> int:
    """Parallelism cap: S2S_THREADS if set, else the CPU count."""
    raw = os.environ.get("S2S_THREADS")
    if raw:
        cap = int(raw)
        if cap < 1:
            raise ValueError(f"S2S_THREADS must be >= 1, got {raw}")
        return cap
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """Map that honors the thread cap; serial when the cap is 1."""
    items = list(items)
    cap = min(thread_cap(), len(items)) if items else 1
    if cap <= 1:
        return [fn(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=cap) as pool:
        return list(pool.map(fn, items))
