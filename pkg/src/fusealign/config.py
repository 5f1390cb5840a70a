"""TOML run-configuration handling for the command-line tools.

A config file holds the same nested tables the trainer serializes --
``[train]``, ``[adapter_x]``, ``[adapter_y]``, ``[augment]``, ``[loss]``,
``[optim]`` -- all optional.  Effective settings are resolved in precedence
order: built-in defaults, then the config file, then explicit command-line
flags.  The resolved document is echoed into the run's output directory so
every artifact records exactly what produced it.
"""

from __future__ import annotations

from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

KNOWN_TABLES = ("train", "adapter_x", "adapter_y", "augment", "loss", "optim")


def load_config_file(path) -> dict:
    """Parse a TOML config document and validate its table names."""
    raw = Path(path).read_bytes()
    doc = tomllib.loads(raw.decode("utf-8"))
    unknown = set(doc) - set(KNOWN_TABLES)
    if unknown:
        raise ValueError(f"unknown config tables: {sorted(unknown)}")
    for name, table in doc.items():
        if not isinstance(table, dict):
            raise ValueError(f"config key {name!r} must be a table")
    return doc


def merge(base: dict, override: dict) -> dict:
    """Two-level merge: override's table entries win over base's."""
    out = {k: dict(v) for k, v in base.items()}
    for table, entries in override.items():
        out.setdefault(table, {})
        out[table].update(entries)
    return out


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    raise TypeError(f"cannot express {type(value).__name__} in config TOML")


def dump_toml(doc: dict) -> str:
    """Serialize a two-level dict of scalars; table and key order is fixed
    so identical settings always produce identical bytes.  ``None`` values
    are omitted (TOML has no null)."""
    lines = []
    tables = [t for t in KNOWN_TABLES if t in doc]
    tables += sorted(set(doc) - set(KNOWN_TABLES))
    for table in tables:
        lines.append(f"[{table}]")
        for key in sorted(doc[table]):
            value = doc[table][key]
            if value is None:
                continue
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)
