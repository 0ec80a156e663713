"""Key-value experiment config files.

Format: one `key = value` (or `key: value`) per line, `#` comments.  Values
are parsed as JSON when possible (numbers, lists, booleans), otherwise kept
as strings; bare comma lists like `4, 5, 6` also work.
"""

from __future__ import annotations

import json


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        pass
    if "," in raw:
        return [_parse_value(part) for part in raw.split(",")]
    return raw


def parse_config_text(text: str) -> dict:
    out: dict = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        for sep in ("=", ":"):
            if sep in stripped:
                key, _, value = stripped.partition(sep)
                break
        else:
            raise ValueError(f"line {ln}: expected 'key = value', got {line!r}")
        key = key.strip()
        if not key:
            raise ValueError(f"line {ln}: empty key")
        out[key] = _parse_value(value)
    return out


def load_config(path: str) -> dict:
    with open(path) as fh:
        return parse_config_text(fh.read())
