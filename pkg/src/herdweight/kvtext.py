"""Line-oriented key-value text files.

Used for camera profiles, farm profiles, and experiment plans. Format:
one `key = value` pair per line, `#` starts a comment, blank lines are
ignored. Keys may repeat where the consumer expects a list.
"""

from __future__ import annotations

from pathlib import Path


def parse_kv_text(text: str) -> list[tuple[str, str]]:
    """Parse key-value lines, preserving order and duplicate keys."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key in {raw!r}")
        pairs.append((key, value.strip()))
    return pairs


def read_kv_file(path: str | Path) -> list[tuple[str, str]]:
    return parse_kv_text(Path(path).read_text(encoding="utf-8"))


def format_kv(pairs: list[tuple[str, str]]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs)


def write_kv_file(path: str | Path, pairs: list[tuple[str, str]]) -> None:
    Path(path).write_text(format_kv(pairs), encoding="utf-8")
