"""Small shared helpers: stable seed derivation and flat key-value files."""

from __future__ import annotations

import hashlib
import os
from pathlib import Path


def derive_seed(root: int, *parts: object) -> int:
    """Derive a child seed from a root seed and a label path.

    Stable across processes and Python versions (uses sha256, not hash()),
    so every component a run spawns gets its own reproducible stream.
    """
    h = hashlib.sha256()
    h.update(str(root).encode())
    for part in parts:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:8], "big")


def parse_kv_file(path: str | os.PathLike[str]) -> dict[str, str]:
    """Parse a flat ``key = value`` file; '#' starts a comment, blanks ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_route_file(path: str | os.PathLike[str]) -> list[tuple[float, float]]:
    """Read a route file of ``lat,lon`` lines into (lat, lon) tuples."""
    points: list[tuple[float, float]] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'lat,lon', got {raw!r}")
        points.append((float(fields[0]), float(fields[1])))
    return points
