"""Run records and the loop fixture format."""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import SpecFileError

SCHEMA_VERSION = 1


def plain(obj):
    """Recursively convert numpy containers and scalars to JSON-ready Python values."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


@dataclass
class RunRecord:
    """One CLI result document: command, manifold, parameters, payload and wall time.

    ``wall_time`` and ``timings`` are the only fields that vary between
    identical invocations; ``include_time=False`` drops both.
    """

    command: str
    manifold: str
    params: dict
    result: dict
    status: str = "ok"
    message: str = ""
    wall_time: float = 0.0
    timings: dict = field(default_factory=dict)
    schema: int = SCHEMA_VERSION

    def to_dict(self, include_time: bool = True) -> dict:
        d = plain(asdict(self))
        if not include_time:
            d.pop("wall_time")
            d.pop("timings")
        return d

    def to_json(self, include_time: bool = True) -> str:
        return json.dumps(self.to_dict(include_time), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        d = json.loads(text)
        d.setdefault("wall_time", 0.0)
        d.setdefault("timings", {})
        return cls(**d)


# ---------------------------------------------------------------------------
# loop files: "p = <coords>; w = <coords>; l = <real>"
# ---------------------------------------------------------------------------


@dataclass
class LoopFixture:
    p: np.ndarray
    w: np.ndarray
    l: float

    def to_text(self) -> str:
        fmt = lambda a: ", ".join(repr(float(x)) for x in a)  # noqa: E731
        return f"p = {fmt(self.p)}; w = {fmt(self.w)}; l = {float(self.l)!r}\n"


def _vector(text: str, key: str) -> np.ndarray:
    parts = [s for s in re.split(r"[,\s()]+", text) if s]
    try:
        return np.array([float(s) for s in parts])
    except ValueError:
        raise SpecFileError(f"loop file: cannot read {key} = {text!r}") from None


def parse_loop_text(text: str) -> LoopFixture:
    body = " ".join(line.split("#", 1)[0] for line in text.splitlines())
    values = {}
    for item in body.split(";"):
        if not item.strip():
            continue
        if "=" not in item:
            raise SpecFileError(f"loop file: expected 'key = value', got {item.strip()!r}")
        key, val = (s.strip() for s in item.split("=", 1))
        values[key] = val
    missing = {"p", "w", "l"} - set(values)
    if missing:
        raise SpecFileError(f"loop file: missing {', '.join(sorted(missing))}")
    p = _vector(values["p"], "p")
    w = _vector(values["w"], "w")
    try:
        l = float(values["l"])
    except ValueError:
        raise SpecFileError(f"loop file: cannot read l = {values['l']!r}") from None
    if p.shape != w.shape or not (l > 0 and math.isfinite(l)):
        raise SpecFileError("loop file: p and w must have equal length and l must be positive")
    return LoopFixture(p, w, l)


def load_loop_file(path) -> LoopFixture:
    return parse_loop_text(Path(path).read_text())
