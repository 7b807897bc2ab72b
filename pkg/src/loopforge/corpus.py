"""Builtin manifolds, manifold spec files and the Clairaut oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadParams, NotASurfaceOfRevolution, SpecFileError, UnknownManifold
from .expr import Expression, default_variables
from .metric import ChartDomain, MetricModel

TWO_PI = 2.0 * math.pi

BUILTIN_NAMES = (
    "euclidean-plane",
    "round-sphere",
    "flat-cylinder",
    "torus-revolution",
    "catenoid",
    "pseudosphere",
)

DEFAULT_PARAMS = {
    "euclidean-plane": {},
    "round-sphere": {"R": 1.0},
    "flat-cylinder": {"a": 1.0},
    "torus-revolution": {"R": 2.0, "r": 1.0},
    "catenoid": {"c": 1.0},
    "pseudosphere": {},
}


def _num(value: float) -> str:
    return f"({float(value)!r})"


def _positive(params, key):
    v = float(params[key])
    if not (v > 0 and math.isfinite(v)):
        raise BadParams(f"parameter {key} must be positive, got {params[key]}")
    return v


def builtin_manifold(name: str, **params) -> MetricModel:
    """Return one of the corpus manifolds; unspecified parameters take their defaults."""
    if name not in DEFAULT_PARAMS:
        raise UnknownManifold(f"unknown manifold {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    unknown = set(params) - set(DEFAULT_PARAMS[name])
    if unknown:
        raise BadParams(f"{name} does not take parameter(s) {sorted(unknown)}")
    p = {**DEFAULT_PARAMS[name], **{k: v for k, v in params.items() if v is not None}}

    if name == "euclidean-plane":
        return MetricModel(
            ChartDomain.unbounded(2),
            {(0, 0): "1", (1, 1): "1"},
            ("x", "y"),
            name=name,
            params=p,
        )
    if name == "round-sphere":
        R = _positive(p, "R")
        return MetricModel(
            ChartDomain(2, (0.0, -math.inf), (math.pi * R, math.inf), (None, TWO_PI)),
            {(0, 0): "1", (1, 1): f"{_num(R)}^2*sin(phi/{_num(R)})^2"},
            ("phi", "theta"),
            name=name,
            profile=f"{_num(R)}*sin(phi/{_num(R)})",
            params=p,
        )
    if name == "flat-cylinder":
        a = _positive(p, "a")
        return MetricModel(
            ChartDomain.unbounded(2, (None, TWO_PI)),
            {(0, 0): "1", (1, 1): f"{_num(a)}^2"},
            ("z", "theta"),
            name=name,
            profile=_num(a),
            region=((-50.0, 50.0), (-math.inf, math.inf)),
            params=p,
        )
    if name == "torus-revolution":
        R = _positive(p, "R")
        r = _positive(p, "r")
        if not R > r:
            raise BadParams(f"torus-revolution needs R > r > 0, got R={R}, r={r}")
        return MetricModel(
            ChartDomain.unbounded(2, (TWO_PI, TWO_PI)),
            {(0, 0): f"{_num(r)}^2", (1, 1): f"({_num(R)} + {_num(r)}*cos(u))^2"},
            ("u", "theta"),
            name=name,
            profile=f"{_num(R)} + {_num(r)}*cos(u)",
            params=p,
        )
    if name == "catenoid":
        c = _positive(p, "c")
        return MetricModel(
            ChartDomain(2, (-20.0 * c, -math.inf), (20.0 * c, math.inf), (None, TWO_PI)),
            {(0, 0): f"1 + sinh(r/{_num(c)})^2", (1, 1): f"{_num(c)}^2*cosh(r/{_num(c)})^2"},
            ("r", "theta"),
            name=name,
            profile=f"{_num(c)}*cosh(r/{_num(c)})",
            region=((-5.0 * c, 5.0 * c), (-math.inf, math.inf)),
            params=p,
        )
    # pseudosphere: horocyclic cusp model, cusp at r -> +inf
    return MetricModel(
        ChartDomain(2, (-30.0, -math.inf), (30.0, math.inf), (None, TWO_PI)),
        {(0, 0): "1", (1, 1): "exp(-2*r)"},
        ("r", "theta"),
        name=name,
        profile="exp(-r)",
        region=((-3.0, 3.0), (-math.inf, math.inf)),
        params=p,
    )


# ---------------------------------------------------------------------------
# spec files
# ---------------------------------------------------------------------------


@dataclass
class ManifoldSpec:
    name: str
    dim: int
    coords: list[str]
    lower: list[float]
    upper: list[float]
    periods: list[float | None]
    entries: dict[tuple[int, int], str]
    profile: str | None = None
    revolution: tuple[int, int] = (0, 1)
    region: list[tuple[float, float]] | None = None
    extra: dict[str, str] = field(default_factory=dict)

    def to_model(self) -> MetricModel:
        return MetricModel(
            ChartDomain(self.dim, tuple(self.lower), tuple(self.upper), tuple(self.periods)),
            dict(self.entries),
            tuple(self.coords),
            name=self.name,
            profile=self.profile,
            revolution=self.revolution,
            region=tuple(self.region) if self.region else None,
        )


def _float(text: str, lineno: int) -> float:
    t = text.strip().lower()
    if t in ("inf", "+inf"):
        return math.inf
    if t == "-inf":
        return -math.inf
    try:
        return float(Expression(text, [])(()))
    except Exception:
        raise SpecFileError(f"line {lineno}: cannot read number {text!r}") from None


def parse_spec_text(text: str, check_points: int = 100, seed: int = 0) -> ManifoldSpec:
    """Read the ``key = value`` manifold description format.

    Recognised lines: ``name``, ``dim``, ``coords``, ``period <coord>``,
    ``bounds <coord> = lo, hi``, ``region <coord> = lo, hi``,
    ``g <i> <j> = <expr>`` (1-based), ``profile = <expr>`` and
    ``revolution = <radial coord>, <angle coord>``.  ``#`` starts a comment.
    """
    fields: dict[str, str] = {}
    periods: dict[str, float] = {}
    bounds: dict[str, tuple[float, float]] = {}
    region: dict[str, tuple[float, float]] = {}
    raw_entries: dict[tuple[int, int], tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecFileError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        words = key.split()
        if words[0] == "g":
            if len(words) != 3:
                raise SpecFileError(f"line {lineno}: metric entries are written 'g i j = expr'")
            try:
                i, j = int(words[1]) - 1, int(words[2]) - 1
            except ValueError:
                raise SpecFileError(f"line {lineno}: bad metric indices {words[1:]}") from None
            raw_entries[(i, j)] = (value, lineno)
        elif words[0] in ("period", "bounds", "region"):
            if len(words) != 2:
                raise SpecFileError(f"line {lineno}: '{words[0]} <coord> = ...'")
            if words[0] == "period":
                periods[words[1]] = _float(value, lineno)
            else:
                parts = value.split(",")
                if len(parts) != 2:
                    raise SpecFileError(f"line {lineno}: expected 'lo, hi'")
                pair = (_float(parts[0], lineno), _float(parts[1], lineno))
                (bounds if words[0] == "bounds" else region)[words[1]] = pair
        elif len(words) == 1:
            fields[words[0]] = value
        else:
            raise SpecFileError(f"line {lineno}: unrecognised key {key!r}")

    if "dim" not in fields:
        raise SpecFileError("missing 'dim = n'")
    try:
        dim = int(fields["dim"])
    except ValueError:
        raise SpecFileError(f"dim must be an integer, got {fields['dim']!r}") from None
    coords = [c.strip() for c in fields["coords"].split(",")] if "coords" in fields else default_variables(dim)
    if len(coords) != dim:
        raise SpecFileError(f"{len(coords)} coordinate names for dim = {dim}")
    for name in list(periods) + list(bounds) + list(region):
        if name not in coords:
            raise SpecFileError(f"unknown coordinate {name!r}")

    entries: dict[tuple[int, int], str] = {}
    rng = np.random.default_rng(seed)
    for (i, j), (src, lineno) in sorted(raw_entries.items()):
        if not (0 <= i < dim and 0 <= j < dim):
            raise SpecFileError(f"line {lineno}: metric index out of range")
        key = (min(i, j), max(i, j))
        if key in entries and i != j:
            # both g_ij and g_ji given: they must agree as functions
            a = Expression(entries[key], coords)
            b = Expression(src, coords)
            lo = np.array([bounds.get(c, (-1.0, 1.0))[0] for c in coords])
            hi = np.array([bounds.get(c, (-1.0, 1.0))[1] for c in coords])
            lo = np.where(np.isfinite(lo), lo, -1.0)
            hi = np.where(np.isfinite(hi), hi, 1.0)
            for _ in range(check_points):
                x = lo + (hi - lo) * rng.uniform(0.05, 0.95, size=dim)
                if abs(a(x) - b(x)) > 1e-12 * max(1.0, abs(a(x))):
                    raise SpecFileError(f"line {lineno}: g {i + 1} {j + 1} differs from g {j + 1} {i + 1}")
            continue
        Expression(src, coords)  # surface syntax errors with the offending text
        entries[key] = src

    revolution = (0, 1)
    if "revolution" in fields:
        names = [c.strip() for c in fields["revolution"].split(",")]
        if len(names) != 2 or any(c not in coords for c in names):
            raise SpecFileError("revolution = <radial coord>, <angle coord>")
        revolution = (coords.index(names[0]), coords.index(names[1]))

    return ManifoldSpec(
        name=fields.get("name", "custom"),
        dim=dim,
        coords=coords,
        lower=[bounds.get(c, (-math.inf, math.inf))[0] for c in coords],
        upper=[bounds.get(c, (-math.inf, math.inf))[1] for c in coords],
        periods=[periods.get(c) for c in coords],
        entries=entries,
        profile=fields.get("profile"),
        revolution=revolution,
        region=[region.get(c, (-math.inf, math.inf)) for c in coords] if region else None,
    )


def load_spec_file(path) -> MetricModel:
    return parse_spec_text(Path(path).read_text()).to_model()


# ---------------------------------------------------------------------------
# Clairaut oracle
# ---------------------------------------------------------------------------


def clairaut_drift(model: MetricModel, path) -> tuple[float, float]:
    """Mean and max absolute deviation of f(r)^2 * dtheta/dt along a path.

    ``f`` is evaluated from the model's profile expression, independently of
    the metric entries used by the integrator.
    """
    if model.profile is None:
        raise NotASurfaceOfRevolution(f"{model.name} has no revolution profile")
    ir, ia = model.revolution
    f = model._profile_expr.many(path.x)
    c = f**2 * path.v[:, ia]
    mean = float(np.mean(c))
    return mean, float(np.max(np.abs(c - mean)))
