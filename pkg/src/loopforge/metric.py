"""Coordinate-chart Riemannian metrics.

A ``MetricModel`` is a chart (box with optional periodic coordinates) plus
metric entries written as infix expressions in the chart coordinates.  The
entries are compiled once into a postfix program that the numba kernels
evaluate with analytic first and second derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _kernels as K
from .errors import BadParams, PointOutsideChart, SingularMetric, ZeroVectorAngle
from .expr import Expression, compile_metric

FD_STEP = 1e-5


@dataclass(frozen=True)
class ChartDomain:
    """Open coordinate box; coordinates with a period are additionally compared modulo it."""

    dim: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    periods: tuple[float | None, ...]

    def __post_init__(self):
        if self.dim < 2:
            raise BadParams(f"chart dimension must be >= 2, got {self.dim}")
        if not (len(self.lower) == len(self.upper) == len(self.periods) == self.dim):
            raise BadParams("bounds/periods length does not match the dimension")
        for p in self.periods:
            if p is not None and not p > 0:
                raise BadParams(f"periods must be positive, got {p}")
        for lo, hi in zip(self.lower, self.upper):
            if not lo < hi:
                raise BadParams(f"empty coordinate range ({lo}, {hi})")

    @classmethod
    def unbounded(cls, dim: int, periods: Sequence[float | None] | None = None) -> "ChartDomain":
        return cls(dim, (-math.inf,) * dim, (math.inf,) * dim, tuple(periods or (None,) * dim))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,) or not np.all(np.isfinite(x)):
            return False
        return bool(np.all(x > np.asarray(self.lower)) and np.all(x < np.asarray(self.upper)))

    def difference(self, a, b) -> np.ndarray:
        """a - b, taking the nearest representative in periodic coordinates."""
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        for k, per in enumerate(self.periods):
            if per is not None:
                d[k] = d[k] - per * round(d[k] / per)
        return d

    @property
    def lo_array(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    @property
    def hi_array(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float)


@dataclass(frozen=True)
class MetricModel:
    """A Riemannian metric on one chart.

    ``entries`` maps 0-based (i, j), i <= j, to expression source; missing
    off-diagonal entries are zero.  ``profile`` marks a surface of
    revolution: the distance from the axis as a function of the coordinate
    ``revolution[0]``, with ``revolution[1]`` the rotation angle.
    ``region`` is the bounded box used for divergence monitoring.
    """

    chart: ChartDomain
    entries: Mapping[tuple[int, int], str]
    coords: tuple[str, ...]
    name: str = "custom"
    profile: str | None = None
    revolution: tuple[int, int] = (0, 1)
    analytic_derivatives: bool = True
    region: tuple[tuple[float, float], ...] | None = None
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        n = self.chart.dim
        if len(self.coords) != n:
            raise BadParams("number of coordinate names does not match the dimension")
        trees = {}
        exprs = {}
        for (i, j), src in self.entries.items():
            if not (0 <= i <= j < n):
                raise BadParams(f"metric entry index ({i + 1}, {j + 1}) out of range or below diagonal")
            e = Expression(src, self.coords)
            exprs[(i, j)] = e
            trees[(i, j)] = e.tree
        for i in range(n):
            if (i, i) not in trees:
                raise BadParams(f"missing diagonal metric entry g {i + 1} {i + 1}")
        object.__setattr__(self, "_exprs", exprs)
        object.__setattr__(self, "program", compile_metric(trees, n))
        object.__setattr__(self, "_profile_expr", Expression(self.profile, self.coords) if self.profile else None)

    @property
    def dim(self) -> int:
        return self.chart.dim

    @property
    def fd_step(self) -> float:
        return 0.0 if self.analytic_derivatives else FD_STEP

    def with_finite_differences(self) -> "MetricModel":
        return MetricModel(
            self.chart,
            dict(self.entries),
            self.coords,
            self.name,
            self.profile,
            self.revolution,
            False,
            self.region,
            dict(self.params),
        )

    def entry(self, i: int, j: int) -> Expression | None:
        return self._exprs.get((min(i, j), max(i, j)))

    def profile_value(self, x) -> float:
        return self._profile_expr(x)

    def metric_many(self, X) -> np.ndarray:
        """Metric matrices at every row of X, shape (N, n, n), from the entry expressions."""
        X = np.asarray(X, dtype=float)
        G = np.zeros((len(X), self.dim, self.dim))
        for (i, j), e in self._exprs.items():
            G[:, i, j] = G[:, j, i] = e.many(X)
        return G

    def kernel_args(self):
        p = self.program
        return p.ops, p.args, p.slot_i, p.slot_j, p.dim, p.stack_size

    def in_region(self, x) -> bool:
        if self.region is None:
            return True
        return all(lo <= xi <= hi for xi, (lo, hi) in zip(x, self.region))


def _point(model: MetricModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not model.chart.contains(x):
        raise PointOutsideChart(f"point {x.tolist()} is outside the chart of {model.name}")
    return x


def metric_at(model: MetricModel, x) -> np.ndarray:
    x = _point(model, x)
    g, _, _ = K.metric_point(*model.kernel_args(), x, 0, 0.0)
    if not np.all(np.isfinite(g)):
        raise SingularMetric(f"metric is not finite at {x.tolist()}")
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise SingularMetric(f"metric is not positive definite at {x.tolist()}") from None
    return g


def metric_derivatives_at(model: MetricModel, x, order: int = 1):
    """(g, dg, d2g) with dg[k,i,j] = d_k g_ij; analytic unless the model uses finite differences."""
    x = _point(model, x)
    return K.metric_point(*model.kernel_args(), x, order, model.fd_step)


def _christoffel_pair(model: MetricModel, x, order: int):
    x = _point(model, x)
    ok, gam, dgam = K.christoffel_point(*model.kernel_args(), x, order, model.fd_step)
    if not ok:
        raise SingularMetric(f"metric is singular or not finite at {x.tolist()}")
    return gam, dgam


def christoffels_at(model: MetricModel, x) -> np.ndarray:
    """Gamma[k, i, j] = Gamma^k_ij (Levi-Civita)."""
    return _christoffel_pair(model, x, 1)[0]


def christoffel_derivatives_at(model: MetricModel, x) -> np.ndarray:
    """dGamma[m, k, i, j] = d_m Gamma^k_ij."""
    return _christoffel_pair(model, x, 2)[1]


def curvature_at(model: MetricModel, x) -> np.ndarray:
    """R[l, i, j, k] with R(d_j, d_k) d_i = R^l_ijk d_l and R(X,Y) = [nabla_X, nabla_Y] - nabla_[X,Y]."""
    gam, dgam = _christoffel_pair(model, x, 2)
    return (
        np.einsum("jlki->lijk", dgam)
        - np.einsum("klji->lijk", dgam)
        + np.einsum("ljm,mki->lijk", gam, gam)
        - np.einsum("lkm,mji->lijk", gam, gam)
    )


def lowered_curvature_at(model: MetricModel, x) -> np.ndarray:
    """R_lijk = g_lm R^m_ijk."""
    return np.einsum("lm,mijk->lijk", metric_at(model, x), curvature_at(model, x))


def sectional_curvature(model: MetricModel, x, a, b) -> float:
    g = metric_at(model, x)
    R = curvature_at(model, x)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rabb = np.einsum("lijk,i,j,k->l", R, b, a, b)
    area2 = (a @ g @ a) * (b @ g @ b) - (a @ g @ b) ** 2
    return float(a @ g @ rabb / area2)


def inner(model: MetricModel, x, a, b) -> float:
    g = metric_at(model, x)
    return float(np.asarray(a, dtype=float) @ g @ np.asarray(b, dtype=float))


def norm(model: MetricModel, x, a) -> float:
    return math.sqrt(max(inner(model, x, a, a), 0.0))


def cholesky_factor(model: MetricModel, x) -> np.ndarray:
    """Lower-triangular L with g(x) = L L^T; L^T maps chart vectors to an orthonormal frame."""
    return np.linalg.cholesky(metric_at(model, x))


def orthonormal_frame(model: MetricModel, x) -> np.ndarray:
    """Columns form a g-orthonormal basis at x (Gram-Schmidt of the coordinate basis)."""
    L = cholesky_factor(model, x)
    return np.linalg.inv(L.T)


def angle_between(model: MetricModel, x, a, b) -> float:
    """Angle in [0, pi] measured with g(x).

    Equal to arccos of the clamped normalized inner product, evaluated in the
    half-angle form so that angles near 0 and pi keep full precision.
    """
    L = cholesky_factor(model, x)
    ha = L.T @ np.asarray(a, dtype=float)
    hb = L.T @ np.asarray(b, dtype=float)
    na = np.linalg.norm(ha)
    nb = np.linalg.norm(hb)
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorAngle("angle_between needs two nonzero vectors")
    ua = ha / na
    ub = hb / nb
    return float(2.0 * math.atan2(np.linalg.norm(ua - ub), np.linalg.norm(ua + ub)))
