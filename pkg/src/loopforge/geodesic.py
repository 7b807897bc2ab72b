"""Geodesic integration, the exponential map, its differential, and local inverses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import (
    LeftChartDomain,
    NearSingular,
    NewtonDivergence,
    PointOutsideChart,
    SingularDifferentialOnPath,
    SingularMetric,
    StepUnderflow,
)
from .metric import MetricModel, christoffels_at, cholesky_factor, metric_at, norm

DEFAULT_STEP = 1e-3
SINGULAR_COND = 1e8


@dataclass(frozen=True)
class TangentState:
    x: np.ndarray
    v: np.ndarray

    @classmethod
    def unit(cls, model: MetricModel, x, v) -> "TangentState":
        """Normalise v to unit speed at x."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        s = norm(model, x, v)
        if s == 0.0:
            raise ValueError("cannot normalise a zero velocity")
        return cls(x.copy(), v / s)

    def is_unit(self, model: MetricModel, tol: float = 1e-9) -> bool:
        return abs(norm(model, self.x, self.v) - 1.0) <= tol


@dataclass
class IntegratorOptions:
    step: float = DEFAULT_STEP
    renormalize: bool = False
    richardson: bool = False
    richardson_tol: float = 1e-9
    max_halvings: int = 6


@dataclass
class GeodesicPath:
    """Sampled unit-speed geodesic; ``a`` holds the accelerations used for dense output."""

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    step: float = DEFAULT_STEP

    @property
    def total_length(self) -> float:
        return float(self.t[-1])

    @property
    def start(self) -> TangentState:
        return TangentState(self.x[0].copy(), self.v[0].copy())

    @property
    def end(self) -> TangentState:
        return TangentState(self.x[-1].copy(), self.v[-1].copy())

    @property
    def samples(self) -> list[tuple[float, TangentState]]:
        return [(float(t), TangentState(x, v)) for t, x, v in zip(self.t, self.x, self.v)]

    def state_at(self, t: float) -> TangentState:
        """Cubic Hermite interpolation between the stored samples."""
        T = self.t
        if not (-1e-12 <= t <= T[-1] + 1e-12):
            raise ValueError(f"t={t} outside [0, {T[-1]}]")
        i = int(np.clip(np.searchsorted(T, t, side="right") - 1, 0, len(T) - 2))
        h = T[i + 1] - T[i]
        s = (t - T[i]) / h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        x = h00 * self.x[i] + h10 * h * self.v[i] + h01 * self.x[i + 1] + h11 * h * self.v[i + 1]
        v = h00 * self.v[i] + h10 * h * self.a[i] + h01 * self.v[i + 1] + h11 * h * self.a[i + 1]
        return TangentState(x, v)

    def speed_drift(self, model: MetricModel) -> float:
        speed = np.sqrt(np.einsum("ki,kij,kj->k", self.v, model.metric_many(self.x), self.v))
        return float(np.max(np.abs(speed - 1.0)))

    def segment(self, start: float, stop: float) -> "PathSegment":
        return PathSegment(self, start, stop)

    def to_csv(self, path) -> None:
        n = self.x.shape[1]
        header = ",".join(["t"] + [f"x{k + 1}" for k in range(n)] + [f"v{k + 1}" for k in range(n)])
        np.savetxt(path, np.column_stack([self.t, self.x, self.v]), delimiter=",", header=header, comments="", fmt="%.17g")


@dataclass(frozen=True)
class PathSegment:
    """alpha(s) = path(start + sign*s) for s in [0, |stop - start|], with velocity d alpha/ds."""

    path: GeodesicPath
    start: float
    stop: float

    @property
    def length(self) -> float:
        return abs(self.stop - self.start)

    def state(self, s: float) -> TangentState:
        sign = 1.0 if self.stop >= self.start else -1.0
        st = self.path.state_at(self.start + sign * s)
        return TangentState(st.x, sign * st.v)


def _nsteps(length: float, h: float) -> int:
    return max(1, int(math.ceil(length / h - 1e-9)))


def _check_start(model: MetricModel, x):
    if not model.chart.contains(x):
        raise PointOutsideChart(f"point {np.asarray(x).tolist()} is outside the chart of {model.name}")


def _raw_geodesic(model: MetricModel, x0, v0, length: float, h: float, renormalize: bool = False):
    """Run the kernel; returns (path, status, t_exit) with the path truncated at any exit."""
    n = model.dim
    N = _nsteps(length, h)
    ts = np.empty(N + 1)
    xs = np.empty((N + 1, n))
    vs = np.empty((N + 1, n))
    acc = np.empty((N + 1, n))
    count, status, t_exit = K.integrate_geodesic(
        *model.kernel_args(),
        model.fd_step,
        np.asarray(x0, dtype=float),
        np.asarray(v0, dtype=float),
        float(length),
        float(h),
        bool(renormalize),
        model.chart.lo_array,
        model.chart.hi_array,
        ts,
        xs,
        vs,
        acc,
    )
    keep = count if status == K.OK else max(count - 1, 1)
    path = GeodesicPath(ts[:keep].copy(), xs[:keep].copy(), vs[:keep].copy(), acc[:keep].copy(), h)
    return path, status, t_exit


def _raise_for(status, t_exit, partial=None):
    if status == K.LEFT_CHART:
        raise LeftChartDomain(t_exit, partial=partial)
    if status == K.NONFINITE:
        raise SingularMetric(f"metric evaluation failed along the geodesic near t={t_exit:.6g}")


def geodesic_rhs(model: MetricModel, state: TangentState) -> tuple[np.ndarray, np.ndarray]:
    """(dx/dt, dv/dt) = (v, -Gamma(v, v))."""
    gam = christoffels_at(model, state.x)
    v = np.asarray(state.v, dtype=float)
    return v.copy(), -np.einsum("kij,i,j->k", gam, v, v)


def integrate_geodesic(
    model: MetricModel, state0: TangentState, length: float, opts: IntegratorOptions | None = None
) -> GeodesicPath:
    """Integrate the unit-speed geodesic from ``state0`` for arclength ``length``."""
    opts = opts or IntegratorOptions()
    if not length > 0:
        raise ValueError("length must be positive")
    _check_start(model, state0.x)
    if not state0.is_unit(model):
        raise ValueError("initial state must be unit speed (|v| = 1 within 1e-9)")
    h = opts.step
    path, status, t_exit = _raw_geodesic(model, state0.x, state0.v, length, h, opts.renormalize)
    _raise_for(status, t_exit, path)
    if not opts.richardson:
        return path
    for _ in range(opts.max_halvings):
        finer, status, t_exit = _raw_geodesic(model, state0.x, state0.v, length, h / 2, opts.renormalize)
        _raise_for(status, t_exit, finer)
        est = np.linalg.norm(finer.x[-1] - path.x[-1]) + np.linalg.norm(finer.v[-1] - path.v[-1])
        path, h = finer, h / 2
        if est < opts.richardson_tol:
            return path
    raise StepUnderflow(f"Richardson estimate did not reach {opts.richardson_tol:g} after {opts.max_halvings} halvings")


def exp_map(model: MetricModel, p, v, step: float = DEFAULT_STEP) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    _check_start(model, p)
    v = np.asarray(v, dtype=float)
    s = norm(model, p, v)
    if s == 0.0:
        return p.copy()
    path, status, t_exit = _raw_geodesic(model, p, v / s, s, step)
    _raise_for(status, t_exit, path)
    return path.x[-1].copy()


@dataclass
class VariationalSolution:
    """Geodesic plus the matrix solution of its linearisation, X = dx/dw0, V = dv/dw0."""

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    X: np.ndarray
    V: np.ndarray


def integrate_variational(
    model: MetricModel, x0, w0, length: float, step: float = DEFAULT_STEP, X0=None, V0=None, allow_exit=False
):
    n = model.dim
    N = _nsteps(length, step)
    ts = np.empty(N + 1)
    xs = np.empty((N + 1, n))
    vs = np.empty((N + 1, n))
    Xs = np.empty((N + 1, n, n))
    Vs = np.empty((N + 1, n, n))
    X0 = np.zeros((n, n)) if X0 is None else np.asarray(X0, dtype=float)
    V0 = np.eye(n) if V0 is None else np.asarray(V0, dtype=float)
    count, status, t_exit = K.integrate_variational(
        *model.kernel_args(),
        model.fd_step,
        np.asarray(x0, dtype=float),
        np.asarray(w0, dtype=float),
        X0,
        V0,
        float(length),
        float(step),
        model.chart.lo_array,
        model.chart.hi_array,
        ts,
        xs,
        vs,
        Xs,
        Vs,
    )
    keep = count if status == K.OK else max(count - 1, 1)
    sol = VariationalSolution(ts[:keep].copy(), xs[:keep].copy(), vs[:keep].copy(), Xs[:keep].copy(), Vs[:keep].copy())
    if status != K.OK and not allow_exit:
        _raise_for(status, t_exit, sol)
    return sol, status, t_exit


@dataclass
class ExpDifferential:
    """Chart matrix of d(exp_q)_v together with the geodesic endpoint it was computed along."""

    base: np.ndarray
    argument: np.ndarray
    matrix: np.ndarray
    condition: float
    endpoint: np.ndarray
    end_velocity: np.ndarray

    @property
    def singular(self) -> bool:
        return not self.condition <= SINGULAR_COND


def frame_condition(model: MetricModel, q, end, D) -> float:
    """Condition number of D expressed between g-orthonormal frames at q and at the endpoint."""
    Lq = cholesky_factor(model, q)
    Le = cholesky_factor(model, end)
    Dhat = Le.T @ D @ np.linalg.inv(Lq.T)
    sv = np.linalg.svd(Dhat, compute_uv=False)
    if sv[-1] == 0.0:
        return math.inf
    return float(sv[0] / sv[-1])


def exp_differential(
    model: MetricModel, q, v, step: float = DEFAULT_STEP, check: bool = True, threshold: float = SINGULAR_COND
) -> ExpDifferential:
    """d(exp_q)_v from the variational equation along t -> exp_q(t v/|v|).

    With X(0)=0, X'(0)=I along the unit-speed geodesic, d(exp_q)_v = X(|v|)/|v|.
    """
    q = np.asarray(q, dtype=float)
    _check_start(model, q)
    v = np.asarray(v, dtype=float)
    n = model.dim
    s = norm(model, q, v)
    if s == 0.0:
        return ExpDifferential(q.copy(), v.copy(), np.eye(n), 1.0, q.copy(), np.zeros(n))
    sol, _, _ = integrate_variational(model, q, v / s, s, step)
    D = sol.X[-1] / s
    cond = frame_condition(model, q, sol.x[-1], D)
    out = ExpDifferential(q.copy(), v.copy(), D, cond, sol.x[-1].copy(), sol.v[-1].copy())
    if check and out.singular:
        raise NearSingular(cond)
    return out


@dataclass
class Lift:
    """Samples of a curve lifted through a local inverse of exp_q.

    ``tangent`` is d(lift)/ds = D^{-1} alpha'(s); ``r0_estimate`` is the
    largest radius |lift| verified on the path.
    """

    base: np.ndarray
    s: np.ndarray
    lift: np.ndarray
    tangent: np.ndarray
    differentials: np.ndarray
    conditions: np.ndarray
    residuals: np.ndarray
    target_x: np.ndarray
    target_v: np.ndarray
    refinements: int
    r0_estimate: float
    newton_iterations: int = 0

    @property
    def end(self) -> np.ndarray:
        return self.lift[-1]


class _LiftFailed(Exception):
    pass


def exp_inverse_continuation(
    model: MetricModel,
    q,
    target: PathSegment,
    v_init,
    nodes: int = 32,
    tol_lift: float = 1e-8,
    newton_tol: float = 1e-10,
    max_newton: int = 10,
    max_refinements: int = 6,
    threshold: float = SINGULAR_COND,
    step: float = DEFAULT_STEP,
) -> Lift:
    """Follow the branch of exp_q^{-1} through v_init along ``target``.

    Predictor: second-order extrapolation with the exact lift tangent
    D^{-1} alpha'(s).  Corrector: Newton on exp_q(w) = alpha(s); the accepted
    node keeps the differential evaluated at the accepted point.  A failed
    corrector doubles the grid and restarts.
    """
    q = np.asarray(q, dtype=float)
    v_init = np.asarray(v_init, dtype=float)
    start = target.state(0.0)
    d0 = exp_differential(model, q, v_init, step, check=False, threshold=threshold)
    res0 = np.linalg.norm(model.chart.difference(d0.endpoint, start.x))
    if res0 > tol_lift:
        raise ValueError(f"exp_q(v_init) misses alpha(0) by {res0:.3e}")
    if d0.singular:
        raise SingularDifferentialOnPath(0.0, d0.condition)
    n_nodes = nodes
    for refinement in range(max_refinements + 1):
        try:
            return _lift_on_grid(model, q, target, v_init, d0, res0, n_nodes, tol_lift, newton_tol, max_newton, threshold, step, refinement)
        except _LiftFailed:
            n_nodes *= 2
    raise NewtonDivergence(f"lift did not converge after {max_refinements} grid refinements")


def _lift_on_grid(model, q, target, v_init, d0, res0, n_nodes, tol_lift, newton_tol, max_newton, threshold, step, refinement):
    chart = model.chart
    gq = metric_at(model, q)
    S = target.length
    s_grid = np.linspace(0.0, S, n_nodes + 1)
    n = model.dim
    lifts = np.empty((n_nodes + 1, n))
    tangents = np.empty((n_nodes + 1, n))
    Ds = np.empty((n_nodes + 1, n, n))
    conds = np.empty(n_nodes + 1)
    resid = np.empty(n_nodes + 1)
    tx = np.empty((n_nodes + 1, n))
    tv = np.empty((n_nodes + 1, n))
    iterations = 0

    st = target.state(0.0)
    lifts[0] = v_init
    Ds[0] = d0.matrix
    conds[0] = d0.condition
    resid[0] = res0
    tx[0], tv[0] = st.x, st.v
    tangents[0] = np.linalg.solve(d0.matrix, st.v)

    for i in range(1, n_nodes + 1):
        st = target.state(s_grid[i])
        tx[i], tv[i] = st.x, st.v
        ds = s_grid[i] - s_grid[i - 1]
        if i >= 2:
            w = lifts[i - 1] + ds * (1.5 * tangents[i - 1] - 0.5 * tangents[i - 2])
        else:
            w = lifts[i - 1] + ds * tangents[i - 1]
        trust = 0.25 * (1.0 + math.sqrt(max(lifts[i - 1] @ gq @ lifts[i - 1], 0.0)))
        best = math.inf
        ok = False
        for _ in range(max_newton):
            iterations += 1
            try:
                d = exp_differential(model, q, w, step, check=False, threshold=threshold)
            except (LeftChartDomain, SingularMetric):
                raise _LiftFailed
            w_eval = w
            F = chart.difference(d.endpoint, st.x)
            r = float(np.linalg.norm(F))
            if r <= newton_tol:
                ok = True
                break
            if r > 2.0 * best:
                raise _LiftFailed
            best = min(best, r)
            if d.singular:
                raise SingularDifferentialOnPath(s_grid[i], d.condition)
            dw = np.linalg.solve(d.matrix, F)
            if math.sqrt(max(dw @ gq @ dw, 0.0)) > trust:
                raise _LiftFailed
            w = w - dw
        if not ok:
            if r > tol_lift:
                raise _LiftFailed
        if d.singular:
            raise SingularDifferentialOnPath(s_grid[i], d.condition)
        lifts[i] = w_eval
        Ds[i] = d.matrix
        conds[i] = d.condition
        resid[i] = r
        tangents[i] = np.linalg.solve(d.matrix, st.v)

    radii = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", lifts, gq, lifts), 0.0))
    return Lift(
        base=q.copy(),
        s=s_grid,
        lift=lifts,
        tangent=tangents,
        differentials=Ds,
        conditions=conds,
        residuals=resid,
        target_x=tx,
        target_v=tv,
        refinements=refinement,
        r0_estimate=float(radii.max()),
        newton_iterations=iterations,
    )
