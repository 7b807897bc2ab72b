"""Basepoint-shift shortening of cornered geodesic loops.

One step re-bases a loop gamma (length l, base p) at q = gamma(delta) and pulls
the initial arc gamma|[0, delta] through the local inverse of exp_q that
passes through v = (l - delta) gamma'(delta).  The end of the lift u satisfies
exp_q(u) = q, so s -> exp_q(s u/|u|) is a new loop at q.  Writing the lift as
r(t) w(t) with |w| = 1, the Gauss lemma splits the unit speed of the arc as
1 = sqrt(r'^2 + |df/dt|^2) for the fan f(r, t) = exp_q(r w(t)), whence

    delta >= |u| - (l - delta) + eta0,
    eta0 = int_0^delta |df/dt|^2 / (sqrt(r'^2 + |df/dt|^2) + |r'|) dt,

and |u| <= l - eta0 < l whenever the loop has a corner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conjugacy import SELF_CONJUGATE_TOL, is_self_conjugate
from .errors import (
    AlreadyClosed,
    DeltaTooLarge,
    DeltaUnderflow,
    InequalityViolation,
    LeftChartDomain,
    NearSingular,
    NewtonDivergence,
    SelfConjugateObstruction,
    SingularDifferentialOnPath,
    SingularMetric,
)
from .geodesic import (
    DEFAULT_STEP,
    IntegratorOptions,
    Lift,
    PathSegment,
    TangentState,
    exp_differential,
    exp_inverse_continuation,
    integrate_geodesic,
)
from .loops import GeodesicLoop, loop_from_state
from .metric import MetricModel, angle_between, metric_at

TOL_CLOSED = 1e-6
CONSISTENCY_TOL = 1e-8
INEQUALITY_SLACK = 1e-6


@dataclass
class ShorteningStep:
    """Record of one basepoint shift (delta > 0 shortens, delta < 0 lengthens)."""

    input_length: float
    input_break_angle: float
    delta: float
    base: np.ndarray
    q: np.ndarray
    v: np.ndarray
    u: np.ndarray
    eta0: float
    new_length: float
    r0_estimate: float
    lift: Lift
    output_loop: GeodesicLoop
    gauss_residual: float
    gauss_residuals: np.ndarray
    unit_speed_defect: float
    inequality_margin: float
    direction_angle: float
    closure_v: float
    closure_u: float
    parallel: bool = False

    def summary(self) -> dict:
        return {
            "delta": self.delta,
            "input_length": self.input_length,
            "input_break_angle": self.input_break_angle,
            "new_length": self.new_length,
            "output_break_angle": self.output_loop.break_angle,
            "eta0": self.eta0,
            "q": self.q.tolist(),
            "u": self.u.tolist(),
            "v": self.v.tolist(),
            "r0_estimate": self.r0_estimate,
            "gauss_residual": self.gauss_residual,
            "inequality_margin": self.inequality_margin,
            "lift_nodes": len(self.lift.s) - 1,
        }


@dataclass
class ShorteningConfig:
    tol_closed: float = TOL_CLOSED
    max_iter: int = 500
    delta_fraction: float = 0.1
    max_halvings: int = 8
    min_delta_fraction: float = 1e-6
    lift_nodes: int = 32
    region: tuple | None = None
    self_conjugate_tol: float = SELF_CONJUGATE_TOL
    step: float = DEFAULT_STEP
    force: bool = False
    maximizing: bool = False
    keep_steps: bool = True


@dataclass
class ClosedGeodesicResult:
    status: str
    final_loop: GeodesicLoop
    trace: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    message: str = ""

    @property
    def lengths(self) -> list[float]:
        return [row["input_length"] for row in self.trace] + [self.final_loop.length]

    def summary(self) -> dict:
        return {
            "status": self.status,
            "message": self.message,
            "iterations": len(self.trace),
            "final_loop": self.final_loop.summary(),
            "trace": self.trace,
        }


@dataclass
class TrustState:
    radius: float = math.inf
    failures: int = 0


def choose_delta(model: MetricModel, loop: GeodesicLoop, trust: TrustState | float = math.inf, fraction: float = 0.1) -> float:
    """delta = min(fraction * l, trust radius), halved once per recorded failure."""
    if isinstance(trust, TrustState):
        return min(fraction * loop.length, trust.radius) * 0.5**trust.failures
    return min(fraction * loop.length, float(trust))


def _simpson(y, x) -> float:
    n = len(x) - 1
    if n % 2 == 1 or n < 2:
        return float(np.trapezoid(y, x)) if hasattr(np, "trapezoid") else float(np.trapz(y, x))
    h = (x[-1] - x[0]) / n
    return float(h / 3.0 * (y[0] + y[-1] + 4.0 * np.sum(y[1:-1:2]) + 2.0 * np.sum(y[2:-1:2])))


def fan_quantities(model: MetricModel, lift: Lift):
    """Radial speed, transverse fan speed |df/dt| and the Gauss residual at each lift node.

    With r = |lift|_q, w = lift / r and D = d(exp_q) at the lift,
    df/dr = D w and df/dt = D (lift' - r' w).
    """
    gq = metric_at(model, lift.base)
    rdot = np.empty(len(lift.s))
    ft2 = np.empty(len(lift.s))
    gauss = np.empty(len(lift.s))
    radial = np.empty(len(lift.s))
    for k in range(len(lift.s)):
        a = lift.lift[k]
        da = lift.tangent[k]
        r = math.sqrt(a @ gq @ a)
        w = a / r
        rd = float(w @ gq @ da)
        D = lift.differentials[k]
        g = metric_at(model, lift.target_x[k])
        fr = D @ w
        ft = D @ (da - rd * w)
        rdot[k] = rd
        ft2[k] = float(ft @ g @ ft)
        gauss[k] = float(fr @ g @ ft)
        radial[k] = float(fr @ g @ fr)
    return rdot, ft2, gauss, radial


def eta0_integrand(rdot, ft2):
    return ft2 / (np.sqrt(rdot**2 + ft2) + np.abs(rdot))


def basepoint_shift_step(
    model: MetricModel,
    loop: GeodesicLoop,
    delta: float,
    lift_nodes: int = 32,
    tol_closed: float = TOL_CLOSED,
    force: bool = False,
    self_conjugate_tol: float = SELF_CONJUGATE_TOL,
    step: float = DEFAULT_STEP,
) -> ShorteningStep:
    """One basepoint shift.  delta > 0 shortens; delta < 0 is the mirrored lengthening move."""
    if delta == 0.0:
        raise ValueError("delta must be nonzero")
    if loop.break_angle <= tol_closed and not force:
        raise AlreadyClosed(f"loop is closed (break angle {loop.break_angle:.3e}); the step needs a corner")
    l = loop.length
    if not abs(delta) < l:
        raise DeltaTooLarge(f"|delta| = {abs(delta):.6g} must be below the loop length {l:.6g}")
    sc = is_self_conjugate(model, loop, self_conjugate_tol)
    if sc.self_conjugate:
        raise SelfConjugateObstruction(f"base point is conjugate to itself along the loop (scaled det {sc.scaled_det:.3e})")

    p = loop.base
    if delta > 0:
        segment = PathSegment(loop.path, 0.0, delta)
        at_q = loop.path.state_at(delta)
        q, gdot_q = at_q.x, at_q.v
    else:
        # extend the geodesic backwards from p: beta(s) = gamma(-s)
        back = integrate_geodesic(model, TangentState(p.copy(), -loop.v_out), -delta, IntegratorOptions(step=step))
        segment = PathSegment(back, 0.0, -delta)
        at_q = back.state_at(-delta)
        q, gdot_q = at_q.x, -at_q.v
    v = (l - delta) * gdot_q

    try:
        d_v = exp_differential(model, q, v, step, check=False)
    except LeftChartDomain as exc:
        raise DeltaTooLarge(f"geodesic from the shifted base leaves the chart at t={exc.t_exit:.4g}") from None
    closure_v = float(np.linalg.norm(model.chart.difference(d_v.endpoint, p)))
    if closure_v > CONSISTENCY_TOL:
        raise InequalityViolation(f"exp_q(v) misses the base point by {closure_v:.3e}")
    if d_v.singular:
        raise SelfConjugateObstruction(f"d exp_q is singular at v (condition {d_v.condition:.3e})")

    try:
        lift = exp_inverse_continuation(model, q, segment, v, nodes=lift_nodes, step=step)
    except SingularDifferentialOnPath as exc:
        raise SelfConjugateObstruction(f"conjugate point on the lift at s={exc.s:.4g}") from None
    except (NewtonDivergence, LeftChartDomain, SingularMetric) as exc:
        raise DeltaTooLarge(f"lift failed: {exc}") from None

    u = lift.end.copy()
    gq = metric_at(model, q)
    norm_u = math.sqrt(u @ gq @ u)
    norm_v = math.sqrt(v @ gq @ v)

    rdot, ft2, gauss, radial = fan_quantities(model, lift)
    eta0 = _simpson(eta0_integrand(rdot, ft2), lift.s)
    unit_defect = float(np.max(np.abs(np.sqrt(rdot**2 + ft2) - 1.0)))
    length_alpha = abs(delta)
    if delta > 0:
        margin = length_alpha - (norm_u - norm_v + eta0)
    else:
        margin = length_alpha - (norm_v - norm_u + eta0)
    if margin < -INEQUALITY_SLACK:
        raise InequalityViolation(f"length budget violated by {-margin:.3e} (eta0={eta0:.3e})")

    out = loop_from_state(model, q, u, norm_u, step)
    closure_u = out.residual
    if closure_u > CONSISTENCY_TOL:
        raise InequalityViolation(f"exp_q(u) misses q by {closure_u:.3e}")
    ang = angle_between(model, q, u, v)
    return ShorteningStep(
        input_length=l,
        input_break_angle=loop.break_angle,
        delta=float(delta),
        base=p.copy(),
        q=q.copy(),
        v=v,
        u=u,
        eta0=eta0,
        new_length=norm_u,
        r0_estimate=lift.r0_estimate,
        lift=lift,
        output_loop=out,
        gauss_residual=float(np.max(np.abs(gauss))),
        gauss_residuals=gauss,
        unit_speed_defect=unit_defect,
        inequality_margin=float(margin),
        direction_angle=ang,
        closure_v=closure_v,
        closure_u=closure_u,
        parallel=ang < 1e-10,
    )


def lengthening_step_maximizing(model: MetricModel, loop: GeodesicLoop, delta: float, **kwargs) -> ShorteningStep:
    """The mirrored move with the base shifted backwards; the new loop is longer."""
    if not delta < 0:
        raise ValueError("the maximizing step takes delta < 0")
    return basepoint_shift_step(model, loop, delta, **kwargs)


def _in_region(x, region) -> bool:
    if region is None:
        return True
    return all(lo <= xi <= hi for xi, (lo, hi) in zip(x, region))


def shorten_to_closed(model: MetricModel, loop: GeodesicLoop, cfg: ShorteningConfig | None = None) -> ClosedGeodesicResult:
    """Iterate basepoint shifts until the break angle closes, the base escapes, or a limit is hit."""
    cfg = cfg or ShorteningConfig()
    region = cfg.region if cfg.region is not None else model.region
    sign = -1.0 if cfg.maximizing else 1.0
    trace: list[dict] = []
    steps: list[ShorteningStep] = []
    trust = TrustState()
    current = loop
    if current.break_angle <= cfg.tol_closed and not cfg.force:
        return ClosedGeodesicResult("closed-geodesic", current, trace, steps, "input loop is already closed")
    for it in range(cfg.max_iter):
        if not _in_region(current.base, region):
            return ClosedGeodesicResult(
                "diverged", current, trace, steps, f"base point {current.base.tolist()} left the region {region}"
            )
        floor = cfg.min_delta_fraction * current.length
        failure = None
        result = None
        for attempt in range(cfg.max_halvings + 1):
            trust.failures = attempt
            delta = choose_delta(model, current, trust, cfg.delta_fraction)
            if delta < floor:
                failure = DeltaUnderflow(f"delta fell below {floor:.3e}")
                break
            try:
                result = basepoint_shift_step(
                    model,
                    current,
                    sign * delta,
                    lift_nodes=cfg.lift_nodes,
                    tol_closed=cfg.tol_closed,
                    force=cfg.force and it == 0,
                    self_conjugate_tol=cfg.self_conjugate_tol,
                    step=cfg.step,
                )
                break
            except SelfConjugateObstruction as exc:
                failure = exc
                if "conjugate to itself" in str(exc):
                    # property of the loop, not of delta
                    break
            except (DeltaTooLarge, NearSingular, NewtonDivergence) as exc:
                failure = exc
        if result is None:
            if isinstance(failure, SelfConjugateObstruction):
                status = "self-conjugate-obstruction"
            elif isinstance(failure, DeltaTooLarge) and "chart" in str(failure):
                status = "diverged"
            else:
                status = "max-iterations"
            return ClosedGeodesicResult(status, current, trace, steps, f"step {it} abandoned: {failure}")
        trust = TrustState(math.inf if attempt == 0 else 2.0 * delta)
        row = result.summary()
        row["base"] = current.base.tolist()
        trace.append(row)
        if cfg.keep_steps:
            steps.append(result)
        current = result.output_loop
        if current.break_angle <= cfg.tol_closed:
            return ClosedGeodesicResult("closed-geodesic", current, trace, steps, "")
    return ClosedGeodesicResult("max-iterations", current, trace, steps, f"no closure after {cfg.max_iter} steps")
