"""Event-driven hybrid integration of Filippov solutions.

A run is a sequence of modes: ``plus`` (flow of f_plus in h > 0), ``minus``
and ``slide`` (the sliding field on h = 0).  Region flows use the adaptive
Dormand-Prince stepper; crossings of h = 0 are bracketed on its dense
output, bisected and projected onto the boundary where the arrival point is
classified.  Sliding integrates the smooth extension of the sliding field
(unclipped lam*) and projects after every step; it ends when lam* leaves
[0, 1], when the tangential speed vanishes (pseudoequilibrium arrival) or
when a repelling-branch exit delay elapses.

Backward runs integrate the time-reversed system; times are reported in the
original clock, so samples decrease monotonically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import filippov as fl
from .rk import Stepper, Step, StepSizeUnderflow
from .system import PiecewiseSystem, SmoothField

__all__ = [
    "BranchPolicy", "IntegratorConfig", "Event", "Segment", "Trajectory",
    "IntegrationError", "StepSizeError", "ChatteringError", "integrate",
    "integrate_smoothed", "project_to_boundary", "EVENT_KINDS", "MODES",
]

EVENT_KINDS = ("cross", "slide_enter", "slide_exit", "tangency_hit", "pseudoeq_arrival", "time_limit")
MODES = ("plus", "minus", "slide")
POLICIES = ("stay", "exit_plus", "exit_minus")
SPEED_TOL = 1e-12
_THETAS = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class BranchPolicy:
    """What a solution does on repelling sliding (where uniqueness fails)."""

    on_repelling: str = "stay"
    exit_delay: float = 0.0

    def __post_init__(self):
        if self.on_repelling not in POLICIES:
            raise ValueError(f"on_repelling must be one of {POLICIES}, got {self.on_repelling!r}")
        if not (self.exit_delay >= 0 and math.isfinite(self.exit_delay)):
            raise ValueError("exit_delay must be a finite nonnegative time")
        if self.on_repelling == "stay" and self.exit_delay != 0.0:
            raise ValueError("exit_delay applies only to exit_plus / exit_minus")


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    max_step: float = 0.1
    event_tol: float = 1e-10
    t_direction: str | None = None      # 'forward' | 'backward' | None (from t_span)
    event_budget: int = 10_000

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "max_step", "event_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.t_direction not in (None, "forward", "backward"):
            raise ValueError("t_direction must be 'forward' or 'backward'")
        if self.event_budget < 1:
            raise ValueError("event_budget must be >= 1")


@dataclass(frozen=True)
class Event:
    t: float
    kind: str
    state: tuple[float, float]


@dataclass
class Segment:
    mode: str                       # plus | minus | slide | smooth
    t: np.ndarray
    states: np.ndarray              # (n, 2)
    lam: np.ndarray | None = None   # lam* samples on slide segments


@dataclass
class Trajectory:
    segments: list[Segment]
    events: list[Event]
    terminated_by: str

    @property
    def t_final(self) -> float:
        return float(self.segments[-1].t[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.segments[-1].states[-1].copy()

    @property
    def initial_state(self) -> np.ndarray:
        return self.segments[0].states[0].copy()

    @property
    def modes(self) -> list[str]:
        return [s.mode for s in self.segments]

    def times(self) -> np.ndarray:
        return np.concatenate([s.t for s in self.segments])

    def states(self) -> np.ndarray:
        return np.concatenate([s.states for s in self.segments])

    def rows(self) -> Iterator[tuple[float, float, float, str, float | None]]:
        """(t, x, y, mode, lam) for every sample; lam is None off slide segments."""
        for seg in self.segments:
            for i in range(len(seg.t)):
                lam = None if seg.lam is None else float(seg.lam[i])
                yield float(seg.t[i]), float(seg.states[i, 0]), float(seg.states[i, 1]), seg.mode, lam


class IntegrationError(RuntimeError):
    def __init__(self, message: str, trajectory: Trajectory | None = None):
        super().__init__(message)
        self.trajectory = trajectory


class StepSizeError(IntegrationError):
    pass


class ChatteringError(IntegrationError):
    pass


def project_to_boundary(sys: PiecewiseSystem, x_near: Sequence[float]) -> np.ndarray:
    """Newton along grad h to |h| <= 1e-12; needs |h(x_near)| within 1e-6."""
    hv = sys.h_value(x_near)
    if not abs(hv) <= 1e-6:
        raise ValueError(f"point {tuple(x_near)} is too far from h=0 (h={hv:g})")
    return fl.project_point(sys, x_near, 1e-12, 50)


# --------------------------------------------------------------------------
# Recording

class _Recorder:
    def __init__(self, t0: float, direction: int):
        self.t0, self.direction = t0, direction
        self.segments: list[Segment] = []
        self.events: list[Event] = []
        self._mode: str | None = None
        self._t: list[float] = []
        self._y: list[np.ndarray] = []
        self._lam: list[float] = []

    def clock(self, tau: float) -> float:
        return self.t0 + self.direction * tau

    def start(self, mode: str, tau: float, y: np.ndarray, lam: float | None = None) -> None:
        self.close()
        self._mode = mode
        self._t, self._y, self._lam = [], [], []
        self.add(tau, y, lam)

    def add(self, tau: float, y: np.ndarray, lam: float | None = None) -> None:
        t = self.clock(tau)
        if self._t and t == self._t[-1]:
            return
        self._t.append(t)
        self._y.append(np.array(y, dtype=float))
        if lam is not None:
            self._lam.append(min(1.0, max(0.0, lam)))

    def close(self) -> None:
        if self._mode is None or not self._t:
            return
        lam = np.array(self._lam) if self._mode == "slide" else None
        self.segments.append(Segment(self._mode, np.array(self._t), np.array(self._y), lam))
        self._mode = None

    def event(self, tau: float, kind: str, y: np.ndarray) -> None:
        self.events.append(Event(self.clock(tau), kind, (float(y[0]), float(y[1]))))

    def trajectory(self, terminated_by: str) -> Trajectory:
        self.close()
        return Trajectory(self.segments, self.events, terminated_by)


# --------------------------------------------------------------------------
# The hybrid run

class _Run:
    def __init__(self, sys: PiecewiseSystem, cfg: IntegratorConfig, policy: BranchPolicy,
                 rec: _Recorder, horizon: float, stop_on_arrival: bool = False):
        self.sys, self.cfg, self.policy, self.rec, self.T = sys, cfg, policy, rec, horizon
        self.stop_on_arrival = stop_on_arrival
        self.events_used = 0
        fp, fm, sig = sys.fplus_fn, sys.fminus_fn, sys.sigma_fn
        self.f_plus = lambda y: np.array(fp(y[0], y[1]))
        self.f_minus = lambda y: np.array(fm(y[0], y[1]))

        def f_slide(y):
            sp, sm = sig(y[0], y[1])
            d = sm - sp
            lam = sm / d if d != 0.0 else 0.5
            a, b = fp(y[0], y[1]), fm(y[0], y[1])
            return np.array([lam * a[0] + (1 - lam) * b[0], lam * a[1] + (1 - lam) * b[1]])
        self.f_slide = f_slide

    # helpers -----------------------------------------------------------------
    def _budget(self) -> None:
        self.events_used += 1
        if self.events_used > self.cfg.event_budget:
            raise ChatteringError(f"event budget of {self.cfg.event_budget} exhausted (chattering?)")

    def _stepper(self, fun, tau, y) -> Stepper:
        c = self.cfg
        return Stepper(fun, tau, y, c.rel_tol, c.abs_tol, c.max_step)

    def _project(self, y: np.ndarray) -> np.ndarray:
        return fl.project_point(self.sys, y, 1e-12, 50)

    def _lam_speed(self, p: np.ndarray) -> tuple[float, float]:
        sp, sm = self.sys.sigma_fn(p[0], p[1])
        d = sm - sp
        lam = sm / d if d != 0.0 else 0.5
        v = float(self.f_slide(p) @ fl.unit_tangent(self.sys, p))
        return lam, v

    # classification ----------------------------------------------------------
    def initial_mode(self, y: np.ndarray) -> tuple[str, np.ndarray]:
        hv = self.sys.h_value(y)
        if hv > self.cfg.event_tol:
            return "plus", y
        if hv < -self.cfg.event_tol:
            return "minus", y
        p = self._project(y)
        c = fl.classify_point(self.sys, p)
        k = c.kind
        if k == "double_tangency":
            return "stop", p
        if k == "crossing":
            return ("plus" if c.direction == "+" else "minus"), p
        if k == "sliding_attracting":
            return "slide", p
        if k == "sliding_repelling":
            return "slide", p
        if k == "tangency_plus":
            if c.visibility_plus == "visible":
                return "plus", p
            return ("slide" if c.sigma_minus > 0 else "minus"), p
        # tangency_minus
        if c.visibility_minus == "visible":
            return "minus", p
        return ("slide" if c.sigma_plus < 0 else "plus"), p

    def arrival(self, came_from: str, p: np.ndarray) -> tuple[str, str | None]:
        """Mode to continue in after reaching h = 0 from region ``came_from``."""
        c = fl.classify_point(self.sys, p)
        sp, sm, k = c.sigma_plus, c.sigma_minus, c.kind
        if k == "double_tangency":
            return "stop", "tangency_hit"
        if came_from == "plus":
            if k == "tangency_plus":
                if c.visibility_plus == "visible":
                    return "plus", "tangency_hit"
                return ("minus", "cross") if sm < 0 else ("slide", "slide_enter")
            if sp > 0:
                return "plus", None
            if k == "tangency_minus":
                if c.visibility_minus == "visible":
                    return "minus", "cross"
                return "slide", "slide_enter"
            return ("minus", "cross") if sm < 0 else ("slide", "slide_enter")
        if k == "tangency_minus":
            if c.visibility_minus == "visible":
                return "minus", "tangency_hit"
            return ("plus", "cross") if sp > 0 else ("slide", "slide_enter")
        if sm < 0:
            return "minus", None
        if k == "tangency_plus":
            if c.visibility_plus == "visible":
                return "plus", "cross"
            return "slide", "slide_enter"
        return ("plus", "cross") if sp > 0 else ("slide", "slide_enter")

    # region flow -------------------------------------------------------------
    def run_region(self, mode: str, tau: float, y: np.ndarray):
        """Flow in ``mode`` until h changes sign or the horizon; returns
        (tau, state, hit_boundary)."""
        side = 1.0 if mode == "plus" else -1.0
        fun = self.f_plus if mode == "plus" else self.f_minus
        hfn = self.sys.h_fn
        tol = self.cfg.event_tol
        phi = lambda z: side * hfn(z[0], z[1])[0]
        st = self._stepper(fun, tau, y)
        while st.t < self.T:
            step = st.step(self.T)
            prev = 0.0
            hit = None
            for th in _THETAS:
                if phi(step.at(th)) < -tol:
                    hit = (prev, th)
                    break
                prev = th
            if hit is None:
                self.rec.add(step.t1, step.y1)
                continue
            theta = self._root_theta(lambda th: phi(step.at(th)), hit[0], hit[1], step.h)
            tau_b = step.t0 + theta * step.h
            y_b = project_to_boundary(self.sys, step.at(theta))
            self.rec.add(tau_b, y_b)
            return tau_b, y_b, True
        return st.t, st.y, False

    @staticmethod
    def _root_theta(fn, lo: float, hi: float, h: float) -> float:
        flo = fn(lo)
        if flo <= 0.0:
            return lo
        for _ in range(100):
            if (hi - lo) * h <= 1e-15 * max(1.0, h):
                break
            mid = 0.5 * (lo + hi)
            fm = fn(mid)
            if fm == 0.0:
                return mid
            if fm > 0:
                lo = mid
            else:
                hi = mid
        return hi

    # sliding -----------------------------------------------------------------
    def run_slide(self, tau: float, p: np.ndarray, exit_at: float):
        """Slide from ``p``; returns (tau, state, outcome) with outcome one of
        'time_limit', 'exit_plus', 'exit_minus', 'arrival'."""
        tol = self.cfg.event_tol
        lam, v = self._lam_speed(p)
        self.rec.start("slide", tau, p, lam)
        if abs(v) < SPEED_TOL:
            return tau, p, "arrival"
        stop = min(self.T, exit_at)
        st = self._stepper(self.f_slide, tau, p)
        v0 = v
        while st.t < stop:
            step = st.step(stop)
            found = None
            prev = 0.0
            for th in _THETAS:
                q = self._project(step.at(th))
                lam_q, v_q = self._lam_speed(q)
                if lam_q > 1 + tol or lam_q < -tol:
                    bound = 1.0 if lam_q > 1 else 0.0
                    found = ("endpoint", prev, th, bound)
                    break
                if (v_q < 0) != (v0 < 0) or abs(v_q) < SPEED_TOL:
                    found = ("arrival", prev, th, None)
                    break
                prev = th
            if found is None:
                y1 = self._project(step.y1)
                lam1, v0 = self._lam_speed(y1)
                st.accept(step.t1, y1)
                self.rec.add(step.t1, y1, lam1)
                continue
            kind, lo, hi, bound = found
            if kind == "endpoint":
                def g(th, bound=bound):
                    lam_t = self._lam_speed(self._project(step.at(th)))[0]
                    return (1.0 - lam_t) if bound == 1.0 else lam_t
                theta = self._root_theta(g, lo, hi, step.h)
                tau_b = step.t0 + theta * step.h
                q = self._project(step.at(theta))
                sp, sm = self.sys.sigma_fn(q[0], q[1])
                other = sm if bound == 1.0 else sp
                self.rec.add(tau_b, q, bound)
                return tau_b, q, ("exit_plus" if other > 0 else "exit_minus")
            sgn = 1.0 if v0 > 0 else -1.0
            speed = lambda th: sgn * self._lam_speed(self._project(step.at(th)))[1]
            theta = self._root_theta(speed, lo, hi, step.h)
            if abs(speed(hi)) < SPEED_TOL and speed(hi) > 0:
                theta = hi
            tau_b = step.t0 + theta * step.h
            q = self._refine_pseudoeq(self._project(step.at(lo)), self._project(step.at(hi)),
                                      self._project(step.at(theta)))
            self.rec.add(tau_b, q, self._lam_speed(q)[0])
            return tau_b, q, "arrival"
        y = st.y
        outcome = "time_limit" if st.t >= self.T else ("exit_plus" if self.policy.on_repelling == "exit_plus" else "exit_minus")
        return st.t, y, outcome

    def _refine_pseudoeq(self, a: np.ndarray, b: np.ndarray, guess: np.ndarray) -> np.ndarray:
        """Bisect the tangential speed along the boundary between ``a`` and ``b``."""
        arc = fl.BoundaryArc(self.sys, min(a[1], b[1]), max(a[1], b[1]))
        speed = lambda s: self._lam_speed(arc.point(s, a[0]))[1]
        lo, hi = arc.lo, arc.hi
        flo, fhi = speed(lo), speed(hi)
        if flo == 0.0:
            return arc.point(lo, a[0])
        if fhi == 0.0 or (flo < 0) == (fhi < 0):
            # no bracket: |speed| already below threshold at the nearer end
            return guess if abs(speed(guess[1])) <= min(abs(flo), abs(fhi)) else arc.point(
                lo if abs(flo) < abs(fhi) else hi, a[0])
        s = fl._bisect(speed, lo, hi, flo, 1e-14)
        return arc.point(s, a[0])

    # driver --------------------------------------------------------------------
    def run(self, y0: np.ndarray, start_mode: str | None) -> str:
        rec, T = self.rec, self.T
        tau = 0.0
        mode, y = (start_mode, np.array(y0, float)) if start_mode else self.initial_mode(np.array(y0, float))
        if start_mode == "slide":
            y = self._project(y)
        if mode == "stop":
            rec.start("plus" if self.sys.h_value(y) >= 0 else "minus", tau, y)
            rec.event(tau, "tangency_hit", y)
            return "tangency_hit"
        if mode != "slide":
            rec.start(mode, tau, y)
        entering_slide = mode == "slide"
        while True:
            if mode in ("plus", "minus"):
                tau, y, hit = self.run_region(mode, tau, y)
                if not hit:
                    rec.event(tau, "time_limit", y)
                    return "time_limit"
                self._budget()
                nxt, kind = self.arrival(mode, y)
                if nxt == "stop":
                    rec.event(tau, "tangency_hit", y)
                    return "tangency_hit"
                if kind is not None:
                    rec.event(tau, kind, y)
                if nxt != mode and nxt != "slide":
                    rec.start(nxt, tau, y)
                mode = nxt
                entering_slide = nxt == "slide"
                if tau >= T:
                    rec.event(tau, "time_limit", y)
                    return "time_limit"
                continue
            # sliding
            sp, sm = self.sys.sigma_fn(y[0], y[1])
            repelling = sp - sm > 0
            exit_at = math.inf
            if repelling and self.policy.on_repelling != "stay":
                exit_at = tau + self.policy.exit_delay
                if self.policy.exit_delay == 0.0:
                    mode = "plus" if self.policy.on_repelling == "exit_plus" else "minus"
                    rec.event(tau, "slide_exit", y)
                    rec.start(mode, tau, y)
                    continue
            tau, y, outcome = self.run_slide(tau, y, exit_at)
            entering_slide = False
            if outcome == "arrival":
                rec.event(tau, "pseudoeq_arrival", y)
                if self.stop_on_arrival:
                    return "pseudoeq_arrival"
                lam = self._lam_speed(y)[0]
                hold_until = min(T, exit_at)
                if hold_until > tau:
                    rec.add(hold_until, y, lam)
                tau = hold_until
                if tau >= T:
                    rec.event(tau, "time_limit", y)
                    return "time_limit"
                outcome = "exit_plus" if self.policy.on_repelling == "exit_plus" else "exit_minus"
            if outcome == "time_limit":
                rec.event(tau, "time_limit", y)
                return "time_limit"
            self._budget()
            mode = "plus" if outcome == "exit_plus" else "minus"
            rec.event(tau, "slide_exit", y)
            rec.start(mode, tau, y)


def _direction(t_span: Sequence[float], cfg: IntegratorConfig) -> tuple[float, float, int]:
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not (math.isfinite(t0) and math.isfinite(t1)):
        raise ValueError("t_span must be finite")
    direction = 1 if t1 >= t0 else -1
    if cfg.t_direction is not None and (cfg.t_direction == "forward") != (direction > 0) and t1 != t0:
        raise ValueError(f"t_span {t0}->{t1} contradicts t_direction={cfg.t_direction!r}")
    return t0, t1, direction


def integrate(sys: PiecewiseSystem, x0: Sequence[float], t_span: Sequence[float],
              policy: BranchPolicy | None = None, cfg: IntegratorConfig | None = None,
              start_mode: str | None = None, stop_on_arrival: bool = False) -> Trajectory:
    """Filippov solution of the nonsmooth system from ``x0`` over ``t_span``.

    ``start_mode`` forces the initial mode ('plus', 'minus' or 'slide'),
    e.g. to follow one side's orbit out of a tangency point.  With
    ``stop_on_arrival`` the run ends at a pseudoequilibrium instead of
    holding there until the end of ``t_span``.
    """
    policy = policy or BranchPolicy()
    cfg = cfg or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (2,) or not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be two finite numbers")
    if start_mode not in (None, *MODES):
        raise ValueError(f"start_mode must be one of {MODES}")
    t0, t1, direction = _direction(t_span, cfg)
    if t1 == t0:
        raise ValueError("t_span must be nondegenerate")
    work = sys if direction > 0 else sys.reversed()
    rec = _Recorder(t0, direction)
    run = _Run(work, cfg, policy, rec, abs(t1 - t0), stop_on_arrival)
    try:
        how = run.run(x0, start_mode)
    except StepSizeUnderflow as exc:
        raise StepSizeError(str(exc), rec.trajectory("step_underflow")) from None
    except ChatteringError as exc:
        raise ChatteringError(str(exc), rec.trajectory("event_budget")) from None
    return rec.trajectory(how)


def integrate_smoothed(field: SmoothField, x0: Sequence[float], t_span: Sequence[float],
                       cfg: IntegratorConfig | None = None) -> Trajectory:
    """Plain adaptive RK solution of a smoothed field (one ``smooth`` segment)."""
    cfg = cfg or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float)
    if not field.a > 0:
        raise ValueError("smoothed integration needs a > 0")
    t0, t1, direction = _direction(t_span, cfg)
    rec = _Recorder(t0, direction)
    rec.start("smooth", 0.0, x0)
    if t1 == t0:
        rec.event(0.0, "time_limit", x0)
        return rec.trajectory("time_limit")
    fn = field.fun
    fun = (lambda y: np.array(fn(y[0], y[1]))) if direction > 0 else (lambda y: -np.array(fn(y[0], y[1])))
    T = abs(t1 - t0)
    st = Stepper(fun, 0.0, x0, cfg.rel_tol, cfg.abs_tol, cfg.max_step)
    try:
        while st.t < T:
            step = st.step(T)
            rec.add(step.t1, step.y1)
    except StepSizeUnderflow as exc:
        raise StepSizeError(str(exc) + " (the smoothed system is stiff for small a)",
                            rec.trajectory("step_underflow")) from None
    rec.event(st.t, "time_limit", st.y)
    return rec.trajectory("time_limit")
