"""Equilibria of smoothed systems, the a -> 0 homotopy and manifold analogues
of zombie saddles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import expr as ex
from . import filippov as fl
from .integrate import (BranchPolicy, IntegratorConfig, Segment, Trajectory,
                        integrate)
from .system import PiecewiseSystem, SmoothField, SmoothingFamily, smoothed_field

__all__ = [
    "HypothesisError", "ContinuationError", "EquilibriumReport", "IVTBracket",
    "HomotopyRow", "HomotopyPath", "ManifoldAnalogue", "ProbeResult",
    "classify_jacobian", "newton", "find_equilibria", "ivt_bracket", "scaled_det",
    "homotopy_track", "log_schedule", "proper_equilibria_nonsmooth",
    "manifold_analogues", "separatrix_probes", "reverse_trajectory",
]

DEGENERATE_TOL = 1e-12
RESIDUAL_TOL = 1e-10
MERGE_TOL = 1e-8
MAX_HALVINGS = 30


class HypothesisError(ValueError):
    """g_minus_0 < f(0) < g_plus_0 fails, so no saddle is guaranteed."""


class ContinuationError(RuntimeError):
    def __init__(self, message: str, path: "HomotopyPath", last_good_a: float | None):
        super().__init__(message)
        self.path = path
        self.last_good_a = last_good_a


# --------------------------------------------------------------------------
# Equilibria

@dataclass(frozen=True)
class EquilibriumReport:
    location: tuple[float, float]
    jacobian: np.ndarray = field(compare=False)
    det: float
    trace: float
    cls: str
    residual: float
    side: str | None = None     # '+' / '-' for proper equilibria of a nonsmooth system


def classify_jacobian(J: np.ndarray) -> tuple[float, float, str]:
    det = float(J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0])
    tr = float(J[0, 0] + J[1, 1])
    disc = tr * tr - 4 * det
    if abs(det) < DEGENERATE_TOL or abs(disc) < DEGENERATE_TOL:
        return det, tr, "degenerate"
    if det < 0:
        return det, tr, "saddle"
    if abs(tr) < DEGENERATE_TOL:
        return det, tr, "degenerate"   # linear center
    kind = "node" if disc > 0 else "focus"
    return det, tr, ("stable " if tr < 0 else "unstable ") + kind


def newton(F: Callable[[np.ndarray], np.ndarray], J: Callable[[np.ndarray], np.ndarray],
           x0: Sequence[float], max_iter: int = 60) -> np.ndarray | None:
    """Damped Newton; None when it fails to reach a residual of 1e-10."""
    x = np.array(x0, dtype=float)
    try:
        fx = F(x)
        nf = float(np.max(np.abs(fx)))
        for _ in range(max_iter):
            if nf <= 1e-14 * (1.0 + float(np.max(np.abs(x)))):
                return x
            try:
                dx = np.linalg.solve(J(x), -fx)
            except np.linalg.LinAlgError:
                return None
            if not np.all(np.isfinite(dx)):
                return None
            t = 1.0
            while True:
                xn = x + t * dx
                fn = F(xn)
                nn = float(np.max(np.abs(fn)))
                if nn < (1 - 0.25 * t) * nf or t < 1e-6:
                    break
                t *= 0.5
            if np.array_equal(xn, x):
                break
            x, fx, nf = xn, fn, nn
        return x if nf <= RESIDUAL_TOL else None
    except (ArithmeticError, ValueError):
        return None


def _report(field_: SmoothField, x: np.ndarray, side: str | None = None) -> EquilibriumReport:
    J = field_.jacobian(x)
    det, tr, cls = classify_jacobian(J)
    res = float(np.max(np.abs(field_(x))))
    return EquilibriumReport((float(x[0]), float(x[1])), J, det, tr, cls, res, side)


def _grid_seeds(box: Sequence[float], grid: tuple[int, int]) -> list[np.ndarray]:
    x0, x1, y0, y1 = box
    nx, ny = grid
    xs = np.linspace(x0, x1, nx) if nx > 1 else np.array([(x0 + x1) / 2])
    ys = np.linspace(y0, y1, ny) if ny > 1 else np.array([(y0 + y1) / 2])
    return [np.array([x, y]) for y in ys for x in xs]


def _in_box(x: np.ndarray, box: Sequence[float], pad: float = 1e-9) -> bool:
    x0, x1, y0, y1 = box
    px, py = pad * max(1.0, x1 - x0), pad * max(1.0, y1 - y0)
    return x0 - px <= x[0] <= x1 + px and y0 - py <= x[1] <= y1 + py


def find_equilibria(field_: SmoothField, box: Sequence[float], grid: tuple[int, int] = (21, 21),
                    accept: Callable[[np.ndarray], bool] | None = None,
                    side: str | None = None) -> list[EquilibriumReport]:
    """Newton from every grid seed; roots inside ``box`` merged within 1e-8."""
    F, J = field_, field_.jacobian
    found: list[np.ndarray] = []
    for seed in _grid_seeds(box, grid):
        x = newton(F, J, seed)
        if x is None or not _in_box(x, box) or (accept is not None and not accept(x)):
            continue
        if any(np.max(np.abs(x - y)) <= MERGE_TOL for y in found):
            continue
        found.append(x)
    found.sort(key=lambda p: (p[0], p[1]))
    return [_report(field_, x, side) for x in found]


def proper_equilibria_nonsmooth(sys: PiecewiseSystem, box: Sequence[float],
                                grid: tuple[int, int] = (21, 21)) -> list[EquilibriumReport]:
    """Zeros of f_plus inside h > 0 and of f_minus inside h < 0."""
    out = []
    for side, comps in (("+", sys.f_plus), ("-", sys.f_minus)):
        fld = SmoothField(f"{sys.name}[{side}]", sys.variables, comps, sys.parameters, sys.h, 0.0)
        sgn = 1.0 if side == "+" else -1.0
        out += find_equilibria(fld, box, grid, accept=lambda x, s=sgn: s * sys.h_value(x) > 0, side=side)
    return out


# --------------------------------------------------------------------------
# Reduced scalar problem f(s) = g_a(s), s = h

def _reduced_fns(sys: PiecewiseSystem):
    if sys.reduced is None:
        raise ValueError(f"model {sys.name!r} has no reduced scalar form")
    f = ex.compile_vector([sys.reduced], ("s",), sys.parameters)
    df = ex.compile_vector([ex.differentiate(sys.reduced, "s")], ("s",), sys.parameters)
    return (lambda s: f(s)[0]), (lambda s: df(s)[0])


def _family(sys: PiecewiseSystem, fam: SmoothingFamily | None, a: float = 1.0) -> SmoothingFamily:
    if fam is not None:
        return fam
    if sys.smoothing is None:
        raise ValueError(f"model {sys.name!r} has no smoothing family")
    return sys.smoothing.family(a)


@dataclass(frozen=True)
class IVTBracket:
    lo: float           # x2 < 0 with (f - g_a)(x2) > 0
    hi: float           # x1 > 0 with (f - g_a)(x1) < 0
    a: float
    value_lo: float
    value_hi: float


def ivt_bracket(sys: PiecewiseSystem, delta: float, a: float = 1.0,
                fam: SmoothingFamily | None = None) -> IVTBracket:
    """Sign-change bracket of ``f - g_a`` inside ``(-delta, delta)``.

    With ``d = min(g_+ - f(0), f(0) - g_-)``: shrink ``x1`` (from delta/2)
    until ``f`` stays within d/3 of ``f(0)`` at ``+-x1``, then shrink ``a``
    until ``g_a`` is within d/3 of its limits there.  The bracket is in the
    boundary coordinate ``s = h``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    f, _ = _reduced_fns(sys)
    fam = _family(sys, fam, a)
    gp, gm = fam.g_plus_0, fam.g_minus_0
    f0 = f(0.0)
    if not gm < f0 < gp:
        raise HypothesisError(f"need g_-(0) < f(0) < g_+(0); got {gm:g}, {f0:g}, {gp:g}")
    d = min(gp - f0, f0 - gm)
    x1 = delta / 2
    for _ in range(200):
        if abs(f(x1) - f0) < d / 3 and abs(f(-x1) - f0) < d / 3:
            break
        x1 /= 2
    else:
        raise HypothesisError("f is not continuous at 0 to working precision")
    fam = fam.with_scale(a)
    for _ in range(200):
        if fam.g_a(x1) > gp - d / 3 and fam.g_a(-x1) < gm + d / 3:
            break
        fam = fam.with_scale(fam.a / 2)
    vhi = f(x1) - fam.g_a(x1)
    vlo = f(-x1) - fam.g_a(-x1)
    if not (vhi < 0 < vlo):
        raise ArithmeticError("bracket construction failed to produce a sign change")
    return IVTBracket(-x1, x1, fam.a, vlo, vhi)


def scaled_det(sys: PiecewiseSystem, a: float, xi: float, fam: SmoothingFamily | None = None) -> float:
    """``f'(a xi) - g'(xi) / a``: the determinant in stretched coordinates."""
    if not a > 0:
        raise ValueError("a must be positive")
    _, df = _reduced_fns(sys)
    fam = _family(sys, fam, a)
    return df(a * xi) - fam.dg(xi) / a


# --------------------------------------------------------------------------
# Homotopy a -> 0

@dataclass(frozen=True)
class HomotopyRow:
    a: float
    equilibrium: EquilibriumReport | None    # None: no saddle at this scale ("absent")
    substeps: int = 1


@dataclass
class HomotopyPath:
    rows: list[HomotopyRow]
    limit_estimate: tuple[float, float] | None
    boundary_layer_index: int | None

    @property
    def present(self) -> list[HomotopyRow]:
        return [r for r in self.rows if r.equilibrium is not None]


def log_schedule(a_start: float, a_end: float, steps: int) -> list[float]:
    """``steps + 1`` log-spaced scales from ``a_start`` down to ``a_end``."""
    if not (a_start > a_end > 0):
        raise ValueError("need a_start > a_end > 0")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    la, lb = math.log(a_start), math.log(a_end)
    sched = [math.exp(la + (lb - la) * i / steps) for i in range(steps + 1)]
    sched[0], sched[-1] = a_start, a_end
    return sched


def _default_anchor(sys: PiecewiseSystem) -> np.ndarray:
    zs = fl.classify_zombie(sys)
    if zs:
        return np.array(zs[0].point)
    arc = fl.BoundaryArc.default(sys)
    return arc.point(0.5 * (arc.lo + arc.hi))


def homotopy_track(sys: PiecewiseSystem, a_schedule: Sequence[float],
                   seed: Sequence[float] | None = None, box: Sequence[float] | None = None,
                   grid: tuple[int, int] = (21, 21)) -> HomotopyPath:
    """Continue the saddle of the smoothed system as the scale decreases.

    Until a saddle exists, rows are recorded as absent; it is seeded from
    ``seed`` (default: the zombie point of the nonsmooth system) or else from
    a grid search in ``box``.  Each accepted jump shrinks the scale by at
    most a factor 2 and starts Newton at the previous location.
    """
    sched = [float(a) for a in a_schedule]
    if not sched or any(a <= 0 for a in sched) or any(b >= a for a, b in zip(sched, sched[1:])):
        raise ValueError("a_schedule must be positive and strictly decreasing")
    anchor = np.array(seed, float) if seed is not None else _default_anchor(sys)
    if box is None:
        w = np.maximum(1.0, 0.05 * np.abs(anchor))
        box = (anchor[0] - w[0], anchor[0] + w[0], anchor[1] - w[1], anchor[1] + w[1])
    rows: list[HomotopyRow] = []
    x: np.ndarray | None = None
    a_prev: float | None = None

    def solve(a: float, start: np.ndarray) -> np.ndarray | None:
        fld = smoothed_field(sys, a)
        r = newton(fld, fld.jacobian, start)
        if r is None:
            return None
        det, _, cls = classify_jacobian(fld.jacobian(r))
        return r if cls == "saddle" or det < 0 else None

    def initial(a: float) -> np.ndarray | None:
        r = solve(a, anchor)
        if r is not None:
            return r
        fld = smoothed_field(sys, a)
        saddles = [e for e in find_equilibria(fld, box, grid) if e.det < 0]
        if not saddles:
            return None
        best = min(saddles, key=lambda e: abs(sys.h_value(e.location)))
        return np.array(best.location)

    def path(lim=None) -> HomotopyPath:
        return HomotopyPath(list(rows), lim, _layer_index(sys, rows))

    for a in sched:
        if x is None:
            x = initial(a)
            rows.append(HomotopyRow(a, None if x is None else _report(smoothed_field(sys, a), x)))
            a_prev = a if x is not None else None
            continue
        # subdivide so no jump shrinks a by more than 2x
        n = max(1, math.ceil(math.log2(a_prev / a) - 1e-12))
        targets = [a_prev * (a / a_prev) ** (i / n) for i in range(1, n + 1)]
        targets[-1] = a
        cur_a, cur_x, used = a_prev, x, 0
        for tgt in targets:
            trial = tgt
            for _ in range(MAX_HALVINGS + 1):
                r = solve(trial, cur_x)
                used += 1
                if r is not None:
                    cur_a, cur_x = trial, r
                    if trial == tgt:
                        break
                    trial = tgt
                    continue
                trial = math.sqrt(cur_a * trial)
            else:
                raise ContinuationError(
                    f"continuation broke down below a={cur_a:.6g} (target {tgt:.6g})", path(), cur_a)
            if cur_a != tgt:
                raise ContinuationError(f"continuation stalled at a={cur_a:.6g}", path(), cur_a)
        x, a_prev = cur_x, a
        rows.append(HomotopyRow(a, _report(smoothed_field(sys, a), x), used))
    return path(_limit(sys, rows))


def _layer_index(sys: PiecewiseSystem, rows: list[HomotopyRow]) -> int | None:
    for i, r in enumerate(rows):
        if r.equilibrium is not None and abs(sys.h_value(r.equilibrium.location)) < 10 * r.a:
            return i
    return None


def _limit(sys: PiecewiseSystem, rows: list[HomotopyRow]) -> tuple[float, float] | None:
    pts = [r for r in rows if r.equilibrium is not None]
    if not pts:
        return None
    if len(pts) == 1:
        est = np.array(pts[-1].equilibrium.location)
    else:
        r1, r2 = pts[-2], pts[-1]
        p1, p2 = np.array(r1.equilibrium.location), np.array(r2.equilibrium.location)
        # linear in a, evaluated at a = 0
        est = p2 - r2.a * (p1 - p2) / (r1.a - r2.a)
    try:
        est = fl.project_point(sys, est)
    except ArithmeticError:
        pass
    return float(est[0]), float(est[1])


# --------------------------------------------------------------------------
# Manifold analogues

@dataclass
class ManifoldAnalogue:
    role: str                   # stable | unstable
    kind: str                   # side_orbit | sliding_segment | tangency_orbit
    trajectory: Trajectory
    attached_to: fl.Pseudoequilibrium
    side: str | None = None     # '+' / '-' for side orbits
    truncated: bool = False
    notes: tuple[str, ...] = ()


def reverse_trajectory(tr: Trajectory) -> Trajectory:
    """Same samples in the opposite order (a backward run read in forward time)."""
    segs = [Segment(s.mode, s.t[::-1].copy(), s.states[::-1].copy(),
                    None if s.lam is None else s.lam[::-1].copy()) for s in reversed(tr.segments)]
    return Trajectory(segs, list(reversed(tr.events)), tr.terminated_by)


def _truncate_to_box(tr: Trajectory, box: Sequence[float] | None) -> tuple[Trajectory, bool]:
    if box is None:
        return tr, False
    segs = []
    for s in tr.segments:
        inside = np.array([_in_box(p, box, 0.0) for p in s.states])
        if inside.all():
            segs.append(s)
            continue
        k = int(np.argmin(inside))
        if k > 0:
            segs.append(Segment(s.mode, s.t[:k], s.states[:k], None if s.lam is None else s.lam[:k]))
        t_cut = s.t[k]
        events = [e for e in tr.events if (e.t - t_cut) * (s.t[-1] - s.t[0]) < 0 or e.t == s.t[0]]
        return Trajectory(segs or [Segment(s.mode, s.t[:1], s.states[:1], None if s.lam is None else s.lam[:1])],
                          events, "box_exit"), True
    return tr, False


def _first_slide(tr: Trajectory) -> Trajectory:
    for s in tr.segments:
        if s.mode == "slide":
            t_end = s.t[-1]
            ev = [e for e in tr.events if (e.t - t_end) * (s.t[-1] - s.t[0]) <= 0]
            return Trajectory([s], ev, tr.terminated_by)
    return tr


def manifold_analogues(sys: PiecewiseSystem, zombie: fl.ZombieReport, horizon: float = 5.0,
                       box: Sequence[float] | None = None, cfg: IntegratorConfig | None = None,
                       slide_horizon: float = 200.0) -> list[ManifoldAnalogue]:
    """Trajectories playing the roles of stable / unstable manifolds.

    Side orbits follow one field out of the point (forward: unstable role)
    or into it (backward, reported in forward time: stable role).  Sliding
    segments run along the sliding interval from just inside each end into
    the pseudoequilibrium (repelling sliding, stable role), or, reversed,
    out of it (attracting sliding, unstable role).
    """
    cfg = cfg or IntegratorConfig()
    pe = zombie.pseudoequilibrium
    p = np.array(zombie.point)
    out: list[ManifoldAnalogue] = []

    def side_orbit(side: str, role: str) -> ManifoldAnalogue:
        mode = "plus" if side == "+" else "minus"
        span = (0.0, horizon) if role == "unstable" else (0.0, -horizon)
        tr = integrate(sys, p, span, BranchPolicy(), cfg, start_mode=mode)
        tr, cut = _truncate_to_box(tr, box)
        if role == "stable":
            tr = reverse_trajectory(tr)
        notes = ()
        if zombie.tangency is not None:
            vis = zombie.tangency.visibility_plus if side == "+" else zombie.tangency.visibility_minus
            if vis == "degenerate":
                notes = ("unclassified branch direction (degenerate tangency)",)
        return ManifoldAnalogue(role, "side_orbit", tr, pe, side, cut, notes)

    def sliding_segment(role: str) -> list[ManifoldAnalogue]:
        iv = zombie.interval
        arc = iv.arc or fl.BoundaryArc.default(sys)
        eps = 1e-6 * iv.length
        res = []
        for s0 in (iv.lo + eps, iv.hi - eps):
            q = arc.point(s0)
            span = (0.0, slide_horizon) if role == "stable" else (0.0, -slide_horizon)
            tr = _first_slide(integrate(sys, q, span, BranchPolicy(), cfg, start_mode="slide",
                                          stop_on_arrival=True))
            if role == "unstable":
                tr = reverse_trajectory(tr)
            res.append(ManifoldAnalogue(role, "sliding_segment", tr, pe))
        return res

    if zombie.type == "DoubleTangencyZombie":
        for side in ("+", "-"):
            out.append(side_orbit(side, "stable"))
            out.append(side_orbit(side, "unstable"))
    elif zombie.type == "RepellingSlidingZombie":
        out += sliding_segment("stable")
        out += [side_orbit("+", "unstable"), side_orbit("-", "unstable")]
    elif zombie.type == "AttractingSlidingZombie":
        out += sliding_segment("unstable")
        out += [side_orbit("+", "stable"), side_orbit("-", "stable")]
    else:
        raise ValueError(f"unknown zombie type {zombie.type!r}")
    return out


# --------------------------------------------------------------------------
# Separatrix probes

@dataclass(frozen=True)
class ProbeResult:
    station: tuple[float, float]
    start: tuple[float, float]
    side: int                   # +1 / -1 relative to the polyline normal
    final: tuple[float, float]
    attractor: int | None       # index into the attractor list, None if not converged


def _polyline(analogues: Sequence[ManifoldAnalogue]) -> np.ndarray:
    """Stable analogues joined into one curve through the point."""
    stable = [m for m in analogues if m.role == "stable"]
    if not stable:
        raise ValueError("no stable analogue to probe")
    parts = [stable[0].trajectory.states()]
    for m in stable[1:]:
        parts.append(m.trajectory.states()[::-1])
    pts = np.concatenate(parts)
    keep = np.concatenate([[True], np.any(np.diff(pts, axis=0) != 0, axis=1)])
    return pts[keep]


def separatrix_probes(sys: PiecewiseSystem, analogues: Sequence[ManifoldAnalogue],
                      attractors: Sequence[Sequence[float]], stations: int = 10,
                      offset: float = 1e-3, horizon: float = 50.0, radius: float = 1e-3,
                      cfg: IntegratorConfig | None = None,
                      scale: Sequence[float] = (1.0, 1.0)) -> list[ProbeResult]:
    """Start points ``+-offset`` along the normal of the stable analogue at
    evenly spaced arclength stations, integrated forward to ``horizon``.

    ``scale`` sets per-coordinate units for arclength and offsets (e.g. to
    balance T and A in the EBM).
    """
    sc = np.asarray(scale, float)
    pts = _polyline(analogues) / sc
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arclen = np.concatenate([[0.0], np.cumsum(seg)])
    total = arclen[-1]
    att = np.array(attractors, float)
    out = []
    for k in range(stations):
        s = (k + 0.5) / stations * total
        i = min(int(np.searchsorted(arclen, s, side="right")) - 1, len(seg) - 1)
        w = (s - arclen[i]) / seg[i] if seg[i] > 0 else 0.0
        base = pts[i] + w * (pts[i + 1] - pts[i])
        tan = (pts[i + 1] - pts[i]) / seg[i]
        normal = np.array([-tan[1], tan[0]])
        for sgn in (+1, -1):
            start = (base + sgn * offset * normal) * sc
            tr = integrate(sys, start, (0.0, horizon), BranchPolicy(), cfg)
            fin = tr.final_state
            dist = np.linalg.norm(att - fin, axis=1) if len(att) else np.array([])
            idx = int(np.argmin(dist)) if len(att) and dist.min() <= radius else None
            out.append(ProbeResult(tuple(base * sc), tuple(start), sgn, (float(fin[0]), float(fin[1])), idx))
    return out
