"""Analysis on the switching manifold ``h = 0`` of a planar Filippov system.

Normal components ``sigma_plus = f_plus . grad h`` and ``sigma_minus`` decide
everything pointwise:

* both positive / both negative: crossing upward / downward
* ``sigma_plus < 0 < sigma_minus``: attracting sliding
* ``sigma_plus > 0 > sigma_minus``: repelling sliding
* a vanishing component: tangency of that side's field

Along a sliding arc the Filippov field is ``lam f_plus + (1 - lam) f_minus``
with ``lam = sigma_minus / (sigma_minus - sigma_plus)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .system import PiecewiseSystem

__all__ = [
    "DegenerateError", "NotOnBoundaryError", "BoundaryArc", "NormalComponents",
    "BoundaryClassification", "Tangency", "SlidingInterval", "Pseudoequilibrium",
    "ZombieReport", "BoundaryReport", "normal_components", "sliding_lambda",
    "sliding_field", "sliding_stability", "classify_point", "find_tangencies",
    "tangency_visibility", "sliding_intervals", "find_pseudoequilibria",
    "classify_zombie", "analyze_boundary", "tangential_speed",
]

BOUNDARY_TOL = 1e-10
ROOT_TOL = 1e-12
DOUBLE_MERGE_TOL = 1e-9
DEGENERATE_TOL = 1e-12
DEFAULT_RESOLUTION = 2000


class DegenerateError(ArithmeticError):
    """A quantity needed for classification vanishes (to 1e-12)."""


class NotOnBoundaryError(ValueError):
    pass


# --------------------------------------------------------------------------
# Boundary parameterisation

@dataclass(frozen=True)
class BoundaryArc:
    """Arc of ``h = 0`` parameterised by the ``free`` coordinate over ``[lo, hi]``."""

    sys: PiecewiseSystem
    lo: float
    hi: float
    free: int = 1

    @classmethod
    def default(cls, sys: PiecewiseSystem, lo: float | None = None,
                hi: float | None = None) -> "BoundaryArc":
        arc = sys.arc or (-3.0, 3.0)
        return cls(sys, arc[0] if lo is None else lo, arc[1] if hi is None else hi)

    @property
    def fixed(self) -> int:
        return 1 - self.free

    def point(self, s: float, guess: float = 0.0) -> np.ndarray:
        """Boundary point whose free coordinate is ``s`` (Newton on the other)."""
        p = np.empty(2)
        p[self.free] = s
        p[self.fixed] = guess
        for _ in range(60):
            hv = self.sys.h_value(p)
            if abs(hv) <= 1e-14 * max(1.0, abs(p[self.fixed])):
                return p
            dh = self.sys.grad_h_value(p)[self.fixed]
            if dh == 0.0:
                raise DegenerateError(f"h does not depend on {self.sys.variables[self.fixed]} at {p}")
            new = p[self.fixed] - hv / dh
            if new == p[self.fixed]:
                return p
            p[self.fixed] = new
        if abs(self.sys.h_value(p)) <= BOUNDARY_TOL:
            return p
        raise ArithmeticError(f"boundary point at s={s} did not converge")

    def s_of(self, state: Sequence[float]) -> float:
        return float(state[self.free])

    def tangent(self, s_or_point) -> np.ndarray:
        p = self.point(s_or_point) if np.ndim(s_or_point) == 0 else np.asarray(s_or_point, float)
        return unit_tangent(self.sys, p, self.free)


def unit_tangent(sys: PiecewiseSystem, p: Sequence[float], free: int = 1) -> np.ndarray:
    """Unit tangent to ``h = 0`` oriented along increasing free coordinate."""
    g = sys.grad_h_value(p)
    t = np.array([-g[1], g[0]])
    nrm = math.hypot(t[0], t[1])
    if nrm == 0.0:
        raise DegenerateError(f"grad h vanishes at {tuple(p)}")
    t /= nrm
    if t[free] < 0:
        t = -t
    return t


# --------------------------------------------------------------------------
# Pointwise quantities

@dataclass(frozen=True)
class NormalComponents:
    sigma_plus: float
    sigma_minus: float


def project_point(sys: PiecewiseSystem, x: Sequence[float], tol: float = 1e-12,
                  max_iter: int = 50) -> np.ndarray:
    """Newton steps along ``grad h`` until ``|h| <= tol``."""
    p = np.array(x, dtype=float)
    for _ in range(max_iter + 1):
        hv = sys.h_value(p)
        if abs(hv) <= tol:
            return p
        g = sys.grad_h_value(p)
        gg = float(g @ g)
        if gg == 0.0:
            raise DegenerateError(f"grad h vanishes at {tuple(p)}")
        p_new = p - hv * g / gg
        if np.array_equal(p_new, p):
            # at floating-point resolution of the state
            return p
        p = p_new
    raise ArithmeticError(f"projection onto h=0 did not converge from {tuple(x)}")


def _on_boundary(sys: PiecewiseSystem, x: Sequence[float]) -> np.ndarray:
    p = np.asarray(x, dtype=float)
    hv = sys.h_value(p)
    if abs(hv) <= BOUNDARY_TOL:
        return p
    if abs(hv) <= 1e-6:
        return project_point(sys, p)
    raise NotOnBoundaryError(f"point {tuple(p)} is not on h=0 (h={hv:g})")


def normal_components(sys: PiecewiseSystem, x: Sequence[float]) -> NormalComponents:
    p = _on_boundary(sys, x)
    g = sys.grad_h_value(p)
    if not math.hypot(g[0], g[1]) > DEGENERATE_TOL:
        raise DegenerateError(f"grad h vanishes at {tuple(p)}")
    sp, sm = sys.sigma_fn(p[0], p[1])
    return NormalComponents(sp, sm)


def _lambda_from(sp: float, sm: float) -> float | None:
    if sp == sm:
        if sp == 0.0:
            raise DegenerateError("sigma_plus = sigma_minus = 0: lambda undetermined")
        return None
    if sp * sm > 0.0:
        return None
    return sm / (sm - sp)


def sliding_lambda(sys: PiecewiseSystem, x: Sequence[float]) -> float | None:
    """``lam*`` solving ``lam sigma_plus + (1 - lam) sigma_minus = 0``, or None."""
    nc = normal_components(sys, x)
    return _lambda_from(nc.sigma_plus, nc.sigma_minus)


def sliding_field(sys: PiecewiseSystem, x: Sequence[float]) -> np.ndarray:
    p = _on_boundary(sys, x)
    lam = sliding_lambda(sys, p)
    if lam is None:
        raise DegenerateError(f"no sliding at {tuple(p)}: normal components share a sign")
    fp = np.array(sys.fplus_fn(p[0], p[1]))
    fm = np.array(sys.fminus_fn(p[0], p[1]))
    return lam * fp + (1.0 - lam) * fm


def tangential_speed(sys: PiecewiseSystem, x: Sequence[float], free: int = 1) -> float:
    p = _on_boundary(sys, x)
    return float(sliding_field(sys, p) @ unit_tangent(sys, p, free))


def sliding_stability(sys: PiecewiseSystem, x: Sequence[float]) -> str:
    """'attracting' if dS/dlam = sigma_plus - sigma_minus < 0, 'repelling' if > 0."""
    nc = normal_components(sys, x)
    d = nc.sigma_plus - nc.sigma_minus
    if abs(d) < DEGENERATE_TOL:
        raise DegenerateError(f"dS/dlambda vanishes at {tuple(x)}")
    return "attracting" if d < 0 else "repelling"


def zero_tol(sys: PiecewiseSystem, p: Sequence[float], rel: float = 1e-9) -> float:
    """Scale-aware threshold under which a normal component counts as zero."""
    g = sys.grad_h_value(p)
    fp = sys.fplus_fn(p[0], p[1])
    fm = sys.fminus_fn(p[0], p[1])
    scale = math.hypot(g[0], g[1]) * (1.0 + max(math.hypot(*fp), math.hypot(*fm)))
    return rel * scale


@dataclass(frozen=True)
class BoundaryClassification:
    kind: str               # crossing | sliding_attracting | sliding_repelling |
                            # tangency_plus | tangency_minus | double_tangency
    point: tuple[float, float]
    sigma_plus: float
    sigma_minus: float
    direction: str | None = None           # crossing: '+' (into h>0) or '-'
    visibility_plus: str | None = None
    visibility_minus: str | None = None


def classify_point(sys: PiecewiseSystem, x: Sequence[float], rel_tol: float = 1e-9) -> BoundaryClassification:
    """Total classification of a boundary point by the sign pattern of the sigmas."""
    p = _on_boundary(sys, x)
    sp, sm = sys.sigma_fn(p[0], p[1])
    tol = zero_tol(sys, p, rel_tol)
    zp, zm = abs(sp) <= tol, abs(sm) <= tol
    pt = (float(p[0]), float(p[1]))
    if zp and zm:
        return BoundaryClassification("double_tangency", pt, sp, sm,
                                      visibility_plus=_visibility(sys, p, "+"),
                                      visibility_minus=_visibility(sys, p, "-"))
    if zp:
        return BoundaryClassification("tangency_plus", pt, sp, sm,
                                      visibility_plus=_visibility(sys, p, "+"))
    if zm:
        return BoundaryClassification("tangency_minus", pt, sp, sm,
                                      visibility_minus=_visibility(sys, p, "-"))
    if sp > 0 and sm > 0:
        return BoundaryClassification("crossing", pt, sp, sm, direction="+")
    if sp < 0 and sm < 0:
        return BoundaryClassification("crossing", pt, sp, sm, direction="-")
    if sp < 0 < sm:
        return BoundaryClassification("sliding_attracting", pt, sp, sm)
    return BoundaryClassification("sliding_repelling", pt, sp, sm)


def _visibility(sys: PiecewiseSystem, p: Sequence[float], side: str) -> str:
    lp, lm = sys.lie2_fn(p[0], p[1])
    curv = lp if side == "+" else lm
    if abs(curv) < DEGENERATE_TOL:
        return "degenerate"
    if side == "+":
        return "visible" if curv > 0 else "invisible"
    return "visible" if curv < 0 else "invisible"


# --------------------------------------------------------------------------
# Regional analysis along an arc

@dataclass(frozen=True)
class Tangency:
    s: float
    point: tuple[float, float]
    side: str                       # '+', '-' or 'double'
    visibility: str                 # single side: visible|invisible|degenerate
    visibility_plus: str | None = None
    visibility_minus: str | None = None
    curvature_plus: float | None = None
    curvature_minus: float | None = None
    unresolved: bool = False

    @property
    def is_double(self) -> bool:
        return self.side == "double"


def tangency_visibility(sys: PiecewiseSystem, tangency: Tangency | Sequence[float],
                        side: str | None = None) -> str:
    """visible / invisible / degenerate from the sign of the second Lie derivative.

    A tangency of ``f_plus`` is visible when ``(f+ . grad)(f+ . grad h) > 0``
    (the orbit bends back into ``h > 0``); for ``f_minus`` when it is ``< 0``.
    """
    if isinstance(tangency, Tangency):
        p = np.array(tangency.point)
        side = side or tangency.side
        if side == "double":
            raise ValueError("name the side ('+' or '-') of a double tangency")
    else:
        p = _on_boundary(sys, tangency)
        if side is None:
            raise ValueError("side is required for a bare point")
    return _visibility(sys, p, side)


def _bisect(fn: Callable[[float], float], lo: float, hi: float, flo: float,
            tol: float = ROOT_TOL) -> float:
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = fn(mid)
        if fm == 0.0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _sign_roots(fn: Callable[[float], float], grid: np.ndarray) -> list[tuple[float, bool]]:
    """Simple roots on ``grid``: (root, at_endpoint) from sign changes / exact zeros."""
    vals = [fn(float(s)) for s in grid]
    roots: list[tuple[float, bool]] = []
    last = len(grid) - 1
    for i, v in enumerate(vals):
        if v == 0.0:
            if i < last and vals[i + 1] == 0.0:
                raise DegenerateError(
                    f"normal component vanishes identically on [{grid[i]:g}, {grid[i + 1]:g}]")
            roots.append((float(grid[i]), i in (0, last)))
        elif i < last and vals[i + 1] != 0.0 and (v < 0) != (vals[i + 1] < 0):
            roots.append((_bisect(fn, float(grid[i]), float(grid[i + 1]), v), False))
    return roots


def find_tangencies(sys: PiecewiseSystem, arc: BoundaryArc | None = None,
                    resolution: int = DEFAULT_RESOLUTION) -> list[Tangency]:
    """Roots of sigma_plus and sigma_minus along ``arc``, merged into double
    tangencies when they coincide to 1e-9."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    arc = arc or BoundaryArc.default(sys)
    grid = np.linspace(arc.lo, arc.hi, int(resolution) + 1)
    guess = [0.0]

    def point(s: float) -> np.ndarray:
        p = arc.point(s, guess[0])
        guess[0] = p[arc.fixed]
        return p

    def sig(i: int) -> Callable[[float], float]:
        def fn(s: float) -> float:
            p = point(s)
            return sys.sigma_fn(p[0], p[1])[i]
        return fn

    plus = _sign_roots(sig(0), grid)
    minus = _sign_roots(sig(1), grid)
    out: list[Tangency] = []
    used_minus: set[int] = set()
    for sp, endp in plus:
        match = None
        for j, (sm, _) in enumerate(minus):
            if j not in used_minus and abs(sp - sm) <= DOUBLE_MERGE_TOL:
                match = j
                break
        if match is not None:
            used_minus.add(match)
            s = 0.5 * (sp + minus[match][0])
            p = point(s)
            lp, lm = sys.lie2_fn(p[0], p[1])
            vp, vm = _visibility(sys, p, "+"), _visibility(sys, p, "-")
            out.append(Tangency(s, (float(p[0]), float(p[1])), "double", f"{vp}/{vm}",
                                vp, vm, lp, lm, endp or minus[match][1]))
        else:
            p = point(sp)
            lp, _ = sys.lie2_fn(p[0], p[1])
            vp = _visibility(sys, p, "+")
            out.append(Tangency(sp, (float(p[0]), float(p[1])), "+", vp, vp, None, lp, None, endp))
    for j, (sm, endp) in enumerate(minus):
        if j in used_minus:
            continue
        p = point(sm)
        _, lm = sys.lie2_fn(p[0], p[1])
        vm = _visibility(sys, p, "-")
        out.append(Tangency(sm, (float(p[0]), float(p[1])), "-", vm, None, vm, None, lm, endp))
    out.sort(key=lambda t: t.s)
    return out


@dataclass(frozen=True)
class SlidingInterval:
    lo: float
    hi: float
    stability: str                          # attracting | repelling
    lo_end: Tangency | None = None          # None: interval continues past the arc
    hi_end: Tangency | None = None
    arc: BoundaryArc | None = field(default=None, compare=False, repr=False)

    @property
    def length(self) -> float:
        return self.hi - self.lo


def sliding_intervals(sys: PiecewiseSystem, arc: BoundaryArc | None = None,
                      tangencies: Sequence[Tangency] | None = None,
                      resolution: int = DEFAULT_RESOLUTION) -> list[SlidingInterval]:
    arc = arc or BoundaryArc.default(sys)
    if tangencies is None:
        tangencies = find_tangencies(sys, arc, resolution)
    cuts: list[tuple[float, Tangency | None]] = [(arc.lo, None)]
    cuts += [(t.s, t) for t in tangencies if arc.lo < t.s < arc.hi]
    cuts.append((arc.hi, None))
    out = []
    for (a, ta), (b, tb) in zip(cuts, cuts[1:]):
        if not b > a:
            continue
        p = arc.point(0.5 * (a + b))
        sp, sm = sys.sigma_fn(p[0], p[1])
        if sp * sm < 0:
            stab = "attracting" if sp - sm < 0 else "repelling"
            out.append(SlidingInterval(a, b, stab, ta, tb, arc))
    return out


@dataclass(frozen=True)
class Pseudoequilibrium:
    point: tuple[float, float]
    s: float
    lambda_star: float
    stability: str              # sliding-flow stability: stable | unstable | degenerate
    sliding: str | None         # stability of the sliding region, None at double tangencies
    rate: float = float("nan")  # d(speed)/ds at the point
    zombie: str | None = None


def find_pseudoequilibria(sys: PiecewiseSystem, interval: SlidingInterval,
                          resolution: int = DEFAULT_RESOLUTION) -> list[Pseudoequilibrium]:
    """Zeros of the sliding field's tangential component inside ``interval``."""
    arc = interval.arc or BoundaryArc.default(sys)
    width = interval.hi - interval.lo
    pad = 1e-9 * width
    lo, hi = interval.lo + pad, interval.hi - pad

    def speed(s: float) -> float:
        p = arc.point(s, _guess(arc))
        return _speed_at(sys, p, arc.free)

    out = []
    for s, _ in _sign_roots(speed, np.linspace(lo, hi, int(resolution) + 1)):
        p = arc.point(s, _guess(arc))
        rate = _speed_rate(sys, p, arc.free)
        if abs(rate) < DEGENERATE_TOL:
            stab = "degenerate"
        else:
            stab = "stable" if rate < 0 else "unstable"
        sp, sm = sys.sigma_fn(p[0], p[1])
        lam = sm / (sm - sp)
        out.append(Pseudoequilibrium((float(p[0]), float(p[1])), float(s), float(lam),
                                     stab, interval.stability, float(rate)))
    return out


def _guess(arc: BoundaryArc) -> float:
    # any point of a linear boundary works; Newton handles the rest
    return 0.0


def _speed_rate(sys: PiecewiseSystem, p: np.ndarray, free: int) -> float:
    """d(speed)/ds along the arc, with s the free coordinate."""
    fixed = 1 - free
    g = sys.grad_h_value(p)
    grad = sys.sliding_speed_grad_fn(p[0], p[1])
    orient = 1.0 if (-g[1], g[0])[free] > 0 else -1.0
    return orient * (grad[free] - grad[fixed] * g[free] / g[fixed])


def _speed_at(sys: PiecewiseSystem, p: np.ndarray, free: int) -> float:
    sp, sm = sys.sigma_fn(p[0], p[1])
    lam = sm / (sm - sp)
    fp = sys.fplus_fn(p[0], p[1])
    fm = sys.fminus_fn(p[0], p[1])
    t = unit_tangent(sys, p, free)
    return (lam * fp[0] + (1 - lam) * fm[0]) * t[0] + (lam * fp[1] + (1 - lam) * fm[1]) * t[1]


# --------------------------------------------------------------------------
# Zombie classification and the boundary report

ZOMBIE_TYPES = ("DoubleTangencyZombie", "RepellingSlidingZombie", "AttractingSlidingZombie")


@dataclass(frozen=True)
class ZombieReport:
    type: str
    point: tuple[float, float]
    pseudoequilibrium: Pseudoequilibrium
    interval: SlidingInterval | None = None
    tangency: Tangency | None = None
    notes: tuple[str, ...] = ()


@dataclass
class BoundaryReport:
    model: str
    arc: tuple[float, float]
    tangencies: list[Tangency]
    sliding_intervals: list[SlidingInterval]
    pseudoequilibria: list[Pseudoequilibrium]
    zombies: list[ZombieReport]
    notes: list[str]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "arc": list(self.arc),
            "tangencies": [
                {"point": list(t.point), "side": t.side, "visibility": t.visibility,
                 "unresolved": t.unresolved} for t in self.tangencies],
            "sliding_intervals": [
                {"range": [i.lo, i.hi], "stability": i.stability} for i in self.sliding_intervals],
            "pseudoequilibria": [
                {"point": list(p.point), "lambda": p.lambda_star, "stability": p.stability}
                for p in self.pseudoequilibria],
            "zombies": [{"type": z.type, "point": list(z.point)} for z in self.zombies],
            "notes": list(self.notes),
        }


def _double_tangency_pseudoeq(sys: PiecewiseSystem, t: Tangency, free: int) -> Pseudoequilibrium | None:
    p = np.array(t.point)
    tan = unit_tangent(sys, p, free)
    vp = float(np.array(sys.fplus_fn(p[0], p[1])) @ tan)
    vm = float(np.array(sys.fminus_fn(p[0], p[1])) @ tan)
    if vp == vm or vp * vm > 0:
        return None
    lam = vm / (vm - vp)
    return Pseudoequilibrium(t.point, t.s, lam, "saddle-like", None)


def analyze_boundary(sys: PiecewiseSystem, arc: BoundaryArc | None = None,
                     resolution: int = DEFAULT_RESOLUTION) -> BoundaryReport:
    """Tangencies, sliding intervals, pseudoequilibria and zombies on ``arc``."""
    arc = arc or BoundaryArc.default(sys)
    tangencies = find_tangencies(sys, arc, resolution)
    intervals = sliding_intervals(sys, arc, tangencies, resolution)
    notes: list[str] = []
    pseudo: list[Pseudoequilibrium] = []
    zombies: list[ZombieReport] = []
    for t in tangencies:
        if t.unresolved:
            notes.append(f"tangency at s={t.s:.12g} lies on the arc end; unresolved")
        if not t.is_double:
            continue
        if t.visibility_plus == "visible" and t.visibility_minus == "visible":
            pe = _double_tangency_pseudoeq(sys, t, arc.free)
            if pe is None:
                notes.append(f"double tangency at s={t.s:.12g}: fields not opposite, no pseudoequilibrium")
                continue
            pe = Pseudoequilibrium(pe.point, pe.s, pe.lambda_star, pe.stability, None,
                                   zombie="DoubleTangencyZombie")
            pseudo.append(pe)
            zombies.append(ZombieReport("DoubleTangencyZombie", pe.point, pe, tangency=t))
        else:
            notes.append(f"double tangency at s={t.s:.12g} is {t.visibility}; not a zombie pattern")
    for iv in intervals:
        for pe in find_pseudoequilibria(sys, iv, resolution):
            kind = None
            if iv.stability == "repelling" and pe.stability == "stable":
                kind = "RepellingSlidingZombie"
            elif iv.stability == "attracting" and pe.stability == "unstable":
                kind = "AttractingSlidingZombie"
            else:
                notes.append(f"{pe.stability} pseudoequilibrium at s={pe.s:.12g} in "
                             f"{iv.stability} sliding; not a zombie pattern")
            pe = Pseudoequilibrium(pe.point, pe.s, pe.lambda_star, pe.stability,
                                   pe.sliding, pe.rate, kind)
            pseudo.append(pe)
            if kind:
                zombies.append(ZombieReport(kind, pe.point, pe, interval=iv))
    pseudo.sort(key=lambda p: p.s)
    return BoundaryReport(sys.name, (arc.lo, arc.hi), tangencies, intervals, pseudo, zombies, notes)


def classify_zombie(sys: PiecewiseSystem, arc: BoundaryArc | None = None,
                    resolution: int = DEFAULT_RESOLUTION) -> list[ZombieReport]:
    return analyze_boundary(sys, arc, resolution).zombies
