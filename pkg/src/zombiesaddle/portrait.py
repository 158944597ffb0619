"""Phase portraits: grid runs, per-side nullclines and an SVG rendering."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import filippov as fl
from .integrate import (BranchPolicy, IntegrationError, IntegratorConfig, Trajectory,
                        integrate, integrate_smoothed)
from .system import PiecewiseSystem, SmoothField, smoothed_field

__all__ = ["INCLUDE", "PortraitSpec", "GridRun", "grid_points", "run_grid", "nullclines",
           "render_svg", "default_box"]

INCLUDE = ("nullclines", "sliding_intervals", "tangencies", "equilibria", "manifold_analogues")
SVG_SALT = "zombiesaddle"


@dataclass(frozen=True)
class PortraitSpec:
    box: tuple[float, float, float, float]
    grid: tuple[int, int] = (8, 8)
    t_forward: float = 10.0
    t_backward: float = 0.0
    include: frozenset[str] = frozenset(INCLUDE)

    def __post_init__(self):
        x0, x1, y0, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise ValueError("box needs lo < hi on both axes")
        if self.grid[0] < 1 or self.grid[1] < 1:
            raise ValueError("grid counts must be >= 1")
        if not self.t_forward > 0 or self.t_backward < 0:
            raise ValueError("forward horizon must be > 0 and backward horizon >= 0")
        unknown = set(self.include) - set(INCLUDE)
        if unknown:
            raise ValueError(f"unknown include items {sorted(unknown)}")


def default_box(sys: PiecewiseSystem) -> tuple[float, float, float, float]:
    if sys.box is not None:
        return sys.box
    arc = fl.BoundaryArc.default(sys)
    mid = arc.point(0.5 * (arc.lo + arc.hi))
    half = 0.5 * (arc.hi - arc.lo)
    fixed = mid[arc.fixed]
    return (fixed - half, fixed + half, arc.lo, arc.hi)


def grid_points(box: Sequence[float], grid: tuple[int, int]) -> list[tuple[float, float]]:
    """Cell centres of an ``nx`` x ``ny`` grid over ``box``, rows in y."""
    x0, x1, y0, y1 = box
    nx, ny = grid
    xs = [x0 + (i + 0.5) * (x1 - x0) / nx for i in range(nx)]
    ys = [y0 + (j + 0.5) * (y1 - y0) / ny for j in range(ny)]
    return [(x, y) for y in ys for x in xs]


@dataclass
class GridRun:
    index: int
    x0: tuple[float, float]
    direction: str              # forward | backward
    trajectory: Trajectory | None
    error: str | None = None


def run_grid(sys: PiecewiseSystem, spec: PortraitSpec, a: float = 0.0,
             cfg: IntegratorConfig | None = None, policy: BranchPolicy | None = None) -> list[GridRun]:
    """Integrate from every grid point; failures keep their partial trajectory."""
    cfg = cfg or IntegratorConfig()
    fld = smoothed_field(sys, a) if a > 0 else None
    runs: list[GridRun] = []
    spans = [("forward", spec.t_forward)]
    if spec.t_backward > 0:
        spans.append(("backward", -spec.t_backward))
    k = 0
    for x0 in grid_points(spec.box, spec.grid):
        for direction, t1 in spans:
            try:
                if fld is not None:
                    tr = integrate_smoothed(fld, x0, (0.0, t1), cfg)
                else:
                    tr = integrate(sys, x0, (0.0, t1), policy, cfg)
                runs.append(GridRun(k, x0, direction, tr))
            except IntegrationError as exc:
                runs.append(GridRun(k, x0, direction, exc.trajectory, str(exc)))
            k += 1
    return runs


def _grid_values(fn, xs: np.ndarray, ys: np.ndarray, n_out: int) -> np.ndarray:
    out = np.empty((n_out, ys.size, xs.size))
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            try:
                out[:, j, i] = fn(float(x), float(y))
            except ArithmeticError:
                out[:, j, i] = np.nan
    return out


def nullclines(sys: PiecewiseSystem, box: Sequence[float], a: float = 0.0,
               resolution: int = 161) -> list[tuple[str, int, np.ndarray]]:
    """Zero contours of each field component as (field, component, polyline).

    For the nonsmooth system each side's field is contoured only inside its
    own region, so the jump across h = 0 stays visible.
    """
    import contourpy

    xs = np.linspace(box[0], box[1], resolution)
    ys = np.linspace(box[2], box[3], resolution)
    hv = _grid_values(sys.h_fn, xs, ys, 1)[0]
    if a > 0:
        comps = [("smooth", _grid_values(smoothed_field(sys, a).fun, xs, ys, 2), None)]
    else:
        comps = [("plus", _grid_values(sys.fplus_fn, xs, ys, 2), hv < 0),
                 ("minus", _grid_values(sys.fminus_fn, xs, ys, 2), hv > 0)]
    out = []
    for name, vals, mask in comps:
        for c in range(2):
            z = vals[c]
            bad = ~np.isfinite(z)
            if mask is not None:
                bad = bad | mask
            zz = np.ma.array(z, mask=bad) if bad.any() else z
            gen = contourpy.contour_generator(xs, ys, zz)
            for line in gen.lines(0.0):
                if len(line) >= 2:
                    out.append((name, c, np.asarray(line)))
    return out


_MODE_STYLE = {"plus": ("#1f77b4", 0.9), "minus": ("#1f77b4", 0.9), "smooth": ("#1f77b4", 0.9),
               "slide": ("#d62728", 2.0)}


def render_svg(sys: PiecewiseSystem, spec: PortraitSpec, runs: Sequence[GridRun],
               lines: Sequence[tuple[str, int, np.ndarray]] = (),
               report: fl.BoundaryReport | None = None,
               equilibria: Sequence = (), analogues: Sequence = (),
               title: str | None = None) -> str:
    """Deterministic SVG text of the portrait."""
    import matplotlib
    from matplotlib.figure import Figure

    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none",
                                "path.simplify": False}):
        fig = Figure(figsize=(6.0, 5.0))
        ax = fig.add_subplot(1, 1, 1)
        x0, x1, y0, y1 = spec.box
        for r in runs:
            if r.trajectory is None:
                continue
            for seg in r.trajectory.segments:
                color, lw = _MODE_STYLE[seg.mode]
                ax.plot(seg.states[:, 0], seg.states[:, 1], color=color, lw=lw)
        if "nullclines" in spec.include:
            for name, comp, pts in lines:
                ax.plot(pts[:, 0], pts[:, 1], ls="--", lw=0.8,
                        color="#2ca02c" if comp == 0 else "#9467bd")
        # the switching manifold itself
        hv = _grid_values(sys.h_fn, np.linspace(x0, x1, 81), np.linspace(y0, y1, 81), 1)[0]
        ax.contour(np.linspace(x0, x1, 81), np.linspace(y0, y1, 81), hv, levels=[0.0],
                   colors="0.4", linewidths=0.8)
        if report is not None:
            arc = fl.BoundaryArc(sys, report.arc[0], report.arc[1])
            if "sliding_intervals" in spec.include:
                for iv in report.sliding_intervals:
                    ss = np.linspace(iv.lo, iv.hi, 50)
                    pts = np.array([arc.point(float(s)) for s in ss])
                    ax.plot(pts[:, 0], pts[:, 1], lw=3.0,
                            color="#ff7f0e" if iv.stability == "repelling" else "#17becf")
            if "tangencies" in spec.include:
                for t in report.tangencies:
                    ax.plot([t.point[0]], [t.point[1]], marker="s", ms=6, color="k", ls="none")
            for pe in report.pseudoequilibria:
                ax.plot([pe.point[0]], [pe.point[1]], marker="*", ms=11, color="#e377c2", ls="none")
        if "manifold_analogues" in spec.include:
            for m in analogues:
                st = m.trajectory.states()
                ax.plot(st[:, 0], st[:, 1], lw=2.2,
                        color="#8c564b" if m.role == "stable" else "#bcbd22")
        if "equilibria" in spec.include:
            for e in equilibria:
                filled = e.cls.startswith("stable")
                ax.plot([e.location[0]], [e.location[1]], marker="o", ms=6, ls="none",
                        color="k", mfc="k" if filled else "w")
        ax.set_xlim(x0, x1)
        ax.set_ylim(y0, y1)
        ax.set_xlabel(sys.variables[0])
        ax.set_ylabel(sys.variables[1])
        ax.set_title(title or sys.name)
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()
