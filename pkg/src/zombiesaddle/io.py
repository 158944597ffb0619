"""CSV and JSON emitters with matching readers.

Numbers are written with ``repr`` (shortest round-trip form), so reading a
file back reproduces the floats exactly and identical runs give identical
bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from typing import Any, Callable, Iterable, Sequence, TextIO

from .integrate import EVENT_KINDS, Event, Trajectory

__all__ = [
    "TRAJECTORY_HEADER", "HOMOTOPY_HEADER", "NULLCLINE_HEADER", "SchemaError",
    "trajectory_csv", "read_trajectory_csv", "events_json", "read_events_json",
    "homotopy_csv", "read_homotopy_csv", "manifold_csv", "read_manifold_csv",
    "boundary_json", "read_boundary_json", "nullclines_csv", "read_nullclines_csv",
    "fmt",
]

TRAJECTORY_HEADER = ("t", "x", "y", "mode", "lambda")
HOMOTOPY_HEADER = ("a", "x", "y", "det", "trace", "class")
NULLCLINE_HEADER = ("field", "component", "polyline", "x", "y")
MODES = ("plus", "minus", "slide")
CLASSES = ("saddle", "stable node", "unstable node", "stable focus", "unstable focus",
           "degenerate", "absent")


class SchemaError(ValueError):
    pass


def fmt(v: float) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def _writer(buf: TextIO):
    return csv.writer(buf, lineterminator="\n")


def _num(text: str, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise SchemaError(f"{what}: not a number: {text!r}") from None


# --------------------------------------------------------------------------
# Trajectories

def trajectory_csv(tr: Trajectory, h: Callable[[Sequence[float]], float] | None = None) -> str:
    """``t,x,y,mode,lambda``; smooth samples are labelled by the sign of ``h``."""
    buf = io.StringIO()
    w = _writer(buf)
    w.writerow(TRAJECTORY_HEADER)
    for t, x, y, mode, lam in tr.rows():
        if mode == "smooth":
            mode = "plus" if h is None or h((x, y)) >= 0 else "minus"
        w.writerow([fmt(t), fmt(x), fmt(y), mode, "" if lam is None else fmt(lam)])
    return buf.getvalue()


def _read_rows(text: str, header: Sequence[str], what: str) -> list[list[str]]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows or tuple(rows[0]) != tuple(header):
        raise SchemaError(f"{what}: header must be {','.join(header)}")
    for i, r in enumerate(rows[1:], 2):
        if len(r) != len(header):
            raise SchemaError(f"{what}: row {i} has {len(r)} fields, expected {len(header)}")
    return rows[1:]


def read_trajectory_csv(text: str) -> list[tuple[float, float, float, str, float | None]]:
    out = []
    for r in _read_rows(text, TRAJECTORY_HEADER, "trajectory CSV"):
        mode = r[3]
        if mode not in MODES:
            raise SchemaError(f"trajectory CSV: unknown mode {mode!r}")
        lam = None
        if r[4] != "":
            if mode != "slide":
                raise SchemaError("trajectory CSV: lambda given outside a slide row")
            lam = _num(r[4], "lambda")
            if not 0.0 <= lam <= 1.0:
                raise SchemaError("trajectory CSV: lambda outside [0, 1]")
        elif mode == "slide":
            raise SchemaError("trajectory CSV: slide row without lambda")
        out.append((_num(r[0], "t"), _num(r[1], "x"), _num(r[2], "y"), mode, lam))
    return out


def events_json(events: Iterable[Event]) -> str:
    data = [{"t": e.t, "kind": e.kind, "state": list(e.state)} for e in events]
    return json.dumps(data, indent=2) + "\n"


def read_events_json(text: str) -> list[Event]:
    data = json.loads(text)
    if not isinstance(data, list):
        raise SchemaError("events JSON: top level must be a list")
    out = []
    for d in data:
        if set(d) != {"t", "kind", "state"} or d["kind"] not in EVENT_KINDS or len(d["state"]) != 2:
            raise SchemaError(f"events JSON: bad event {d!r}")
        out.append(Event(float(d["t"]), d["kind"], (float(d["state"][0]), float(d["state"][1]))))
    return out


# --------------------------------------------------------------------------
# Homotopy paths

def homotopy_csv(path) -> str:
    buf = io.StringIO()
    w = _writer(buf)
    w.writerow(HOMOTOPY_HEADER)
    nan = float("nan")
    for row in path.rows:
        e = row.equilibrium
        if e is None:
            w.writerow([fmt(row.a), fmt(nan), fmt(nan), fmt(nan), fmt(nan), "absent"])
        else:
            w.writerow([fmt(row.a), fmt(e.location[0]), fmt(e.location[1]),
                        fmt(e.det), fmt(e.trace), e.cls])
    return buf.getvalue()


def read_homotopy_csv(text: str) -> list[dict[str, Any]]:
    out = []
    for r in _read_rows(text, HOMOTOPY_HEADER, "homotopy CSV"):
        if r[5] not in CLASSES:
            raise SchemaError(f"homotopy CSV: unknown class {r[5]!r}")
        out.append({"a": _num(r[0], "a"), "x": _num(r[1], "x"), "y": _num(r[2], "y"),
                    "det": _num(r[3], "det"), "trace": _num(r[4], "trace"), "class": r[5]})
    return out


# --------------------------------------------------------------------------
# Manifold analogues

def manifold_csv(analogue, h: Callable[[Sequence[float]], float] | None = None) -> str:
    head = f"# role={analogue.role},kind={analogue.kind}"
    if analogue.side:
        head += f",side={analogue.side}"
    if analogue.truncated:
        head += ",truncated=true"
    return head + "\n" + trajectory_csv(analogue.trajectory, h)


def read_manifold_csv(text: str) -> tuple[dict[str, str], list]:
    first, _, rest = text.partition("\n")
    if not first.startswith("# "):
        raise SchemaError("manifold CSV: missing '# role=...,kind=...' line")
    meta = dict(kv.split("=", 1) for kv in first[2:].split(","))
    if meta.get("role") not in ("stable", "unstable") or meta.get("kind") not in (
            "side_orbit", "sliding_segment", "tangency_orbit"):
        raise SchemaError(f"manifold CSV: bad header {first!r}")
    return meta, read_trajectory_csv(rest)


# --------------------------------------------------------------------------
# Boundary report

_REPORT_KEYS = {"model", "arc", "tangencies", "sliding_intervals", "pseudoequilibria", "zombies", "notes"}


def boundary_json(report) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def read_boundary_json(text: str) -> dict[str, Any]:
    d = json.loads(text)
    if not isinstance(d, dict) or set(d) != _REPORT_KEYS:
        raise SchemaError("boundary report: unexpected keys")
    for t in d["tangencies"]:
        if set(t) != {"point", "side", "visibility", "unresolved"} or t["side"] not in ("+", "-", "double"):
            raise SchemaError(f"boundary report: bad tangency {t!r}")
    for s in d["sliding_intervals"]:
        if set(s) != {"range", "stability"} or s["stability"] not in ("attracting", "repelling"):
            raise SchemaError(f"boundary report: bad interval {s!r}")
        if not s["range"][0] < s["range"][1]:
            raise SchemaError("boundary report: empty interval")
    for p in d["pseudoequilibria"]:
        if set(p) != {"point", "lambda", "stability"} or not 0.0 <= p["lambda"] <= 1.0:
            raise SchemaError(f"boundary report: bad pseudoequilibrium {p!r}")
    for z in d["zombies"]:
        if set(z) != {"type", "point"}:
            raise SchemaError(f"boundary report: bad zombie {z!r}")
    return d


# --------------------------------------------------------------------------
# Nullclines

def nullclines_csv(lines: Sequence[tuple[str, int, Sequence[Sequence[float]]]]) -> str:
    """Rows ``field,component,polyline,x,y``; one polyline index per curve."""
    buf = io.StringIO()
    w = _writer(buf)
    w.writerow(NULLCLINE_HEADER)
    for k, (fieldname, comp, pts) in enumerate(lines):
        for x, y in pts:
            w.writerow([fieldname, comp, k, fmt(x), fmt(y)])
    return buf.getvalue()


def read_nullclines_csv(text: str) -> list[tuple[str, int, list[tuple[float, float]]]]:
    curves: dict[int, tuple[str, int, list]] = {}
    for r in _read_rows(text, NULLCLINE_HEADER, "nullcline CSV"):
        k = int(r[2])
        curves.setdefault(k, (r[0], int(r[1]), []))[2].append((_num(r[3], "x"), _num(r[4], "y")))
    return [curves[k] for k in sorted(curves)]
