"""Command-line interface: classify, simulate, homotopy, portrait, manifolds.

Every subcommand computes a mapping of file name -> text and hands it to a
single writer, so output order and bytes are deterministic.  With
``--out -`` the primary data file goes to stdout and sidecars are skipped.
"""
from __future__ import annotations

import argparse
import json
import math
import sys as _sys
from pathlib import Path
from typing import Callable, Sequence

from . import analysis as an
from . import expr as ex
from . import filippov as fl
from . import io as zio
from . import portrait as pt
from .integrate import (BranchPolicy, IntegrationError, IntegratorConfig, integrate,
                        integrate_smoothed)
from .system import ModelError, PiecewiseSystem, build_system, smoothed_field

EXIT_OK, EXIT_NONDETERMINISTIC, EXIT_MODEL, EXIT_DEGENERATE, EXIT_INTEGRATION, EXIT_CONTINUATION = 0, 1, 2, 3, 4, 5


class CommandFailure(Exception):
    """Carries outputs already produced together with the exit code."""

    def __init__(self, code: int, message: str, outputs: dict[str, str] | None = None,
                 primary: str | None = None):
        super().__init__(message)
        self.code, self.outputs, self.primary = code, outputs or {}, primary


# --------------------------------------------------------------------------
# argument helpers

def _floats(text: str, n: int | None, what: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what}: expected comma-separated numbers, got {text!r}")
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"{what}: expected {n} numbers, got {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise argparse.ArgumentTypeError(f"{what}: values must be finite")
    return vals


def _pair(text: str) -> tuple[float, float]:
    return _floats(text, 2, "pair")  # type: ignore[return-value]


def _box(text: str) -> tuple[float, float, float, float]:
    return _floats(text, 4, "box")  # type: ignore[return-value]


def _grid(text: str) -> tuple[int, int]:
    try:
        nx, ny = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 8x8, got {text!r}")
    if nx < 1 or ny < 1:
        raise argparse.ArgumentTypeError("grid counts must be >= 1")
    return nx, ny


def _override(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"override must be key=value, got {text!r}")
    return key.strip(), value.strip()


def _overrides(pairs: Sequence[tuple[str, str]]) -> dict[str, object]:
    out: dict[str, object] = {}
    for k, v in pairs:
        try:
            out[k] = float(v)
        except ValueError:
            out[k] = v      # catalog constructor arguments such as f= or profile=
    return out


def _model(args) -> PiecewiseSystem:
    return build_system(args.model, _overrides(args.p or []))


def _cfg(args) -> IntegratorConfig:
    kw = {}
    if args.rel_tol is not None:
        kw["rel_tol"] = args.rel_tol
    if args.abs_tol is not None:
        kw["abs_tol"] = args.abs_tol
    if getattr(args, "max_step", None) is not None:
        kw["max_step"] = args.max_step
    return IntegratorConfig(**kw)


def _scale(sys: PiecewiseSystem, a: float | None) -> float:
    if a is None:
        return sys.scale_value
    if a < 0:
        raise ModelError("smoothing scale must be >= 0")
    if a > 0 and sys.smoothing is None:
        raise ModelError(f"model {sys.name!r} has no smoothing family")
    return a


def _h(sys: PiecewiseSystem) -> Callable:
    return sys.h_value


# --------------------------------------------------------------------------
# subcommands: each returns (outputs, primary file name)

def cmd_classify(args) -> tuple[dict[str, str], str]:
    sys = _model(args)
    arc = fl.BoundaryArc.default(sys, *(args.arc or (None, None)))
    report = fl.analyze_boundary(sys, arc, args.resolution)
    name = f"{sys.name}_boundary.json"
    return {name: zio.boundary_json(report)}, name


def cmd_simulate(args) -> tuple[dict[str, str], str]:
    sys = _model(args)
    cfg = _cfg(args)
    a = _scale(sys, args.a)
    t_span = (args.t0, args.t1)
    csv_name, ev_name = f"{sys.name}_trajectory.csv", f"{sys.name}_events.json"
    try:
        if a > 0:
            tr = integrate_smoothed(smoothed_field(sys, a), args.x0, t_span, cfg)
        else:
            policy = BranchPolicy(args.policy.replace("-", "_"),
                                  args.exit_after if args.policy != "stay" else 0.0)
            tr = integrate(sys, args.x0, t_span, policy, cfg)
    except IntegrationError as exc:
        outputs = {}
        if exc.trajectory is not None:
            outputs = {csv_name: zio.trajectory_csv(exc.trajectory, _h(sys)),
                       ev_name: zio.events_json(exc.trajectory.events)}
        raise CommandFailure(EXIT_INTEGRATION, f"integration failed: {exc}", outputs, csv_name)
    return {csv_name: zio.trajectory_csv(tr, _h(sys)), ev_name: zio.events_json(tr.events)}, csv_name


def cmd_homotopy(args) -> tuple[dict[str, str], str]:
    sys = _model(args)
    if sys.smoothing is None:
        raise ModelError(f"model {sys.name!r} has no smoothing family")
    if args.param is not None and args.param != sys.smoothing.scale:
        raise ModelError(f"--param must name the smoothing scale {sys.smoothing.scale!r}")
    sched = an.log_schedule(args.a_from, args.a_to, args.steps)
    csv_name, sum_name = f"{sys.name}_homotopy.csv", f"{sys.name}_homotopy.json"
    try:
        path = an.homotopy_track(sys, sched, args.seed, args.box)
    except an.ContinuationError as exc:
        outputs = {csv_name: zio.homotopy_csv(exc.path),
                   sum_name: _summary(exc.path, exc.last_good_a)}
        raise CommandFailure(EXIT_CONTINUATION, str(exc), outputs, csv_name)
    summary = _summary(path, None)
    lim = path.limit_estimate
    _sys.stderr.write(f"limit_estimate={'none' if lim is None else f'{lim[0]!r},{lim[1]!r}'}\n")
    return {csv_name: zio.homotopy_csv(path), sum_name: summary}, csv_name


def _summary(path: an.HomotopyPath, last_good: float | None) -> str:
    d = {"limit_estimate": None if path.limit_estimate is None else list(path.limit_estimate),
         "boundary_layer_index": path.boundary_layer_index,
         "rows": len(path.rows), "last_good_a": last_good}
    return json.dumps(d, indent=2) + "\n"


def _analogue_files(sys: PiecewiseSystem, analogues, prefix: str) -> dict[str, str]:
    out = {}
    for i, m in enumerate(analogues):
        side = {"+": "_plus", "-": "_minus"}.get(m.side or "", "")
        out[f"{prefix}_manifold_{i:02d}_{m.role}_{m.kind}{side}.csv"] = zio.manifold_csv(m, _h(sys))
    return out


def _all_analogues(sys: PiecewiseSystem, horizon: float, box, cfg, arc=None):
    report = fl.analyze_boundary(sys, arc)
    found = []
    for z in report.zombies:
        found += an.manifold_analogues(sys, z, horizon, box, cfg)
    return report, found


def cmd_portrait(args) -> tuple[dict[str, str], str]:
    sys = _model(args)
    cfg = _cfg(args)
    a = _scale(sys, args.a)
    box = args.box or pt.default_box(sys)
    include = frozenset(args.include.split(",")) if args.include else frozenset(pt.INCLUDE)
    try:
        spec = pt.PortraitSpec(box, args.grid, args.t_forward, args.t_backward, include)
    except ValueError as exc:
        raise ModelError(str(exc)) from None
    policy = BranchPolicy()
    runs = pt.run_grid(sys, spec, a, cfg, policy)
    lines = pt.nullclines(sys, box, a) if "nullclines" in include else []
    report, analogues = None, []
    if a > 0:
        equilibria = an.find_equilibria(smoothed_field(sys, a), box)
    else:
        equilibria = an.proper_equilibria_nonsmooth(sys, box)
        if "manifold_analogues" in include:
            report, analogues = _all_analogues(sys, spec.t_forward, box, cfg)
        else:
            report = fl.analyze_boundary(sys)
    m = sys.name
    outputs: dict[str, str] = {}
    runs_meta = []
    failed = []
    for r in runs:
        fname = f"{m}_traj_{r.index:03d}.csv"
        if r.trajectory is not None:
            outputs[fname] = zio.trajectory_csv(r.trajectory, _h(sys))
        runs_meta.append({"run": r.index, "x0": list(r.x0), "direction": r.direction,
                          "file": fname if r.trajectory is not None else None, "error": r.error,
                          "events": json.loads(zio.events_json(r.trajectory.events)) if r.trajectory else []})
        if r.error:
            failed.append(r.index)
    outputs[f"{m}_events.json"] = json.dumps(runs_meta, indent=2) + "\n"
    if lines:
        outputs[f"{m}_nullclines.csv"] = zio.nullclines_csv(lines)
    if report is not None:
        outputs[f"{m}_boundary.json"] = zio.boundary_json(report)
    outputs.update(_analogue_files(sys, analogues, m))
    svg_name = f"{m}_portrait.svg"
    outputs[svg_name] = pt.render_svg(sys, spec, runs, lines, report, equilibria, analogues,
                                      title=m if a == 0 else f"{m} ({sys.smoothing.scale}={a:g})")
    if failed:
        raise CommandFailure(EXIT_INTEGRATION, f"{len(failed)} grid run(s) failed: {failed}",
                             outputs, svg_name)
    return outputs, svg_name


def cmd_manifolds(args) -> tuple[dict[str, str], str]:
    sys = _model(args)
    cfg = _cfg(args)
    arc = fl.BoundaryArc.default(sys, *(args.arc or (None, None)))
    report, analogues = _all_analogues(sys, args.horizon, args.box, cfg, arc)
    outputs = _analogue_files(sys, analogues, sys.name)
    index = [{"file": f, "role": m.role, "kind": m.kind, "side": m.side,
              "attached_to": list(m.attached_to.point), "truncated": m.truncated,
              "terminated_by": m.trajectory.terminated_by}
             for f, m in zip(outputs, analogues)]
    idx_name = f"{sys.name}_manifolds.json"
    outputs[idx_name] = json.dumps(index, indent=2) + "\n"
    return outputs, idx_name


# --------------------------------------------------------------------------
# parser and driver

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, help="catalog name or path to a model JSON file")
    common.add_argument("-p", action="append", type=_override, metavar="KEY=VAL",
                        help="parameter override (repeatable)")
    common.add_argument("--out", default=None, metavar="DIR|-",
                        help="output directory, or - for stdout")
    common.add_argument("--rel-tol", type=float, default=None)
    common.add_argument("--abs-tol", type=float, default=None)
    common.add_argument("--seedless", action="store_true",
                        help="compute twice and fail unless outputs are byte-identical")

    ap = argparse.ArgumentParser(prog="zombiesaddle",
                                 description="Filippov systems and zombie saddles")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("classify", parents=[common], help="boundary report of the nonsmooth system")
    c.add_argument("--arc", type=_pair, default=None, help="lo,hi of the boundary parameter")
    c.add_argument("--resolution", type=int, default=fl.DEFAULT_RESOLUTION)
    c.set_defaults(func=cmd_classify, stdout_default=True)

    s = sub.add_parser("simulate", parents=[common], help="integrate one trajectory")
    s.add_argument("--x0", type=_pair, required=True)
    s.add_argument("--t0", type=float, default=0.0)
    s.add_argument("--t1", type=float, required=True)
    s.add_argument("--a", type=float, default=None, help="smoothing scale (0: nonsmooth)")
    s.add_argument("--policy", choices=("stay", "exit-plus", "exit-minus"), default="stay")
    s.add_argument("--exit-after", type=float, default=0.0)
    s.add_argument("--max-step", type=float, default=None)
    s.set_defaults(func=cmd_simulate, stdout_default=True)

    h = sub.add_parser("homotopy", parents=[common], help="track the saddle as the scale shrinks")
    h.add_argument("--param", default=None, help="smoothing scale name (checked against the model)")
    h.add_argument("--from", dest="a_from", type=float, required=True)
    h.add_argument("--to", dest="a_to", type=float, required=True)
    h.add_argument("--steps", type=int, default=40)
    h.add_argument("--seed", type=_pair, default=None)
    h.add_argument("--box", type=_box, default=None)
    h.set_defaults(func=cmd_homotopy, stdout_default=True)

    p = sub.add_parser("portrait", parents=[common], help="phase portrait CSVs and SVG")
    p.add_argument("--box", type=_box, default=None, help="x_lo,x_hi,y_lo,y_hi")
    p.add_argument("--grid", type=_grid, default=(8, 8))
    p.add_argument("--t-forward", "--t1", dest="t_forward", type=float, default=10.0)
    p.add_argument("--t-backward", type=float, default=0.0)
    p.add_argument("--include", default=None, help=f"comma list from {','.join(pt.INCLUDE)}")
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--max-step", type=float, default=None)
    p.set_defaults(func=cmd_portrait, stdout_default=False)

    m = sub.add_parser("manifolds", parents=[common], help="manifold-analogue CSVs")
    m.add_argument("--horizon", type=float, default=5.0)
    m.add_argument("--box", type=_box, default=None, help="truncate orbits leaving this box")
    m.add_argument("--arc", type=_pair, default=None)
    m.add_argument("--max-step", type=float, default=None)
    m.set_defaults(func=cmd_manifolds, stdout_default=False)
    return ap


def _emit(outputs: dict[str, str], primary: str | None, out: str | None, stdout_default: bool) -> None:
    to_stdout = out == "-" or (out is None and stdout_default)
    if to_stdout:
        if primary is not None and primary in outputs:
            _sys.stdout.write(outputs[primary])
            skipped = [n for n in outputs if n != primary]
            if skipped:
                _sys.stderr.write(f"stdout mode: not written: {', '.join(skipped)}\n")
        return
    d = Path(out or ".")
    d.mkdir(parents=True, exist_ok=True)
    for name, text in outputs.items():
        with open(d / name, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


_VECTOR_OPTIONS = ("--box", "--x0", "--arc", "--seed")


def _attach_vectors(argv: Sequence[str]) -> list[str]:
    """``--box -3,3,-3,3`` -> ``--box=-3,3,-3,3`` (argparse reads a leading
    minus as an option)."""
    out: list[str] = []
    it = iter(argv)
    for tok in it:
        if tok in _VECTOR_OPTIONS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(_sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(_attach_vectors(argv))
    code, outputs, primary, message = EXIT_OK, {}, None, None
    try:
        outputs, primary = args.func(args)
        if args.seedless:
            again, _ = args.func(args)
            if again != outputs:
                diff = sorted(k for k in set(again) | set(outputs) if again.get(k) != outputs.get(k))
                _sys.stderr.write(f"error: outputs differ between identical runs: {diff}\n")
                return EXIT_NONDETERMINISTIC
    except CommandFailure as exc:
        code, outputs, primary, message = exc.code, exc.outputs, exc.primary, str(exc)
    except (ModelError, ex.ExprSyntaxError, KeyError, ValueError) as exc:
        code, message = EXIT_MODEL, f"model error: {exc.args[0] if exc.args else exc}"
    except fl.DegenerateError as exc:
        code, message = EXIT_DEGENERATE, f"degenerate: {exc}"
    except IntegrationError as exc:
        code, message = EXIT_INTEGRATION, f"integration failed: {exc}"
    if outputs:
        _emit(outputs, primary, args.out, args.stdout_default)
    if message:
        _sys.stderr.write(message + "\n")
    return code


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
