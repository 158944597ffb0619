"""Planar piecewise-smooth systems, smoothing families and smoothed fields.

A :class:`PiecewiseSystem` holds two smooth planar fields, ``f_plus`` on
``h > 0`` and ``f_minus`` on ``h < 0``, with the switching function ``h``.
The discontinuous term is assumed to enter both fields linearly, so the
smoothed system for scale ``a > 0`` is::

    F_a = f_minus + lam_a * (f_plus - f_minus),
    lam_a = (g(h / a) - g_minus_0) / (g_plus_0 - g_minus_0)
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import expr as ex
from .expr import Expression

__all__ = [
    "ModelError", "SmoothingFamily", "PiecewiseSystem", "SmoothField",
    "build_system", "smoothed_field", "one_sided_eval", "load_definition",
    "dump_definition", "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1
PROFILE_VARIABLE = "xi"
# monotonicity is sampled here; saturation is checked at +-50
MONOTONE_GRID = np.linspace(-10.0, 10.0, 401)
SATURATION_XI = 50.0
SATURATION_TOL = 1e-6

_DEF_KEYS = {"name", "variables", "h", "f_plus", "f_minus", "parameters",
             "smoothing", "schema_version", "arc", "reduced", "box"}
_SMOOTHING_KEYS = {"profile", "g_plus_0", "g_minus_0", "scale", "scale_value"}


class ModelError(ValueError):
    """Malformed or inconsistent model definition."""


@dataclass(frozen=True)
class SmoothingFamily:
    """Monotone profile ``g`` with scale ``a``: ``g_a(s) = g(s / a)``."""

    profile: Expression
    a: float
    g_plus_0: float = 1.0
    g_minus_0: float = -1.0

    def __post_init__(self):
        if not self.a > 0.0:
            raise ValueError(f"smoothing scale must be positive, got {self.a}")
        _check_profile(self.profile, self.g_plus_0, self.g_minus_0)

    @classmethod
    def from_text(cls, profile: str = "tanh(xi)", a: float = 1.0,
                  g_plus_0: float = 1.0, g_minus_0: float = -1.0) -> "SmoothingFamily":
        return cls(ex.parse(profile, (PROFILE_VARIABLE,)), a, g_plus_0, g_minus_0)

    @cached_property
    def _g(self):
        return ex.compile_vector([self.profile], (PROFILE_VARIABLE,), {})

    @cached_property
    def _dg(self):
        return ex.compile_vector([ex.differentiate(self.profile, PROFILE_VARIABLE)],
                                 (PROFILE_VARIABLE,), {})

    def g(self, xi: float) -> float:
        return self._g(xi)[0]

    def dg(self, xi: float) -> float:
        return self._dg(xi)[0]

    def g_a(self, s: float) -> float:
        return self.g(s / self.a)

    def with_scale(self, a: float) -> "SmoothingFamily":
        return replace(self, a=a)


def _check_profile(profile: Expression, gp: float, gm: float) -> None:
    vs, ps = ex.identifiers(profile)
    if ps or vs - {PROFILE_VARIABLE}:
        raise ModelError(f"smoothing profile may only use {PROFILE_VARIABLE!r}")
    if not gm < gp:
        raise ModelError("need g_minus_0 < g_plus_0 for an increasing profile")
    dg = ex.differentiate(profile, PROFILE_VARIABLE)
    for xi in MONOTONE_GRID:
        if not ex.evaluate(dg, {PROFILE_VARIABLE: float(xi)}) > 0.0:
            raise ModelError(f"profile is not increasing at xi={xi:g}")
    hi = ex.evaluate(profile, {PROFILE_VARIABLE: SATURATION_XI})
    lo = ex.evaluate(profile, {PROFILE_VARIABLE: -SATURATION_XI})
    if abs(hi - gp) > SATURATION_TOL or abs(lo - gm) > SATURATION_TOL:
        raise ModelError(
            f"profile limits ({lo:g}, {hi:g}) do not match g_minus_0={gm:g}, g_plus_0={gp:g}")


@dataclass(frozen=True)
class SmoothingSpec:
    """Smoothing data stored in a model definition (scale value 0 = nonsmooth)."""

    profile: Expression
    g_plus_0: float = 1.0
    g_minus_0: float = -1.0
    scale: str = "a"
    scale_value: float = 0.0

    def family(self, a: float | None = None) -> SmoothingFamily:
        return SmoothingFamily(self.profile, self.scale_value if a is None else a,
                               self.g_plus_0, self.g_minus_0)


@dataclass(frozen=True)
class PiecewiseSystem:
    name: str
    variables: tuple[str, str]
    h: Expression
    f_plus: tuple[Expression, Expression]
    f_minus: tuple[Expression, Expression]
    parameters: Mapping[str, float]
    smoothing: SmoothingSpec | None = None
    arc: tuple[float, float] | None = None
    reduced: Expression | None = None
    box: tuple[float, float, float, float] | None = None
    definition: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)
    dimension: int = 2

    # symbolic derived quantities -------------------------------------------
    @cached_property
    def grad_h(self) -> tuple[Expression, Expression]:
        return tuple(ex.differentiate(self.h, v) for v in self.variables)  # type: ignore[return-value]

    def _dot_grad(self, fvec: Sequence[Expression], scalar: Expression) -> Expression:
        terms = [ex.mul(fi, ex.differentiate(scalar, v)) for fi, v in zip(fvec, self.variables)]
        return ex.add(terms[0], terms[1])

    @cached_property
    def sigma_exprs(self) -> tuple[Expression, Expression]:
        """Normal components ``f_plus . grad h`` and ``f_minus . grad h``."""
        return (self._dot_grad(self.f_plus, self.h), self._dot_grad(self.f_minus, self.h))

    @cached_property
    def lie2_exprs(self) -> tuple[Expression, Expression]:
        """Second Lie derivatives ``(f . grad)(f . grad h)`` for each side."""
        sp, sm = self.sigma_exprs
        return (self._dot_grad(self.f_plus, sp), self._dot_grad(self.f_minus, sm))

    @cached_property
    def sliding_speed_grad_exprs(self) -> tuple[Expression, Expression]:
        """Gradient of ``F_s . (-h_y, h_x) / |grad h|`` with ``F_s`` the Filippov combination.

        The expression is smooth near a sliding arc, so its derivative along the
        arc is exact there; the caller fixes the tangent orientation.
        """
        sp, sm = self.sigma_exprs
        lam = ex.div(sm, ex.sub(sm, sp))
        hx, hy = self.grad_h
        fs = [ex.add(ex.mul(lam, a), ex.mul(ex.sub(ex.Num(1.0), lam), b))
              for a, b in zip(self.f_plus, self.f_minus)]
        norm = ex.call("sqrt", ex.add(ex.mul(hx, hx), ex.mul(hy, hy)))
        speed = ex.div(ex.add(ex.mul(fs[0], ex.neg(hy)), ex.mul(fs[1], hx)), norm)
        return tuple(ex.differentiate(speed, v) for v in self.variables)  # type: ignore[return-value]

    # compiled callables -----------------------------------------------------
    def _compile(self, exprs: Iterable[Expression]):
        return ex.compile_vector(exprs, self.variables, self.parameters)

    @cached_property
    def fplus_fn(self):
        return self._compile(self.f_plus)

    @cached_property
    def fminus_fn(self):
        return self._compile(self.f_minus)

    @cached_property
    def h_fn(self):
        return self._compile([self.h])

    @cached_property
    def gradh_fn(self):
        return self._compile(self.grad_h)

    @cached_property
    def sigma_fn(self):
        return self._compile(self.sigma_exprs)

    @cached_property
    def lie2_fn(self):
        return self._compile(self.lie2_exprs)

    @cached_property
    def sliding_speed_grad_fn(self):
        return self._compile(self.sliding_speed_grad_exprs)

    # numeric conveniences ---------------------------------------------------
    def h_value(self, state: Sequence[float]) -> float:
        return self.h_fn(state[0], state[1])[0]

    def grad_h_value(self, state: Sequence[float]) -> np.ndarray:
        return np.array(self.gradh_fn(state[0], state[1]))

    def field(self, side: str):
        if side in ("+", "plus"):
            return self.fplus_fn
        if side in ("-", "minus"):
            return self.fminus_fn
        raise ValueError(f"side must be '+' or '-', got {side!r}")

    def with_parameters(self, **overrides: float) -> "PiecewiseSystem":
        return build_system(self.definition, overrides)

    def reversed(self) -> "PiecewiseSystem":
        """The time-reversed system (both fields negated)."""
        fp = tuple(ex.neg(e) for e in self.f_plus)
        fm = tuple(ex.neg(e) for e in self.f_minus)
        return replace(self, name=self.name + "~reversed", f_plus=fp, f_minus=fm)

    @property
    def is_smoothable(self) -> bool:
        return self.smoothing is not None

    @property
    def scale_value(self) -> float:
        return self.smoothing.scale_value if self.smoothing else 0.0


def one_sided_eval(sys: PiecewiseSystem, side: str, state: Sequence[float]) -> np.ndarray:
    """Evaluate ``f^side`` at ``state`` (fields are defined on the closure)."""
    return np.array(sys.field(side)(float(state[0]), float(state[1])))


@dataclass(frozen=True)
class SmoothField:
    """A single smooth planar field ``F_a`` with its symbolic Jacobian."""

    name: str
    variables: tuple[str, str]
    components: tuple[Expression, Expression]
    parameters: Mapping[str, float]
    h: Expression
    a: float

    @cached_property
    def jacobian_exprs(self) -> tuple[tuple[Expression, ...], ...]:
        return tuple(tuple(ex.differentiate(c, v) for v in self.variables)
                     for c in self.components)

    @cached_property
    def fun(self):
        return ex.compile_vector(self.components, self.variables, self.parameters)

    @cached_property
    def jac_fn(self):
        flat = [e for row in self.jacobian_exprs for e in row]
        return ex.compile_vector(flat, self.variables, self.parameters)

    @cached_property
    def h_fn(self):
        return ex.compile_vector([self.h], self.variables, self.parameters)

    def __call__(self, state: Sequence[float]) -> np.ndarray:
        return np.array(self.fun(float(state[0]), float(state[1])))

    def jacobian(self, state: Sequence[float]) -> np.ndarray:
        return np.array(self.jac_fn(float(state[0]), float(state[1]))).reshape(2, 2)


def smoothed_field(sys: PiecewiseSystem, fam: SmoothingFamily | float | None = None) -> SmoothField:
    """Replace the discontinuous term of ``sys`` by ``g_a(h) = g(h/a)``.

    ``fam`` may be a :class:`SmoothingFamily`, a bare scale (the system's
    stored profile is used) or ``None`` for the system's stored scale.
    """
    if fam is None or isinstance(fam, (int, float)):
        if sys.smoothing is None:
            raise ModelError(f"model {sys.name!r} has no smoothing family")
        fam = sys.smoothing.family(None if fam is None else float(fam))
    if not fam.a > 0.0:
        raise ValueError(f"smoothing scale must be positive, got {fam.a}")
    scale = sys.smoothing.scale if sys.smoothing else "a"
    g_arg = ex.div(sys.h, ex.Param(scale))
    g_expr = ex.substitute(fam.profile, {PROFILE_VARIABLE: g_arg})
    lam = ex.div(ex.sub(g_expr, ex.Num(fam.g_minus_0)), ex.Num(fam.g_plus_0 - fam.g_minus_0))
    comps = tuple(ex.add(fm, ex.mul(lam, ex.sub(fp, fm)))
                  for fp, fm in zip(sys.f_plus, sys.f_minus))
    params = dict(sys.parameters)
    params[scale] = float(fam.a)
    return SmoothField(f"{sys.name}[{scale}={fam.a:g}]", sys.variables, comps,  # type: ignore[arg-type]
                       MappingProxyType(params), sys.h, float(fam.a))


# --------------------------------------------------------------------------
# Definitions (model JSON documents)

def _as_float(value: Any, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ModelError(f"{what} must be a number, got {value!r}")
    v = float(value)
    if not math.isfinite(v):
        raise ModelError(f"{what} must be finite")
    return v


def _parse_field(texts: Any, variables: tuple[str, str], what: str) -> tuple[Expression, Expression]:
    if not isinstance(texts, (list, tuple)) or len(texts) != 2:
        raise ModelError(f"{what} must be a list of 2 expression strings")
    try:
        return tuple(ex.parse(t, variables) for t in texts)  # type: ignore[return-value]
    except (ex.ExprSyntaxError, TypeError) as exc:
        raise ModelError(f"{what}: {exc}") from None


def build_system(definition: Mapping[str, Any] | str | Path,
                 overrides: Mapping[str, Any] | None = None) -> PiecewiseSystem:
    """Validate a definition (dict, catalog name or JSON path) into a system.

    ``overrides`` replace declared parameters (or the smoothing scale, or,
    for catalog models, constructor arguments such as ``f``).
    """
    from . import catalog

    overrides = dict(overrides or {})
    if isinstance(definition, Path) or (isinstance(definition, str) and definition not in catalog.NAMES):
        definition = load_definition(definition)
    elif isinstance(definition, str):
        definition = catalog.definition(definition, overrides)
        overrides = {k: v for k, v in overrides.items() if k not in catalog.constructor_args(definition["name"])}

    unknown = set(definition) - _DEF_KEYS
    if unknown:
        raise ModelError(f"unknown definition keys: {sorted(unknown)}")
    for key in ("name", "variables", "h", "f_plus", "f_minus"):
        if key not in definition:
            raise ModelError(f"definition missing {key!r}")
    version = definition.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ModelError(f"unsupported schema_version {version!r}")

    variables = definition["variables"]
    if (not isinstance(variables, (list, tuple)) or len(variables) != 2
            or not all(isinstance(v, str) and v.isidentifier() for v in variables)
            or variables[0] == variables[1]):
        raise ModelError("variables must be 2 distinct identifiers (planar systems only)")
    variables = (variables[0], variables[1])
    if set(variables) & set(ex.FUNCTIONS):
        raise ModelError("variable names may not shadow function names")

    try:
        h = ex.parse(definition["h"], variables)
    except (ex.ExprSyntaxError, TypeError) as exc:
        raise ModelError(f"h: {exc}") from None
    f_plus = _parse_field(definition["f_plus"], variables, "f_plus")
    f_minus = _parse_field(definition["f_minus"], variables, "f_minus")

    params_in = definition.get("parameters", {}) or {}
    if not isinstance(params_in, Mapping):
        raise ModelError("parameters must be an object")
    params = {str(k): _as_float(v, f"parameter {k}") for k, v in params_in.items()}

    smoothing = None
    sm = definition.get("smoothing")
    if sm is not None:
        if not isinstance(sm, Mapping):
            raise ModelError("smoothing must be an object")
        bad = set(sm) - _SMOOTHING_KEYS
        if bad:
            raise ModelError(f"unknown smoothing keys: {sorted(bad)}")
        try:
            profile = ex.parse(sm.get("profile", "tanh(xi)"), (PROFILE_VARIABLE,))
        except ex.ExprSyntaxError as exc:
            raise ModelError(f"smoothing.profile: {exc}") from None
        gp = _as_float(sm.get("g_plus_0", 1.0), "g_plus_0")
        gm = _as_float(sm.get("g_minus_0", -1.0), "g_minus_0")
        _check_profile(profile, gp, gm)
        scale = sm.get("scale", "a")
        if not isinstance(scale, str) or not scale.isidentifier():
            raise ModelError("smoothing.scale must be an identifier")
        smoothing = SmoothingSpec(profile, gp, gm, scale,
                                  _as_float(sm.get("scale_value", 0.0), "scale_value"))

    for key, value in overrides.items():
        if smoothing is not None and key == smoothing.scale:
            v = _as_float(value, key)
            if v < 0:
                raise ModelError(f"smoothing scale {key} must be >= 0")
            smoothing = replace(smoothing, scale_value=v)
        elif key in params:
            params[key] = _as_float(value, key)
        else:
            raise ModelError(f"override {key!r} does not name a declared parameter")

    declared = set(params)
    for what, e in [("h", h), *[(f"f_plus[{i}]", e) for i, e in enumerate(f_plus)],
                    *[(f"f_minus[{i}]", e) for i, e in enumerate(f_minus)]]:
        _, ps = ex.identifiers(e)
        missing = ps - declared
        if missing:
            raise ModelError(f"{what}: unbound parameter(s) {sorted(missing)}")
    if smoothing is not None and smoothing.scale in declared:
        raise ModelError("smoothing scale name collides with a parameter")

    arc = definition.get("arc")
    if arc is not None:
        if not isinstance(arc, (list, tuple)) or len(arc) != 2:
            raise ModelError("arc must be [lo, hi]")
        arc = (_as_float(arc[0], "arc[0]"), _as_float(arc[1], "arc[1]"))
        if not arc[0] < arc[1]:
            raise ModelError("arc must satisfy lo < hi")

    box = definition.get("box")
    if box is not None:
        if not isinstance(box, (list, tuple)) or len(box) != 4:
            raise ModelError("box must be [x_lo, x_hi, y_lo, y_hi]")
        box = tuple(_as_float(v, "box") for v in box)
        if not (box[0] < box[1] and box[2] < box[3]):
            raise ModelError("box must satisfy lo < hi on both axes")

    reduced = None
    if definition.get("reduced") is not None:
        try:
            reduced = ex.parse(definition["reduced"], ("s",))
        except ex.ExprSyntaxError as exc:
            raise ModelError(f"reduced: {exc}") from None
        _, ps = ex.identifiers(reduced)
        if ps - declared:
            raise ModelError(f"reduced: unbound parameter(s) {sorted(ps - declared)}")

    stored = dict(definition)
    stored["parameters"] = dict(params)
    if smoothing is not None:
        stored["smoothing"] = dict(stored["smoothing"], scale_value=smoothing.scale_value)
    sys = PiecewiseSystem(
        name=str(definition["name"]), variables=variables, h=h,
        f_plus=f_plus, f_minus=f_minus, parameters=MappingProxyType(params),
        smoothing=smoothing, arc=arc, reduced=reduced, box=box,
        definition=MappingProxyType(stored),
    )
    _check_regular_boundary(sys)
    return sys


def _check_regular_boundary(sys: PiecewiseSystem) -> None:
    from .filippov import BoundaryArc

    if sys.arc is None:
        return
    arc = BoundaryArc.default(sys)
    for s in np.linspace(arc.lo, arc.hi, 33):
        try:
            p = arc.point(float(s))
        except ArithmeticError as exc:
            raise ModelError(f"cannot locate boundary point at s={s:g}: {exc}") from None
        g = sys.grad_h_value(p)
        if not float(np.hypot(*g)) > 1e-12:
            raise ModelError(f"grad h vanishes on the boundary near {tuple(p)}")


def load_definition(path: str | Path) -> dict[str, Any]:
    p = Path(path)
    try:
        with p.open("r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ModelError(f"no catalog model or file named {str(path)!r}") from None
    except json.JSONDecodeError as exc:
        raise ModelError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ModelError(f"{p}: top level must be an object")
    return data


def dump_definition(sys: PiecewiseSystem) -> str:
    """Canonical JSON text for the definition a system was built from."""
    d = dict(sys.definition)
    d.setdefault("schema_version", SCHEMA_VERSION)
    return json.dumps(d, indent=2, sort_keys=True) + "\n"
