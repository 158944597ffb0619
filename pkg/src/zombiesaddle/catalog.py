"""Built-in models: the three canonical zombie-saddle forms, the three-saddle
example and the two-variable energy balance model.

Each constructor returns a plain definition dict (the model-JSON schema);
:func:`zombiesaddle.system.build_system` turns it into a system.  The
``reduced`` entry is the scalar equilibrium problem ``f(s) = g_a(s)`` with
``s = h``, used by the bracketing and oracle code.
"""
from __future__ import annotations

import inspect
from typing import Any, Callable, Mapping

from . import expr as ex

__all__ = ["NAMES", "definition", "constructor_args", "dbl_tangency", "r_sliding",
           "a_sliding", "three_saddle", "ebm2d"]

_TANH = "tanh(xi)"


def _smoothing(gp: float, gm: float, profile: str, scale: str = "a") -> dict[str, Any]:
    return {"profile": profile, "g_plus_0": float(gp), "g_minus_0": float(gm), "scale": scale}


def _reduced(f: str) -> str:
    e = ex.parse(f, ("x",))
    return ex.to_text(ex.substitute(e, {"x": ex.Var("s")}))


def _lit(v: float) -> str:
    return f"({float(v)!r})"


def dbl_tangency(f: str = "2*x+0.4", g_plus_0: float = 1.0, g_minus_0: float = -1.0,
                 profile: str = _TANH) -> dict[str, Any]:
    """xdot = y - f(x), ydot = g_a(x) - y: double visible tangency, no sliding."""
    return {
        "name": "dbl_tangency", "variables": ["x", "y"], "h": "x",
        "f_plus": [f"y - ({f})", f"{_lit(g_plus_0)} - y"],
        "f_minus": [f"y - ({f})", f"{_lit(g_minus_0)} - y"],
        "parameters": {}, "smoothing": _smoothing(g_plus_0, g_minus_0, profile),
        "arc": [-3.0, 3.0], "box": [-3.0, 3.0, -3.0, 3.0], "reduced": _reduced(f),
    }


def r_sliding(f: str = "2*x+0.4", g_plus_0: float = 1.0, g_minus_0: float = -1.0,
              profile: str = _TANH) -> dict[str, Any]:
    """xdot = g_a(x) - y, ydot = f(x) - y: repelling sliding, stable pseudoequilibrium."""
    return {
        "name": "r_sliding", "variables": ["x", "y"], "h": "x",
        "f_plus": [f"{_lit(g_plus_0)} - y", f"({f}) - y"],
        "f_minus": [f"{_lit(g_minus_0)} - y", f"({f}) - y"],
        "parameters": {}, "smoothing": _smoothing(g_plus_0, g_minus_0, profile),
        "arc": [-3.0, 3.0], "box": [-3.0, 3.0, -3.0, 3.0], "reduced": _reduced(f),
    }


def a_sliding(f: str = "2*x+0.4", g_plus_0: float = 1.0, g_minus_0: float = -1.0,
              profile: str = _TANH) -> dict[str, Any]:
    """xdot = y - g_a(x), ydot = y - f(x): time reversal of :func:`r_sliding`."""
    return {
        "name": "a_sliding", "variables": ["x", "y"], "h": "x",
        "f_plus": [f"y - {_lit(g_plus_0)}", f"y - ({f})"],
        "f_minus": [f"y - {_lit(g_minus_0)}", f"y - ({f})"],
        "parameters": {}, "smoothing": _smoothing(g_plus_0, g_minus_0, profile),
        "arc": [-3.0, 3.0], "box": [-3.0, 3.0, -3.0, 3.0], "reduced": _reduced(f),
    }


def three_saddle(k: float = 0.5, alpha: float = 1.0) -> dict[str, Any]:
    """xdot = k g(x) - x + y, ydot = alpha g(x) - y with g = tanh(x/a) -> sign(x)."""
    return {
        "name": "three_saddle", "variables": ["x", "y"], "h": "x",
        "f_plus": ["k - x + y", "alpha - y"],
        "f_minus": ["-k - x + y", "-alpha - y"],
        "parameters": {"k": float(k), "alpha": float(alpha)},
        "smoothing": _smoothing(1.0, -1.0, _TANH),
        "arc": [-3.0, 3.0], "box": [-3.0, 3.0, -3.0, 3.0], "reduced": "s/(k + alpha)",
    }


def ebm2d(Q: float = 300.0, alpha_i: float = 0.8, alpha_w: float = 0.2, T0: float = 290.0,
          B: float = 4.0, C: float = -1300.0, m: float = 1.0, n: float = 1.0) -> dict[str, Any]:
    """Energy balance model with dynamic A and tanh albedo of width D.

    Albedo is ``(alpha_i+alpha_w)/2 - (alpha_i-alpha_w)/2 tanh((T-T0)/D)``,
    i.e. ``alpha_w`` on the warm side ``T > T0`` and ``alpha_i`` on the cold side.
    """
    return {
        "name": "ebm2d", "variables": ["T", "A"], "h": "T - T0",
        "f_plus": ["Q*(1 - alpha_w) - (A + B*T)", "-m*A + n*T + C"],
        "f_minus": ["Q*(1 - alpha_i) - (A + B*T)", "-m*A + n*T + C"],
        "parameters": {"Q": Q, "alpha_i": alpha_i, "alpha_w": alpha_w, "T0": T0,
                       "B": B, "C": C, "m": m, "n": n},
        "smoothing": _smoothing(1.0, -1.0, _TANH, scale="D"),
        "arc": [-1300.0, -700.0], "box": [270.0, 310.0, -1300.0, -700.0],
        # A eliminated through the A-nullcline, T = T0 + s
        "reduced": ("((n/m + B)*(s + T0) + C/m - Q*(1 - (alpha_i + alpha_w)/2))"
                    " / (Q*(alpha_i - alpha_w)/2)"),
    }


_CATALOG: dict[str, Callable[..., dict[str, Any]]] = {
    "dbl_tangency": dbl_tangency,
    "r_sliding": r_sliding,
    "a_sliding": a_sliding,
    "three_saddle": three_saddle,
    "ebm2d": ebm2d,
}
NAMES = tuple(_CATALOG)


def constructor_args(name: str) -> tuple[str, ...]:
    return tuple(inspect.signature(_CATALOG[name]).parameters)


def definition(name: str, overrides: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Definition for catalog ``name``; constructor arguments are taken from ``overrides``."""
    try:
        ctor = _CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown catalog model {name!r}; choose from {', '.join(NAMES)}") from None
    args = {k: v for k, v in (overrides or {}).items() if k in constructor_args(name)}
    return ctor(**args)
