"""Adaptive Dormand-Prince 5(4) stepper with quartic dense output.

Autonomous systems only: ``fun(y) -> ndarray``.  The stepper exposes each
accepted step (endpoints, stages) so callers can locate events on the dense
interpolant before committing to a step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERROR_EXPONENT = -1 / 5


class StepSizeUnderflow(ArithmeticError):
    pass


@dataclass
class Step:
    t0: float
    y0: np.ndarray
    t1: float
    y1: np.ndarray
    K: np.ndarray       # (7, n) stage derivatives, K[6] = f(y1)

    @property
    def h(self) -> float:
        return self.t1 - self.t0

    def at(self, theta: float) -> np.ndarray:
        """Dense output at ``t0 + theta * h``."""
        if theta == 1.0:
            return self.y1
        if theta == 0.0:
            return self.y0
        powers = np.array([theta, theta * theta, theta ** 3, theta ** 4])
        return self.y0 + self.h * (self.K.T @ (P @ powers))


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def rk_step(fun: Callable[[np.ndarray], np.ndarray], y: np.ndarray, f: np.ndarray,
            h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    K = np.empty((7, y.size))
    K[0] = f
    for s in range(1, 6):
        K[s] = fun(y + h * (A[s] @ K[:s]))
    y_new = y + h * (B @ K[:6])
    K[6] = fun(y_new)
    return y_new, K[6], K


class Stepper:
    """Error-controlled stepping of ``y' = fun(y)`` from ``(t, y)``."""

    def __init__(self, fun: Callable[[np.ndarray], np.ndarray], t: float, y,
                 rtol: float, atol: float, max_step: float = math.inf,
                 first_step: float | None = None,
                 post: Callable[[np.ndarray], np.ndarray] | None = None):
        if not (rtol > 0 and atol > 0):
            raise ValueError("tolerances must be positive")
        self.fun = fun
        self.t = float(t)
        self.y = np.array(y, dtype=float)
        self.rtol, self.atol = rtol, atol
        self.max_step = max_step
        self.post = post
        self.f = np.asarray(fun(self.y), dtype=float)
        self.h = min(first_step or self._initial_step(), max_step)

    def _initial_step(self) -> float:
        scale = self.atol + np.abs(self.y) * self.rtol
        d0, d1 = _rms(self.y / scale), _rms(self.f / scale)
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        y1 = self.y + h0 * self.f
        f1 = np.asarray(self.fun(y1))
        d2 = _rms((f1 - self.f) / scale) / h0
        if d1 <= 1e-15 and d2 <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** (1 / 5)
        return min(100 * h0, h1)

    def step(self, t_end: float) -> Step:
        """Take one accepted step, never passing ``t_end``."""
        t, y, f = self.t, self.y, self.f
        min_step = 10 * np.spacing(max(abs(t), 1.0))
        h = min(self.h, self.max_step, t_end - t)
        rejected = False
        while True:
            if h < min_step:
                raise StepSizeUnderflow(f"step size underflow at t={t:.17g} (h={h:.3g})")
            y_new, f_new, K = rk_step(self.fun, y, f, h)
            scale = self.atol + np.maximum(np.abs(y), np.abs(y_new)) * self.rtol
            err = _rms((h * (E @ K)) / scale)
            if err < 1.0 and np.all(np.isfinite(y_new)):
                factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** ERROR_EXPONENT)
                if rejected:
                    factor = min(1.0, factor)
                break
            if not np.all(np.isfinite(y_new)):
                h *= MIN_FACTOR
            else:
                h *= max(MIN_FACTOR, SAFETY * err ** ERROR_EXPONENT)
            rejected = True
        t_new = t + h if t_end - t > h else t_end
        step = Step(t, y, t_new, y_new, K)
        self.h = h * factor
        self.accept(t_new, y_new, f_new)
        return step

    def accept(self, t: float, y: np.ndarray, f: np.ndarray | None = None) -> None:
        """Move the stepper to ``(t, y)`` (e.g. an event or projected state)."""
        self.t = float(t)
        self.y = np.array(y, dtype=float)
        self.f = np.asarray(self.fun(self.y)) if f is None else f
