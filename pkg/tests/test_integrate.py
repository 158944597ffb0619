import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from zombiesaddle import catalog
from zombiesaddle.integrate import (BranchPolicy, ChatteringError, IntegrationError,
                                    IntegratorConfig, integrate, integrate_smoothed,
                                    project_to_boundary)
from zombiesaddle.system import build_system, smoothed_field


def _sys(name, **kw):
    return build_system(name, kw)


def _slides(tr):
    return [s for s in tr.segments if s.mode == "slide"]


def _check_invariants(sys_, tr, direction=1):
    event_times = {e.t for e in tr.events}
    for seg in tr.segments:
        assert np.all(np.diff(seg.t) * direction > 0)
    # consecutive segments share their boundary sample, which is an event
    for a, b in zip(tr.segments, tr.segments[1:]):
        assert a.t[-1] == b.t[0] and a.t[-1] in event_times
        assert np.array_equal(a.states[-1], b.states[0])
    for seg in tr.segments:
        hv = np.array([sys_.h_value(p) for p in seg.states])
        if seg.mode == "plus":
            assert hv.min() >= -1e-9
        elif seg.mode == "minus":
            assert hv.max() <= 1e-9
        else:
            assert np.abs(hv).max() <= 1e-9
            assert np.all((seg.lam >= 0) & (seg.lam <= 1))


# ---------------------------------------------------------------- examples

def test_attracting_sliding_entry_and_slide_away_from_pseudoequilibrium():
    s = _sys("a_sliding")
    tr = integrate(s, (0.8, 1.5), (0.0, 10.0))
    (seg, *_) = _slides(tr)
    y = seg.states[:, 1]
    # the sliding flow ydot = y - 0.4 moves away from 0.4
    assert np.all(np.diff(np.abs(y - 0.4)) > 0)
    kinds = [e.kind for e in tr.events]
    assert "slide_enter" in kinds and "slide_exit" in kinds
    _check_invariants(s, tr)


def test_repelling_sliding_stay_reaches_pseudoequilibrium():
    s = _sys("r_sliding")
    tr = integrate(s, (0.0, 0.1), (0.0, 30.0), BranchPolicy("stay"))
    arrivals = [e for e in tr.events if e.kind == "pseudoeq_arrival"]
    assert len(arrivals) == 1 and np.isfinite(arrivals[0].t)
    assert np.allclose(arrivals[0].state, (0.0, 0.4), atol=1e-8)
    assert np.allclose(tr.final_state, (0.0, 0.4), atol=1e-8)
    assert tr.modes == ["slide"]


@pytest.mark.parametrize("x0", [(2.0, 1.0), (1.5, -2.0), (-2.0, 2.5), (-1.0, -2.0)])
def test_double_tangency_never_slides(x0):
    s = _sys("dbl_tangency")
    tr = integrate(s, x0, (0.0, 20.0))
    assert _slides(tr) == []
    _check_invariants(s, tr)


def test_exit_policy_leaves_after_delay():
    s = _sys("r_sliding")
    tr = integrate(s, (0.0, 0.1), (0.0, 5.0), BranchPolicy("exit_plus", 0.5))
    assert tr.modes == ["slide", "plus"]
    seg = tr.segments[0]
    assert seg.t[-1] - seg.t[0] == pytest.approx(0.5, abs=1e-12)
    assert tr.events[0].kind == "slide_exit"
    tr = integrate(s, (0.0, 0.1), (0.0, 5.0), BranchPolicy("exit_minus", 0.2))
    assert tr.modes == ["slide", "minus"]


def test_policy_validation():
    with pytest.raises(ValueError):
        BranchPolicy("stay", 1.0)
    with pytest.raises(ValueError):
        BranchPolicy("bounce")
    with pytest.raises(ValueError):
        IntegratorConfig(rel_tol=0.0)


def test_attracting_sliding_ignores_exit_policy():
    s = _sys("a_sliding")
    base = integrate(s, (0.8, 1.5), (0.0, 10.0))
    other = integrate(s, (0.8, 1.5), (0.0, 10.0), BranchPolicy("exit_plus", 0.01))
    assert [(e.kind, e.t) for e in base.events] == [(e.kind, e.t) for e in other.events]
    for e in base.events:
        if e.kind == "slide_exit":
            # exits only where lambda reaches 0 or 1, i.e. at the tangencies y = +-1
            assert abs(abs(e.state[1]) - 1.0) < 1e-9


def test_smoothed_dbl_tangency_converges_to_node():
    f = smoothed_field(_sys("dbl_tangency"), 0.1)
    # bisection oracle on 2x + 0.4 - tanh(10x) in [0.25, 0.3]
    lo, hi = 0.25, 0.3
    g = lambda x: 2 * x + 0.4 - np.tanh(10 * x)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if g(lo) * g(mid) > 0 else (lo, mid)
    x_star = 0.5 * (lo + hi)
    tr = integrate_smoothed(f, (0.5, 0.5), (0.0, 10.0))
    d = np.hypot(*(tr.states() - [x_star, np.tanh(10 * x_star)]).T)
    assert d[-1] < 1e-2 and d[-1] < 0.1 * d[0]
    assert all(e.kind == "time_limit" for e in tr.events)


def test_smoothed_ebm_goes_to_warm_equilibrium():
    f = smoothed_field(_sys("ebm2d"), 5.0)
    tr = integrate_smoothed(f, (300.0, -1000.0), (0.0, 20.0))
    T, A = tr.final_state
    assert T > 290.0
    assert np.max(np.abs(f((T, A)))) < 1e-3


def test_zero_length_span_returns_the_start():
    f = smoothed_field(_sys("dbl_tangency"), 0.1)
    tr = integrate_smoothed(f, (0.5, 0.5), (1.0, 1.0))
    assert tr.states().tolist() == [[0.5, 0.5]]
    with pytest.raises(ValueError):
        integrate(_sys("r_sliding"), (0.5, 0.5), (1.0, 1.0))


def test_project_to_boundary_examples():
    assert tuple(project_to_boundary(_sys("r_sliding"), (1e-8, 0.2))) == (0.0, 0.2)
    assert tuple(project_to_boundary(_sys("ebm2d"), (290 + 1e-8, -1000.0))) == (290.0, -1000.0)
    assert tuple(project_to_boundary(_sys("r_sliding"), (0.0, 0.3))) == (0.0, 0.3)
    with pytest.raises(ValueError):
        project_to_boundary(_sys("r_sliding"), (0.1, 0.3))


# ---------------------------------------------------------------- oracles

def test_smooth_region_matches_solve_ivp():
    s = _sys("dbl_tangency")
    tr = integrate(s, (2.0, 1.0), (0.0, 3.0), cfg=IntegratorConfig(rel_tol=1e-11, abs_tol=1e-13))
    assert tr.modes == ["plus"]
    f = s.field("+")
    sol = solve_ivp(lambda t, y: f(y[0], y[1]), (0.0, 3.0), [2.0, 1.0], method="DOP853",
                    rtol=1e-12, atol=1e-14, dense_output=True)
    ref = sol.sol(tr.times()).T
    assert np.max(np.abs(ref - tr.states())) < 1e-8


def test_crossing_matches_piecewise_solve_ivp():
    s = _sys("dbl_tangency")
    tr = integrate(s, (0.5, -3.0), (0.0, 2.0), cfg=IntegratorConfig(rel_tol=1e-11, abs_tol=1e-13))
    assert tr.modes == ["plus", "minus"]
    fp, fm = s.field("+"), s.field("-")
    hit = lambda t, y: y[0]
    hit.terminal = True
    a = solve_ivp(lambda t, y: fp(y[0], y[1]), (0, 2), [0.5, -3.0], events=hit,
                  method="DOP853", rtol=1e-12, atol=1e-14)
    tc, yc = a.t_events[0][0], a.y_events[0][0]
    b = solve_ivp(lambda t, y: fm(y[0], y[1]), (tc, 2), yc, method="DOP853", rtol=1e-12, atol=1e-14)
    cross = [e for e in tr.events if e.kind == "cross"]
    assert cross[0].t == pytest.approx(tc, abs=1e-8)
    assert np.allclose(tr.final_state, b.y[:, -1], atol=1e-7)


def test_smoothed_and_nonsmooth_agree_away_from_transit():
    s = _sys("dbl_tangency")
    cfg = IntegratorConfig(max_step=0.01)
    ns = integrate(s, (0.5, -3.0), (0.0, 2.0), cfg=cfg)
    sm = integrate_smoothed(smoothed_field(s, 1e-4), (0.5, -3.0), (0.0, 2.0), cfg)
    tc = [e.t for e in ns.events if e.kind == "cross"][0]
    grid = np.linspace(0.0, 2.0, 401)
    grid = grid[np.abs(grid - tc) > 0.05]
    diffs = [np.interp(grid, ns.times(), ns.states()[:, i]) -
             np.interp(grid, sm.times(), sm.states()[:, i]) for i in range(2)]
    assert np.max(np.abs(diffs)) < 1e-2


def test_reversibility_over_a_crossing():
    s = _sys("dbl_tangency")
    fwd = integrate(s, (0.5, -3.0), (0.0, 2.0))
    assert "cross" in [e.kind for e in fwd.events]
    back = integrate(s, fwd.final_state, (2.0, 0.0))
    _check_invariants(s, back, direction=-1)
    assert np.max(np.abs(back.final_state - [0.5, -3.0])) < 1e-6


def test_determinism():
    s = _sys("a_sliding")
    a = integrate(s, (0.8, 1.5), (0.0, 10.0))
    b = integrate(s, (0.8, 1.5), (0.0, 10.0))
    assert [(e.t, e.kind, e.state) for e in a.events] == [(e.t, e.kind, e.state) for e in b.events]
    assert np.array_equal(a.states(), b.states())


def test_event_budget_reports_partial_trajectory():
    rot = build_system({"name": "rot", "variables": ["x", "y"], "h": "x",
                        "f_plus": ["-y", "x"], "f_minus": ["-y", "x"], "parameters": {}})
    ok = integrate(rot, (1.0, 0.0), (0.0, 40.0))
    assert sum(e.kind == "cross" for e in ok.events) == 13
    assert np.allclose(ok.final_state, (np.cos(40), np.sin(40)), atol=1e-7)
    with pytest.raises(ChatteringError) as info:
        integrate(rot, (1.0, 0.0), (0.0, 40.0), cfg=IntegratorConfig(event_budget=5))
    assert isinstance(info.value, IntegrationError)
    assert info.value.trajectory is not None and info.value.trajectory.t_final > 0


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(catalog.NAMES), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_trajectory_invariants_hold_from_any_start(name, u, v):
    s = _sys(name)
    x0, x1, y0, y1 = s.box
    p = (x0 + u * (x1 - x0), y0 + v * (y1 - y0))
    try:
        tr = integrate(s, p, (0.0, 5.0))
    except IntegrationError as exc:
        tr = exc.trajectory
    _check_invariants(s, tr)
    for e in tr.events:
        if e.kind == "pseudoeq_arrival":
            assert np.isfinite(e.t)
