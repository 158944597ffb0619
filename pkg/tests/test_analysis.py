import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zombiesaddle import analysis as an
from zombiesaddle import filippov as fl
from zombiesaddle.system import build_system, smoothed_field


def _sys(name, **kw):
    return build_system(name, kw)


def scan_roots(fn, lo, hi, n=10_000):
    """Sign-scan over n points, then plain bisection on each bracket."""
    xs = np.linspace(lo, hi, n + 1)
    vs = [fn(x) for x in xs]
    roots = []
    for a, b, fa, fb in zip(xs, xs[1:], vs, vs[1:]):
        if fa == 0.0:
            roots.append(a)
            continue
        if fa * fb < 0:
            for _ in range(200):
                m = 0.5 * (a + b)
                fm = fn(m)
                if fm == 0.0 or b - a < 1e-15:
                    break
                a, fa, b = (m, fm, b) if fa * fm > 0 else (a, fa, m)
            roots.append(0.5 * (a + b))
    return roots


def reduced_dbl(a):
    return lambda x: 2 * x + 0.4 - math.tanh(x / a)


# ---------------------------------------------------------------- classification

@pytest.mark.parametrize("J,cls", [
    ([[1, 0], [0, -1]], "saddle"),
    ([[-1, 0], [0, -2]], "stable node"),
    ([[1, 0], [0, 2]], "unstable node"),
    ([[-1, -2], [2, -1]], "stable focus"),
    ([[1, -2], [2, 1]], "unstable focus"),
    ([[0, 1], [-1, 0]], "degenerate"),
    ([[1, 0], [0, 0]], "degenerate"),
    ([[-1, 0], [0, -1]], "degenerate"),
])
def test_classify_jacobian(J, cls):
    assert an.classify_jacobian(np.array(J, float))[2] == cls


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4))
def test_class_consistent_with_det_and_trace(v):
    det, tr, cls = an.classify_jacobian(np.array(v).reshape(2, 2))
    if cls == "saddle":
        assert det < 0
    elif cls != "degenerate":
        assert det > 0 and (tr < 0) == cls.startswith("stable")


# ---------------------------------------------------------------- equilibria

def test_dbl_tangency_three_equilibria_against_oracle():
    a = 0.1
    eqs = an.find_equilibria(smoothed_field(_sys("dbl_tangency"), a), (-1, 1, -1, 1))
    roots = scan_roots(reduced_dbl(a), -1.0, 1.0)
    assert len(eqs) == len(roots) == 3
    for e, r in zip(eqs, roots):
        assert e.location[0] == pytest.approx(r, abs=1e-8)
        assert e.location[1] == pytest.approx(2 * r + 0.4, abs=1e-8)
        assert e.residual <= 1e-10
    mid = eqs[1]
    assert 0.05 < mid.location[0] < 0.07
    assert mid.cls == "saddle" and mid.det < 0


def test_three_saddle_origin_determinant():
    for k in (-0.5, 0.0, 0.5):
        f = smoothed_field(_sys("three_saddle", k=k, alpha=1.0), 0.1)
        eqs = an.find_equilibria(f, (-0.5, 0.5, -0.5, 0.5))
        (o,) = [e for e in eqs if np.hypot(*e.location) < 1e-12]
        assert o.det == pytest.approx(1 - (k + 1.0) / 0.1, abs=1e-12)
        assert o.cls == "saddle"


def test_ebm_smoothed_three_equilibria():
    D = 5.0
    e = _sys("ebm2d")
    eqs = an.find_equilibria(smoothed_field(e, D), e.box)
    assert len(eqs) == 3
    lo, mid, hi = eqs
    assert lo.location[0] < 290 < hi.location[0]
    assert mid.location == pytest.approx((290.0, -1010.0), abs=1e-9)
    T = mid.location[0]
    dalpha = -(0.8 - 0.2) / 2 / D / math.cosh((T - 290) / D) ** 2
    assert mid.det == pytest.approx(1.0 * (300 * dalpha + 4) + 1.0, abs=1e-9)
    assert mid.cls == "saddle"
    assert lo.cls.startswith("stable") and hi.cls.startswith("stable")


def test_proper_equilibria_examples():
    pe = an.proper_equilibria_nonsmooth(_sys("ebm2d"), (270, 310, -1300, -700))
    assert np.allclose([p.location for p in pe], [(308.0, -992.0), (272.0, -1028.0)], atol=1e-9)
    for p in pe:
        assert p.det == pytest.approx(1 * 4 + 1, abs=1e-12)
        assert p.trace == pytest.approx(-(4 + 1), abs=1e-12)
    pe = an.proper_equilibria_nonsmooth(_sys("dbl_tangency"), (-3, 3, -3, 3))
    assert np.allclose(sorted(p.location for p in pe), [(-0.7, -1.0), (0.3, 1.0)], atol=1e-10)
    pe = an.proper_equilibria_nonsmooth(_sys("three_saddle", k=0.0), (-3, 3, -3, 3))
    assert np.allclose(sorted(p.location for p in pe), [(-1.0, -1.0), (1.0, 1.0)], atol=1e-10)


def test_proper_equilibria_drop_wrong_side_candidates():
    # with f = 2x + 3, f_plus vanishes at (-1, 1), which lies in h < 0
    s = build_system("r_sliding", {"f": "2*x+3"})
    (e,) = an.proper_equilibria_nonsmooth(s, (-3, 3, -3, 3))
    assert e.side == "-" and np.allclose(e.location, (-2.0, -1.0), atol=1e-10)


# ---------------------------------------------------------------- scalar problem

def test_ivt_bracket_example():
    b = an.ivt_bracket(_sys("dbl_tangency"), 0.1, a=0.01)
    assert b.lo < 0 < b.hi and -0.1 < b.lo and b.hi < 0.1
    f = reduced_dbl(b.a)
    assert f(b.hi) < 0 < f(b.lo)
    assert (b.lo, b.hi) == (-0.05, 0.05)


def test_ivt_bracket_shrinks_scale_when_needed():
    b = an.ivt_bracket(_sys("dbl_tangency"), 0.1, a=1.0)
    assert b.a < 1.0
    f = reduced_dbl(b.a)
    assert f(b.hi) < 0 < f(b.lo)


def test_ivt_bracket_hypothesis_violation():
    with pytest.raises(an.HypothesisError):
        an.ivt_bracket(build_system("dbl_tangency", {"f": "2*x+1"}), 0.1)


def test_ivt_bracket_ebm():
    b = an.ivt_bracket(_sys("ebm2d"), 10.0, a=5.0)
    assert b.lo < 0 < b.hi
    A_i, A_w = 300 * 0.2 - 4 * 290, 300 * 0.8 - 4 * 290
    assert A_i < 290 + -1300 < A_w


def test_scaled_det_examples():
    s = _sys("dbl_tangency")
    assert an.scaled_det(s, 0.1, 0.0) == pytest.approx(-8.0, abs=1e-12)
    assert an.scaled_det(s, 1.0, 0.0) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-4, 1.0), st.floats(-3, 3))
def test_scaled_det_sign(a, xi):
    v = an.scaled_det(_sys("dbl_tangency"), a, xi)
    gp = 1 / math.cosh(xi) ** 2
    if gp > a * 2 * 1.000001:
        assert v < 0
    elif gp < a * 2 * 0.999999:
        assert v > 0


# ---------------------------------------------------------------- homotopy

def test_log_schedule():
    s = an.log_schedule(0.5, 1e-5, 1)
    assert s == [0.5, 1e-5]
    s = an.log_schedule(0.5, 1e-5, 40)
    assert len(s) == 41 and all(b < a for a, b in zip(s, s[1:]))
    with pytest.raises(ValueError):
        an.log_schedule(1e-5, 0.5, 4)


@pytest.mark.parametrize("name,kw,a0", [
    ("dbl_tangency", {}, 0.5), ("r_sliding", {}, 0.1), ("a_sliding", {}, 0.1),
    ("three_saddle", {"k": 0.5}, 0.5), ("three_saddle", {"k": -0.5}, 0.5), ("ebm2d", {}, 5.0),
])
def test_homotopy_limit_matches_zombie(name, kw, a0):
    s = _sys(name, **kw)
    path = an.homotopy_track(s, an.log_schedule(a0, 1e-5 if name != "ebm2d" else 1e-4, 40))
    (z,) = fl.classify_zombie(s)
    assert np.allclose(path.limit_estimate, z.point, atol=1e-6)


def test_three_saddle_path_is_pinned():
    path = an.homotopy_track(_sys("three_saddle", k=0.5), an.log_schedule(0.5, 1e-5, 20))
    assert len(path.present) == 21
    for r in path.rows:
        assert np.max(np.abs(r.equilibrium.location)) < 1e-12
        assert r.equilibrium.det == pytest.approx(1 - 1.5 / r.a, rel=1e-12)


@pytest.mark.parametrize("name", ["dbl_tangency", "r_sliding", "a_sliding"])
def test_saddle_persistence(name):
    s = _sys(name)
    path = an.homotopy_track(s, an.log_schedule(0.1, 1e-5, 16))
    ratios = []
    for r in path.rows:
        e = r.equilibrium
        assert e is not None and e.det < 0
        x = e.location[0]
        roots = scan_roots(reduced_dbl(r.a), -0.2, 0.2)
        # the saddle is the root nearest the boundary; oracle agreement to 1e-8
        assert min(abs(x - q) for q in roots) <= 1e-8
        ratios.append(abs(x) / r.a)
    assert max(ratios) < 1.0


def test_continuation_breakdown_reports_last_good_scale():
    # the origin has det J = 1/a - 2: a saddle for a > 0.5 only
    s = build_system({"name": "fold", "variables": ["x", "y"], "h": "x",
                      "f_plus": ["y - x", "2*y - 1"], "f_minus": ["y - x", "2*y + 1"],
                      "parameters": {}, "smoothing": {"profile": "tanh(xi)", "g_plus_0": 1,
                                                       "g_minus_0": -1}})
    with pytest.raises(an.ContinuationError) as info:
        an.homotopy_track(s, [2.0, 1.0, 0.25], seed=(0.0, 0.0))
    assert 0.5 < info.value.last_good_a < 0.51
    assert [r.a for r in info.value.path.rows] == [2.0, 1.0]


# ---------------------------------------------------------------- manifolds

def test_double_tangency_four_orbits():
    s = _sys("dbl_tangency")
    (z,) = fl.classify_zombie(s)
    ms = an.manifold_analogues(s, z)
    assert len(ms) == 4
    assert sorted((m.role, m.side) for m in ms) == [("stable", "+"), ("stable", "-"),
                                                     ("unstable", "+"), ("unstable", "-")]
    for m in ms:
        end = m.trajectory.final_state if m.role == "stable" else m.trajectory.initial_state
        assert np.allclose(end, (0.0, 0.4), atol=1e-8)
        hv = [s.h_value(p) for p in m.trajectory.states()[1:-1]]
        sign = 1 if m.side == "+" else -1
        assert all(sign * v > 0 for v in hv)


def test_repelling_zombie_analogues():
    s = _sys("r_sliding")
    (z,) = fl.classify_zombie(s)
    ms = an.manifold_analogues(s, z)
    slides = [m for m in ms if m.kind == "sliding_segment"]
    assert len(slides) == 2 and all(m.role == "stable" for m in slides)
    starts = sorted(m.trajectory.initial_state[1] for m in slides)
    assert starts == pytest.approx([-1.0, 1.0], abs=1e-5)
    for m in slides:
        assert np.allclose(m.trajectory.final_state, (0.0, 0.4), atol=1e-8)
        assert any(e.kind == "pseudoeq_arrival" and np.isfinite(e.t) for e in m.trajectory.events)
    sides = [m for m in ms if m.kind == "side_orbit"]
    assert sorted(m.side for m in sides) == ["+", "-"]
    assert all(m.role == "unstable" for m in sides)


def test_attracting_zombie_stable_orbits_arrive_in_finite_time():
    s = _sys("a_sliding")
    (z,) = fl.classify_zombie(s)
    ms = an.manifold_analogues(s, z, horizon=3.0)
    stable = [m for m in ms if m.role == "stable"]
    assert len(stable) == 2 and all(m.kind == "side_orbit" for m in stable)
    for m in stable:
        tr = m.trajectory
        assert np.allclose(tr.final_state, (0.0, 0.4), atol=1e-8)
        assert np.isfinite(tr.t_final) and tr.t_final == 0.0
    unstable = [m for m in ms if m.role == "unstable"]
    assert all(m.kind == "sliding_segment" for m in unstable)
    for m in unstable:
        assert np.allclose(m.trajectory.initial_state, (0.0, 0.4), atol=1e-8)


def test_ebm_analogues_reach_both_attractors():
    s = _sys("ebm2d")
    (z,) = fl.classify_zombie(s)
    ms = an.manifold_analogues(s, z, horizon=20.0)
    slides = [m for m in ms if m.kind == "sliding_segment"]
    assert sorted(m.trajectory.initial_state[1] for m in slides) == pytest.approx([-1100, -920], abs=1e-3)
    for m in slides:
        assert np.allclose(m.trajectory.final_state, (290.0, -1010.0), atol=1e-8)
    ends = sorted(tuple(m.trajectory.final_state) for m in ms if m.kind == "side_orbit")
    assert np.allclose(ends, [(272.0, -1028.0), (308.0, -992.0)], atol=1e-3)


def test_box_truncation_is_flagged():
    s = _sys("dbl_tangency")
    (z,) = fl.classify_zombie(s)
    ms = an.manifold_analogues(s, z, horizon=5.0, box=(-1, 1, -1, 2))
    stable = [m for m in ms if m.role == "stable"]
    assert all(m.truncated for m in stable)
    for m in stable:
        assert m.trajectory.terminated_by == "box_exit"
        assert np.all(np.abs(m.trajectory.states()[:, 0]) <= 1)


def test_separatrix_probes_small():
    s = _sys("dbl_tangency")
    (z,) = fl.classify_zombie(s)
    ms = an.manifold_analogues(s, z, horizon=5.0, box=s.box)
    att = [p.location for p in an.proper_equilibria_nonsmooth(s, (-3, 3, -3, 3))]
    res = an.separatrix_probes(s, ms, att, stations=2)
    for k in range(0, len(res), 2):
        a, b = res[k], res[k + 1]
        assert a.attractor is not None and b.attractor is not None and a.attractor != b.attractor
