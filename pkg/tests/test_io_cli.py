import json
import math
import random
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from zombiesaddle import analysis as an
from zombiesaddle import cli
from zombiesaddle import filippov as fl
from zombiesaddle import io as zio
from zombiesaddle.integrate import integrate
from zombiesaddle.system import build_system


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def write_model(tmp_path, name, **d):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps({"name": name, "variables": ["x", "y"], "parameters": {}, **d}))
    return str(path)


# ---------------------------------------------------------------- round trips

def test_trajectory_csv_round_trip():
    s = build_system("a_sliding")
    tr = integrate(s, (0.8, 1.5), (0.0, 10.0))
    text = zio.trajectory_csv(tr, s.h_value)
    rows = zio.read_trajectory_csv(text)
    assert rows == list(tr.rows())
    assert text.splitlines()[0] == "t,x,y,mode,lambda"
    assert zio.read_events_json(zio.events_json(tr.events)) == [
        type(e)(e.t, e.kind, tuple(float(v) for v in e.state)) for e in tr.events]


def test_trajectory_schema_errors():
    with pytest.raises(zio.SchemaError):
        zio.read_trajectory_csv("t,x,y,mode\n0,0,0,plus\n")
    with pytest.raises(zio.SchemaError):
        zio.read_trajectory_csv("t,x,y,mode,lambda\n0,0,0,sideways,\n")
    with pytest.raises(zio.SchemaError):
        zio.read_trajectory_csv("t,x,y,mode,lambda\n0,0,0,slide,\n")
    with pytest.raises(zio.SchemaError):
        zio.read_trajectory_csv("t,x,y,mode,lambda\n0,0,0,plus,0.5\n")
    with pytest.raises(zio.SchemaError):
        zio.read_trajectory_csv("t,x,y,mode,lambda\n0,0,0,slide,1.5\n")


def test_homotopy_csv_round_trip_with_absent_rows():
    s = build_system("dbl_tangency")
    path = an.homotopy_track(s, an.log_schedule(0.5, 1e-3, 8))
    rows = zio.read_homotopy_csv(zio.homotopy_csv(path))
    assert len(rows) == 9
    for r, row in zip(path.rows, rows):
        assert row["a"] == r.a
        if r.equilibrium is None:
            assert row["class"] == "absent" and math.isnan(row["x"])
        else:
            assert (row["x"], row["y"]) == r.equilibrium.location
            assert row["det"] == r.equilibrium.det


def test_manifold_csv_round_trip():
    s = build_system("dbl_tangency")
    (z,) = fl.classify_zombie(s)
    for m in an.manifold_analogues(s, z, box=s.box):
        meta, rows = zio.read_manifold_csv(zio.manifold_csv(m, s.h_value))
        assert meta["role"] == m.role and meta["kind"] == m.kind and meta["side"] == m.side
        assert (meta.get("truncated") == "true") == m.truncated
        assert [r[:3] for r in rows] == [r[:3] for r in m.trajectory.rows()]


@pytest.mark.parametrize("name", ["r_sliding", "dbl_tangency", "ebm2d"])
def test_boundary_json_round_trip(name):
    rep = fl.analyze_boundary(build_system(name))
    assert zio.read_boundary_json(zio.boundary_json(rep)) == rep.to_dict()


def test_boundary_json_rejects_extra_keys():
    d = fl.analyze_boundary(build_system("r_sliding")).to_dict()
    d["extra"] = 1
    with pytest.raises(zio.SchemaError):
        zio.read_boundary_json(json.dumps(d))


def test_nullclines_round_trip():
    lines = [("plus", 0, np.array([[0.0, 1.0], [0.5, 1.25]])), ("minus", 1, np.array([[1.0, 2.0], [3.0, 4.0]]))]
    back = zio.read_nullclines_csv(zio.nullclines_csv(lines))
    assert [(f, c, pts) for f, c, pts in back] == [(f, c, [tuple(p) for p in pts.tolist()]) for f, c, pts in lines]


def test_fmt_round_trips_floats():
    rng = random.Random(7)
    for _ in range(1000):
        v = rng.uniform(-1e6, 1e6) * 10 ** rng.randint(-20, 5)
        assert float(zio.fmt(v)) == v
    assert zio.fmt(float("nan")) == "nan"


# ---------------------------------------------------------------- CLI examples

def test_classify_r_sliding(capsys):
    code, out, _ = run(capsys, "classify", "--model", "r_sliding")
    assert code == 0
    d = zio.read_boundary_json(out)
    (iv,) = d["sliding_intervals"]
    assert iv["stability"] == "repelling"
    assert iv["range"] == pytest.approx([-1.0, 1.0], abs=1e-10)
    (pe,) = d["pseudoequilibria"]
    assert pe["point"][1] == pytest.approx(0.4, abs=1e-10) and pe["stability"] == "stable"
    assert [z["type"] for z in d["zombies"]] == ["RepellingSlidingZombie"]


def test_classify_three_saddle_k0(capsys):
    code, out, _ = run(capsys, "classify", "--model", "three_saddle", "-p", "k=0")
    d = json.loads(out)
    assert code == 0 and d["sliding_intervals"] == []
    (t,) = d["tangencies"]
    assert t["side"] == "double" and t["point"] == pytest.approx([0.0, 0.0], abs=1e-10)
    assert [z["type"] for z in d["zombies"]] == ["DoubleTangencyZombie"]


def test_classify_ebm(capsys):
    code, out, _ = run(capsys, "classify", "--model", "ebm2d")
    d = json.loads(out)
    assert d["sliding_intervals"][0]["range"] == pytest.approx([-1100.0, -920.0], abs=1e-9)
    assert d["pseudoequilibria"][0]["point"] == pytest.approx([290.0, -1010.0], abs=1e-9)


def test_simulate_writes_slide_rows(capsys, tmp_path):
    code, _, _ = run(capsys, "simulate", "--model", "a_sliding", "--x0", "0.8,1.5", "--t1", "10",
                     "--out", str(tmp_path))
    assert code == 0
    rows = zio.read_trajectory_csv((tmp_path / "a_sliding_trajectory.csv").read_text())
    assert any(r[3] == "slide" for r in rows)
    events = zio.read_events_json((tmp_path / "a_sliding_events.json").read_text())
    assert events[-1].kind == "time_limit"


def test_simulate_smoothed_has_no_slide_rows(capsys):
    code, out, _ = run(capsys, "simulate", "--model", "dbl_tangency", "--a", "0.1",
                       "--x0", "0.5,0.5", "--t1", "10")
    rows = zio.read_trajectory_csv(out)
    assert code == 0 and rows and all(r[3] != "slide" for r in rows)


def test_simulate_exit_policy(capsys):
    code, out, _ = run(capsys, "simulate", "--model", "r_sliding", "--x0", "0,0.1",
                       "--policy", "exit-plus", "--exit-after", "0.5", "--t1", "5")
    rows = zio.read_trajectory_csv(out)
    slide_t = [r[0] for r in rows if r[3] == "slide"]
    assert code == 0
    assert slide_t[-1] - slide_t[0] == pytest.approx(0.5, abs=1e-12)
    assert rows[-1][3] == "plus"


def test_homotopy_single_step(capsys):
    code, out, err = run(capsys, "homotopy", "--model", "ebm2d", "--param", "D",
                         "--from", "5", "--to", "1e-4", "--steps", "1")
    rows = zio.read_homotopy_csv(out)
    assert code == 0 and len(rows) == 2
    assert "limit_estimate" in err


def test_homotopy_wrong_param_is_a_model_error(capsys):
    code, out, _ = run(capsys, "homotopy", "--model", "ebm2d", "--param", "a",
                       "--from", "5", "--to", "1e-4")
    assert code == 2 and out == ""


def test_portrait_single_point_grid(capsys, tmp_path):
    code, _, _ = run(capsys, "portrait", "--model", "r_sliding", "--box", "-3,3,-3,3",
                     "--grid", "1x1", "--out", str(tmp_path))
    assert code == 0
    trajs = sorted(tmp_path.glob("r_sliding_traj_*.csv"))
    assert len(trajs) == 1
    root = ET.fromstring((tmp_path / "r_sliding_portrait.svg").read_text())
    assert root.tag.endswith("svg")
    zio.read_nullclines_csv((tmp_path / "r_sliding_nullclines.csv").read_text())
    zio.read_boundary_json((tmp_path / "r_sliding_boundary.json").read_text())


def test_manifolds_files(capsys, tmp_path):
    code, _, _ = run(capsys, "manifolds", "--model", "dbl_tangency", "--out", str(tmp_path))
    assert code == 0
    index = json.loads((tmp_path / "dbl_tangency_manifolds.json").read_text())
    assert len(index) == 4
    for entry in index:
        meta, rows = zio.read_manifold_csv((tmp_path / entry["file"]).read_text())
        assert meta["role"] == entry["role"] and rows


# ---------------------------------------------------------------- exit codes

def test_exit_code_model_errors(capsys, tmp_path):
    assert run(capsys, "classify", "--model", "nosuch")[0] == 2
    assert run(capsys, "classify", "--model", "r_sliding", "-p", "zz=1")[0] == 2
    bad = write_model(tmp_path, "bad", h="x", f_plus=["1 +", "y"], f_minus=["1", "y"])
    code, out, err = run(capsys, "classify", "--model", bad)
    assert code == 2 and out == "" and "model error" in err


def test_exit_code_degenerate(capsys, tmp_path):
    flat = write_model(tmp_path, "flat", h="x", f_plus=["0", "1"], f_minus=["0", "1"], arc=[-1, 1])
    code, out, err = run(capsys, "classify", "--model", flat)
    assert code == 3 and out == "" and "degenerate" in err


def test_exit_code_integration_failure_keeps_partial_output(capsys, tmp_path):
    blow = write_model(tmp_path, "blow", h="y", f_plus=["x^2", "1"], f_minus=["x^2", "1"])
    code, _, err = run(capsys, "simulate", "--model", blow, "--x0", "1,-10", "--t1", "2",
                       "--out", str(tmp_path / "o"))
    assert code == 4 and "integration failed" in err
    rows = zio.read_trajectory_csv((tmp_path / "o" / "blow_trajectory.csv").read_text())
    assert 0.9 < rows[-1][0] < 1.0


def test_exit_code_continuation_breakdown_keeps_partial_path(capsys, tmp_path):
    fold = write_model(tmp_path, "fold", h="x", f_plus=["y - x", "2*y - 1"],
                       f_minus=["y - x", "2*y + 1"],
                       smoothing={"profile": "tanh(xi)", "g_plus_0": 1, "g_minus_0": -1})
    code, out, err = run(capsys, "homotopy", "--model", fold, "--from", "2", "--to", "0.25",
                         "--steps", "2", "--seed", "0,0")
    assert code == 5 and "continuation" in err
    assert len(zio.read_homotopy_csv(out)) == 2


def test_exit_code_nondeterminism_detected(capsys, monkeypatch):
    def noisy(args):
        return {"x.csv": repr(random.random())}, "x.csv"
    parser = cli.build_parser
    def patched():
        ap = parser()
        for action in ap._subparsers._group_actions:
            action.choices["classify"].set_defaults(func=noisy)
        return ap
    monkeypatch.setattr(cli, "build_parser", patched)
    code, _, err = run(capsys, "classify", "--model", "r_sliding", "--seedless")
    assert code == 1 and "differ" in err


def test_seedless_passes_on_real_commands(capsys):
    assert run(capsys, "classify", "--model", "ebm2d", "--seedless")[0] == 0


# ---------------------------------------------------------------- determinism

def test_stdout_mode_carries_only_data(capsys):
    code, out, err = run(capsys, "simulate", "--model", "r_sliding", "--x0", "0,0.1", "--t1", "1",
                         "--out", "-")
    assert code == 0 and out.startswith("t,x,y,mode,lambda\n")
    assert "r_sliding_events.json" in err


def test_portrait_outputs_are_byte_identical(capsys, tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert run(capsys, "portrait", "--model", "dbl_tangency", "--grid", "3x3",
                   "--out", str(d))[0] == 0
    names = sorted(p.name for p in dirs[0].iterdir())
    assert names == sorted(p.name for p in dirs[1].iterdir())
    assert any(n.endswith(".svg") for n in names)
    for n in names:
        assert (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes(), n
