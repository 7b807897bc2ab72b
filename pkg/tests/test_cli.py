import json
import math
from pathlib import Path

import numpy as np
import pytest

from loopforge.cli import main
from loopforge.records import LoopFixture, RunRecord, load_loop_file, parse_loop_text
from loopforge.errors import SpecFileError

DATA = Path(__file__).resolve().parent.parent / "data"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    doc = json.loads(out) if out.strip() else None
    return code, doc, err


def test_manifolds(capsys):
    code, doc, _ = run(capsys, "manifolds")
    assert code == 0
    assert len(doc["result"]["manifolds"]) == 6


def test_exp_half_great_circle(capsys, tmp_path):
    dump = tmp_path / "traj.csv"
    code, doc, _ = run(
        capsys, "exp", "--manifold", "round-sphere", "--R", "1", "--point", "1.5708,0", "--vector", "0,3.14159", "--dump", str(dump)
    )
    assert code == 0
    np.testing.assert_allclose(doc["result"]["endpoint"], [1.5708, 3.14159], atol=1e-4)
    lines = dump.read_text().splitlines()
    assert lines[0] == "t,x1,x2,v1,v2"
    table = np.loadtxt(dump, delimiter=",", skiprows=1)
    assert table[0, 0] == 0.0 and table[-1, 0] == pytest.approx(3.14159, abs=1e-5)


def test_geodesic_reports_clairaut(capsys):
    code, doc, _ = run(capsys, "geodesic", "--manifold", "torus-revolution", "--point", "0.3,0", "--vector", "1,1", "--length", "20")
    assert code == 0
    assert doc["result"]["clairaut"]["drift"] <= 1e-6
    assert doc["result"]["speed_drift"] <= 1e-7 * 20


def test_usage_errors(capsys):
    assert run(capsys, "exp", "--manifold", "round-sphere")[0] == 2
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "exp", "--manifold", "nowhere")[0] == 2
    code, _, err = run(capsys, "exp", "--manifold", "catenoid", "--point", "1,x", "--vector", "1,0")
    assert code == 2 and "--point" in err
    assert run(capsys, "geodesic", "--manifold", "catenoid", "--point", "0,0", "--vector", "1,0", "--length", "-1")[0] == 2
    assert run(capsys, "exp", "--point", "0,0", "--vector", "1,0")[0] == 2


def test_domain_errors(capsys):
    code, doc, err = run(capsys, "exp", "--manifold", "round-sphere", "--point", "4,0", "--vector", "1,0")
    assert code == 1 and doc["status"] == "error" and doc["result"]["error"] == "PointOutsideChart"
    code, doc, _ = run(capsys, "geodesic", "--manifold", "round-sphere", "--point", "0.5,0", "--vector=-1,0", "--length", "3")
    assert code == 1 and doc["result"]["error"] == "LeftChartDomain"
    code, doc, _ = run(capsys, "manifolds", "--manifold", "catenoid", "--R", "2")
    assert code == 0  # manifolds ignores the model flags
    code, doc, _ = run(capsys, "exp", "--manifold", "catenoid", "--R", "2", "--point", "0,0", "--vector", "1,0")
    assert code == 1 and doc["result"]["error"] == "BadParams"


def test_loops_and_conjugate(capsys):
    code, doc, _ = run(capsys, "loops", "--manifold", "flat-cylinder", "--point", "0,0", "--length", "10")
    assert code == 0 and doc["result"]["count"] == 2
    for lp in doc["result"]["loops"]:
        assert lp["length"] == pytest.approx(2 * math.pi, abs=1e-8)
        assert lp["closed"] and not lp["self_conjugate"]
    code, doc, _ = run(capsys, "conjugate", "--manifold", "round-sphere", "--point", "1.2,0", "--vector", "0.2,1", "--length", "4")
    assert code == 0 and doc["result"]["distance"] == pytest.approx(math.pi, abs=1e-4)
    code, doc, _ = run(capsys, "injradius", "--manifold", "euclidean-plane", "--point", "0,0", "--length", "3", "--directions", "4")
    assert code == 0 and doc["result"]["radius"] == math.inf


def test_determinism(capsys):
    argv = ["loops", "--manifold", "pseudosphere", "--point", "0.5,0", "--length", "3", "--seed", "7", "--no-time"]
    main(argv)
    first = capsys.readouterr().out
    main(argv)
    second = capsys.readouterr().out
    assert first == second
    assert "wall_time" not in first


def test_shorten_neck_fixture(capsys):
    code, doc, _ = run(capsys, "shorten", "--manifold", "catenoid", "--c", "1", "--loop-file", str(DATA / "neck_corner.loop"))
    assert code == 0
    assert doc["status"] == "closed-geodesic"
    assert doc["result"]["final_loop"]["length"] == pytest.approx(2 * math.pi, abs=1e-3)


def test_shorten_closed_input(capsys):
    code, doc, _ = run(capsys, "shorten", "--manifold", "flat-cylinder", "--point", "0,0", "--vector", "0,1", "--length", "6.283185307179586")
    assert code == 0 and doc["status"] == "closed-geodesic" and doc["result"]["iterations"] == 0


def test_spec_file_command(capsys, tmp_path):
    spec = tmp_path / "plane.manifold"
    spec.write_text("name = slanted\ndim = 2\ng 1 1 = 2\ng 2 2 = 1\ng 1 2 = 0.5\n")
    code, doc, _ = run(capsys, "exp", "--spec-file", str(spec), "--point", "0,0", "--vector", "1,1")
    assert code == 0 and doc["manifold"] == "slanted"
    np.testing.assert_allclose(doc["result"]["endpoint"], [1.0, 1.0], atol=1e-12)


def test_bench(capsys):
    code, doc, _ = run(capsys, "bench")
    assert code == 0 and doc["status"] == "ok"
    assert doc["result"]["passed"] == doc["result"]["total"] == 4
    assert sorted(doc["timings"]) == sorted(doc["result"]["cases"])


def test_record_round_trip():
    rec = RunRecord("loops", "catenoid", {"c": 1.0}, {"loops": [{"length": 6.5, "base": [0.5, 0.0]}]}, wall_time=0.25)
    again = RunRecord.from_json(rec.to_json())
    assert again == rec
    assert RunRecord.from_json(rec.to_json(include_time=False)).result == rec.result


def test_loop_fixture_format(tmp_path):
    fx = load_loop_file(DATA / "neck_corner.loop")
    assert fx.l == pytest.approx(6.5375411951, abs=1e-9)
    again = parse_loop_text(LoopFixture(fx.p, fx.w, fx.l).to_text())
    np.testing.assert_array_equal(again.p, fx.p)
    np.testing.assert_array_equal(again.w, fx.w)
    assert again.l == fx.l
    for bad in ("p = 1, 2; w = 1, 0", "p = 1, 2; w = 1; l = 3", "p = a; w = 1; l = 2", "p = 1, 2; w = 1, 0; l = -1"):
        with pytest.raises(SpecFileError):
            parse_loop_text(bad)
