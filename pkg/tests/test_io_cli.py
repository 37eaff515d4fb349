import json
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from freeshape import cli
from freeshape.diagnostics import seed_for
from freeshape.errors import ChecksumError, ConfigInvalid
from freeshape.fields import ScalarField
from freeshape.geometry import ShapeMask, make_ball
from freeshape.grid import make_grid
from freeshape.io import (
    curve_csv,
    field_csv,
    mask_csv,
    read_field,
    read_mask_pgm,
    write_field,
    write_mask_pgm,
)

# -- io -------------------------------------------------------------------------------------


@settings(suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(dim=st.integers(1, 2), nx=st.integers(3, 12), ny=st.integers(3, 12),
       seed=st.integers(0, 2**31 - 1))
def test_field_roundtrip(dim, nx, ny, seed, tmp_path_factory):
    g = make_grid(dim, [1.0, 2.0][:dim], [nx, ny][:dim])
    u = ScalarField(g, np.random.default_rng(seed).normal(size=g.counts))
    base = tmp_path_factory.mktemp("f") / "u"
    write_field(base, u)
    back = read_field(base)
    assert back.grid == g and np.array_equal(back.values, u.values)


def test_field_payload_layout(tmp_path):
    g = make_grid(2, [1.0, 1.0], [3, 4])
    v = np.zeros(g.counts)
    v[1, 1], v[1, 2] = 1.5, -2.0
    write_field(tmp_path / "u", ScalarField(g, v))
    raw = np.frombuffer((tmp_path / "u.bin").read_bytes(), dtype="<f8")
    assert np.array_equal(raw, v.ravel(order="C"))
    side = json.loads((tmp_path / "u.json").read_text())
    assert side["dim"] == 2 and side["counts"] == [3, 4] and side["extents"] == [1.0, 1.0]


def test_corrupted_field(tmp_path):
    g = make_grid(1, [1.0], [9])
    write_field(tmp_path / "u", ScalarField(g, np.linspace(0, 1, 9)))
    data = bytearray((tmp_path / "u.bin").read_bytes())
    data[20] ^= 0xFF
    (tmp_path / "u.bin").write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        read_field(tmp_path / "u")


@pytest.mark.parametrize("dim", [1, 2])
def test_mask_pgm_roundtrip(dim, tmp_path, rng):
    g = make_grid(dim, [1.0, 0.5][:dim], [11, 7][:dim])
    m = ShapeMask(g, rng.random(g.cell_shape) < 0.5)
    write_mask_pgm(tmp_path / "m.pgm", m)
    text = (tmp_path / "m.pgm").read_text()
    assert text.startswith("P2\n")
    assert np.array_equal(read_mask_pgm(tmp_path / "m.pgm").cells, m.cells)
    assert np.array_equal(read_mask_pgm(tmp_path / "m.pgm", g).cells, m.cells)


def test_pgm_orientation(tmp_path):
    g = make_grid(2, [1.0, 1.0], [4, 3])  # 3 x 2 cells
    cells = np.zeros(g.cell_shape, bool)
    cells[2, 1] = True  # largest x, largest y: top-right pixel
    write_mask_pgm(tmp_path / "m.pgm", ShapeMask(g, cells))
    rows = [ln for ln in (tmp_path / "m.pgm").read_text().splitlines() if not ln.startswith("#")]
    assert rows[1] == "3 2"
    assert rows[3] == "0 0 1" and rows[4] == "0 0 0"


def test_csv_writers():
    g = make_grid(1, [1.0], [3])
    u = ScalarField(g, [0.0, 0.25, 0.0])
    assert field_csv(u).splitlines() == ["i0,x,value", "0,0.0,0.0", "1,0.5,0.25", "2,1.0,0.0"]
    m = ShapeMask(g, [True, False])
    assert mask_csv(m).splitlines() == ["i0,inside", "0,1", "1,0"]
    assert curve_csv(["r", "v"], [[0.1, 2]]) == "r,v\n0.1,2\n"


def test_seed_split_is_stable():
    assert seed_for(0, "fields") == seed_for(0, "fields")
    assert seed_for(0, "fields") != seed_for(0, "centers")
    assert seed_for(0, "fields") != seed_for(1, "fields")


# -- cli ------------------------------------------------------------------------------------


def write_config(path: Path, **blocks) -> Path:
    cfg = {
        "grid": {"dim": 1, "extents": [2.0], "counts": [65]},
        "problem": {"p": 4, "q": 3, "c": 1.0},
        "solver": {"seed": 0},
        "experiment": {"diagnostics": ["b_gap", "equivalence", "positivity", "isoperimetric"]},
        "output": {"dir": "out"},
    }
    for k, v in blocks.items():
        cfg[k] = v
    path.write_text(json.dumps(cfg))
    return path


def tree_digest(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_run_creates_output_and_is_byte_identical(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json", output={"dir": "deep/nested/out"})
    assert cli.main(["run", str(cfg)]) == 0
    out = tmp_path / "deep/nested/out"
    first = tree_digest(out)
    assert "solution.bin" in first and "solution_mask.pgm" in first
    assert "verdicts/equivalence.json" in first and "summary.json" in first
    assert cli.main(["run", str(cfg)]) == 0
    assert tree_digest(out) == first
    for name in ("b_gap", "equivalence", "positivity", "isoperimetric"):
        v = json.loads((out / "verdicts" / f"{name}.json").read_text())
        assert v["pass"] is True and v["theorem"]


def test_eigen_on_stored_disk_mask(tmp_path, capsys):
    g = make_grid(2, [2.0, 2.0], [33, 33])
    write_mask_pgm(tmp_path / "disk.pgm", make_ball(g, [1.0, 1.0], 0.5))
    cfg = write_config(tmp_path / "cfg.json",
                       grid={"dim": 2, "extents": [2.0, 2.0], "counts": [33, 33]},
                       problem={"p": 3, "q": 2.5}, experiment={})
    assert cli.main(["eigen", str(cfg), "--mask", str(tmp_path / "disk.pgm")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert {"lambda", "iterations", "degenerate"} <= set(out)
    assert out["lambda"] > 0 and out["degenerate"] is False
    assert (tmp_path / "out" / "eigen.json").exists()


def test_eigen_with_inline_shape_and_diagnostic_mode(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json",
                       grid={"dim": 1, "extents": [1.0], "counts": [257]},
                       problem={"p": 2, "q": 2}, solver={"diag_p2q2": True},
                       experiment={"shape": {"kind": "full"}})
    assert cli.main(["eigen", str(cfg)]) == 0
    assert json.loads(capsys.readouterr().out)["lambda"] == pytest.approx(2 * np.pi**2, rel=5e-3)


def test_p_equal_q_needs_the_flag(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json", problem={"p": 2, "q": 2, "c": 1.0})
    assert cli.main(["run", str(cfg)]) == 2
    assert "problem.q" in capsys.readouterr().err
    with pytest.raises(ConfigInvalid) as exc:
        cli.load_config(cfg)
    assert exc.value.key == "problem.q"


@pytest.mark.parametrize("blocks,key", [
    ({"grid": {"dim": 3, "extents": [1, 1, 1], "counts": [5, 5, 5]}}, "grid"),
    ({"solver": {"bogus": 1}}, "solver.bogus"),
    ({"problem": {"p": 4, "q": 3, "c": -1}}, "problem.c"),
    ({"problem": {"p": 4, "q": 3, "c": 1.0, "mu": "lots"}}, "problem.mu"),
    ({"experiment": {"diagnostics": ["nope"]}}, "experiment.diagnostics"),
    ({"experiment": {"mask": "missing.pgm"}}, "experiment.mask"),
    ({"experiment": {"shape": {"kind": "ball", "center": [0.1], "radius": 0.5}}}, "experiment.shape"),
])
def test_invalid_configs_name_the_key(tmp_path, capsys, blocks, key):
    cfg = write_config(tmp_path / "cfg.json", **blocks)
    assert cli.main(["run", str(cfg)]) == 2
    assert key in capsys.readouterr().err
    assert not (tmp_path / "out").exists(), "nothing may run before validation"


def test_missing_config(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "nope.json")]) == 2


def test_nonconvergence_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json", solver={"max_iters": 1, "tol": 1e-14},
                       experiment={"diagnostics": ["equivalence"]})
    assert cli.main(["run", str(cfg)]) == 3
    assert "NonConvergence" in capsys.readouterr().err


def test_verify_on_corrupted_field(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json")
    assert cli.main(["optimize", str(cfg)]) == 0
    assert cli.main(["verify", str(cfg)]) == 0
    sol = tmp_path / "out" / "solution.bin"
    data = bytearray(sol.read_bytes())
    data[100] ^= 0x01
    sol.write_bytes(bytes(data))
    assert cli.main(["verify", str(cfg)]) != 0
    assert "ChecksumError" in capsys.readouterr().err


def test_failing_diagnostic_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json",
                       grid={"dim": 2, "extents": [2.0, 2.0], "counts": [33, 33]},
                       problem={"p": 3, "q": 2.5},
                       experiment={"continuity": {"center": [1.01, 0.99], "radius": 0.5,
                                                  "n": [1, 2, 3]}})
    # n = 3 leaves a gap far above 1%
    assert cli.main(["continuity", str(cfg)]) == 1
    v = json.loads((tmp_path / "out" / "verdicts" / "continuity.json").read_text())
    assert v["pass"] is False and v["metrics"]["monotone"] is True
    assert (tmp_path / "out" / "curves" / "continuity.csv").exists()


def test_report_over_empty_directory(tmp_path, capsys):
    assert cli.main(["report", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["count"] == 0 and summary["failed"] == []


def test_report_aggregates(tmp_path, capsys):
    vd = tmp_path / "verdicts"
    vd.mkdir()
    for name, ok in (("a", True), ("b", False)):
        (vd / f"{name}.json").write_text(json.dumps(
            {"name": name, "theorem": "t", "pass": ok, "metrics": {}}))
    assert cli.main(["report", str(tmp_path)]) == 1
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["count"] == 2 and summary["failed"] == ["b"]


def test_penalized_mode_with_auto(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json",
                       problem={"p": 4, "q": 3, "c": 1.0, "mu": "auto", "lambda_c": "auto"},
                       experiment={"mode": "penalized", "diagnostics": ["equivalence"]})
    assert cli.main(["optimize", str(cfg)]) == 0
    rec = json.loads((tmp_path / "out" / "optimize.json").read_text())
    assert rec["mu"] == pytest.approx(2 * rec["mu_star"])
    assert rec["support_volume"] <= 1.0 + 2.0 / 64
    assert rec["J_value"] == pytest.approx(rec["lambda_c_input"], rel=1e-2)


def test_thread_variable(monkeypatch):
    monkeypatch.setenv("FREESHAPE_THREADS", "3")
    for var in cli.THREAD_VARS:
        monkeypatch.delenv(var, raising=False)
    cli._apply_threads()
    assert all(os.environ[v] == "3" for v in cli.THREAD_VARS)
