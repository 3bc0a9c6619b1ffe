import csv
import json

import numpy as np
import pytest

from ergokit import grid
from ergokit.cli import main
from ergokit.grid import GridFunction
from ergokit.io import load_grid, save_grid, save_grid_csv


@pytest.fixture
def restore_cap():
    cap = grid.memory_cap()
    yield
    grid.set_memory_cap(cap)


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == 0 else None)


def test_orbit_then_average_with_residuals(tmp_path, capsys):
    code, s = _run(capsys, "orbit", "--P", 13, "--l", 2, "--alpha", "sqrt2-1,golden",
                   "--out", tmp_path / "o")
    assert code == 0 and s["l"] == 2
    files = s["files"]
    code, s = _run(capsys, "--seed", 4, "average", *files, "--N", "1,5,20", "--out", tmp_path / "a")
    assert code == 0 and s["seed"] == 4 and s["max_residual"] <= 1e-12
    with open(tmp_path / "a" / "residuals.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["N"] for r in rows] == ["1", "5", "20"]
    assert (tmp_path / "a" / "AN_N5.csv").exists()


def test_seed_after_subcommand(tmp_path, capsys, rng):
    save_grid(GridFunction(rng.uniform(-1, 1, 9)), tmp_path / "g.grid")
    code, s = _run(capsys, "average", tmp_path / "g.grid", "--op", "SN", "--N", 3, "--seed", 9,
                   "--oracle", "--out", tmp_path / "a")
    assert code == 0 and s["seed"] == 9 and s["oracle"] is True


def test_factor_build_inspect_join(tmp_path, capsys, rng):
    save_grid_csv(GridFunction(rng.uniform(-1, 1, 40)), tmp_path / "phi.csv")
    for name, alpha in (("y1", 0.1), ("y2", 0.6)):
        code, s = _run(capsys, "factor", "build", tmp_path / "phi.csv", "--eta0", 0.2,
                       "--alpha", alpha, "--out", tmp_path / name)
        assert code == 0 and s["nonempty"] <= s["atoms"]
    code, s = _run(capsys, "factor", "inspect", tmp_path / "y1")
    assert code == 0 and s["shape"] == [40]
    code, s = _run(capsys, "factor", "join", tmp_path / "y1", tmp_path / "y2", "--out", tmp_path / "j")
    assert code == 0 and s["nonempty"] >= 1


def test_correlate_single_and_hypergraph(tmp_path, capsys):
    P = 1009
    v = np.arange(P)
    save_grid(GridFunction(0.8 * np.cos(2 * np.pi * v / P)), tmp_path / "g.grid")
    code, s = _run(capsys, "correlate", tmp_path / "g.grid", "--M", 2, "--N", 223, "--eps", 0.3,
                   "--out", tmp_path / "c")
    assert code == 0 and s["found"] and abs(s["correlation"]) >= 0.045
    assert (tmp_path / "c" / "witness.csv").exists()
    r = np.random.default_rng(1)
    for i in (1, 2):
        save_grid(GridFunction(np.clip(0.7 + 0.3 * r.uniform(-1, 1, (7, 7)), -1, 1)), tmp_path / f"h{i}.grid")
    code, s = _run(capsys, "correlate", f"{tmp_path}/h1.grid:1,3", f"{tmp_path}/h2.grid:2,3",
                   "--edge", "1,3", "--M", 1, "--N", 5, "--eps", 0.3, "--window-constant", 0,
                   "--out", tmp_path / "h")
    assert code == 0 and s["found"] and s["edge"] == [1, 3]


def test_kvn_outputs(tmp_path, capsys):
    P = 4096
    v = np.arange(P)
    save_grid(GridFunction((1 + np.cos(2 * np.pi * v / P)) / 2), tmp_path / "g.grid")
    (tmp_path / "k.cfg").write_text("eps = 2\nladder = 1,2,4,8\n")
    code, s = _run(capsys, "kvn", tmp_path / "g.grid", "--config", tmp_path / "k.cfg", "--out", tmp_path / "k")
    assert code == 0 and s["status"] == "Uniform" and s["steps"] >= 1
    rep = json.loads((tmp_path / "k" / "report.json").read_text())
    assert rep["relaxed"] is False and rep["check_grid"]
    g = load_grid(tmp_path / "g.grid").values
    parts = load_grid(tmp_path / "k" / "structured.grid").values + load_grid(tmp_path / "k" / "uniform.grid").values
    assert np.max(np.abs(parts - g)) <= 1e-12
    assert (tmp_path / "k" / "factor.npy").exists()


def test_kvn_bad_key_and_missing_ladder(tmp_path, capsys, rng):
    save_grid(GridFunction(rng.uniform(0, 1, 16)), tmp_path / "g.grid")
    (tmp_path / "k.cfg").write_text("eps = 2\nladder = 1,2\nbogus = 1\n")
    assert main(["kvn", str(tmp_path / "g.grid"), "--config", str(tmp_path / "k.cfg")]) == 2
    assert main(["kvn", str(tmp_path / "g.grid"), "--eps", "1"]) == 2


def test_metastable_command(tmp_path, capsys, rng):
    save_grid(GridFunction(rng.uniform(-1, 1, 31)), tmp_path / "g.grid")
    code, s = _run(capsys, "metastable", tmp_path / "g.grid", "--op", "SN", "--eps", 0.4,
                   "--Mcap", 500, "--exhaustive", "--out", tmp_path / "m")
    assert code == 0 and s["status"] == "Certified" and s["exhaustive_max"] <= 0.4
    with open(tmp_path / "m" / "deviations.csv") as fh:
        assert next(csv.reader(fh)) == ["N", "deviation_from_M"]


def test_run_command(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("seed = 2\npipeline = orbit, average, metastable\norbit.P = 101\n"
                   "average.op = SN\nmetastable.eps = 0.5\n")
    code, s = _run(capsys, "run", cfg, "--out", tmp_path / "r", "--format", "csv", "json")
    assert code == 0 and s["claims"] == 1
    assert (tmp_path / "r" / "claims.csv").exists() and not (tmp_path / "r" / "report.md").exists()


def test_exit_codes(tmp_path, capsys, restore_cap, rng):
    assert main(["average", str(tmp_path / "missing.grid"), "--N", "1", "--out", str(tmp_path / "a")]) == 1
    save_grid(GridFunction(rng.uniform(size=(8, 8))), tmp_path / "g.grid")
    assert main(["average", str(tmp_path / "g.grid"), "--op", "SN", "--N", "2", "--out", str(tmp_path / "a")]) == 2
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("seed = 1\npipeline = orbit, average\naverage.op = nope\n")
    assert main(["run", str(cfg)]) == 2
    assert main(["--mem-cap", "10", "average", str(tmp_path / "g.grid"), "--N", "2", "--out", str(tmp_path / "a")]) == 4
