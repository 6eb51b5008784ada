import json
import os

import numpy as np
import pytest

from latthresh.cli import THREADS_ENV, build_parser, default_config_path, main
from latthresh.io import read_csv


def run(tmp_path, cmd, cfg, *extra):
    path = tmp_path / f"{cmd}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / f"out_{cmd}"
    return main([cmd, "--config", str(path), "--out", str(out), *extra]), out


D1 = {"dim": 1, "potential": {"delta": -1.0}, "mu": 1.0, "k": [[0.0], [1.0]]}


def test_default_config_is_valid():
    from latthresh.config import load_config
    cfg = load_config(default_config_path())
    assert cfg.dim == 3 and cfg.get("validate", "criteria") == list(range(1, 10))


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["nope"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args([])
    assert exc.value.code == 2


def test_malformed_config(tmp_path, capsys):
    code, _ = run(tmp_path, "spectrum", {"dim": 1, "mu": "lots"})
    assert code == 2 and "mu" in capsys.readouterr().err


def test_green_threshold_d3(tmp_path):
    code, out = run(tmp_path, "green", {"dim": 3, "k": [0, 0, 0], "green": {"window": 1}})
    assert code == 0
    meta, header, rows = read_csv(str(out / "green_000.csv"))
    assert header == ["x1", "x2", "x3", "value", "abs_error", "method"]
    origin = [r for r in rows if r[:3] == ["0", "0", "0"]][0]
    assert float(origin[3]) == pytest.approx(0.2527310098, abs=1e-9)
    assert "config_hash" in meta


def test_green_rejections(tmp_path, capsys):
    code, _ = run(tmp_path, "green", {"dim": 2, "green": {"z": "threshold"}})
    assert code == 2 and "d >= 3" in capsys.readouterr().err
    code, _ = run(tmp_path, "green", {"dim": 1, "green": {"z": 5.0}})
    assert code == 2 and "above the threshold" in capsys.readouterr().err


def test_green_off_threshold(tmp_path):
    code, out = run(tmp_path, "green", {"dim": 1, "k": [0.0], "green": {"z": -1.0, "window": 2,
                                                                      "method": "quadrature"}})
    _, _, rows = read_csv(str(out / "green_000.csv"))
    vals = {int(r[0]): float(r[1]) for r in rows}
    assert vals[0] == pytest.approx(5 ** -0.5, abs=1e-12)


def test_spectrum_and_sweep_agree(tmp_path):
    cfg = dict(D1, k=[[0.7]])
    c1, o1 = run(tmp_path, "spectrum", cfg)
    c2, o2 = run(tmp_path, "sweep", cfg)
    assert c1 == c2 == 0
    _, h1, r1 = read_csv(str(o1 / "spectrum.csv"))
    _, h2, r2 = read_csv(str(o2 / "sweep.csv"))
    assert h2[:len(h1)] == h1 and [r[:len(h1)] for r in r2] == r1
    z = float(r1[0][h1.index("z")])
    assert z == pytest.approx(2 - np.sqrt(4 * np.cos(0.35) ** 2 + 1), abs=1e-10)


def test_sweep_audit_columns(tmp_path):
    code, out = run(tmp_path, "sweep", dict(D1, k={"grid": {"lo": -2.0, "hi": 2.0, "num": 5}}))
    assert code == 0
    _, header, rows = read_csv(str(out / "sweep.csv"))
    assert all(r[header.index("lower_bound_ok")] == "1" for r in rows)
    summary = json.load(open(out / "sweep.json"))
    assert summary["bound_violations"] == 0 and summary["cnd"] is True


def test_determinism(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    run(a, "sweep", D1)
    run(b, "sweep", D1)
    for name in ("sweep.csv", "sweep.json"):
        assert (a / "out_sweep" / name).read_bytes() == (b / "out_sweep" / name).read_bytes()


def test_threads_override(tmp_path, monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "2")
    code, out = run(tmp_path, "spectrum", dict(D1, threads=1))
    assert code == 0
    monkeypatch.setenv(THREADS_ENV, "two")
    code, _ = run(tmp_path, "spectrum", D1)
    assert code == 2
    code, _ = run(tmp_path, "spectrum", D1, "--threads", "3")
    assert code == 0


def test_classify_and_phase_map(tmp_path):
    cfg = {"dim": 3, "mu": "critical", "k": [[0, 0, 0], [0.6, 0, 0]], "k0": [0, 0, 0]}
    code, out = run(tmp_path, "classify", cfg)
    assert code == 0
    reps = json.load(open(out / "classify.json"))["reports"]
    assert reps[0]["status"] == "singular" and reps[0]["kind"] == "resonance"
    assert reps[1]["status"] == "regular" and reps[1]["bound_count"] == 1
    code, out = run(tmp_path, "phase-map", cfg)
    assert code == 0
    _, header, rows = read_csv(str(out / "phase_map.csv"))
    assert [r[header.index("label")] for r in rows] == ["Mcal_eq", "Mcal_gt"]
    summary = json.load(open(out / "phase_map.json"))
    assert summary["operator_hypothesis"]["status"] == "consistent"
    assert summary["near_k_eq"] == {"Mcal_gt": "found", "Mcal_lt": "not found at this resolution"}
    code, _ = run(tmp_path, "phase-map", dict(cfg, mu=2.0))
    assert code == 2
    code, _ = run(tmp_path, "spectrum", cfg)
    assert code == 2


def test_oracle_command(tmp_path):
    code, out = run(tmp_path, "oracle", dict(D1, oracle={"N": 6, "z_ladder": 8}))
    assert code == 0
    rep = json.load(open(out / "oracle.json"))
    assert rep["fiber_check"]["ok"] and not rep["falsifications"]
    _, header, rows = read_csv(str(out / "counts.csv"))
    assert len(rows) == 16 and all(r[-1] == "1" for r in rows)
    _, header, rows = read_csv(str(out / "bs_vs_box.csv"))
    assert all(r[header.index("agree")] == "1" for r in rows)


def test_validate_subset(tmp_path, capsys):
    code, out = run(tmp_path, "validate", {"dim": 1, "validate": {"criteria": [1, 8]}})
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert sum(line.startswith("criterion ") for line in lines) == 2
    rep = json.load(open(out / "validate.json"))
    assert [c["number"] for c in rep["criteria"]] == [1, 8]
