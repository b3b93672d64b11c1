import json

import numpy as np
import pytest
import yaml

from photostat._csv import read_columns
from photostat.cli import config_hash, main, validate_config
from photostat.exceptions import ConfigError
from photostat.tagstore import TagStream, write_stream

BASE = {
    "mcwf": {"scenario": "mcwf", "rabi": 5.0, "shots": 2000, "seed": 42, "shot_duration_ns": 200},
    "chaotic": {"scenario": "chaotic", "rabi": 5.0, "shots": 800, "seed": 7, "n_emitters": 100,
                "shot_duration_ns": 200},
    "coherent_mix": {"scenario": "coherent_mix", "rabi": 5.0, "shots": 400, "seed": 1, "n_emitters": 50,
                     "coherent_fraction": 0.3, "shot_duration_ns": 200},
    "fixture": {"scenario": "fixture", "rabi": 5.0, "shots": 800, "seed": 3, "n_emitters": 100,
                "delete_prob": 0.5, "shot_duration_ns": 200},
}


def _write_cfg(tmp_path, cfg, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


@pytest.fixture(scope="module")
def pipelines(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    out = {}
    for name, cfg in BASE.items():
        d = root / name
        d.mkdir()
        cfg_path = _write_cfg(d, cfg)
        assert main(["simulate", str(cfg_path), "-o", str(d / "s.ptag")]) == 0
        assert main(["correlate", str(d / "s.ptag"), "-o", str(d), "--bootstrap", "50", "--blocks", "100",
                     "--tau-max-ns", "30"]) == 0
        assert main(["analyze", str(d / "g2_tau.csv"), "--rabi", "5", "-o", str(d)]) == 0
        out[name] = d
    return out


@pytest.mark.parametrize("scenario", sorted(BASE))
def test_pipeline_outputs(pipelines, scenario):
    d = pipelines[scenario]
    for f in ("s.ptag", "s.ptag.manifest.json", "g2_matrix.csv", "g2_tau.csv", "intensity.csv",
              "siegert.csv", "connected.csv", "summary.json", "correlate_manifest.json", "analyze_manifest.json"):
        assert (d / f).exists(), f
    g2 = read_columns(d / "g2_tau.csv")
    assert set(g2) >= {"tau_ps", "g2", "stderr"}
    assert np.all(np.diff(g2["tau_ps"]) > 0)
    summary = json.loads((d / "summary.json").read_text())
    assert summary["verdict"] in ("violation", "consistent with Siegert")
    if scenario == "mcwf":
        assert summary["verdict"] == "violation"
    m = json.loads((d / "s.ptag.manifest.json").read_text())
    for key in ("command", "config_hash", "seed", "tool_version", "input_paths", "output_paths", "wall_time"):
        assert key in m
    assert m["seed"] == BASE[scenario]["seed"]
    assert m["config_hash"] == config_hash(validate_config(BASE[scenario]))


def test_rerun_is_byte_identical(pipelines, tmp_path):
    d = pipelines["chaotic"]
    cfg_path = _write_cfg(tmp_path, BASE["chaotic"])
    assert main(["simulate", str(cfg_path), "-o", str(tmp_path / "s.ptag")]) == 0
    assert (tmp_path / "s.ptag").read_bytes() == (d / "s.ptag").read_bytes()
    assert main(["correlate", str(tmp_path / "s.ptag"), "-o", str(tmp_path), "--bootstrap", "50",
                 "--blocks", "100", "--tau-max-ns", "30", "--workers", "2"]) == 0
    for f in ("g2_tau.csv", "g2_matrix.csv", "intensity.csv"):
        assert (tmp_path / f).read_bytes() == (d / f).read_bytes()


def test_missing_key_is_named(tmp_path, capsys):
    cfg = dict(BASE["mcwf"])
    del cfg["rabi"]
    code = main(["simulate", str(_write_cfg(tmp_path, cfg))])
    assert code != 0
    assert "rabi" in capsys.readouterr().err


def test_unknown_key_and_scenario(tmp_path, capsys):
    assert main(["simulate", str(_write_cfg(tmp_path, {**BASE["mcwf"], "colour": "red"}))]) == 2
    assert "colour" in capsys.readouterr().err
    assert main(["simulate", str(_write_cfg(tmp_path, {**BASE["mcwf"], "scenario": "laser"}))]) == 2
    assert "laser" in capsys.readouterr().err


def test_validate_config_types():
    with pytest.raises(ConfigError, match="shots"):
        validate_config({**BASE["mcwf"], "shots": 1.5})
    with pytest.raises(ConfigError, match="n_emitters"):
        validate_config({k: v for k, v in BASE["chaotic"].items() if k != "n_emitters"})
    cfg = validate_config(BASE["mcwf"])
    assert cfg["gamma_hz"] == 6e6 and cfg["bin_ns"] == 1.0


def test_json_config_accepted(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({**BASE["mcwf"], "shots": 50}))
    assert main(["simulate", str(path)]) == 0
    assert (tmp_path / "run.ptag").exists()


def test_empty_stream_warns(tmp_path, caplog):
    empty = TagStream.from_arrays([], [], [], shot_count=10, shot_duration_ps=200_000)
    write_stream(empty, tmp_path / "e.ptag")
    assert main(["correlate", str(tmp_path / "e.ptag"), "-o", str(tmp_path)]) == 0
    assert "no tags" in caplog.text
    assert read_columns(tmp_path / "g2_tau.csv")["g2"].size == 0


def test_missing_file_exit_code(tmp_path):
    assert main(["correlate", str(tmp_path / "nope.ptag"), "-o", str(tmp_path)]) != 0


def test_heterodyne_model_route(tmp_path, capsys):
    assert main(["heterodyne", "--rabi", "4.5", "--i-lo", "10", "--i-sc", "1", "-o", str(tmp_path)]) == 0
    for f in ("g2_hd.csv", "g1.csv", "spectrum.csv"):
        assert (tmp_path / f).exists()
    spec = read_columns(tmp_path / "spectrum.csv")
    assert spec["S_normalized"][spec["omega_rad_per_s"] == 0][0] == 1.0
    assert main(["heterodyne", "--rabi", "4.5", "--i-lo", "0", "--i-sc", "1", "-o", str(tmp_path)]) == 2


def test_scaling_from_csv(tmp_path):
    n = np.array([10, 30, 100, 300, 1000], float)
    path = tmp_path / "pts.csv"
    path.write_text("N,intensity\n" + "".join(f"{a},{0.5 * a}\n" for a in n))
    assert main(["scaling", str(path), "-o", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "scaling.json").read_text())
    assert report["exponent"] == pytest.approx(1.0, abs=1e-6)
    assert main(["scaling", "-o", str(tmp_path)]) == 2
