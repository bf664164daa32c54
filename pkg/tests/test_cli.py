from __future__ import annotations

import csv
import json
import math
import subprocess
import sys

import pytest

from superclt.cli import ExperimentConfig, main
from superclt.errors import InputError

BASE = {
    "model": {"dimension": 1, "drift_c": 1.0, "diffusion": 2.0, "branch_a": 2.0, "branch_b": 1.0, "k_max": 12},
    "functions": [
        {"name": "f3", "level": [3, 1]},
        {"name": "f4", "level": [4, 1]},
        {"name": "h2", "level": [2, 1]},
        {"name": "g1", "level": [1, 1]},
    ],
}
SIM = {"scale_n": 20, "checkpoints": [0.5, 1.0], "horizon_t": 1.0, "replicas": 200, "master_seed": 5}


def write_cfg(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_spectral_table(tmp_path, capsys):
    out = tmp_path / "spec.csv"
    assert main(["spectral", "--config", write_cfg(tmp_path, BASE), "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == ["k", "lambda_k", "multiplicity", "regime", "config_digest"]
    assert [r[:4] for r in rows[1:4]] == [["1", "-2", "1", "large"], ["2", "-1", "1", "critical"], ["3", "0", "1", "small"]]
    assert len(rows) == 14  # header plus levels 1..k_max+1
    assert "critical levels: 2" in capsys.readouterr().out


def test_limits_csv(tmp_path):
    out = tmp_path / "lim.csv"
    assert main(["limits", "--config", write_cfg(tmp_path, BASE), "--out", str(out)]) == 0
    rows = {r[0]: r for r in read_csv(out)[1:]}
    assert rows["f3"][1] == "small" and float(rows["f3"][3]) == pytest.approx(1.0, abs=1e-12)
    assert float(rows["f4"][3]) == pytest.approx(0.5, abs=1e-12)
    assert rows["h2"][1] == "critical" and float(rows["h2"][4]) == pytest.approx(2.0, abs=1e-12)
    assert rows["g1"][1] == "large" and float(rows["g1"][5]) == pytest.approx(1.0, abs=1e-12)
    assert float(rows["g1"][6]) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize(
    "patch,needle",
    [
        ({"model": {**BASE["model"], "branch_a": -1.0}}, "supercritical requires lambda_1 < 0"),
        ({"model": {**BASE["model"], "driftc": 1.0}}, "unknown config field(s): model.driftc"),
        ({"extra": 1}, "unknown config field(s): extra"),
        ({"functions": [{"name": "x", "level": [14, 1]}]}, ""),
        ({"functions": [{"name": "x", "level": [1, 1], "coeffs": []}]}, "exactly one"),
    ],
)
def test_invalid_configs_exit_2(tmp_path, capsys, patch, needle):
    assert main(["spectral", "--config", write_cfg(tmp_path, {**BASE, **patch})]) == 2
    assert needle in capsys.readouterr().err


def test_missing_file_and_bad_json(tmp_path):
    assert main(["spectral", "--config", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["spectral", "--config", str(bad)]) == 2


def test_bad_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("SUPERCLT_THREADS", "many")
    assert main(["spectral", "--config", write_cfg(tmp_path, BASE)]) == 2


def test_resource_cap_exit_3(tmp_path):
    cfg = {**BASE, "sim": {**SIM, "population_cap": 50}}
    assert main(["simulate", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "r.csv")]) == 3


def test_simulate_is_reproducible_and_thread_independent(tmp_path, monkeypatch):
    path = write_cfg(tmp_path, {**BASE, "sim": SIM})
    a, b, c = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv"))
    assert main(["simulate", "--config", path, "--out", str(a), "--seed", "11"]) == 0
    assert main(["simulate", "--config", path, "--out", str(b), "--seed", "11", "--threads", "3"]) == 0
    monkeypatch.setenv("SUPERCLT_THREADS", "2")
    assert main(["simulate", "--config", path, "--out", str(c), "--seed", "11"]) == 0
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()
    rows = read_csv(a)
    assert len(rows) == 1 + 200 * 2
    d = tmp_path / "d.csv"
    main(["simulate", "--config", path, "--out", str(d), "--seed", "12"])
    assert d.read_bytes() != a.read_bytes()


def test_digest_ignores_threads_and_paths_but_tracks_seed():
    a = ExperimentConfig.from_dict({**BASE, "sim": SIM, "output": {"report": "x.json"}})
    b = ExperimentConfig.from_dict({**BASE, "sim": SIM})
    c = ExperimentConfig.from_dict({**BASE, "sim": SIM}, seed=99)
    assert a.digest == b.digest != c.digest
    assert len(a.digest) == 64


def test_clt_section_must_name_known_functions():
    with pytest.raises(InputError):
        ExperimentConfig.from_dict({**BASE, "sim": SIM, "tests": {"clt": {"f": "f3", "h": "zz", "g": "g1", "t": 1.0}}})


def test_verify_report(tmp_path):
    cfg = {
        **BASE,
        "sim": {**SIM, "scale_n": 40, "replicas": 400, "horizon_t": 1.5, "checkpoints": [0.5, 1.0]},
        "tests": {"clt": {"f": "f3", "h": "h2", "g": "g1", "t": 1.0}, "covariance_pairs": [["f3", "f4"]],
                  "min_surviving": 50},
    }
    out = tmp_path / "report.json"
    code = main(["verify", "--config", write_cfg(tmp_path, cfg), "--out", str(out)])
    report = json.loads(out.read_text())
    assert code == (0 if report["verdict"] == "pass" else 4)
    names = [t["name"] for t in report["tests"]]
    assert len(names) == len(set(names))
    assert {"ks_c4", "ks_c3", "ks_c2", "cov_f3_f4", "survival_monotone"} <= set(names)
    assert report["config_digest"] == ExperimentConfig.from_dict(cfg).digest
    for t in report["tests"]:
        if t["p_value"] is not None:
            assert 0 <= t["p_value"] <= 1
        for key in ("statistic", "target"):
            assert t[key] is None or math.isfinite(t[key])


def test_verify_insufficient_survivors_exit_4(tmp_path):
    cfg = {
        **BASE,
        "sim": {**SIM, "replicas": 20},
        "tests": {"clt": {"f": "f3", "h": "h2", "g": "g1", "t": 1.0}, "min_surviving": 100},
    }
    assert main(["verify", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "r.json")]) == 4


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "superclt.cli", "spectral", "--config", write_cfg(tmp_path, BASE)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0 and "large" in proc.stdout
