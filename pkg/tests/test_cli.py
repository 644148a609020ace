import json
from pathlib import Path

import pytest

from geodesic_recon import __version__
from geodesic_recon.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = {
    "sample-field": {"box": 10},
    "build-trees": {"window": 12, "max_doublings": 2},
    "sweep-distances": {"window": 12, "pairs": 20},
    "recon-partition": {"window": 20, "rows": 5},
    "recon-tree": {"window": 20},
    "recon-distance": {"window": 16, "pairs": 30},
    "shock-measure": {"window": 16, "rectangles": 50},
    "gauge-study": {"steps": 2**16, "scale": 2.0**-10, "trend_exponents": [5, 9]},
    "horizon-study": {"samples": 300, "reps": 2000, "half_width": 2.0},
}


def _run(tmp_path, command, config, *extra, name="run"):
    cfg = tmp_path / f"{name}.json"
    cfg.write_text(json.dumps(config))
    out = tmp_path / name
    return main([command, "--config", str(cfg), "--out", str(out), *extra]), out


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


@pytest.mark.parametrize("command", sorted(SMALL))
def test_small_runs_succeed_and_are_stamped(tmp_path, command):
    code, out = _run(tmp_path, command, SMALL[command])
    assert code == 0
    man = _manifest(out)
    assert man["passed"] and man["command"] == command
    assert man["version"] == __version__ and man["seed"] == 0 and len(man["config_hash"]) == 16
    for name in man["files"]:
        path = out / name
        if path.suffix == ".csv":
            assert path.read_text().startswith(f"# config_hash={man['config_hash']} seed=0 version={__version__}")
        elif path.suffix == ".json":
            assert json.loads(path.read_text())["meta"]["config_hash"] == man["config_hash"]


def test_end_to_end_tiny_config(tmp_path):
    out = tmp_path / "e2e"
    assert main(["end-to-end", "--config", str(CONFIGS / "tiny.json"), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["passed"]
    assert set(report["meta"]) == {"config_hash", "seed", "version"}


def test_adversarial_config_exits_one(tmp_path):
    out = tmp_path / "adv"
    assert main(["end-to-end", "--config", str(CONFIGS / "adversarial.json"), "--out", str(out)]) == 1
    assert any(f["check"] == "coverage" for f in _manifest(out)["failures"])


def test_usage_errors_exit_two(tmp_path):
    assert main(["no-such-command"]) == 2
    assert main([]) == 2
    code, _ = _run(tmp_path, "sample-field", {"colour": "red"})
    assert code == 2
    assert main(["sample-field", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 2
    assert main(["sample-field", "--threads", "0", "--out", str(tmp_path / "y")]) == 2


def test_outputs_are_byte_identical_across_runs(tmp_path):
    _, first = _run(tmp_path, "sweep-distances", SMALL["sweep-distances"], name="a")
    _, second = _run(tmp_path, "sweep-distances", SMALL["sweep-distances"], name="b")
    files = _manifest(first)["files"]
    assert files
    for name in files:
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_seed_override_changes_hash(tmp_path):
    _, a = _run(tmp_path, "sample-field", SMALL["sample-field"], name="a")
    _, b = _run(tmp_path, "sample-field", SMALL["sample-field"], "--seed", "5", name="b")
    ma, mb = _manifest(a), _manifest(b)
    assert mb["seed"] == 5 and ma["config_hash"] != mb["config_hash"]


def test_threads_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("RECON_DEFAULT_THREADS", "3")
    _, out = _run(tmp_path, "sample-field", SMALL["sample-field"], name="env")
    assert _manifest(out)["threads"] == 3
    _, out = _run(tmp_path, "sample-field", SMALL["sample-field"], "--threads", "2", name="flag")
    assert _manifest(out)["threads"] == 2
    monkeypatch.setenv("RECON_DEFAULT_THREADS", "many")
    code, _ = _run(tmp_path, "sample-field", SMALL["sample-field"], name="bad")
    assert code == 2


def test_report_collects_manifests(tmp_path):
    runs = tmp_path / "runs"
    runs.mkdir()
    _run(runs, "sample-field", SMALL["sample-field"], name="ok")
    assert main(["report", "--out", str(runs)]) == 0
    main(["end-to-end", "--config", str(CONFIGS / "adversarial.json"), "--out", str(runs / "bad")])
    assert main(["report", "--out", str(runs)]) == 1
    assert main(["report", "--out", str(tmp_path / "empty")]) == 2
