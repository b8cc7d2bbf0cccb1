import hashlib
import json
import math

import numpy as np
import pytest

from spolab.cli import main
from spolab.config import RunConfig, fixture_root, resolve_path
from spolab.envbed import PolicyTable, true_values

SMALL = {
    "algorithm": "spo",
    "env": {"M": 12, "K": 3, "seed": 4},
    "batch_size": 8,
    "iterations": 6,
    "seed": 0,
    "optim": {"lr": 1.0, "minibatch": 4},
}


def write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def digests(root):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.glob("*.json"))}


class TestTrain:
    def test_outputs_and_determinism(self, tmp_path):
        cfg = write(tmp_path / "cfg.json", SMALL)
        assert main(["train", "--config", cfg, "--seed", "7", "--out", str(tmp_path / "a")]) == 0
        assert main(["train", "--config", cfg, "--seed", "7", "--out", str(tmp_path / "b")]) == 0
        a, b = tmp_path / "a", tmp_path / "b"
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
        assert (a / "tracker.json").read_bytes() == (b / "tracker.json").read_bytes()
        manifest = json.loads((a / "manifest.json").read_text())
        assert manifest["seeds"]["master"] == 7
        assert manifest["config"]["seed"] == 7
        assert manifest["fixture_hashes"]

    def test_manifest_rerun(self, tmp_path):
        cfg = write(tmp_path / "cfg.json", {**SMALL, "env": "env_drift", "batch_size": 16})
        main(["train", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["train", "--manifest", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_grpo_has_no_tracker(self, tmp_path):
        cfg = write(tmp_path / "cfg.json", {**SMALL, "algorithm": "grpo", "group_size": 4})
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "g")]) == 0
        assert not (tmp_path / "g" / "tracker.json").exists()

    def test_tracker_init_reused(self, tmp_path):
        cfg = write(tmp_path / "cfg.json", SMALL)
        snap = str(tmp_path / "snap.json")
        assert main(["init-tracker", "--config", cfg, "--out", snap]) == 0
        assert main(["train", "--config", cfg, "--tracker-init", snap, "--out", str(tmp_path / "a")]) == 0
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
        # the offline init uses the same seed stream, so both starts coincide
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = write(tmp_path / "cfg.json", {**SMALL, "algorithm": "grpo", "batch_size": 10, "group_size": 4})
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "x")]) == 1
        assert "divisible" in capsys.readouterr().err

    def test_missing_fixture(self, tmp_path, capsys):
        assert main(["train", "--config", "no_such_fixture", "--out", str(tmp_path)]) == 1
        assert "no_such_fixture" in capsys.readouterr().err

    def test_snapshot_mismatch(self, tmp_path):
        cfg = write(tmp_path / "cfg.json", SMALL)
        snap = str(tmp_path / "snap.json")
        main(["init-tracker", "--config", cfg, "--out", snap])
        other = write(tmp_path / "other.json", {**SMALL, "env": {"M": 5, "K": 3}})
        assert main(["train", "--config", other, "--tracker-init", snap, "--out", str(tmp_path / "o")]) == 1

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--bogus"])
        assert exc.value.code == 2

    def test_fixtures_not_mutated(self, tmp_path):
        before = digests(fixture_root())
        main(["train", "--config", "spo_easyhard", "--out", str(tmp_path / "t"),
              "--seed", "1"] )
        main(["sched", "--config", "sched_fig6", "--replications", "5", "--out", str(tmp_path / "s.csv")])
        assert digests(fixture_root()) == before

    def test_fixture_env_override(self, tmp_path, monkeypatch):
        (tmp_path / "mine.json").write_text(json.dumps(SMALL))
        monkeypatch.setenv("SPOLAB_FIXTURES", str(tmp_path))
        assert resolve_path("mine") == tmp_path / "mine.json"


class TestSched:
    def test_csv_and_rerun(self, tmp_path):
        out = tmp_path / "s.csv"
        assert main(["sched", "--config", "sched_fig6", "--replications", "50", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "replication,strategy,makespan,wasted,speedup"
        assert len(lines) == 101
        manifest = tmp_path / "s.csv.manifest.json"
        again = tmp_path / "t.csv"
        assert main(["sched", "--manifest", str(manifest), "--out", str(again)]) == 0
        assert out.read_bytes() == again.read_bytes()

    def test_threads_match_serial(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["sched", "--config", "sched_fig6", "--replications", "40", "--out", str(a)])
        main(["sched", "--config", "sched_fig6", "--replications", "40", "--threads", "4", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_bad_replications(self, tmp_path):
        assert main(["sched", "--config", "sched_fig6", "--replications", "0", "--out", str(tmp_path / "x.csv")]) == 1


class TestAnalyze:
    def test_en(self, capsys):
        assert main(["analyze", "en", "--p", "0.1"]) == 0
        assert capsys.readouterr().out.startswith("10.111")

    def test_en_divergent(self):
        assert main(["analyze", "en", "--p", "1.0"]) == 1

    def test_zg(self, capsys):
        main(["analyze", "zg", "--p", "0.5", "--g", "8"])
        assert float(capsys.readouterr().out) == 0.0078125

    def test_ratio(self, tmp_path, capsys):
        cfg = write(tmp_path / "r.json", {"group_size": 8, "n_eff": 1e12, "p": 0.5})
        assert main(["analyze", "ratio", "--config", cfg]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["ratio"] == pytest.approx(1.1339, abs=1e-4)

    def test_ratio_bad_key(self, tmp_path):
        cfg = write(tmp_path / "r.json", {"group_size": 8, "neff": 8, "p": 0.5})
        assert main(["analyze", "ratio", "--config", cfg]) == 1

    def test_validate(self, capsys):
        assert main(["analyze", "validate", "--trials", "20000", "--seed", "3"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[-1] == "12/12 passed"


class TestCompare:
    def test_join_and_summary(self, tmp_path, capsys):
        spo = write(tmp_path / "spo.json", SMALL)
        grpo = write(tmp_path / "grpo.json", {**SMALL, "algorithm": "grpo", "group_size": 4})
        main(["train", "--config", spo, "--out", str(tmp_path / "s")])
        main(["train", "--config", grpo, "--out", str(tmp_path / "g")])
        capsys.readouterr()
        out = tmp_path / "joined.csv"
        assert main(["compare", "--spo", str(tmp_path / "s"), "--grpo", str(tmp_path / "g"), "--out", str(out)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["iterations"] == 6
        assert summary["final_J_delta"] == pytest.approx(summary["final_J_spo"] - summary["final_J_grpo"])
        lines = out.read_text().splitlines()
        assert len(lines) == 7
        assert "degenerate_ratio_spo" in lines[0]
        assert lines[1].split(",")[lines[0].split(",").index("degenerate_ratio_spo")] == "NA"


class TestInitTracker:
    def test_deterministic(self, tmp_path):
        cfg = write(tmp_path / "cfg.json", SMALL)
        main(["init-tracker", "--config", cfg, "--seed", "3", "--out", str(tmp_path / "a.json")])
        main(["init-tracker", "--config", cfg, "--seed", "3", "--out", str(tmp_path / "b.json")])
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_default_n0(self, tmp_path):
        cfg = write(tmp_path / "cfg.json", SMALL)
        main(["init-tracker", "--config", cfg, "--out", str(tmp_path / "a.json")])
        prompts = json.loads((tmp_path / "a.json").read_text())["prompts"]
        assert all(p["alpha"] + p["beta"] == 8 for p in prompts)

    def test_binomial_ci_at_n0_64(self, tmp_path):
        doc = {**SMALL, "env": {"M": 24, "K": 4, "seed": 11}}
        cfg = write(tmp_path / "cfg.json", doc)
        main(["init-tracker", "--config", cfg, "--n0", "64", "--out", str(tmp_path / "a.json")])
        prompts = json.loads((tmp_path / "a.json").read_text())["prompts"]
        env = RunConfig.from_dict(doc).env
        V = true_values(env, PolicyTable.uniform(24, 4))
        for p, v in zip(prompts, V):
            est = p["alpha"] / (p["alpha"] + p["beta"])
            assert abs(est - v) <= 3 * math.sqrt(v * (1 - v) / 64)

    def test_unwritable_path(self, tmp_path, capsys):
        cfg = write(tmp_path / "cfg.json", SMALL)
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["init-tracker", "--config", cfg, "--out", str(blocker / "snap.json")]) == 1
        assert str(blocker) in capsys.readouterr().err
