import filecmp
import json
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from riskmine.cli import main
from riskmine.errors import ConfigError
from riskmine.pipeline import PipelineConfig, run_pipeline
from riskmine.synth import REFERENCE_EFFECTS, GeneratorConfig

ROOT = Path(__file__).resolve().parents[1]
DEMO = ROOT / "configs" / "demo.json"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def stats_json(capsys, *argv):
    code, out, _ = run(capsys, "stats", *argv)
    assert code == 0
    return json.loads(out)


def small_config(tmp_path, **kw):
    base = {"disease": "depression", "seed": 5, "power_threshold": 0, "k_folds": 3, "run_cost_sweep": False,
            "run_placebo": False, "synth": {"n_shoppers": 3000, "seed": 5, "emit_queries": False},
            "output": str(tmp_path / "out")}
    base.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(base), encoding="utf-8")
    return path


class TestStatsCommand:
    def test_mwu_from_u(self, capsys):
        res = stats_json(capsys, "mwu", "--u", 14661834, "--n1", 3071, "--n2", 10000)
        assert res["z"] == pytest.approx(-3.7898, abs=5e-4)

    def test_mwu_from_csv(self, capsys, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,5\n2,6\n3,7\n4,8\n", encoding="utf-8")
        res = stats_json(capsys, "mwu", "--csv", p, "--col1", "a", "--col2", "b")
        assert res["U"] == 0.0

    def test_welch(self, capsys):
        res = stats_json(capsys, "welch", "--mean1", 13.1, "--sd1", 12.2, "--n1", 3860,
                         "--mean2", 9.3, "--sd2", 9.9, "--n2", 3860)
        assert np.isfinite(res["statistic"])

    def test_chi2(self, capsys):
        res = stats_json(capsys, "chi2", "--table", "10,20;30,40")
        assert res["df"] == 1

    def test_wilcoxon(self, capsys):
        res = stats_json(capsys, "wilcoxon", "--d", "1,2,3,4,5,6,7,8")
        assert res["z"] == pytest.approx(-2.521, abs=1e-3)

    def test_bh(self, capsys):
        res = stats_json(capsys, "bh", "--p", "0.01,0.02,0.03,0.04")
        np.testing.assert_allclose(res["adjusted"], [0.04] * 4)

    def test_power(self, capsys):
        res = stats_json(capsys, "power")
        assert res["n"] == 988 and res["reported_n"] == 1068

    def test_usage_error(self, capsys):
        code, _, err = run(capsys, "stats", "mwu", "--u", 3)
        assert code == 2 and err

    def test_missing_csv(self, capsys, tmp_path):
        code, _, _ = run(capsys, "stats", "mwu", "--csv", tmp_path / "nope.csv", "--col1", "a", "--col2", "b")
        assert code == 2

    def test_missing_column(self, capsys, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a\n1\n", encoding="utf-8")
        code, _, _ = run(capsys, "stats", "bh", "--csv", p, "--col1", "zzz")
        assert code == 2


class TestConfig:
    def test_round_trip(self):
        cfg = PipelineConfig(disease="type2_diabetes", synth=GeneratorConfig(n_shoppers=100), effects=REFERENCE_EFFECTS,
                             cost_grid=[1.0, 2.0])
        again = PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again.to_dict() == cfg.to_dict()
        assert again.digest() == cfg.digest()

    def test_output_does_not_change_digest(self):
        a = PipelineConfig(synth=GeneratorConfig(), output="x")
        b = PipelineConfig(synth=GeneratorConfig(), output="y")
        assert a.digest() == b.digest()

    @pytest.mark.parametrize("kw", [{"disease": "flu"}, {"bh_family": "global"}, {"k_folds": 1},
                                    {"cost_grid": []}, {"unknown_key": 1}])
    def test_invalid(self, kw):
        d = {"synth": {"n_shoppers": 10}}
        d.update(kw)
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(d)

    def test_needs_input(self):
        with pytest.raises(ConfigError):
            PipelineConfig()


class TestSynthCommand:
    def test_writes_cohort(self, capsys, tmp_path):
        code, out, _ = run(capsys, "synth", "--out", tmp_path / "c", "--n", 300, "--seed", 4, "--reference-effects")
        assert code == 0
        names = sorted(p.name for p in (tmp_path / "c").iterdir())
        assert names == ["events.jsonl", "roster.csv", "summary.csv", "synth_config.json", "truth.csv"]
        assert len((tmp_path / "c" / "roster.csv").read_text(encoding="utf-8").splitlines()) == 301

    def test_config_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, "synth", "--config", ROOT / "configs" / "synth_small.json", "--out", tmp_path / "c",
                         "--n", 200)
        assert code == 0

    def test_missing_config(self, capsys, tmp_path):
        code, _, _ = run(capsys, "synth", "--config", tmp_path / "none.json", "--out", tmp_path / "c")
        assert code == 2
        assert not (tmp_path / "c").exists()

    def test_seed_env(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("RISKMINE_SEED", "21")
        run(capsys, "synth", "--out", tmp_path / "a", "--n", 200, "--seed", 1)
        run(capsys, "synth", "--out", tmp_path / "b", "--n", 200, "--seed", 2)
        assert filecmp.cmp(tmp_path / "a" / "events.jsonl", tmp_path / "b" / "events.jsonl", shallow=False)


class TestPipelineCommand:
    def test_small_run_and_report(self, capsys, tmp_path):
        cfg = small_config(tmp_path)
        code, _, _ = run(capsys, "pipeline", "--config", cfg)
        assert code == 0
        out = tmp_path / "out"
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["seeds"] == {"pipeline": 5, "synth": 5}
        assert set(manifest["files"]) <= {p.name for p in out.iterdir()}
        code, text, _ = run(capsys, "report", out)
        assert code == 0 and "== risk_factors.csv" in text and "988" in text

    def test_report_detects_tampering(self, capsys, tmp_path):
        cfg = small_config(tmp_path)
        run(capsys, "pipeline", "--config", cfg)
        with open(tmp_path / "out" / "subgroups.csv", "a", encoding="utf-8") as fh:
            fh.write("tampered\n")
        code, _, err = run(capsys, "report", tmp_path / "out")
        assert code == 1 and "subgroups.csv" in err

    def test_missing_config(self, capsys, tmp_path):
        code, _, _ = run(capsys, "pipeline", "--config", tmp_path / "none.json", "--output", tmp_path / "o")
        assert code == 2
        assert not (tmp_path / "o").exists()

    def test_missing_input_files(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"roster": str(tmp_path / "r.csv"), "events": str(tmp_path / "e.jsonl"),
                                   "output": str(tmp_path / "o")}), encoding="utf-8")
        code, _, _ = run(capsys, "pipeline", "--config", cfg)
        assert code == 2
        assert not (tmp_path / "o").exists()
        assert list(tmp_path.iterdir()) == [cfg]

    def test_invalid_config_exit_code(self, capsys, tmp_path):
        cfg = small_config(tmp_path, disease="flu")
        code, _, err = run(capsys, "pipeline", "--config", cfg)
        assert code == 1 and "flu" in err

    def test_seed_env_overrides(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("RISKMINE_SEED", "9")
        cfg = small_config(tmp_path)
        run(capsys, "pipeline", "--config", cfg)
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["seeds"] == {"pipeline": 9, "synth": 9}

    def test_roster_input_matches_synth(self, capsys, tmp_path):
        run(capsys, "synth", "--out", tmp_path / "c", "--n", 3000, "--seed", 5)
        a = small_config(tmp_path, output=str(tmp_path / "a"))
        run(capsys, "pipeline", "--config", a)
        b = small_config(tmp_path, output=str(tmp_path / "b"), synth=None,
                         roster=str(tmp_path / "c" / "roster.csv"), events=str(tmp_path / "c" / "events.jsonl"))
        assert run(capsys, "pipeline", "--config", b)[0] == 0
        assert filecmp.cmp(tmp_path / "a" / "risk_factors.csv", tmp_path / "b" / "risk_factors.csv", shallow=False)


class TestDemo:
    def test_demo_bundle(self, tmp_path):
        outs = []
        for name in ("one", "two"):
            cfg = PipelineConfig.load(DEMO)
            cfg.output = str(tmp_path / name)
            start = time.perf_counter()
            outs.append(run_pipeline(cfg))
            assert time.perf_counter() - start < 60
        names = sorted(p.name for p in outs[0].iterdir())
        assert "manifest.json" in names and "roc.svg" in names and len(names) == 11
        match, mismatch, errors = filecmp.cmpfiles(outs[0], outs[1], names, shallow=False)
        assert mismatch == [] and errors == []
