import csv
import json

import pytest

from cthedge.cli import EXIT_ERROR, EXIT_OK, EXIT_VIOLATION, csv_header, execute, main, summarize
from cthedge.config import parse_config
from cthedge.errors import ConfigError


def minimal(**over):
    doc = {
        "scenario": {"n": 2, "regimes": [{"start": 0.0, "sigma": 1.0}]},
        "grid": {"T": 1.0, "dt": 0.01},
    }
    doc.update(over)
    return doc


def dump(doc):
    return json.dumps(doc).encode()


class TestParseConfig:
    def test_minimal(self):
        cfg = parse_config(dump(minimal()))
        assert cfg.scenario.n == 2 and cfg.grid.steps == 100
        assert cfg.replicas == 1 and cfg.policy.kind == "normalhedge"
        assert all(cfg.checks.values())

    def test_dt_zero(self):
        with pytest.raises(ConfigError, match="grid.dt must be positive"):
            parse_config(dump(minimal(grid={"T": 1.0, "dt": 0})))

    def test_quantile_rank_rule(self):
        doc = minimal(scenario={"n": 10, "regimes": [{"start": 0, "sigma": 1}]}, quantiles=[0.001])
        with pytest.raises(ConfigError, match=r"quantiles\[0\].*floor\(eps\*N\) >= 1"):
            parse_config(dump(doc))

    def test_quantile_rule_uses_expanded_count(self):
        doc = minimal(scenario={"n": 3, "regimes": [{"start": 0, "sigma": 1}]},
                      quantiles=[0.01], crp={"m": 97})
        assert parse_config(dump(doc)).n_experts == 100

    @pytest.mark.parametrize("doc, key", [
        (minimal(colour="red"), "colour"),
        (minimal(grid={"T": 1, "dt": 0.1, "steps": 3}), "grid.steps"),
        (minimal(scenario={"n": 2, "regimes": [{"start": 0, "sigma": 1, "vol": 2}]}),
         r"scenario.regimes\[0\].vol"),
        (minimal(policy={"kind": "normalhedge", "eta": 1.0}), "policy.eta"),
        (minimal(checks={"lemma3": True}), "checks.lemma3"),
    ])
    def test_strict_keys(self, doc, key):
        with pytest.raises(ConfigError, match=key):
            parse_config(dump(doc))

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="grid is required"):
            parse_config(dump({"scenario": minimal()["scenario"]}))

    def test_diffusion_matrix_and_regimes(self):
        doc = minimal(scenario={"n": 2, "regimes": [
            {"start": 0, "diffusion": [[1.0], [-1.0]]},
            {"start": 0.5, "drift": [0.1, -0.1], "diffusion": [[2.0], [0.0]], "name": "late"}]})
        cfg = parse_config(dump(doc))
        assert cfg.scenario.n_factors == 1 and cfg.scenario.regimes[1].name == "late"

    def test_bad_regimes(self):
        doc = minimal(scenario={"n": 2, "regimes": [{"start": 0.2, "sigma": 1}]})
        with pytest.raises(ConfigError, match="t=0"):
            parse_config(dump(doc))
        doc = minimal(scenario={"n": 2, "regimes": [{"start": 0, "sigma": 1, "diffusion": [[1], [1]]}]})
        with pytest.raises(ConfigError, match="exactly one"):
            parse_config(dump(doc))

    def test_invalid_json(self):
        with pytest.raises(ConfigError, match="JSON"):
            parse_config(b"{nope")

    def test_hash_is_stable(self):
        a = parse_config(dump(minimal(seed=3)))
        b = parse_config(json.dumps(minimal(seed=3), indent=4).encode())
        assert a.config_hash == b.config_hash


def test_csv_header_columns():
    cols = csv_header([0.05], 3)
    assert cols == ["t", "c", "G", "R_max", "bound_lemma2", "quantile_regret_0.05", "quantile_bound_0.05",
                    "vmax", "vi_max", "c_fd", "c_analytic", "ratio_drift", "P_1", "P_2", "P_3"]
    assert "P_1" not in csv_header([], 33)


class TestExecute:
    def test_single_instrument(self, tmp_path):
        cfg = parse_config(dump(minimal(scenario={"n": 1, "regimes": [{"start": 0, "sigma": 1}]})))
        summary = execute(cfg, out_dir=str(tmp_path))
        assert summary.exit_code == EXIT_OK
        with open(tmp_path / "steps_0.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 101
        assert all(float(r["R_max"]) == 0.0 for r in rows)
        assert all(r["c"] == "0" for r in rows)

    def test_replicas_and_summary(self, tmp_path):
        cfg = parse_config(dump(minimal(seed=10, replicas=3, quantiles=[0.5])))
        summary = execute(cfg, out_dir=str(tmp_path))
        assert sorted(p.name for p in tmp_path.iterdir()) == [
            "steps_10.csv", "steps_11.csv", "steps_12.csv", "summary.json"]
        data = json.loads((tmp_path / "summary.json").read_text())
        assert data["seeds"] == [10, 11, 12]
        for key in ("config_hash", "replicas", "verdicts", "sup_ratios", "version"):
            assert key in data
        assert set(data["verdicts"]) >= {"lemma2", "quantile", "vol_factor4", "theorem2_analytic"}
        assert data["exit_code"] == summary.exit_code == EXIT_OK

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = parse_config(dump(minimal(replicas=2, quantiles=[0.5])))
        execute(cfg, out_dir=str(tmp_path / "a"))
        execute(cfg, out_dir=str(tmp_path / "b"), workers=2)
        for name in ("steps_0.csv", "steps_1.csv", "summary.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_baseline_policy_skips_normalhedge_checks(self, tmp_path):
        cfg = parse_config(dump(minimal(policy={"kind": "exp_weights"})))
        summary = execute(cfg, out_dir=str(tmp_path))
        v = summary.data["verdicts"]
        assert not v["lemma2"]["enabled"] and v["vol_factor4"]["enabled"]
        assert summary.exit_code == EXIT_OK

    def test_violation_sets_exit_code(self):
        cfg = parse_config(dump(minimal()))
        entry = {"replica": 0, "seed": 0, "final": {"G": 0.0, "max_regret": 0.0, "c": None},
                 "sup_ratios": {"drift": None, "vol": None},
                 "stats": {"paper_vol_constant_holds": True, "fd_within_bound_fraction": None,
                           "drift_fd_mean_abs_error": None},
                 "verdicts": {k: {"passed": True, "first_violation": None}
                              for k in ("lemma2", "quantile", "vol_factor4", "theorem2_analytic", "conservation")}}
        entry["verdicts"]["lemma2"] = {"passed": False, "first_violation": {"step": 4}}
        assert summarize(cfg, [entry]).exit_code == EXIT_VIOLATION
        cfg = parse_config(dump(minimal(checks={"lemma2": False})))
        assert summarize(cfg, [entry]).exit_code == EXIT_OK


class TestMain:
    def write(self, tmp_path, doc):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        return str(path)

    def test_run(self, tmp_path, capsys):
        cfg = self.write(tmp_path, minimal(output=str(tmp_path / "out")))
        assert main(["run", "--config", cfg]) == EXIT_OK
        assert (tmp_path / "out" / "summary.json").exists()
        assert "PASS  lemma2" in capsys.readouterr().err

    def test_verify_writes_nothing(self, tmp_path, capsys):
        cfg = self.write(tmp_path, minimal(output=str(tmp_path / "out")))
        assert main(["verify", "--config", cfg]) == EXIT_OK
        assert not (tmp_path / "out").exists()
        assert json.loads(capsys.readouterr().out)["exit_code"] == 0

    def test_crp(self, tmp_path):
        doc = minimal(scenario={"n": 3, "regimes": [{"start": 0, "sigma": 1, "drift": [0.2, 0, -0.2]}]},
                      crp={"m": 40, "seed": 1}, quantiles=[0.05])
        cfg = self.write(tmp_path, doc)
        assert main(["crp", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
        assert (tmp_path / "o" / "crp_weights.csv").exists()
        with open(tmp_path / "o" / "steps_0.csv") as fh:
            header = next(csv.reader(fh))
        assert "P_1" not in header

    def test_crp_requires_block(self, tmp_path, capsys):
        cfg = self.write(tmp_path, minimal())
        assert main(["crp", "--config", cfg]) == EXIT_ERROR
        assert "crp" in capsys.readouterr().err

    def test_bad_config_exit(self, tmp_path, capsys):
        cfg = self.write(tmp_path, minimal(grid={"T": 1, "dt": 0}))
        assert main(["run", "--config", cfg]) == EXIT_ERROR
        assert "grid.dt must be positive" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.json")]) == EXIT_ERROR
