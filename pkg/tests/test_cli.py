import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from quhe.cli import (EXIT_CHECK, EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, SWEEP_COLUMNS, main)
from quhe.scenario import dump_scenario
from quhe.verify import REFERENCE_PHI


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    out = tmp_path_factory.mktemp("solve")
    assert main(["solve", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def b_sweep(tmp_path_factory):
    path = tmp_path_factory.mktemp("sweep") / "b.csv"
    code = main(["sweep", "--param", "b_total", "--values", "5e6,1e7,2e7", "--out", str(path)])
    assert code == EXIT_OK
    return path


class TestSolve:
    def test_outputs(self, solved):
        doc = json.loads((solved / "result.json").read_text())
        trace = json.loads((solved / "trace.json").read_text())
        assert doc["method"] == "quhe" and doc["seed"] == 42
        assert doc["converged"] is True
        assert doc["feasibility"]["ok"] is True
        np.testing.assert_allclose(doc["state"]["phi"], REFERENCE_PHI, rtol=1e-2)
        assert trace["records"][-1]["objective"] == pytest.approx(doc["objective"], abs=1e-9)
        assert all("wall_s" not in r for r in trace["records"])

    def test_byte_identical(self, solved, tmp_path):
        assert main(["solve", "--out", str(tmp_path)]) == EXIT_OK
        for name in ("result.json", "trace.json"):
            assert (tmp_path / name).read_bytes() == (solved / name).read_bytes()

    def test_timing_flag(self, tmp_path):
        assert main(["solve", "--method", "aa", "--timing", "--out", str(tmp_path)]) == EXIT_OK
        trace = json.loads((tmp_path / "trace.json").read_text())
        assert "wall_s" in trace["records"][0]

    def test_baseline_budget(self, tmp_path):
        assert main(["solve", "--method", "aa", "--out", str(tmp_path)]) == EXIT_OK
        doc = json.loads((tmp_path / "result.json").read_text())
        assert sum(doc["state"]["b"]) == pytest.approx(1e7, rel=1e-12)

    def test_bad_scenario_path_writes_nothing(self, tmp_path):
        out = tmp_path / "out"
        code = main(["solve", "--scenario", str(tmp_path / "missing.yaml"), "--out", str(out)])
        assert code == EXIT_USAGE
        assert not out.exists()

    def test_malformed_scenario(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("links: [\n")
        assert main(["solve", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == EXIT_USAGE

    def test_infeasible(self, surfnet, tmp_path):
        path = tmp_path / "tight.yaml"
        path.write_text(dump_scenario(surfnet.with_clients(phi_min=40.0)))
        out = tmp_path / "o"
        assert main(["solve", "--scenario", str(path), "--out", str(out)]) == EXIT_INFEASIBLE
        assert not out.exists()

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == EXIT_USAGE


class TestSweep:
    def test_header_and_rows(self, b_sweep):
        text = b_sweep.read_text()
        assert text.splitlines()[0] == ",".join(SWEEP_COLUMNS)
        rows = _read_csv(b_sweep)
        assert len(rows) == 3 * 4
        assert {r["method"] for r in rows} == {"quhe", "aa", "olaa", "occr"}
        assert all(r["wall_ms"] == "0" for r in rows)
        assert all(r["converged"] == "true" for r in rows)

    def test_quhe_best_at_every_value(self, b_sweep):
        rows = _read_csv(b_sweep)
        for v in {r["value"] for r in rows}:
            obj = {r["method"]: float(r["objective"]) for r in rows if r["value"] == v}
            assert obj["quhe"] >= max(obj.values()) - 1e-12

    def test_power_sweep_monotone(self, tmp_path):
        path = tmp_path / "p.csv"
        assert main(["sweep", "--param", "p_max", "--values", "0.05,0.1,0.2",
                     "--method", "quhe", "--out", str(path)]) == EXIT_OK
        obj = [float(r["objective"]) for r in _read_csv(path)]
        # More power can only enlarge the feasible set.
        assert all(b >= a - 1e-6 for a, b in zip(obj, obj[1:]))

    def test_deterministic_across_workers(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["sweep", "--param", "f_max_client", "--values", "2e9,3e9", "--method", "aa,olaa"]
        assert main(args + ["--out", str(a)]) == EXIT_OK
        assert main(args + ["--workers", "2", "--out", str(b)]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()

    @pytest.mark.parametrize("override", [
        {"--method": ""}, {"--method": "quhe,magic"}, {"--values": ""},
        {"--values": "1,abc"}, {"--seeds": "x"},
    ])
    def test_usage_errors(self, tmp_path, override):
        out = tmp_path / "s.csv"
        opts = {"--param": "b_total", "--values": "1e7", "--out": str(out), **override}
        args = ["sweep"] + [x for kv in opts.items() for x in kv]
        assert main(args) == EXIT_USAGE
        assert not out.exists()


class TestVerifyPaper:
    def test_passes(self, tmp_path, capsys):
        out = tmp_path / "v.json"
        assert main(["verify-paper", "--out", str(out)]) == EXIT_OK
        doc = json.loads(out.read_text())
        assert doc["passed"] is True
        names = {c["name"] for c in doc["checks"]}
        assert names == {"phi_table", "werner_table", "werner_closed_form",
                         "branch_and_bound", "surrogate_exactness"}
        assert capsys.readouterr().out.count("PASS") == 5

    def test_canary_capacity_change(self, surfnet, tmp_path):
        top = surfnet.topology
        beta15 = top.links[top.link_index(15)].beta
        path = tmp_path / "canary.yaml"
        path.write_text(dump_scenario(surfnet.replace(topology=top.with_beta(15, beta15 * 1.1))))
        out = tmp_path / "v.json"
        assert main(["verify-paper", "--scenario", str(path), "--out", str(out)]) == EXIT_CHECK
        checks = {c["name"]: c for c in json.loads(out.read_text())["checks"]}
        assert not checks["werner_table"]["passed"]
        assert checks["werner_table"]["detail"]["failing_links"]
        assert checks["branch_and_bound"]["passed"]

    def test_single_degree_still_exact(self, surfnet, tmp_path):
        from quhe.costs import FheParamSet
        path = tmp_path / "one.yaml"
        path.write_text(dump_scenario(surfnet.replace(lambda_set=FheParamSet((32768,)))))
        out = tmp_path / "v.json"
        main(["verify-paper", "--scenario", str(path), "--out", str(out)])
        checks = {c["name"]: c for c in json.loads(out.read_text())["checks"]}
        assert checks["branch_and_bound"]["passed"]
        assert checks["branch_and_bound"]["detail"]["assignments"] == 1


class TestRobustness:
    def test_small_run(self, tmp_path):
        out = tmp_path / "r.json"
        assert main(["robustness", "--count", "2", "--seed", "3", "--out", str(out)]) == EXIT_OK
        doc = json.loads(out.read_text())
        assert doc["count"] == 2 and doc["seed"] == 3
        assert set(doc["band_shares"]) == {"very_good", "good", "poor"}

    def test_count_validated(self):
        assert main(["robustness", "--count", "0"]) == EXIT_USAGE


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "quhe", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0
    for cmd in ("solve", "sweep", "verify-paper", "robustness"):
        assert cmd in proc.stdout
