from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthinfer.randkit import RngStream
from synthinfer.simlab import (ConfigError, ExperimentConfig, ExperimentError, MetricsTable, aggregate,
                               load_config, load_metrics, run_experiment, run_replication, write_report)
from synthinfer.simlab.experiment import cell_applicable, eps_key
from synthinfer.simlab.generators import gen_sim1, gen_sim2, gen_sim3, sim1_slopes, skewness
from synthinfer.simlab.metrics import (MetricError, metric_bias, metric_coverage, metric_rab,
                                       monte_carlo_variance, rank_inversions)
from synthinfer.simlab.report import slug
from synthinfer.estimators import estimate_ols


def binary_corr(a, b):
    return float(np.corrcoef(a, b)[0, 1])


# ---------------------------------------------------------------- generators


def test_sim1_large_sample():
    ds, truths = gen_sim1(RngStream(21), 200_000)
    cov = np.cov(ds.rows.T)
    assert abs(cov[1, 2] - 0.25) < 0.02
    assert abs(cov[0, 1] - 0.8) < 0.02 and abs(cov[0, 2] - 0.6) < 0.02
    assert truths.means == {"y1": 0.0, "y2": 0.0, "y3": 0.0}


def test_sim1_slope_truths():
    # normal equations written out by hand: [[1, c], [c, 1]] b = (s12, s13)
    c, s12, s13 = 0.25, 0.8, 0.6
    det = 1 - c * c
    b2, b3 = (s12 - c * s13) / det, (s13 - c * s12) / det
    got = sim1_slopes()
    assert abs(got["y2"] - b2) < 1e-12 and abs(got["y3"] - b3) < 1e-12
    assert abs(b2 - 0.6933) < 1e-4 and abs(b3 - 0.4267) < 1e-4


def test_sim2_large_sample():
    ds, truths = gen_sim2(RngStream(22), 200_000)
    y3 = ds.rows[:, 2]
    assert abs(y3.mean() - 1.0) < 0.02
    assert abs(skewness(y3) - 2.0) < 0.2
    assert abs(ds.rows[:, 1].mean()) < 0.01
    assert truths.ols[("y1", ("y2", "y3"))] == {"intercept": 1.0, "y2": 1.0, "y3": 3.0}


def test_sim2_noiseless_regression_exact():
    ds, _ = gen_sim2(RngStream(23), 5000, noise=False)
    for k, want in enumerate((1.0, 1.0, 3.0)):
        assert abs(estimate_ols(ds, "y1", ["y2", "y3"], k).q - want) < 1e-8


def test_sim3_large_sample():
    ds, truths = gen_sim3(RngStream(24), 200_000)
    y = ds.rows
    assert np.all(np.abs(y.mean(axis=0) - 0.6) < 0.005)
    assert abs(binary_corr(y[:, 1], y[:, 2]) - 0.2) < 0.01
    assert abs(binary_corr(y[:, 0], y[:, 1]) - 0.6) < 0.01
    assert abs(binary_corr(y[:, 0], y[:, 2]) - 0.6) < 0.01
    assert truths.proportions[("y1", "1")] == 0.6


def test_sim3_independent_config():
    ds, _ = gen_sim3(RngStream(25), 200_000, corr=(0.0, 0.0, 0.0))
    y = ds.rows
    for i, j in ((0, 1), (0, 2), (1, 2)):
        assert abs(binary_corr(y[:, i], y[:, j])) < 0.01


def test_generators_reject_small_n():
    for gen in (gen_sim1, gen_sim2, gen_sim3):
        with pytest.raises(ValueError):
            gen(RngStream(1), 9)


# ---------------------------------------------------------------- metrics


def test_bias_examples():
    assert metric_bias([2.0] * 5, 2.0) == 0.0
    assert abs(metric_bias([2.2] * 5, 2.0, relative=True) - 10.0) < 1e-9
    with pytest.raises(MetricError):
        metric_bias([1.0], 0.0, relative=True)


def test_rab_examples():
    q = [0.0, 1.0, 2.0, 3.0]
    v = monte_carlo_variance(q)
    assert abs(v - 5 / 3) < 1e-15
    assert abs(metric_rab([v] * 4, q) - 100.0) < 1e-12
    assert abs(metric_rab([v / 2] * 4, q) - 50.0) < 1e-12
    assert metric_rab([0.0] * 4, q) == 0.0
    with pytest.raises(MetricError):
        metric_rab([1.0] * 3, [1.0] * 3)
    with pytest.raises(MetricError):
        monte_carlo_variance([1.0])


def test_coverage_examples():
    assert metric_coverage([(0.0, 2.0)] * 10, 1.0) == 100.0
    assert metric_coverage([(1.5, 2.0)] * 10, 1.0) == 0.0
    assert metric_coverage([(1.0, 2.0), (0.0, 1.0)], 1.0) == 100.0
    assert metric_coverage([(0.0, 2.0), (3.0, 4.0)], 1.0) == 50.0


def test_rank_inversions():
    assert rank_inversions([5, 4, 4, 1]) == 0
    assert rank_inversions([5, 6, 4, 1]) == 1
    assert rank_inversions([1, 2, 3], increasing=True) == 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(0, 10)), min_size=1, max_size=30), st.floats(-10, 10))
def test_coverage_is_percentage(pairs, theta):
    cis = [(c - w, c + w) for c, w in pairs]
    cov = metric_coverage(cis, theta)
    assert 0.0 <= cov <= 100.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=30).filter(lambda x: np.ptp(x) > 1e-6),
       st.floats(0, 100))
def test_rab_nonnegative(q, v):
    assert metric_rab([v] * len(q), q) >= 0.0


# ---------------------------------------------------------------- config


def test_config_defaults():
    cfg = ExperimentConfig()
    assert (cfg.n, cfg.B, cfg.m) == (2000, 500, 5)
    assert cfg.epsilon_grid == (0.005, 0.05, 0.5, 2.5, 5.0, 8.0, 10.0, 50.0, math.inf)
    assert cfg.methods == ("histogram", "bayesnet", "gaussian", "gaussian_ppd")
    assert ExperimentConfig(simulation="sim3").methods == ("histogram", "bayesnet")


def test_config_errors_list_keys():
    with pytest.raises(ConfigError) as err:
        ExperimentConfig(n=3, methods=("gan",), level=1.5)
    assert err.value.keys == ["level", "methods", "n"]
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict({"simulation": "sim1", "colour": "red"})
    assert err.value.keys == ["colour"]
    with pytest.raises(ConfigError, match="m >= 2"):
        ExperimentConfig(m=1, rules=("tp",))
    with pytest.raises(ConfigError, match="continuous"):
        ExperimentConfig(simulation="sim3", methods=("gaussian",))
    with pytest.raises(ConfigError):
        ExperimentConfig(epsilon_grid=(0.5, 0.0))
    with pytest.raises(ConfigError):
        ExperimentConfig(simulation="sim3", sim_options={"nope": 1})


def test_load_config_toml(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('simulation = "sim3"\nn = 100\nB = 4\nepsilon_grid = [0.5, inf]\n'
                    'methods = ["histogram"]\nseed = 7\n')
    cfg = load_config(path)
    assert cfg.epsilon_grid == (0.5, math.inf) and cfg.seed == 7
    path.write_text("n = = 3\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_cell_applicability():
    assert cell_applicable("histogram", 0.5)
    assert not cell_applicable("gaussian", 0.5)
    assert cell_applicable("gaussian_ppd", math.inf)
    assert eps_key(math.inf) == "inf" and eps_key(0.5) == "0.5"


# ---------------------------------------------------------------- experiment


SMOKE = dict(simulation="sim1", n=100, B=2, m=3, epsilon_grid=(5.0,), methods=("histogram",), seed=3)


def test_smoke_all_fields_populated():
    table = run_experiment(ExperimentConfig(**SMOKE))
    assert len(table.cells) == 5
    for c in table.cells:
        assert c["n_used"] == 2 and c["n_failed"] == 0
        for key in ("bias", "V_MC", "mean_u_bar", "mean_b_over_m", "T_p"):
            assert c[key] is not None
        assert set(c["RaB_pct"]) == {"tp", "ts", "tsppd", "naive"}
    audit = table.ledger_audit[0]
    assert audit["within_budget"] and abs(audit["spent_max"] - 5.0) < 1e-12
    assert [e["epsilon"] for e in audit["ledger_replication_0"]["entries"]] == [5.0 / 3] * 3


def test_determinism_and_jobs_invariance():
    cfg = ExperimentConfig(**{**SMOKE, "B": 4, "methods": ("histogram", "gaussian"),
                              "epsilon_grid": (1.0, math.inf)})
    a = json.dumps(run_experiment(cfg).to_json(), sort_keys=True)
    b = json.dumps(run_experiment(cfg).to_json(), sort_keys=True)
    c = json.dumps(run_experiment(cfg, jobs=2).to_json(), sort_keys=True)
    assert a == b == c


def test_replication_streams_are_independent_of_order():
    cfg = ExperimentConfig(**SMOKE)
    r1 = run_replication(cfg, 1)
    run_replication(cfg, 0)
    assert run_replication(cfg, 1) == r1
    assert run_replication(cfg, 0)["original"] != r1["original"]


def test_nonprivate_methods_only_in_inf_column():
    cfg = ExperimentConfig(**{**SMOKE, "methods": ("histogram", "gaussian"), "epsilon_grid": (1.0, math.inf)})
    table = run_experiment(cfg)
    eps_by_method = {(c["method"], c["epsilon"]) for c in table.cells}
    assert ("gaussian", 1.0) not in eps_by_method and ("gaussian", "inf") in eps_by_method
    gauss = [a for a in table.ledger_audit if a["method"] == "gaussian"][0]
    assert gauss["spent_max"] == 0.0


def test_decomposition_identity_and_coverage_ordering():
    cfg = ExperimentConfig(simulation="sim1", n=200, B=40, m=5, epsilon_grid=(2.5, math.inf),
                           methods=("histogram", "gaussian_ppd"), seed=11)
    table = run_experiment(cfg)
    for c in table.cells:
        assert c["mean_u_bar"] >= 0 and c["mean_b_over_m"] >= 0
        assert abs(c["T_p"] - (c["mean_u_bar"] + c["mean_b_over_m"])) <= 1e-12 * max(1.0, c["T_p"])
        cov = c["coverage_pct"]
        assert cov["tp"] >= cov["naive"] and cov["tsppd"] >= cov["ts"] >= cov["naive"]
        assert all(0 <= v <= 100 for v in cov.values())
        assert all(v >= 0 for v in c["RaB_pct"].values())


def test_monte_carlo_truth_switch():
    cfg = ExperimentConfig(**{**SMOKE, "truth": "monte_carlo"})
    reps = [run_replication(cfg, b) for b in range(cfg.B)]
    table = aggregate(cfg, reps)
    slope = table.truths["ols:y1~y2+y3#y2"]
    assert slope["source"] == "monte_carlo"
    assert abs(slope["value"] - np.mean([r["original"]["ols:y1~y2+y3#y2"]["q"] for r in reps])) < 1e-15
    assert table.truths["mean:y1"] == {"value": 0.0, "source": "analytic"}


def test_failed_cells_are_counted_and_fatal_above_threshold():
    cfg = ExperimentConfig(**{**SMOKE, "B": 3, "estimands": ("mean:y1",)})
    reps = [run_replication(cfg, b) for b in range(cfg.B)]
    key = ("histogram", "5.0", "mean:y1")
    reps[1]["cells"][key] = {"failed": "synthesis: degenerate"}
    with pytest.raises(ExperimentError, match="degenerate"):
        aggregate(cfg, reps)
    big = ExperimentConfig(**{**SMOKE, "B": 11, "estimands": ("mean:y1",)})
    reps = [run_replication(big, b) for b in range(big.B)]
    reps[4]["cells"][key] = {"failed": "synthesis: degenerate"}
    cell = aggregate(big, reps).cells[0]
    assert cell["n_failed"] == 1 and cell["n_used"] == 10


# ---------------------------------------------------------------- report


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_report_shapes(tmp_path):
    cfg = ExperimentConfig(simulation="sim3", n=100, B=3, m=2, epsilon_grid=(0.5, 5.0, math.inf),
                           rules=("tp", "naive"), estimands=("prop:y1=1",), seed=1)
    table = run_experiment(cfg)
    write_report(table, tmp_path)
    rab = read_csv(tmp_path / "prop_y1_eq_1_rab.csv")
    assert rab[0] == ["method", "rule", "0.5", "5.0", "inf"]
    assert len(rab) - 1 == 4 and all(len(r) == 5 for r in rab)
    assert [r[:2] for r in rab[1:]] == [["histogram", "tp"], ["histogram", "naive"],
                                        ["bayesnet", "tp"], ["bayesnet", "naive"]]
    bias = read_csv(tmp_path / "prop_y1_eq_1_bias.csv")
    assert len(bias) == 3
    dec = read_csv(tmp_path / "decomposition.csv")
    assert len(dec) - 1 == 6
    for row in dec[1:]:
        u, b, tp = float(row[3]), float(row[4]), float(row[5])
        assert u >= 0 and b >= 0 and abs(tp - (u + b)) <= 1e-12 * max(1.0, tp)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seed"] == 1 and len(man["ledger_audit"]) == 6
    assert set(man["files"]) == {p.name for p in tmp_path.iterdir()}


def test_report_roundtrip_byte_identical(tmp_path):
    cfg = ExperimentConfig(**SMOKE)
    write_report(run_experiment(cfg), tmp_path / "a")
    write_report(run_experiment(cfg), tmp_path / "b")
    write_report(load_metrics(tmp_path / "a" / "metrics.json"), tmp_path / "c")
    for p in sorted((tmp_path / "a").iterdir()):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
        assert p.read_bytes() == (tmp_path / "c" / p.name).read_bytes()


def test_blank_cells_for_nonprivate_methods(tmp_path):
    cfg = ExperimentConfig(**{**SMOKE, "methods": ("histogram", "gaussian"), "epsilon_grid": (1.0, math.inf)})
    write_report(run_experiment(cfg), tmp_path)
    rows = read_csv(tmp_path / "mean_y1_vmc.csv")
    assert rows[2][0] == "gaussian" and rows[2][1] == "" and rows[2][2] != ""


def test_archive_written(tmp_path):
    cfg = ExperimentConfig(**{**SMOKE, "archive": True})
    paths = write_report(run_experiment(cfg), tmp_path)
    lines = (tmp_path / "archive.jsonl").read_text().splitlines()
    assert len(lines) == 2 and json.loads(lines[0])["b"] == 0
    assert tmp_path / "archive.jsonl" in paths


def test_slug():
    assert slug("ols:y1~y2+y3#y2") == "ols_y1_on_y2_y3__y2"
    assert slug("mean:y1") == "mean_y1"


def test_metrics_table_rejects_garbage():
    with pytest.raises(ValueError):
        MetricsTable.from_json({"cells": []})
