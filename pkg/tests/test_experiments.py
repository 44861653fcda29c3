import json

import numpy as np
import pytest

from gradmusic.experiments import ExperimentError, ExperimentSpec, \
    run_experiment


@pytest.fixture(scope="module")
def tiny_noiseless_table():
    spec = ExperimentSpec(m_list=(8, 16), s=3, delta_min=0.3, sigma0=0.0,
                          r_list=(0.0,), trials=1, percentile=100.0,
                          base_seed=7)
    return run_experiment(spec)


class TestRunExperiment:
    def test_noiseless_errors_negligible(self, tiny_noiseless_table):
        for cell in tiny_noiseless_table.summary:
            assert cell["percentile_error"] <= 1e-8
            assert cell["complete"]

    def test_degenerate_slope_skipped(self, tiny_noiseless_table):
        (slope,) = tiny_noiseless_table.slopes
        assert slope["slope"] is None
        assert "degenerate" in slope["note"]

    def test_single_trial_percentile_is_the_error(self, tiny_noiseless_table):
        raw = [r for r in tiny_noiseless_table.rows if r["m"] == 8]
        cell = [c for c in tiny_noiseless_table.summary if c["m"] == 8][0]
        assert len(raw) == 1
        assert cell["percentile_error"] == raw[0]["error"]

    def test_noisy_errors_decrease_with_m(self):
        spec = ExperimentSpec(m_list=(8, 16), s=3, delta_min=0.3, sigma0=0.05,
                              r_list=(0.0,), trials=3, base_seed=11)
        table = run_experiment(spec)
        errs = {c["m"]: c["percentile_error"] for c in table.summary}
        assert errs[16] < errs[8]
        (slope,) = table.slopes
        assert slope["slope"] is not None and slope["slope"] < -1

    def test_csv_reproducible_byte_for_byte(self):
        spec = ExperimentSpec(m_list=(8,), s=2, delta_min=0.3, sigma0=0.05,
                              r_list=(0.0, 0.5), trials=2, base_seed=3)
        t1 = run_experiment(spec)
        t2 = run_experiment(spec)
        assert t1.raw_csv() == t2.raw_csv()
        assert t1.summary_csv() == t2.summary_csv()

    def test_metadata_headers(self, tiny_noiseless_table):
        raw = tiny_noiseless_table.raw_csv()
        assert raw.startswith("# config_hash=")
        assert "# seed=7" in raw
        assert "# version=" in raw
        report = tiny_noiseless_table.report_json()
        assert json.dumps(report)  # round-trips through JSON
        assert report["metadata"]["seed"] == 7

    def test_rows_record_matvec_counts(self, tiny_noiseless_table):
        for row in tiny_noiseless_table.rows:
            assert row["matvec_calls"] > 0
            assert row["matvec_work"] > 0


class TestExperimentSpec:
    def test_validation(self):
        with pytest.raises(ExperimentError):
            ExperimentSpec(trials=0)
        with pytest.raises(ExperimentError):
            ExperimentSpec(percentile=0.0)

    def test_json_roundtrip(self):
        spec = ExperimentSpec(m_list=(8, 16), trials=2)
        again = ExperimentSpec.from_json(json.loads(
            json.dumps(spec.to_json())))
        assert again == spec
        assert again.config_hash() == spec.config_hash()

    def test_unknown_field_rejected(self):
        with pytest.raises(ExperimentError):
            ExperimentSpec.from_json({"bogus": 1})
