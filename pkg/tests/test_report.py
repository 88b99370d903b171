import json

import numpy as np
import pandas as pd
import pytest

from cross_layer_allocator.simulation.report import (
    CSV_COLUMNS,
    MANIFEST_FILE,
    SUMMARY_FILE,
    TRIALS_FILE,
    MetricsReport,
    build_manifest,
    config_hash,
)

OVER = "StillOverThreshold"
BOTH = "InfeasibleTargets|StillOverThreshold"


def row(
    algorithm="optimal", trial=0, bandwidth=10.0, user=0, fraction=0.5, **values
):
    base = {
        "algorithm": algorithm,
        "trial": trial,
        "bandwidth_mhz": bandwidth,
        "i_th_fraction": fraction,
        "i_th_mw": 0.01,
        "user_id": user,
        "class": "HQoS" if user == 0 else "SQoS",
        "rate_target_mbps": 320.0 if user == 0 else 53.3,
        "rate_achieved_mbps": 300.0,
        "rate_satisfaction": 0.9,
        "power_alloc_w": 1e-5,
        "power_red_w": 0.0,
        "power_refined_w": 0.0,
        "power_satisfaction": 1.0,
        "i_before_mw": 0.01,
        "i_after_mw": 0.005,
        "i_reduction_ratio": 0.5,
        "interfering": user == 0,
        "flags": "",
    }
    base.update(values)
    return base


@pytest.fixture
def report() -> MetricsReport:
    return MetricsReport.from_rows(
        [
            row(trial=1, rate_satisfaction=0.6, flags=BOTH),
            row(trial=0, rate_satisfaction=1.0, flags=OVER),
            row(trial=0, user=1, flags=OVER),
            row(trial=1, user=1, flags=BOTH),
            row(algorithm="suboptimal", trial=0),
        ]
    )


def test_rows_are_sorted(report):
    keys = report.trials[["algorithm", "trial", "bandwidth_mhz", "user_id"]]
    assert keys.values.tolist() == [
        ["optimal", 0, 10.0, 0],
        ["optimal", 0, 10.0, 1],
        ["optimal", 1, 10.0, 0],
        ["optimal", 1, 10.0, 1],
        ["suboptimal", 0, 10.0, 0],
    ]
    assert list(report.trials.columns) == CSV_COLUMNS


def test_missing_columns():
    with pytest.raises(ValueError):
        MetricsReport(pd.DataFrame({"algorithm": ["optimal"]}))


def test_merge_is_order_independent(report):
    a = MetricsReport(report.trials.iloc[:2])
    b = MetricsReport(report.trials.iloc[2:])
    pd.testing.assert_frame_equal(a.merge(b).trials, b.merge(a).trials)
    pd.testing.assert_frame_equal(a.merge(b).trials, report.trials)


def test_flag_counts(report):
    counts = report.flag_counts()
    assert counts["StillOverThreshold"] == 2
    assert counts["InfeasibleTargets"] == 1
    assert counts["MaxItersExceeded"] == 0


def test_summary(report):
    summary = report.summary().set_index(
        ["algorithm", "bandwidth_mhz", "i_th_fraction", "class"]
    )
    hqos = summary.loc[("optimal", 10.0, 0.5, "HQoS")]
    assert hqos["n_trials"] == 2
    assert hqos["rate_satisfaction_mean"] == pytest.approx(0.8)
    assert hqos["rate_satisfaction_std"] == pytest.approx(0.2)

    sqos = summary.loc[("optimal", 10.0, 0.5, "SQoS")]
    assert sqos["n_still_over_threshold"] == 2
    assert sqos["n_infeasible_targets"] == 1
    assert summary.loc[("suboptimal", 10.0, 0.5, "HQoS")]["n_trials"] == 1


def test_thresholds_are_separate_groups():
    report = MetricsReport.from_rows(
        [
            row(fraction=0.75, i_reduction_ratio=0.2),
            row(fraction=0.25, i_reduction_ratio=0.8, flags=OVER),
            row(fraction=float("nan"), i_reduction_ratio=0.4),
            row(trial=1, fraction=0.25, i_reduction_ratio=0.6),
        ]
    )
    levels = report.trials["i_th_fraction"].tolist()
    assert levels[:2] == [0.25, 0.75]
    assert np.isnan(levels[2])
    assert levels[3] == 0.25
    assert report.flag_counts()[OVER] == 1

    summary = report.summary()
    assert len(summary) == 3
    by_level = summary.dropna(subset=["i_th_fraction"]).set_index("i_th_fraction")
    assert by_level.loc[0.25, "i_reduction_ratio_mean"] == pytest.approx(0.7)
    assert by_level.loc[0.25, "n_trials"] == 2
    assert by_level.loc[0.25, "n_still_over_threshold"] == 1
    assert by_level.loc[0.75, "i_reduction_ratio_mean"] == pytest.approx(0.2)
    absolute = summary[summary["i_th_fraction"].isna()]
    assert absolute["i_reduction_ratio_mean"].tolist() == pytest.approx([0.4])


def test_write(report, tmp_path):
    config = {"run": {"seed": 7}, "users": [{"id": 0, "class": "HQoS"}]}
    paths = report.write(tmp_path / "out", config, "1.0.0")
    assert [p.name for p in paths] == [TRIALS_FILE, SUMMARY_FILE, MANIFEST_FILE]

    trials = pd.read_csv(paths[0], keep_default_na=False)
    assert list(trials.columns) == CSV_COLUMNS
    assert len(trials) == 5

    manifest = json.loads(paths[2].read_text())
    assert manifest["seed"] == 7
    assert manifest["version"] == "1.0.0"
    assert manifest["config_sha256"] == config_hash(config)
    assert manifest == build_manifest(config, "1.0.0")


def test_write_is_byte_identical(report, tmp_path):
    config = {"run": {"seed": 0}}
    first = report.write(tmp_path / "a", config, "1.0.0")
    second = report.write(tmp_path / "b", config, "1.0.0")
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes()


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
