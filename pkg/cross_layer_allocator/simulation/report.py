"""Per-trial metrics table, summary statistics and run outputs."""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping

import pandas as pd

from cross_layer_allocator.models.allocator import AllocationFlag

CSV_COLUMNS = [
    "algorithm",
    "trial",
    "bandwidth_mhz",
    "i_th_fraction",
    "i_th_mw",
    "user_id",
    "class",
    "rate_target_mbps",
    "rate_achieved_mbps",
    "rate_satisfaction",
    "power_alloc_w",
    "power_red_w",
    "power_refined_w",
    "power_satisfaction",
    "i_before_mw",
    "i_after_mw",
    "i_reduction_ratio",
    "interfering",
    "flags",
]
SORT_KEYS = ["algorithm", "trial", "bandwidth_mhz", "i_th_fraction", "user_id"]
# An absolute threshold leaves i_th_fraction NaN, kept as its own group
GROUP_KEYS = ["algorithm", "bandwidth_mhz", "i_th_fraction", "class"]
RUN_KEYS = ["algorithm", "trial", "bandwidth_mhz", "i_th_fraction"]
SUMMARY_METRICS = [
    "rate_satisfaction",
    "power_satisfaction",
    "i_reduction_ratio",
    "rate_achieved_mbps",
]
FLOAT_FORMAT = "%.9g"

TRIALS_FILE = "trials.csv"
SUMMARY_FILE = "summary.csv"
MANIFEST_FILE = "manifest.json"


@dataclass
class MetricsReport:
    """
    Per-trial metric rows of a scenario run.

    Rows are kept sorted by algorithm, trial, bandwidth, threshold and user so
    partial reports merge to the same table whatever the execution order.
    """

    trials: pd.DataFrame

    def __post_init__(self) -> None:
        missing = set(CSV_COLUMNS) - set(self.trials.columns)
        if missing:
            raise ValueError(f"Report is missing columns {sorted(missing)}")
        self.trials = (
            self.trials[CSV_COLUMNS]
            .sort_values(SORT_KEYS, kind="mergesort")
            .reset_index(drop=True)
        )

    @classmethod
    def from_rows(cls, rows: Iterable[Mapping[str, Any]]) -> "MetricsReport":
        return cls(pd.DataFrame(list(rows), columns=CSV_COLUMNS))

    def merge(self, *others: "MetricsReport") -> "MetricsReport":
        return MetricsReport(
            pd.concat([self.trials, *(o.trials for o in others)], ignore_index=True)
        )

    def flag_counts(self) -> Dict[str, int]:
        """Number of runs, one per trial and sweep point, raising each flag."""
        runs = self.trials.drop_duplicates(RUN_KEYS)
        return {
            flag.value: int(runs["flags"].str.contains(flag.value, regex=False).sum())
            for flag in AllocationFlag
        }

    def summary(self) -> pd.DataFrame:
        """
        Mean and population std per (algorithm, bandwidth, threshold, class),
        plus the number of trials raising each flag.
        """
        trials = self.trials.copy()
        flag_columns = []
        for flag in AllocationFlag:
            column = f"n_{flag.name.lower()}"
            hit = trials["flags"].str.contains(flag.value, regex=False)
            trials[column] = trials["trial"].where(hit)
            flag_columns.append(column)
        grouped = trials.groupby(GROUP_KEYS, sort=True, dropna=False)
        frame = pd.concat(
            [
                grouped["trial"].nunique().rename("n_trials"),
                grouped[SUMMARY_METRICS].mean().add_suffix("_mean"),
                grouped[SUMMARY_METRICS].std(ddof=0).add_suffix("_std"),
                grouped[flag_columns].nunique(),
            ],
            axis=1,
        )
        return frame.reset_index()

    def write(
        self, out_dir: "str | Path", config: Mapping[str, Any], version: str
    ) -> List[Path]:
        """Write the trial table, the summary and the run manifest."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        trials_path = out / TRIALS_FILE
        summary_path = out / SUMMARY_FILE
        manifest_path = out / MANIFEST_FILE

        self.trials.to_csv(trials_path, index=False, float_format=FLOAT_FORMAT)
        self.summary().to_csv(summary_path, index=False, float_format=FLOAT_FORMAT)
        manifest_path.write_text(
            json.dumps(build_manifest(config, version), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        return [trials_path, summary_path, manifest_path]


def config_hash(config: Mapping[str, Any]) -> str:
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_manifest(config: Mapping[str, Any], version: str) -> Dict[str, Any]:
    return {
        "version": version,
        "seed": config["run"]["seed"],
        "config_sha256": config_hash(config),
        "config": dict(config),
    }
