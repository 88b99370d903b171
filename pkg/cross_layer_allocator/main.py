"""Command-line entry point of the allocator.

Subcommands:
    run              Run a scenario and write trials.csv, summary.csv and
                     manifest.json.
    oracle-check     Compare the Lagrangian allocator with the exhaustive
                     oracle on random three-user instances.
    dump-mcs         Write the WiMedia MCS table as CSV.
    validate-config  Parse and validate a scenario file.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from dotenv import load_dotenv

from cross_layer_allocator import __version__
from cross_layer_allocator.config import (
    OBJECTIVES,
    ChannelConfig,
    ScenarioConfig,
    SolverConfig,
    load_config,
)
from cross_layer_allocator.mac.profile import UserProfile
from cross_layer_allocator.models.allocator import RateModel, optimal_allocate
from cross_layer_allocator.models.oracle import oracle_exhaustive, sqos_sum_rate
from cross_layer_allocator.phy.channel import band_group_plan, generate_channel
from cross_layer_allocator.phy.mcs import dump_mcs_table
from cross_layer_allocator.simulation.scenario import (
    build_quality_matrix,
    run_scenario,
    user_seed,
)
from cross_layer_allocator.utils.exceptions import (
    ConfigurationError,
    DataValidationError,
    InfeasibleAllocationError,
)
from cross_layer_allocator.utils.logging import LogManager, LogSettings, log_execution

logger = LogManager.get_logger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3

# Oracle instances without a config: one 320 Mbps HQoS user, two 53.3 SQoS
DEFAULT_ORACLE_USERS = (("HQoS", 320.0), ("SQoS", 53.3), ("SQoS", 53.3))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uwb-alloc",
        description="QoS and interference constrained sub-band allocation "
        "for MB-OFDM UWB users.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="Lower the log level to DEBUG",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_options(p: argparse.ArgumentParser, required: bool) -> None:
        p.add_argument("--config", required=required, help="Scenario TOML file")
        p.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="Dotted override applied after parsing, e.g. run.n_trials=10",
        )
        p.add_argument("--seed", type=int, help="Base seed (run.seed)")
        p.add_argument("--trials", type=int, help="Number of trials (run.n_trials)")
        p.add_argument(
            "--algo",
            choices=["optimal", "suboptimal", "both"],
            help="Allocators to run (run.algorithms)",
        )

    run = sub.add_parser("run", help="Run a scenario")
    scenario_options(run, required=True)
    run.add_argument("--out", required=True, help="Output directory")

    check = sub.add_parser("oracle-check", help="Compare with the exhaustive oracle")
    scenario_options(check, required=False)
    check.add_argument("--instances", type=int, default=200)
    check.add_argument("--tolerance", type=float, default=0.02)
    check.add_argument("--grid-points", type=int, default=41)
    check.add_argument("--objective", choices=OBJECTIVES, default="sqos")

    dump = sub.add_parser("dump-mcs", help="Write the MCS table as CSV")
    dump.add_argument("--out", help="Output directory; stdout when omitted")

    validate = sub.add_parser("validate-config", help="Validate a scenario file")
    scenario_options(validate, required=True)
    return parser


def _overrides(args: argparse.Namespace) -> List[str]:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.trials is not None:
        overrides.append(f"run.n_trials={args.trials}")
    if args.algo is not None:
        algos = ["optimal", "suboptimal"] if args.algo == "both" else [args.algo]
        overrides.append(f"run.algorithms={algos!r}".replace("'", '"'))
    return overrides


def _load(args: argparse.Namespace) -> ScenarioConfig:
    return load_config(args.config, _overrides(args))


def cmd_run(args: argparse.Namespace) -> int:
    config = _load(args)
    report = run_scenario(config)
    paths = report.write(args.out, config.to_dict(), __version__)
    counts = {k: v for k, v in report.flag_counts().items() if v}
    if counts:
        logger.warning(f"Allocator flags raised: {counts}")
    logger.info(f"Wrote {', '.join(str(p) for p in paths)}")
    return EXIT_OK


def _oracle_setup(args: argparse.Namespace):
    """Users, plan, channel, solver and budget of the oracle instances."""
    if args.config:
        config = _load(args)
        return (
            config.profiles,
            config.plan,
            config.channel,
            config.solver,
            config.total_power_w,
            config.run.seed,
        )
    plan = band_group_plan(1)
    channel = ChannelConfig()
    profiles = [
        UserProfile.from_request(i, qos, rate)
        for i, (qos, rate) in enumerate(DEFAULT_ORACLE_USERS)
    ]
    total_power = plan.n_bands * channel.budget().nominal_subband_power_w
    seed = 0 if args.seed is None else args.seed
    return profiles, plan, channel, SolverConfig(), total_power, seed


@log_execution
def cmd_oracle_check(args: argparse.Namespace) -> int:
    """
    Relative gap of the Lagrangian allocator to the oracle on random channel
    draws without primary users, measured on the oracle objective.
    """
    profiles, plan, channel, solver, total_power, seed = _oracle_setup(args)
    solver = replace(solver, objective=args.objective)
    cm = channel.profile()
    budget = channel.budget()
    rate_model = RateModel(reduction_model=solver.reduction_rate_model)
    hqos = np.array([p.is_hqos for p in profiles])

    def score(alloc) -> float:
        if args.objective == "total":
            return float(alloc.achieved_rates.sum())
        return sqos_sum_rate(alloc, profiles)

    gaps: List[float] = []
    misses = 0
    infeasible = 0
    for instance in range(args.instances):
        channels = [
            generate_channel(cm, user_seed(seed, instance, p.id)) for p in profiles
        ]
        E = build_quality_matrix(channels, plan, budget, profiles)
        try:
            reference = oracle_exhaustive(
                profiles,
                E,
                total_power,
                grid_points=args.grid_points,
                mode=solver.assignment_mode,
                rate_model=rate_model,
                objective=args.objective,
            )
        except InfeasibleAllocationError:
            infeasible += 1
            continue
        alloc = optimal_allocate(profiles, E, total_power, (), solver, rate_model)
        met = alloc.achieved_rates >= alloc.target_rates * (1 - 1e-6)
        if np.any(hqos & ~met):
            misses += 1
        best = score(reference)
        if best > 0:
            gaps.append(max(best - score(alloc), 0.0) / best)

    max_gap = max(gaps) if gaps else 0.0
    mean_gap = float(np.mean(gaps)) if gaps else 0.0
    print(
        f"instances={args.instances} compared={len(gaps)} "
        f"oracle_infeasible={infeasible} max_gap={max_gap:.4%} "
        f"mean_gap={mean_gap:.4%} hqos_misses={misses}"
    )
    if max_gap > args.tolerance or misses:
        logger.warning(
            f"Oracle check failed: max gap {max_gap:.4%} (tolerance "
            f"{args.tolerance:.2%}), {misses} HQoS misses"
        )
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_dump_mcs(args: argparse.Namespace) -> int:
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        dump_mcs_table(str(out / "mcs_table.csv"))
    else:
        dump_mcs_table(sys.stdout)
    return EXIT_OK


def cmd_validate_config(args: argparse.Namespace) -> int:
    config = _load(args)
    print(
        f"{args.config}: OK ({len(config.users)} users, {config.plan.n_bands} "
        f"sub-bands, {len(config.primary.bandwidths_mhz)} bandwidths, "
        f"{len(config.primary.threshold_levels)} thresholds, "
        f"{config.run.n_trials} trials)"
    )
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "oracle-check": cmd_oracle_check,
    "dump-mcs": cmd_dump_mcs,
    "validate-config": cmd_validate_config,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    LogManager.configure(LogSettings.from_env(), force=True)
    args = build_parser().parse_args(argv)
    if args.verbose:
        LogManager.set_level(logging.DEBUG)

    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, DataValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
