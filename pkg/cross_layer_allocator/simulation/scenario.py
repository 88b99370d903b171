"""Monte Carlo harness: channels, quality matrices, allocators and metrics."""

from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from cross_layer_allocator.config import ScenarioConfig
from cross_layer_allocator.mac.profile import UserProfile
from cross_layer_allocator.models.allocator import (
    AllocationResult,
    RateModel,
    interference_control,
    optimal_power_allocation,
    suboptimal_allocate,
)
from cross_layer_allocator.phy.channel import (
    BandPlan,
    ChannelRealization,
    LinkBudget,
    frequency_response,
    generate_channel,
    per_subcarrier_sinr,
)
from cross_layer_allocator.phy.interference import (
    PrimaryConstraint,
    build_constraint,
)
from cross_layer_allocator.phy.mcs import effective_sinr
from cross_layer_allocator.simulation.report import MetricsReport
from cross_layer_allocator.utils.logging import LogManager, log_execution

logger = LogManager.get_logger(__name__)


def user_seed(base_seed: int, trial: int, user_id: int) -> int:
    """Seed of one user's channel in one trial, independent of run order."""
    sequence = np.random.SeedSequence(base_seed, spawn_key=(trial, user_id))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def build_quality_matrix(
    channels: Sequence[ChannelRealization],
    plan: BandPlan,
    budget: LinkBudget,
    profiles: Sequence[UserProfile],
    overlapped: Optional[Dict[int, Iterable[int]]] = None,
) -> np.ndarray:
    """
    Effective SINR per unit power of every (user, sub-band).

    The per-subcarrier SINRs are taken at the nominal sub-band power, spread
    evenly over the subcarriers, compressed with the user's MCS lambda and
    divided back by that power.

    Args:
        channels: One realization per user, in the order of ``profiles``.
        plan: Band plan.
        budget: Link budget.
        profiles: Users; their MCS gives lambda and may override path loss.
        overlapped: Subcarrier indices hit by primary interference, by band.
    """
    if len(channels) != len(profiles):
        raise ValueError("One channel realization per user is required")
    overlapped = overlapped or {}
    reference = budget.nominal_subband_power_w
    per_subcarrier = reference / plan.n_subcarriers
    E = np.empty((len(profiles), plan.n_bands))
    for k, (channel, profile) in enumerate(zip(channels, profiles)):
        for b, center in enumerate(plan.centers_ghz):
            gains = frequency_response(
                channel, center, plan.n_subcarriers, plan.spacing_mhz
            )
            sinr = per_subcarrier_sinr(
                gains,
                budget,
                overlapped.get(b, ()),
                plan.spacing_mhz,
                profile.pathloss_db,
            )
            effective = effective_sinr(per_subcarrier * sinr, profile.eesm_lambda)
            E[k, b] = effective / reference
    return E


def power_satisfaction(alloc: AllocationResult) -> np.ndarray:
    """
    Share of each user's allocated power it still radiates after reductions
    and refinement, capped at 1; 0/0 is 1.
    """
    allocated = alloc.power.sum(axis=1)
    reduced = alloc.reductions.sum(axis=1)
    if alloc.refinement.size:
        reduced = reduced - alloc.refinement.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (allocated - reduced) / allocated
    return np.clip(np.where(allocated > 0, ratio, 1.0), 0.0, 1.0)


def rate_satisfaction(
    alloc: AllocationResult,
    baseline: AllocationResult,
    profiles: Sequence[UserProfile],
) -> np.ndarray:
    """
    HQoS: achieved over requested rate, capped at 1. SQoS: achieved rate over
    the rate the same algorithm gives without any primary user. A user the
    baseline leaves without rate scores 0 unless it is served now.
    """
    hqos = np.array([p.is_hqos for p in profiles])
    served = (alloc.achieved_rates > 0).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        versus_target = alloc.achieved_rates / alloc.target_rates
        versus_baseline = np.where(
            baseline.achieved_rates > 0,
            alloc.achieved_rates / baseline.achieved_rates,
            served,
        )
    return np.clip(np.where(hqos, versus_target, versus_baseline), 0.0, 1.0)


def interference_reduction_ratio(alloc: AllocationResult) -> np.ndarray:
    """Reduced over original interference, per primary; 0 without interference."""
    before = alloc.interference_before_w
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (before - alloc.interference_after_w) / before
    return np.where(before > 0, ratio, 0.0)


def user_interference_reduction(alloc: AllocationResult) -> np.ndarray:
    """Per-user share of its own interference removed by control."""
    before = alloc.user_interference_before_w.sum(axis=0)
    after = alloc.user_interference_after_w.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (before - after) / before
    return np.where(before > 0, ratio, 0.0)


def interfering_users(
    alloc: AllocationResult, constraint: PrimaryConstraint
) -> np.ndarray:
    """Users holding a sub-band that leaks into the primary band."""
    leaks = constraint.factors.per_band > 0
    return (alloc.rho.astype(bool) & leaks[None, :]).any(axis=1)


class SweepPoint(NamedTuple):
    """One primary of the sweep and the quality matrix it is solved on."""

    bandwidth_mhz: float
    i_th_fraction: float
    constraint: PrimaryConstraint
    E: np.ndarray


def _rows(
    alloc: AllocationResult,
    baseline: AllocationResult,
    profiles: Sequence[UserProfile],
    trial: int,
    point: SweepPoint,
) -> List[dict]:
    power_sat = power_satisfaction(alloc)
    rate_sat = rate_satisfaction(alloc, baseline, profiles)
    before = alloc.user_interference_before_w.sum(axis=0)
    after = alloc.user_interference_after_w.sum(axis=0)
    reduction = user_interference_reduction(alloc)
    interfering = interfering_users(alloc, point.constraint)
    refined = np.zeros(len(profiles))
    if alloc.refinement.size:
        refined = alloc.refinement.sum(axis=1)
    flags = "|".join(sorted(flag.value for flag in alloc.flags))
    return [
        {
            "algorithm": alloc.algorithm,
            "trial": trial,
            "bandwidth_mhz": point.bandwidth_mhz,
            "i_th_fraction": point.i_th_fraction,
            "i_th_mw": point.constraint.threshold_w * 1e3,
            "user_id": profile.id,
            "class": profile.qos_class.value,
            "rate_target_mbps": profile.requested_rate,
            "rate_achieved_mbps": float(alloc.achieved_rates[k]),
            "rate_satisfaction": float(rate_sat[k]),
            "power_alloc_w": float(alloc.power[k].sum()),
            "power_red_w": float(alloc.reductions[k].sum()),
            "power_refined_w": float(refined[k]),
            "power_satisfaction": float(power_sat[k]),
            "i_before_mw": float(before[k] * 1e3),
            "i_after_mw": float(after[k] * 1e3),
            "i_reduction_ratio": float(reduction[k]),
            "interfering": bool(interfering[k]),
            "flags": flags,
        }
        for k, profile in enumerate(profiles)
    ]


def run_trial(config: ScenarioConfig, trial: int) -> List[dict]:
    """
    One Monte Carlo trial: draw the channels, build E and run every requested
    algorithm over the whole bandwidth and threshold sweep.

    The optimal allocation does not depend on the primary user unless its
    interference enters the SINRs, so it is solved once per quality matrix
    and only the interference control runs per sweep point.
    """
    profiles = config.profiles
    plan = config.plan
    budget = config.channel.budget()
    cm = config.channel.profile()
    total_power = config.total_power_w
    solver = config.solver
    rate_model = RateModel(reduction_model=solver.reduction_rate_model)

    channels = [
        generate_channel(cm, user_seed(config.run.seed, trial, user.id))
        for user in config.users
    ]
    E = build_quality_matrix(channels, plan, budget, profiles)
    primary_sinr = budget.primary_interference_psd_dbm_mhz is not None

    by_bandwidth: Dict[float, np.ndarray] = {}
    sweep: List[SweepPoint] = []
    for primary in config.primary.bands(plan):
        constraint = build_constraint(primary, plan, total_power)
        factors = constraint.factors
        E_bw = E
        if primary_sinr:
            if primary.bandwidth_mhz not in by_bandwidth:
                hit = {factors.overlapped_band: range(factors.n_ud, factors.n_up + 1)}
                by_bandwidth[primary.bandwidth_mhz] = build_quality_matrix(
                    channels, plan, budget, profiles, hit
                )
            E_bw = by_bandwidth[primary.bandwidth_mhz]
        fraction = np.nan if primary.i_th_mw is not None else primary.i_th_fraction
        sweep.append(SweepPoint(primary.bandwidth_mhz, fraction, constraint, E_bw))

    rows: List[dict] = []
    for algorithm in config.run.algorithms:
        if algorithm == "optimal":
            baseline = optimal_power_allocation(
                profiles, E, total_power, solver, rate_model
            )
            solved = {id(E): baseline}
            for point in sweep:
                if id(point.E) not in solved:
                    solved[id(point.E)] = optimal_power_allocation(
                        profiles, point.E, total_power, solver, rate_model
                    )
                alloc = interference_control(
                    solved[id(point.E)],
                    [point.constraint],
                    profiles,
                    point.E,
                    rate_model,
                )
                rows.extend(_rows(alloc, baseline, profiles, trial, point))
        else:
            baseline = suboptimal_allocate(
                profiles, E, total_power, (), solver, rate_model
            )
            for point in sweep:
                alloc = suboptimal_allocate(
                    profiles,
                    point.E,
                    total_power,
                    [point.constraint],
                    solver,
                    rate_model,
                )
                rows.extend(_rows(alloc, baseline, profiles, trial, point))
    return rows


@log_execution
def run_scenario(
    config: ScenarioConfig, trials: Optional[Iterable[int]] = None
) -> MetricsReport:
    """
    Run the Monte Carlo trials of a scenario.

    Args:
        config: Validated scenario.
        trials: Trial indices to run; all ``run.n_trials`` by default. Reports
            of disjoint subsets merge to the full report.

    Returns:
        MetricsReport: One row per (algorithm, trial, bandwidth, threshold,
        user).
    """
    indices = list(range(config.run.n_trials) if trials is None else trials)
    logger.info(
        f"Running {len(indices)} trials of {len(config.users)} users over "
        f"{len(config.primary.bandwidths_mhz)} primary bandwidths and "
        f"{len(config.primary.threshold_levels)} thresholds "
        f"({', '.join(config.run.algorithms)})"
    )
    results = Parallel(n_jobs=config.run.n_jobs, prefer="threads")(
        delayed(run_trial)(config, trial) for trial in indices
    )
    report = MetricsReport.from_rows(row for rows in results for row in rows)
    counts = {k: v for k, v in report.flag_counts().items() if v}
    if counts:
        logger.debug(f"Flag counts: {counts}")
    return report
