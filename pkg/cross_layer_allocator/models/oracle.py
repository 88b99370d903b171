"""Exhaustive reference allocator for small instances."""

import itertools
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from cross_layer_allocator.config import OBJECTIVES
from cross_layer_allocator.mac.profile import UserProfile
from cross_layer_allocator.models.allocator import (
    RATE_RTOL,
    AllocationFlag,
    AllocationResult,
    RateModel,
    base_result,
    check_inputs,
    interference_control,
    rate_water_level,
    spectral_rate,
    waterfill_power,
)
from cross_layer_allocator.phy.interference import PrimaryConstraint
from cross_layer_allocator.utils.exceptions import (
    DataValidationError,
    InfeasibleAllocationError,
)
from cross_layer_allocator.utils.logging import LogManager

logger = LogManager.get_logger(__name__)

MAX_ORACLE_SIZE = 4


def min_power_for_rate(e: np.ndarray, target_bits: float) -> np.ndarray:
    """
    Least total power reaching ``target_bits`` over sub-bands of quality ``e``.

    Margin-adaptive water-filling: ``p_b = max(0, nu - 1/e_b)`` with the
    level ``nu`` set so the rates add up to the target.
    """
    e = np.asarray(e, dtype=float)
    if target_bits <= 0:
        return np.zeros_like(e)
    return np.maximum(rate_water_level(e, target_bits) - 1.0 / e, 0.0)


def sqos_sum_rate(alloc: AllocationResult, profiles: Sequence[UserProfile]) -> float:
    """Sum of the SQoS achieved rates in Mbps."""
    mask = np.array([not p.is_hqos for p in profiles])
    return float(alloc.achieved_rates[mask].sum())


def _assignments(K: int, B: int, mode: str) -> Iterator[np.ndarray]:
    if mode == "one_band_per_user":
        for users in itertools.permutations(range(K), min(K, B)):
            for bands in itertools.permutations(range(B), len(users)):
                rho = np.zeros((K, B), dtype=int)
                rho[list(users), list(bands)] = 1
                yield rho
    else:
        for owners in itertools.product(range(K), repeat=B):
            rho = np.zeros((K, B), dtype=int)
            rho[list(owners), np.arange(B)] = 1
            yield rho


def total_rate_powers(
    rho: np.ndarray,
    E: np.ndarray,
    total_power: float,
    hqos: np.ndarray,
    targets_bits: np.ndarray,
    max_sweeps: int = 100,
) -> Optional[np.ndarray]:
    """
    Powers maximizing the total rate of a fixed assignment under HQoS targets.

    Each HQoS multiplier is raised just enough to meet its target, one user
    at a time, until no multiplier moves. Returns ``None`` when some target
    is out of reach.
    """
    K = E.shape[0]
    alpha = np.ones(K)

    def rate_of(k: int, weights: np.ndarray) -> float:
        power, _ = waterfill_power(rho, weights, E, total_power)
        return float(spectral_rate(power[k], E[k]).sum())

    for _ in range(max_sweeps):
        moved = False
        for k in np.flatnonzero(hqos):
            if not rho[k].any():
                return None

            def gap(a: float) -> float:
                trial = alpha.copy()
                trial[k] = a
                return rate_of(k, trial) - targets_bits[k]

            if gap(1.0) >= 0:
                level = 1.0
            else:
                high = 2.0
                while gap(high) < 0 and high < 1e8:
                    high *= 2.0
                if gap(high) < 0:
                    return None
                level = brentq(gap, 1.0, high, rtol=1e-12)
            if abs(level - alpha[k]) > 1e-10 * alpha[k]:
                alpha[k] = level
                moved = True
        if not moved:
            break

    power, _ = waterfill_power(rho, alpha, E, total_power)
    bits = spectral_rate(power, E).sum(axis=1)
    if np.any(hqos & (bits < targets_bits * (1 - 1e-7))):
        return None
    return power


def oracle_exhaustive(
    profiles: Sequence[UserProfile],
    E: np.ndarray,
    total_power: float,
    primaries: Sequence[PrimaryConstraint] = (),
    grid_points: int = 41,
    mode: str = "per_band_argmax",
    rate_model: Optional[RateModel] = None,
    objective: str = "sqos",
) -> AllocationResult:
    """
    Best feasible allocation by enumeration.

    Every assignment is tried. With the ``sqos`` objective the HQoS users get
    the least power meeting their targets and the rest of the budget is
    water-filled over the SQoS sub-bands. With ``total`` the whole rate is
    maximized under the HQoS targets, the problem the Lagrangian allocator
    solves.

    With primaries, the share ``t`` of the budget left after the HQoS
    minimum that goes to the HQoS users as extra margin is searched on a grid
    of ``grid_points`` values and refined locally. Interference control is
    applied to every candidate; only candidates that keep the HQoS targets
    and every threshold count.

    Raises:
        DataValidationError: If the instance exceeds 4 users or 4 sub-bands.
        InfeasibleAllocationError: If no assignment is feasible.
    """
    rate_model = rate_model or RateModel()
    E = check_inputs(profiles, E, total_power)
    K, B = E.shape
    if K > MAX_ORACLE_SIZE or B > MAX_ORACLE_SIZE:
        raise DataValidationError(
            f"oracle_exhaustive handles at most {MAX_ORACLE_SIZE} users and bands"
        )
    if grid_points < 2:
        raise DataValidationError("grid_points must be >= 2")
    if objective not in OBJECTIVES:
        raise DataValidationError(f"objective must be one of {OBJECTIVES}")

    hqos = np.array([p.is_hqos for p in profiles])
    targets = rate_model.to_bits(np.array([p.requested_rate for p in profiles]))

    def value(alloc: AllocationResult) -> float:
        met = alloc.achieved_rates >= alloc.target_rates * (1 - 1e-7)
        if np.any(hqos & ~met):
            return -np.inf
        if AllocationFlag.STILL_OVER_THRESHOLD in alloc.flags:
            return -np.inf
        if objective == "total":
            return float(alloc.achieved_rates.sum())
        return sqos_sum_rate(alloc, profiles)

    best: Optional[AllocationResult] = None
    best_value = -np.inf
    for rho in _assignments(K, B, mode):
        base = np.zeros((K, B))
        feasible = True
        for k in np.flatnonzero(hqos):
            bands = np.flatnonzero(rho[k])
            if bands.size == 0:
                feasible = False
                break
            base[k, bands] = min_power_for_rate(E[k, bands], targets[k])
        leftover = total_power - base.sum()
        if not feasible or leftover < -total_power * 1e-12:
            continue
        leftover = max(leftover, 0.0)

        def candidate(share: float) -> AllocationResult:
            power = base.copy()
            extra = rho * hqos[:, None]
            rest = rho * ~hqos[:, None]
            if not rest.any():
                extra, share = rho, 1.0
            if share > 0 and leftover > 0 and extra.any():
                boost, _ = waterfill_power(extra, np.ones(K), E, share * leftover)
                power += boost
            if share < 1 and leftover > 0 and rest.any():
                fill, _ = waterfill_power(rest, np.ones(K), E, (1 - share) * leftover)
                power += fill
            alloc = base_result("oracle", profiles, rho, power, E, rate_model)
            return interference_control(alloc, primaries, profiles, E, rate_model)

        if primaries:
            shares = np.linspace(0.0, 1.0, grid_points)
            scored = [(value(candidate(s)), s) for s in shares]
            top_value, top_share = max(scored, key=lambda item: item[0])
            if np.isfinite(top_value):
                step = 1.0 / (grid_points - 1)

                def loss(share: float) -> float:
                    found = value(candidate(share))
                    return -found if np.isfinite(found) else 1e300

                refined = minimize_scalar(
                    loss,
                    bounds=(max(top_share - step, 0.0), min(top_share + step, 1.0)),
                    method="bounded",
                    options={"xatol": 1e-6},
                )
                if -refined.fun > top_value:
                    top_share = float(refined.x)
            chosen = candidate(top_share)
        elif objective == "total":
            power = total_rate_powers(rho, E, total_power, hqos, targets)
            if power is None:
                continue
            chosen = base_result("oracle", profiles, rho, power, E, rate_model)
        else:
            chosen = candidate(0.0)

        score = value(chosen)
        if not np.isfinite(score):
            continue
        if best is None or score > best_value + RATE_RTOL * max(abs(best_value), 1.0):
            best, best_value = chosen, score

    if best is None:
        raise InfeasibleAllocationError("No assignment meets the HQoS targets")
    logger.debug(f"Oracle {objective} rate {best_value:.3f} Mbps")
    return best
