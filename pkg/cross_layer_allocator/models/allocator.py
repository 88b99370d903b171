"""Sub-band and power allocation under QoS and interference constraints.

Two allocators share the same building blocks:

* ``optimal_allocate`` runs the iterative Lagrangian scheme: per-band
  selection on the ``H`` metric, multi-level water-filling for the power and
  an outer loop raising the multiplier of the most deficient HQoS user,
  finished by a local search over the sub-band owners.
* ``suboptimal_allocate`` selects users on ``W_k * E_kb``, splits the power
  equally and refines the HQoS powers after interference control.

Powers are in W, rates in bits/s/Hz internally and Mbps at the edges.
"""

import itertools
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import (
    Dict,
    FrozenSet,
    Iterator,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
from scipy.optimize import brentq, linear_sum_assignment
from scipy.special import logsumexp

from cross_layer_allocator.config import SolverConfig
from cross_layer_allocator.mac.profile import UserProfile, priority_ranks
from cross_layer_allocator.phy.interference import PrimaryConstraint
from cross_layer_allocator.phy.mcs import DATA_BANDWIDTH_MHZ
from cross_layer_allocator.utils.exceptions import (
    DataValidationError,
    InfeasibleAllocationError,
    UnknownModeError,
)
from cross_layer_allocator.utils.logging import LogManager

logger = LogManager.get_logger(__name__)

LN2 = np.log(2.0)
# Relative slack when comparing an achieved rate with its target
RATE_RTOL = 1e-9
# Finite stand-in for -inf in the matching solver
_UNASSIGNABLE = -1e12

Segment = Tuple[float, float]


class AllocationFlag(str, Enum):
    MAX_ITERS_EXCEEDED = "MaxItersExceeded"
    INFEASIBLE_TARGETS = "InfeasibleTargets"
    STILL_OVER_THRESHOLD = "StillOverThreshold"
    DEGENERATE_BAND = "DegenerateBand"


@dataclass(frozen=True)
class RateModel:
    """
    Conversion between spectral rates and Mbps.

    Attributes:
        data_bandwidth_mhz (float): Bandwidth of the data subcarriers of one
            sub-band; one bit/s/Hz is worth this many Mbps.
        reduction_model (str): ``split`` or ``eesm``, see :func:`band_rate`.
    """

    data_bandwidth_mhz: float = DATA_BANDWIDTH_MHZ
    reduction_model: str = "split"

    def to_mbps(self, bits: np.ndarray) -> np.ndarray:
        return np.asarray(bits, dtype=float) * self.data_bandwidth_mhz

    def to_bits(self, mbps: np.ndarray) -> np.ndarray:
        return np.asarray(mbps, dtype=float) / self.data_bandwidth_mhz


@dataclass
class LagrangeState:
    """Per-user multipliers and the common water level (W)."""

    alpha: np.ndarray
    mu: float


@dataclass(frozen=True)
class AllocationResult:
    """
    Outcome of an allocator.

    ``power`` holds the allocated powers before interference control;
    ``reductions`` the power removed from overlapped subcarriers and
    ``refinement`` the reclaimed power handed back to HQoS sub-bands, so the
    radiated total never exceeds the budget. Ledgers are indexed by primary,
    in the order the constraints were given.
    """

    algorithm: str
    rho: np.ndarray
    power: np.ndarray
    reductions: np.ndarray
    achieved_rates: np.ndarray
    target_rates: np.ndarray
    satisfiable: np.ndarray
    state: Optional[LagrangeState] = None
    iterations: int = 0
    flags: FrozenSet[AllocationFlag] = frozenset()
    thresholds_w: np.ndarray = field(default_factory=lambda: np.zeros(0))
    interference_before_w: np.ndarray = field(default_factory=lambda: np.zeros(0))
    interference_after_w: np.ndarray = field(default_factory=lambda: np.zeros(0))
    user_interference_before_w: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 0))
    )
    user_interference_after_w: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 0))
    )
    reduction_segments: Dict[Tuple[int, int], Tuple[Segment, ...]] = field(
        default_factory=dict
    )
    refinement: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def n_users(self) -> int:
        return int(self.rho.shape[0])

    @property
    def n_bands(self) -> int:
        return int(self.rho.shape[1])

    @property
    def total_power_used(self) -> float:
        return float(self.power.sum())

    @property
    def refined_power_w(self) -> float:
        return float(self.refinement.sum())

    @property
    def net_power(self) -> np.ndarray:
        """Radiated power per (user, band) once reductions and refinement apply."""
        if self.refinement.size:
            return self.power - self.reductions + self.refinement
        return self.power - self.reductions


class Assignment(NamedTuple):
    rho: np.ndarray
    degenerate_bands: List[int]


def spectral_rate(power: np.ndarray, e: np.ndarray) -> np.ndarray:
    """``log2(1 + P * E)`` in bits/s/Hz."""
    return np.log2(1.0 + np.asarray(power, dtype=float) * np.asarray(e, dtype=float))


def achieved_rate(
    power: float, e: float, rate_model: Optional[RateModel] = None
) -> float:
    """Rate in Mbps of one sub-band transmitted at ``power``."""
    if power < 0 or not e > 0:
        raise DataValidationError("achieved_rate needs P >= 0 and E > 0")
    rate_model = rate_model or RateModel()
    return float(rate_model.to_mbps(spectral_rate(power, e)))


def band_rate(
    power: float,
    e: float,
    segments: Sequence[Segment] = (),
    lam: float = 1.0,
    model: str = "split",
) -> float:
    """
    Spectral rate of one sub-band with part of its subcarriers reduced.

    Each segment ``(fraction, p_red)`` removes ``p_red`` from a share
    ``fraction`` of the subcarriers, so those subcarriers run at the sub-band
    equivalent power ``P - p_red / fraction``.

    ``split`` weights the rate of each share by its size. ``eesm``
    recompresses the resulting two-level SINR profile with ``lam`` and takes
    the rate of the effective SINR.
    """
    if power <= 0:
        return 0.0
    active = [(f, p) for f, p in segments if p > 0 and f > 0]
    full = power * e
    if not active:
        return float(np.log2(1.0 + full))

    fractions = np.array([f for f, _ in active])
    p_red = np.array([p for _, p in active])
    reduced = np.maximum(power - p_red / fractions, 0.0) * e
    remaining = max(1.0 - fractions.sum(), 0.0)

    if model == "split":
        return float(
            remaining * np.log2(1.0 + full)
            + np.sum(fractions * np.log2(1.0 + reduced))
        )
    if model == "eesm":
        sinr = np.concatenate(([full], reduced))
        weights = np.concatenate(([remaining], fractions))
        effective = -lam * logsumexp(-sinr / lam, b=weights / weights.sum())
        return float(np.log2(1.0 + np.clip(effective, sinr.min(), sinr.max())))
    raise UnknownModeError(f"Unknown reduction rate model '{model}'")


def hqos_reduction_cap(
    power: float,
    e: float,
    fraction: float,
    margin_bits: float,
    lam: float = 1.0,
    model: str = "split",
    existing: Sequence[Segment] = (),
) -> float:
    """
    Largest reduction on a share ``fraction`` of a sub-band that costs at
    most ``margin_bits`` of rate.

    The ``split`` model without earlier reductions has a closed form; any
    other case is solved by root finding on the rate loss.
    """
    upper = power * fraction
    if margin_bits < 0 or upper <= 0:
        return 0.0

    if model == "split" and not existing:
        full_rate = np.log2(1.0 + power * e)
        if fraction * full_rate - margin_bits <= 0:
            return upper
        level = (2.0 ** (full_rate - margin_bits / fraction) - 1.0) / e
        return float(np.clip(fraction * (power - level), 0.0, upper))

    floor = band_rate(power, e, existing, lam, model) - margin_bits

    def slack(p_red: float) -> float:
        return band_rate(power, e, [*existing, (fraction, p_red)], lam, model) - floor

    if slack(upper) >= 0:
        return upper
    return float(brentq(slack, 0.0, upper, xtol=upper * 1e-13))


def compute_H(state: LagrangeState, E: np.ndarray) -> np.ndarray:
    """
    Selection metric of every (user, sub-band) pair.

    ``H = alpha * (log2(x) - (1 - 1/x) / ln 2)`` with ``x = alpha * mu * E``.
    Entries with ``x < 1`` would receive no power and are set to ``-inf``.
    """
    alpha = np.asarray(state.alpha, dtype=float)[:, None]
    x = alpha * state.mu * E
    with np.errstate(divide="ignore", invalid="ignore"):
        h = alpha * (np.log2(x) - (1.0 - 1.0 / x) / LN2)
    return np.where(x < 1.0, -np.inf, h)


def assign_subbands(
    H: np.ndarray,
    mode: str = "per_band_argmax",
    ranks: Optional[Sequence[int]] = None,
) -> Assignment:
    """
    Binary assignment from a selection metric.

    ``per_band_argmax`` gives each sub-band to its best user, so a user may
    win several sub-bands. ``one_band_per_user`` solves the max-weight
    matching. Ties go to the lower rank (priority order, then id). Sub-bands
    whose metric is ``-inf`` for every user stay unassigned.
    """
    H = np.asarray(H, dtype=float)
    K, B = H.shape
    ranks = np.arange(K) if ranks is None else np.asarray(ranks)
    rho = np.zeros((K, B), dtype=int)
    degenerate = [b for b in range(B) if not np.isfinite(H[:, b]).any()]

    if mode == "per_band_argmax":
        for b in range(B):
            if b in degenerate:
                continue
            # lexsort uses the last key as primary
            winner = np.lexsort((ranks, -H[:, b]))[0]
            rho[winner, b] = 1
    elif mode == "one_band_per_user":
        finite = np.isfinite(H)
        scale = np.abs(H[finite]).max() if finite.any() else 1.0
        tie_break = ranks[:, None] * 1e-9 * (1.0 + scale)
        weights = np.where(finite, H - tie_break, _UNASSIGNABLE)
        rows, cols = linear_sum_assignment(weights, maximize=True)
        for k, b in zip(rows, cols):
            if finite[k, b]:
                rho[k, b] = 1
    else:
        raise UnknownModeError(f"Unknown assignment mode '{mode}'")

    if degenerate:
        logger.debug(f"Sub-bands {degenerate} left unassigned")
    return Assignment(rho, degenerate)


def waterfill_power(
    rho: np.ndarray,
    alpha: np.ndarray,
    E: np.ndarray,
    total_power: float,
    tol: float = 1e-10,
) -> Tuple[np.ndarray, float]:
    """
    Multi-level water-filling over the assigned entries.

    ``P_kb = rho_kb * max(0, alpha_k * mu - 1 / E_kb)`` with ``mu`` chosen so
    the powers add up to ``total_power``.

    Raises:
        InfeasibleAllocationError: If nothing is assigned.
    """
    if not total_power > 0:
        raise DataValidationError("Total power must be > 0")
    mask = np.asarray(rho).astype(bool)
    if not mask.any():
        raise InfeasibleAllocationError("No sub-band is assigned")

    a = np.broadcast_to(np.asarray(alpha, dtype=float)[:, None], E.shape)[mask]
    inv = 1.0 / E[mask]

    def excess(mu: float) -> float:
        return float(np.maximum(a * mu - inv, 0.0).sum() - total_power)

    upper = 2.0 * (total_power + inv.sum()) / a.min()
    while excess(upper) < 0:
        upper *= 2.0
    rtol = max(tol, 4 * np.finfo(float).eps)
    mu = brentq(excess, 0.0, upper, xtol=1e-300, rtol=rtol)

    # Exact level on the active set found by the root finder
    active = a * mu - inv > 0
    exact = (total_power + inv[active].sum()) / a[active].sum()
    if np.array_equal(a * exact - inv > 0, active):
        mu = exact

    power = np.zeros(E.shape)
    power[mask] = np.maximum(a * mu - inv, 0.0)
    return power, float(mu)


def rate_water_level(e: np.ndarray, target_bits: float) -> float:
    """
    Water level reaching ``target_bits`` with the least power over sub-bands
    of quality ``e``.

    With the ``n`` best sub-bands active the rates add up to the target when
    ``log2(level) = (target - sum(log2(e_i))) / n``; ``n`` grows while the
    next sub-band would still lie below the level.
    """
    e = np.sort(np.asarray(e, dtype=float).ravel())[::-1]
    if e.size == 0 or not e[0] > 0:
        raise DataValidationError("rate_water_level needs at least one E > 0")
    if target_bits <= 0:
        return float(1.0 / e[0])
    logs = np.log2(e)
    for n in range(1, e.size + 1):
        log_level = (target_bits - logs[:n].sum()) / n
        if n == e.size or log_level + logs[n] <= 0:
            break
    return float(2.0**log_level)


def settle_power(
    rho: np.ndarray,
    E: np.ndarray,
    total_power: float,
    constrained: np.ndarray,
    targets_bits: np.ndarray,
    objective: str = "sqos",
    tol: float = 1e-10,
) -> Optional[Tuple[np.ndarray, LagrangeState]]:
    """
    Best powers for a fixed assignment under rate floors.

    Every ``constrained`` user is first given the least power reaching its
    target. With the ``sqos`` objective those users stay there and the rest
    of the budget is water-filled over the other users' sub-bands. With
    ``total``, or when nobody else holds a sub-band, every user shares one
    level ``mu`` and a constrained user keeps its floor level whenever that
    is higher.

    The result has the water-filling form ``P = max(0, alpha * mu - 1/E)``
    on the assigned entries. Returns ``None`` when a constrained user holds
    no sub-band or the floors alone exceed the budget.
    """
    mask = np.asarray(rho).astype(bool)
    constrained = np.asarray(constrained, dtype=bool)
    K = E.shape[0]
    inv = 1.0 / E

    floors = np.zeros(K)
    for k in np.flatnonzero(constrained):
        bands = np.flatnonzero(mask[k])
        if bands.size == 0:
            return None
        floors[k] = rate_water_level(E[k, bands], targets_bits[k])
    floor_power = mask * np.maximum(floors[:, None] - inv, 0.0)
    budget = total_power - floor_power.sum()
    if budget < -tol * total_power:
        return None

    free = mask & ~constrained[:, None]
    if budget <= 0:
        mu = float(inv[mask].min())
        alpha = np.where(constrained, np.maximum(floors / mu, 1.0), 1.0)
        return floor_power, LagrangeState(alpha, mu)

    if objective == "sqos" and free.any():
        fill, mu = waterfill_power(free, np.ones(K), E, budget, tol)
        alpha = np.where(constrained, floors / mu, 1.0)
        return floor_power + fill, LagrangeState(alpha, mu)

    def powers(mu: float) -> np.ndarray:
        return mask * np.maximum(np.maximum(floors, mu)[:, None] - inv, 0.0)

    def excess(mu: float) -> float:
        return float(powers(mu).sum() - total_power)

    upper = 2.0 * (total_power + inv[mask].max() + floors.max())
    while excess(upper) < 0:
        upper *= 2.0
    rtol = max(tol, 4 * np.finfo(float).eps)
    mu = brentq(excess, 0.0, upper, xtol=1e-300, rtol=rtol)

    # Exact level on the entries that follow mu
    following = mask & (mu > inv) & (mu >= floors[:, None])
    if following.any():
        held = powers(mu)[mask & ~following].sum()
        exact = (total_power - held + inv[following].sum()) / following.sum()
        if abs(excess(exact)) <= abs(excess(mu)):
            mu = exact
    alpha = np.maximum(floors, mu) / mu
    return powers(mu), LagrangeState(alpha, float(mu))


def _owners(rho: np.ndarray) -> Tuple[int, ...]:
    """Holder of every sub-band, -1 when unassigned."""
    return tuple(
        int(np.flatnonzero(column)[0]) if column.any() else -1 for column in rho.T
    )


def _neighbours(
    owners: Tuple[int, ...], n_users: int, mode: str, span: int
) -> Iterator[Tuple[int, ...]]:
    """Assignments that differ from ``owners`` on at most ``span`` sub-bands."""
    choices = list(range(n_users))
    if mode == "one_band_per_user":
        choices.append(-1)
    B = len(owners)
    for size in range(1, min(span, B) + 1):
        for bands in itertools.combinations(range(B), size):
            options = [[c for c in choices if c != owners[b]] for b in bands]
            for picked in itertools.product(*options):
                moved = list(owners)
                for b, k in zip(bands, picked):
                    moved[b] = k
                if mode == "one_band_per_user":
                    held = [k for k in moved if k >= 0]
                    if len(held) != len(set(held)):
                        continue
                yield tuple(moved)


def _improves(new: Tuple[float, float], old: Tuple[float, float]) -> bool:
    """Lexicographic comparison with a relative slack."""

    def slack(value: float) -> float:
        return 1e-12 * max(1.0, abs(value)) if np.isfinite(value) else 0.0

    if new[0] > old[0] + slack(old[0]):
        return True
    return abs(new[0] - old[0]) <= slack(old[0]) and new[1] > old[1] + slack(old[1])


class _AssignmentPolisher:
    """
    Best-improvement local search over the sub-band owners.

    Each candidate assignment is scored with :func:`settle_power`: first the
    objective (SQoS or total bits), then the total bits.
    """

    def __init__(
        self,
        E: np.ndarray,
        total_power: float,
        constrained: np.ndarray,
        hqos: np.ndarray,
        targets_bits: np.ndarray,
        cfg: SolverConfig,
    ):
        self.E = E
        self.total_power = total_power
        self.constrained = constrained
        self.hqos = hqos
        self.targets_bits = targets_bits
        self.cfg = cfg

    def _rho(self, owners: Tuple[int, ...]) -> np.ndarray:
        rho = np.zeros(self.E.shape, dtype=int)
        for b, k in enumerate(owners):
            if k >= 0:
                rho[k, b] = 1
        return rho

    def settle(self, rho: np.ndarray) -> Optional[Tuple[np.ndarray, LagrangeState]]:
        if not rho.any():
            return None
        return settle_power(
            rho,
            self.E,
            self.total_power,
            self.constrained,
            self.targets_bits,
            self.cfg.objective,
            self.cfg.waterlevel_bisect_tol,
        )

    def score(self, rho: np.ndarray) -> Tuple[float, float]:
        settled = self.settle(rho)
        if settled is None:
            return (-np.inf, -np.inf)
        bits = spectral_rate(settled[0], self.E).sum(axis=1)
        total = float(bits.sum())
        if self.cfg.objective == "sqos":
            return (float(bits[~self.hqos].sum()), total)
        return (total, total)

    def run(self, rho: np.ndarray) -> Tuple[np.ndarray, int]:
        """Polished assignment and the number of moves taken."""
        owners = _owners(rho)
        current = self.score(rho)
        moves = 0
        while True:
            best, best_score = None, current
            for candidate in _neighbours(
                owners, self.E.shape[0], self.cfg.assignment_mode, self.cfg.polish_span
            ):
                found = self.score(self._rho(candidate))
                if _improves(found, best_score):
                    best, best_score = candidate, found
            if best is None:
                return self._rho(owners), moves
            owners, current = best, best_score
            moves += 1


def check_inputs(
    profiles: Sequence[UserProfile], E: np.ndarray, total_power: float
) -> np.ndarray:
    E = np.asarray(E, dtype=float)
    if E.ndim != 2 or E.shape[0] != len(profiles) or min(E.shape) < 1:
        raise DataValidationError(
            f"E must be K x B with K = {len(profiles)} users, got {E.shape}"
        )
    if not np.all(np.isfinite(E)) or np.any(E <= 0):
        raise DataValidationError("E entries must be finite and > 0")
    if not total_power > 0:
        raise DataValidationError("Total power must be > 0")
    return E


def _user_bits(
    power: np.ndarray,
    E: np.ndarray,
    segments: Optional[Dict[Tuple[int, int], Tuple[Segment, ...]]] = None,
    lams: Optional[np.ndarray] = None,
    model: str = "split",
) -> np.ndarray:
    if not segments:
        return spectral_rate(power, E).sum(axis=1)
    K, B = power.shape
    bits = np.zeros(K)
    for k in range(K):
        lam = 1.0 if lams is None else lams[k]
        bits[k] = sum(
            band_rate(power[k, b], E[k, b], segments.get((k, b), ()), lam, model)
            for b in range(B)
        )
    return bits


def base_result(
    algorithm: str,
    profiles: Sequence[UserProfile],
    rho: np.ndarray,
    power: np.ndarray,
    E: np.ndarray,
    rate_model: RateModel,
    state: Optional[LagrangeState] = None,
    iterations: int = 0,
    flags: FrozenSet[AllocationFlag] = frozenset(),
) -> AllocationResult:
    targets = np.array([p.requested_rate for p in profiles])
    hqos = np.array([p.is_hqos for p in profiles])
    rates = rate_model.to_mbps(_user_bits(power, E))
    return AllocationResult(
        algorithm=algorithm,
        rho=rho,
        power=power,
        reductions=np.zeros_like(power),
        refinement=np.zeros_like(power),
        achieved_rates=rates,
        target_rates=targets,
        satisfiable=~hqos | (rates >= targets * (1 - RATE_RTOL)),
        state=state,
        iterations=iterations,
        flags=frozenset(flags),
        user_interference_before_w=np.zeros((0, len(profiles))),
        user_interference_after_w=np.zeros((0, len(profiles))),
    )


def _single_user_bound(
    e_row: np.ndarray, total_power: float, mode: str, tol: float
) -> float:
    """Best rate a user could reach holding the whole budget."""
    if mode == "one_band_per_user":
        return float(np.log2(1.0 + total_power * e_row.max()))
    power, _ = waterfill_power(
        np.ones((1, e_row.size)), np.ones(1), e_row[None, :], total_power, tol
    )
    return float(spectral_rate(power, e_row[None, :]).sum())


class _AssignmentSolver:
    """Fixed point between the sub-band assignment and the water level."""

    def __init__(
        self, E: np.ndarray, ranks: np.ndarray, total_power: float, cfg: SolverConfig
    ):
        self.E = E
        self.ranks = ranks
        self.total_power = total_power
        self.cfg = cfg

    def best_quality(self, alpha: np.ndarray) -> Assignment:
        return assign_subbands(
            np.log(alpha[:, None] * self.E), self.cfg.assignment_mode, self.ranks
        )

    def initial_level(self, alpha: np.ndarray) -> float:
        rho = self.best_quality(alpha).rho
        _, mu = waterfill_power(
            rho, alpha, self.E, self.total_power, self.cfg.waterlevel_bisect_tol
        )
        return mu

    def solve(
        self, alpha: np.ndarray, mu: float
    ) -> Tuple[np.ndarray, np.ndarray, float, List[int]]:
        previous = None
        for _ in range(self.cfg.max_inner_iters):
            assignment = assign_subbands(
                compute_H(LagrangeState(alpha, mu), self.E),
                self.cfg.assignment_mode,
                self.ranks,
            )
            if not assignment.rho.any():
                assignment = self.best_quality(alpha)
            power, mu = waterfill_power(
                assignment.rho,
                alpha,
                self.E,
                self.total_power,
                self.cfg.waterlevel_bisect_tol,
            )
            if previous is not None and np.array_equal(assignment.rho, previous):
                break
            previous = assignment.rho
        return assignment.rho, power, mu, assignment.degenerate_bands


def optimal_power_allocation(
    profiles: Sequence[UserProfile],
    E: np.ndarray,
    total_power: float,
    cfg: Optional[SolverConfig] = None,
    rate_model: Optional[RateModel] = None,
) -> AllocationResult:
    """
    Joint sub-band and power allocation without primary users.

    HQoS multipliers start at ``1 + delta`` and the most deficient HQoS user
    gets ``delta`` more per outer iteration. Each iteration re-solves the
    assignment against the water level, which keeps the total power at the
    budget.

    The loop's assignment is then refined by a local search that moves up
    to ``polish_span`` sub-bands at a time, and the powers of the final
    assignment are settled exactly for ``cfg.objective``: with ``sqos`` the
    HQoS users sit at their targets and their multipliers may end below 1.

    HQoS users that cannot reach their target even with the whole budget are
    left out of the outer loop and reported with ``INFEASIBLE_TARGETS``.
    """
    cfg = cfg or SolverConfig()
    rate_model = rate_model or RateModel(reduction_model=cfg.reduction_rate_model)
    E = check_inputs(profiles, E, total_power)
    K, B = E.shape
    ranks = np.asarray(priority_ranks(list(profiles)))
    hqos = np.array([p.is_hqos for p in profiles])
    targets = rate_model.to_bits(np.array([p.requested_rate for p in profiles]))
    flags = set()

    reachable = hqos.copy()
    for k in np.flatnonzero(hqos):
        bound = _single_user_bound(
            E[k], total_power, cfg.assignment_mode, cfg.waterlevel_bisect_tol
        )
        if bound < targets[k] * (1 - RATE_RTOL):
            logger.debug(
                f"User {profiles[k].id} cannot reach {profiles[k].requested_rate} "
                f"Mbps even alone ({rate_model.to_mbps(bound):.1f} Mbps)"
            )
            reachable[k] = False
            flags.add(AllocationFlag.INFEASIBLE_TARGETS)

    alpha = np.where(hqos, 1.0 + cfg.delta, 1.0)
    solver = _AssignmentSolver(E, ranks, total_power, cfg)

    if cfg.algo_variant == "literal_step3c":
        return _literal_step3c(
            profiles,
            E,
            total_power,
            cfg,
            rate_model,
            solver,
            alpha,
            hqos,
            reachable,
            targets,
            flags,
        )

    def deficits(power: np.ndarray) -> np.ndarray:
        bits = spectral_rate(power, E).sum(axis=1)
        relative = (targets - bits) / targets
        return np.where(reachable, relative, -np.inf)

    rho, power, mu, degenerate = solver.solve(alpha, solver.initial_level(alpha))
    iterations = 0
    stalled = 0
    best_gap = np.inf

    while True:
        gap = deficits(power)
        worst_gap = gap.max()
        if worst_gap <= RATE_RTOL:
            break
        if iterations >= cfg.max_outer_iters:
            flags.add(AllocationFlag.MAX_ITERS_EXCEEDED)
            break
        if worst_gap < best_gap - 1e-12:
            best_gap = worst_gap
            stalled = 0
        else:
            stalled += 1
            if stalled >= cfg.stall_window:
                flags.add(AllocationFlag.INFEASIBLE_TARGETS)
                break

        candidates = np.flatnonzero(gap == worst_gap)
        k = int(candidates[np.argmin(ranks[candidates])])
        alpha[k] += cfg.delta
        rho, power, mu, degenerate = solver.solve(alpha, mu)
        iterations += 1
        logger.debug(
            f"Iteration {iterations}: alpha={np.round(alpha, 4).tolist()} "
            f"mu={mu:.4e} worst deficit={worst_gap:.4f}"
        )

    state = LagrangeState(alpha.copy(), mu)
    polisher = _AssignmentPolisher(E, total_power, reachable, hqos, targets, cfg)
    if cfg.polish_span > 0:
        rho, moves = polisher.run(rho)
        if moves:
            logger.debug(f"Local search moved the assignment {moves} times")
    settled = polisher.settle(rho)
    if settled is not None:
        power, state = settled
        flags.discard(AllocationFlag.MAX_ITERS_EXCEEDED)
        flags.discard(AllocationFlag.INFEASIBLE_TARGETS)
        if np.any(hqos & ~reachable):
            flags.add(AllocationFlag.INFEASIBLE_TARGETS)
    degenerate = [b for b in degenerate if not rho[:, b].any()]

    if degenerate:
        flags.add(AllocationFlag.DEGENERATE_BAND)
    if flags:
        logger.debug(f"Optimal allocation flags: {sorted(f.value for f in flags)}")
    return base_result(
        "optimal",
        profiles,
        rho,
        power,
        E,
        rate_model,
        state,
        iterations,
        frozenset(flags),
    )


def _literal_step3c(
    profiles: Sequence[UserProfile],
    E: np.ndarray,
    total_power: float,
    cfg: SolverConfig,
    rate_model: RateModel,
    solver: _AssignmentSolver,
    alpha: np.ndarray,
    hqos: np.ndarray,
    reachable: np.ndarray,
    targets: np.ndarray,
    flags: set,
) -> AllocationResult:
    """
    Multiplier-only variant: the water level stays at its initial value and
    the budget is chased by moving every HQoS multiplier by ``delta / 2``.
    Any remaining excess over the budget is scaled away at the end.
    """
    mu = solver.initial_level(alpha)
    ranks = solver.ranks
    iterations = 0
    converged = False
    while iterations < cfg.max_outer_iters:
        assignment = assign_subbands(
            compute_H(LagrangeState(alpha, mu), E), cfg.assignment_mode, ranks
        )
        if not assignment.rho.any():
            assignment = solver.best_quality(alpha)
        rho = assignment.rho
        power = rho * np.maximum(alpha[:, None] * mu - 1.0 / E, 0.0)
        used = power.sum()
        bits = spectral_rate(power, E).sum(axis=1)
        gap = np.where(reachable, (targets - bits) / targets, -np.inf)
        iterations += 1

        if gap.max() > RATE_RTOL:
            candidates = np.flatnonzero(gap == gap.max())
            k = int(candidates[np.argmin(ranks[candidates])])
            alpha[k] += cfg.delta
        elif abs(used - total_power) <= cfg.power_tol * total_power or not hqos.any():
            converged = True
            break

        if used > total_power * (1 + cfg.power_tol):
            alpha[hqos] = np.maximum(alpha[hqos] - cfg.delta / 2, 1.0)
        elif used < total_power * (1 - cfg.power_tol):
            alpha[hqos] += cfg.delta / 2

    if not converged:
        flags.add(AllocationFlag.MAX_ITERS_EXCEEDED)
    if power.sum() > total_power:
        power = power * (total_power / power.sum())
    if assignment.degenerate_bands:
        flags.add(AllocationFlag.DEGENERATE_BAND)
    return base_result(
        "optimal",
        profiles,
        rho,
        power,
        E,
        rate_model,
        LagrangeState(alpha.copy(), mu),
        iterations,
        frozenset(flags),
    )


def interference_ledger(
    power: np.ndarray,
    reductions: Sequence[np.ndarray],
    constraints: Sequence[PrimaryConstraint],
) -> List[np.ndarray]:
    """
    Interference each (user, band) causes at each primary, in W.

    A reduction at primary ``c'`` removes its share of the overlapped
    subcarriers' factors from the sub-band's contribution at every primary.
    """
    ledgers = []
    for constraint in constraints:
        factors = constraint.factors
        contribution = power * factors.per_band[None, :]
        for other, reduction in zip(constraints, reductions):
            band = other.factors.overlapped_band
            if factors.per_band[band] == 0 or not reduction[:, band].any():
                continue
            leak = factors.per_subcarrier[
                band, other.factors.n_ud : other.factors.n_up + 1
            ].sum()
            contribution[:, band] -= (
                reduction[:, band] * leak / other.factors.overlap_fraction
            )
        ledgers.append(np.maximum(contribution, 0.0))
    return ledgers


def interference_control(
    alloc: AllocationResult,
    primaries: Sequence[PrimaryConstraint],
    profiles: Sequence[UserProfile],
    E: np.ndarray,
    rate_model: Optional[RateModel] = None,
) -> AllocationResult:
    """
    Bring the interference at every primary below its threshold.

    The holder of the sub-band a primary falls in is the only user that can
    act on the overlapped subcarriers ``[n_ud, n_up]``. An SQoS holder has
    that share annulled. An HQoS holder gives up the smallest of what the
    threshold needs and what its rate margin allows. Primaries whose holder
    ranks lowest are handled first. Any primary still above its threshold
    raises ``STILL_OVER_THRESHOLD``.
    """
    rate_model = rate_model or RateModel()
    model = rate_model.reduction_model
    K, B = alloc.power.shape
    E = np.asarray(E, dtype=float)
    if not primaries:
        return alloc

    power = alloc.power
    hqos = np.array([p.is_hqos for p in profiles])
    lams = np.array([p.eesm_lambda for p in profiles])
    targets = rate_model.to_bits(alloc.target_rates)
    ranks = np.asarray(priority_ranks(list(profiles)))
    flags = set(alloc.flags)

    reductions = [np.zeros((K, B)) for _ in primaries]
    segments: Dict[Tuple[int, int], List[Segment]] = {}
    bits_before = _user_bits(power, E)
    satisfiable = ~hqos | (bits_before >= targets * (1 - RATE_RTOL))
    before = interference_ledger(power, reductions, primaries)

    def holder(constraint: PrimaryConstraint) -> Optional[int]:
        users = np.flatnonzero(alloc.rho[:, constraint.factors.overlapped_band])
        return int(users[0]) if users.size else None

    def processing_key(c: int) -> int:
        k = holder(primaries[c])
        return 0 if k is None else -int(ranks[k])

    order = sorted(range(len(primaries)), key=processing_key)

    for c in order:
        constraint = primaries[c]
        factors = constraint.factors
        total = interference_ledger(power, reductions, primaries)[c].sum()
        if total <= constraint.threshold_w * (1 + 1e-12):
            continue

        k = holder(constraint)
        band = factors.overlapped_band
        if k is not None and power[k, band] > 0 and factors.overlapped_sum > 0:
            fraction = factors.overlap_fraction
            removed_per_watt = factors.overlapped_sum / fraction
            needed = (total - constraint.threshold_w) / removed_per_watt
            room = power[k, band] * fraction - reductions[c][k, band]
            if not hqos[k]:
                p_red = room
            else:
                current = tuple(segments.get((k, band), ()))
                margin = (
                    _user_bits(power, E, _freeze(segments), lams, model)[k] - targets[k]
                )
                cap = hqos_reduction_cap(
                    power[k, band], E[k, band], fraction, margin, lams[k], model, current
                )
                p_red = min(cap, needed, room)
            if p_red > 0:
                reductions[c][k, band] += p_red
                segments.setdefault((k, band), []).append((fraction, p_red))
                logger.debug(
                    f"Primary {c}: user {profiles[k].id} reduces band {band} "
                    f"by {p_red:.3e} W"
                )

        after_total = interference_ledger(power, reductions, primaries)[c].sum()
        if after_total > constraint.threshold_w * (1 + 1e-9):
            flags.add(AllocationFlag.STILL_OVER_THRESHOLD)

    after = interference_ledger(power, reductions, primaries)
    frozen = _freeze(segments)
    rates = rate_model.to_mbps(_user_bits(power, E, frozen, lams, model))
    return replace(
        alloc,
        reductions=np.sum(reductions, axis=0),
        achieved_rates=rates,
        satisfiable=satisfiable,
        flags=frozenset(flags),
        thresholds_w=np.array([p.threshold_w for p in primaries]),
        interference_before_w=np.array([led.sum() for led in before]),
        interference_after_w=np.array([led.sum() for led in after]),
        user_interference_before_w=np.array([led.sum(axis=1) for led in before]),
        user_interference_after_w=np.array([led.sum(axis=1) for led in after]),
        reduction_segments=frozen,
    )


def _freeze(
    segments: Dict[Tuple[int, int], List[Segment]]
) -> Dict[Tuple[int, int], Tuple[Segment, ...]]:
    return {key: tuple(value) for key, value in segments.items()}


def optimal_allocate(
    profiles: Sequence[UserProfile],
    E: np.ndarray,
    total_power: float,
    primaries: Sequence[PrimaryConstraint] = (),
    cfg: Optional[SolverConfig] = None,
    rate_model: Optional[RateModel] = None,
) -> AllocationResult:
    """Iterative Lagrangian allocation followed by interference control."""
    cfg = cfg or SolverConfig()
    rate_model = rate_model or RateModel(reduction_model=cfg.reduction_rate_model)
    alloc = optimal_power_allocation(profiles, E, total_power, cfg, rate_model)
    return interference_control(alloc, primaries, profiles, E, rate_model)


def suboptimal_allocate(
    profiles: Sequence[UserProfile],
    E: np.ndarray,
    total_power: float,
    primaries: Sequence[PrimaryConstraint] = (),
    cfg: Optional[SolverConfig] = None,
    rate_model: Optional[RateModel] = None,
) -> AllocationResult:
    """
    Cross-layer weighted allocation.

    Sub-bands go to the user with the largest ``W_k * E_kb`` and each
    assigned sub-band gets ``total_power / B``. After interference control
    the reclaimed power is handed to the most deficient HQoS user that does
    not interfere with any primary.
    """
    cfg = cfg or SolverConfig()
    rate_model = rate_model or RateModel(reduction_model=cfg.reduction_rate_model)
    E = check_inputs(profiles, E, total_power)
    K, B = E.shape
    ranks = priority_ranks(list(profiles))
    weights = np.array([p.absolute_weight for p in profiles])

    assignment = assign_subbands(weights[:, None] * E, cfg.assignment_mode, ranks)
    power = assignment.rho * (total_power / B)
    flags = set()
    if assignment.degenerate_bands:
        flags.add(AllocationFlag.DEGENERATE_BAND)
    alloc = base_result(
        "suboptimal",
        profiles,
        assignment.rho,
        power,
        E,
        rate_model,
        flags=frozenset(flags),
    )
    alloc = interference_control(alloc, primaries, profiles, E, rate_model)
    return refine_hqos_power(alloc, primaries, profiles, E, rate_model)


def refine_hqos_power(
    alloc: AllocationResult,
    primaries: Sequence[PrimaryConstraint],
    profiles: Sequence[UserProfile],
    E: np.ndarray,
    rate_model: Optional[RateModel] = None,
) -> AllocationResult:
    """
    Give the reclaimed power to the most deficient non-interfering HQoS user.

    The pool lands on that user's best sub-band through ``refinement``;
    ``power`` keeps the allocation, so the radiated total stays at the budget.
    """
    rate_model = rate_model or RateModel()
    pool = float(alloc.reductions.sum())
    if pool <= 0:
        return alloc

    rho = alloc.rho.astype(bool)
    interfering = np.zeros(alloc.n_users, dtype=bool)
    for constraint in primaries:
        interfering |= (rho & (constraint.factors.per_band[None, :] > 0)).any(axis=1)

    deficit = (alloc.target_rates - alloc.achieved_rates) / alloc.target_rates
    ranks = np.asarray(priority_ranks(list(profiles)))
    eligible = [
        k
        for k in range(alloc.n_users)
        if profiles[k].is_hqos
        and not interfering[k]
        and rho[k].any()
        and deficit[k] > RATE_RTOL
    ]
    if not eligible:
        return alloc

    k = min(eligible, key=lambda i: (-deficit[i], ranks[i]))
    bands = np.flatnonzero(rho[k])
    band = int(bands[np.argmax(E[k, bands])])
    refinement = np.zeros_like(alloc.power)
    refinement[k, band] = pool

    lams = np.array([p.eesm_lambda for p in profiles])
    rates = rate_model.to_mbps(
        _user_bits(
            alloc.power + refinement,
            E,
            alloc.reduction_segments,
            lams,
            rate_model.reduction_model,
        )
    )
    logger.debug(f"Refinement: {pool:.3e} W to user {profiles[k].id} on band {band}")
    return replace(alloc, achieved_rates=rates, refinement=refinement)
