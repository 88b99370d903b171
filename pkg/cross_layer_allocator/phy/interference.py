"""Spectral overlap between UWB subcarriers and a primary user's band."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from cachetools import LRUCache, cached
from cachetools.keys import hashkey
from scipy.special import sici

from cross_layer_allocator.phy.channel import BandPlan, band_group_plan
from cross_layer_allocator.utils.exceptions import ConfigurationError
from cross_layer_allocator.utils.logging import LogManager

logger = LogManager.get_logger(__name__)

# Primaries farther than this many subcarrier spacings from a sub-band do not
# couple into it.
GUARD_SUBCARRIERS = 10


@dataclass(frozen=True)
class PrimaryUserBand:
    """
    A licensed user sharing spectrum with the UWB piconet.

    Attributes:
        center_ghz (float): Centre frequency of the primary band.
        bandwidth_mhz (float): Occupied bandwidth.
        i_th_mw (Optional[float]): Absolute interference threshold. Takes
            precedence over ``i_th_fraction``.
        i_th_fraction (float): Threshold as a fraction of the interference an
            equal power split would cause in the overlapped sub-band.
    """

    center_ghz: float
    bandwidth_mhz: float
    i_th_mw: Optional[float] = None
    i_th_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.bandwidth_mhz < 0:
            raise ConfigurationError("Primary bandwidth must be >= 0")
        if self.i_th_mw is not None and self.i_th_mw < 0:
            raise ConfigurationError("i_th_mw must be >= 0")
        if not self.i_th_fraction > 0:
            raise ConfigurationError("i_th_fraction must be > 0")

    @property
    def edges_ghz(self) -> tuple[float, float]:
        half = self.bandwidth_mhz / 2e3
        return self.center_ghz - half, self.center_ghz + half


@dataclass(frozen=True)
class OverlapFactors:
    """
    Overlap of every subcarrier of a band plan with one primary band.

    ``per_subcarrier`` has shape ``(B, N)``; ``per_band`` is its row sum with
    sub-bands beyond the guard distance set to zero.
    """

    per_subcarrier: np.ndarray
    per_band: np.ndarray
    overlapped_band: int
    n_ud: int
    n_up: int
    n_subcarriers: int

    @property
    def n_overlapped(self) -> int:
        return self.n_up - self.n_ud + 1

    @property
    def overlap_fraction(self) -> float:
        """Share of the overlapped sub-band's subcarriers inside the primary band."""
        return self.n_overlapped / self.n_subcarriers

    @property
    def overlapped_sum(self) -> float:
        """Sum of the per-subcarrier factors over ``[n_ud, n_up]``."""
        row = self.per_subcarrier[self.overlapped_band]
        return float(row[self.n_ud : self.n_up + 1].sum())


def _sinc2_integral(u: np.ndarray) -> np.ndarray:
    """Antiderivative of ``sinc(u)**2`` vanishing at zero."""
    u = np.asarray(u, dtype=float)
    si, _ = sici(2.0 * np.pi * u)
    safe = np.where(u == 0.0, 1.0, u)
    leakage = np.where(u == 0.0, 0.0, np.sin(np.pi * u) ** 2 / (np.pi**2 * safe))
    return si / np.pi - leakage


def overlap_integral(
    distance_mhz: np.ndarray, bandwidth_mhz: float, symbol_duration_ns: float
) -> np.ndarray:
    """
    Fraction of a unit-power subcarrier PSD that lands in the primary band.

    The subcarrier PSD is ``T * sinc(f T)**2`` and the primary band spans
    ``[d - bw/2, d + bw/2]`` around the subcarrier, ``d`` being the spectral
    distance between the two centres.
    """
    if not symbol_duration_ns > 0:
        raise ValueError("Symbol duration must be > 0")
    scale = symbol_duration_ns * 1e-3
    d = np.asarray(distance_mhz, dtype=float)
    upper = _sinc2_integral((d + bandwidth_mhz / 2.0) * scale)
    lower = _sinc2_integral((d - bandwidth_mhz / 2.0) * scale)
    return np.clip(upper - lower, 0.0, 1.0)


def _band_containing(center_ghz: float, plan: BandPlan) -> int:
    for band in range(plan.n_bands):
        low, high = plan.band_edges_ghz(band)
        if low <= center_ghz < high:
            return band
    raise ConfigurationError(
        f"Primary centre {center_ghz} GHz lies outside the band plan "
        f"{plan.centers_ghz}"
    )


def subcarrier_overlap_factor(
    subcarrier_index: int,
    primary: PrimaryUserBand,
    symbol_duration_ns: Optional[float] = None,
    plan: Optional[BandPlan] = None,
    band: Optional[int] = None,
) -> float:
    """
    Overlap factor ``I_i`` of one subcarrier.

    Args:
        subcarrier_index: Index in ``0..N-1`` within ``band``.
        primary: Primary user band.
        symbol_duration_ns: OFDM symbol duration; defaults to the plan's.
        plan: Band plan, band group 1 by default.
        band: Sub-band of the subcarrier; defaults to the one holding the
            primary centre.
    """
    plan = plan or band_group_plan(1)
    t_s = plan.symbol_duration_ns if symbol_duration_ns is None else symbol_duration_ns
    if band is None:
        band = _band_containing(primary.center_ghz, plan)
    freq_ghz = plan.subcarrier_frequencies_ghz(band)[subcarrier_index]
    distance_mhz = (primary.center_ghz - freq_ghz) * 1e3
    return float(overlap_integral(distance_mhz, primary.bandwidth_mhz, t_s))


def _overlap_key(primary: PrimaryUserBand, plan: BandPlan):
    return hashkey(primary.center_ghz, primary.bandwidth_mhz, plan)


@cached(cache=LRUCache(maxsize=512), key=_overlap_key)
def overlap_factors(primary: PrimaryUserBand, plan: BandPlan) -> OverlapFactors:
    """
    All overlap factors of ``primary`` over ``plan``.

    Results are cached per (centre, bandwidth, plan) and returned with
    read-only arrays, so callers share one copy.
    """
    overlapped_band = _band_containing(primary.center_ghz, plan)
    t_s = plan.symbol_duration_ns
    guard_ghz = GUARD_SUBCARRIERS * plan.spacing_mhz / 1e3
    p_low, p_high = primary.edges_ghz

    per_subcarrier = np.zeros((plan.n_bands, plan.n_subcarriers))
    per_band = np.zeros(plan.n_bands)
    for band in range(plan.n_bands):
        distance_mhz = (primary.center_ghz - plan.subcarrier_frequencies_ghz(band)) * 1e3
        per_subcarrier[band] = overlap_integral(
            distance_mhz, primary.bandwidth_mhz, t_s
        )
        low, high = plan.band_edges_ghz(band)
        if p_low > high + guard_ghz or p_high < low - guard_ghz:
            continue
        per_band[band] = per_subcarrier[band].sum()

    center = plan.centers_ghz[overlapped_band]
    half = plan.n_subcarriers // 2
    positions = (np.array([p_low, p_high]) - center) * 1e3 / plan.spacing_mhz + half
    n_ud, n_up = np.clip(
        np.floor(positions + 0.5).astype(int), 0, plan.n_subcarriers - 1
    )

    per_subcarrier.setflags(write=False)
    per_band.setflags(write=False)
    logger.debug(
        f"Overlap of {primary.bandwidth_mhz} MHz primary at "
        f"{primary.center_ghz} GHz: I_b={per_band.tolist()}, "
        f"subcarriers [{n_ud}, {n_up}] of band {overlapped_band}"
    )
    return OverlapFactors(
        per_subcarrier=per_subcarrier,
        per_band=per_band,
        overlapped_band=overlapped_band,
        n_ud=int(n_ud),
        n_up=int(n_up),
        n_subcarriers=plan.n_subcarriers,
    )


def band_interference_factor(
    band: int, primary: PrimaryUserBand, plan: Optional[BandPlan] = None
) -> float:
    """Overlap factor ``I_b`` of a whole sub-band."""
    plan = plan or band_group_plan(1)
    if band not in range(plan.n_bands):
        raise ValueError(f"band must be in 0..{plan.n_bands - 1}, got {band}")
    return float(overlap_factors(primary, plan).per_band[band])


def interference_power(power: float, factor: float) -> float:
    """Interference a sub-band transmission causes, in the unit of ``power``."""
    if power < 0:
        raise ValueError("Power must be >= 0")
    return float(power * factor)


@dataclass(frozen=True)
class PrimaryConstraint:
    """A primary user with its overlap factors and its resolved threshold in W."""

    primary: PrimaryUserBand
    factors: OverlapFactors
    threshold_w: float


def resolve_threshold(
    primary: PrimaryUserBand, plan: BandPlan, total_power_w: float
) -> float:
    """
    Interference threshold in W.

    ``i_th_mw`` wins when set; otherwise the threshold is ``i_th_fraction``
    of the interference caused by ``total_power_w / B`` in the overlapped
    sub-band.
    """
    if primary.i_th_mw is not None:
        return primary.i_th_mw * 1e-3
    factors = overlap_factors(primary, plan)
    reference = total_power_w / plan.n_bands
    return primary.i_th_fraction * reference * float(
        factors.per_band[factors.overlapped_band]
    )


def build_constraint(
    primary: PrimaryUserBand, plan: BandPlan, total_power_w: float
) -> PrimaryConstraint:
    return PrimaryConstraint(
        primary=primary,
        factors=overlap_factors(primary, plan),
        threshold_w=resolve_threshold(primary, plan, total_power_w),
    )
