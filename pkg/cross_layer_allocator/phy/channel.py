"""Saleh-Valenzuela UWB channel realizations and per-subcarrier SINRs."""

from dataclasses import dataclass, replace
from typing import Collection, Dict, List, Optional, Tuple

import numpy as np

from cross_layer_allocator.utils.exceptions import (
    ConfigurationError,
    ZeroNoiseError,
)

FCC_PSD_CAP_DBM_MHZ = -41.3
SUBBAND_BANDWIDTH_MHZ = 528.0
N_SUBCARRIERS = 128
N_DATA_SUBCARRIERS = 100
SUBCARRIER_SPACING_MHZ = SUBBAND_BANDWIDTH_MHZ / N_SUBCARRIERS
# MB-OFDM sample period, 1/528 MHz
SAMPLE_PERIOD_NS = 1e3 / SUBBAND_BANDWIDTH_MHZ


def dbm_to_w(value_dbm: float) -> float:
    return float(10.0 ** ((value_dbm - 30.0) / 10.0))


def db_to_linear(value_db: float) -> float:
    return float(10.0 ** (value_db / 10.0))


@dataclass(frozen=True)
class CmProfile:
    """
    Parameters of one IEEE 802.15.3a channel model.

    Attributes:
        name (str): Profile label, CM1..CM4 or a custom name.
        cluster_arrival_rate (float): Cluster arrival rate, 1/ns.
        ray_arrival_rate (float): Ray arrival rate within a cluster, 1/ns.
        cluster_decay (float): Cluster power decay constant, ns.
        ray_decay (float): Ray power decay constant, ns.
        cluster_fading_std_db (float): Cluster log-normal fading std, dB.
        ray_fading_std_db (float): Ray log-normal fading std, dB.
        shadowing_std_db (float): Total shadowing std, dB.
        max_delay (float): Cluster generation horizon, ns.
    """

    name: str
    cluster_arrival_rate: float
    ray_arrival_rate: float
    cluster_decay: float
    ray_decay: float
    cluster_fading_std_db: float = 3.3941
    ray_fading_std_db: float = 3.3941
    shadowing_std_db: float = 3.0
    max_delay: Optional[float] = None

    def __post_init__(self) -> None:
        positive = {
            "cluster_arrival_rate": self.cluster_arrival_rate,
            "ray_arrival_rate": self.ray_arrival_rate,
            "cluster_decay": self.cluster_decay,
            "ray_decay": self.ray_decay,
        }
        for key, value in positive.items():
            if not value > 0:
                raise ConfigurationError(f"{key} must be > 0, got {value}")
        for key in (
            "cluster_fading_std_db",
            "ray_fading_std_db",
            "shadowing_std_db",
        ):
            if getattr(self, key) < 0:
                raise ConfigurationError(f"{key} must be >= 0")
        if self.max_delay is None:
            object.__setattr__(self, "max_delay", 10.0 * self.cluster_decay)
        elif not self.max_delay > 0:
            raise ConfigurationError("max_delay must be > 0")


CM_PROFILES: Dict[str, CmProfile] = {
    "CM1": CmProfile("CM1", 0.0233, 2.5, 7.1, 4.3),
    "CM2": CmProfile("CM2", 0.4, 0.5, 5.5, 6.7),
    "CM3": CmProfile("CM3", 0.0667, 2.1, 14.0, 7.9),
    "CM4": CmProfile("CM4", 0.0667, 2.1, 24.0, 12.0),
}


def cm_profile(name: str, **overrides: float) -> CmProfile:
    """Built-in profile ``name`` with individual parameters replaced."""
    try:
        base = CM_PROFILES[name.upper()]
    except KeyError:
        raise ConfigurationError(
            f"Unknown channel model '{name}', expected one of {list(CM_PROFILES)}"
        ) from None
    if not overrides:
        return base
    if "max_delay" not in overrides and "cluster_decay" in overrides:
        overrides = {**overrides, "max_delay": None}
    return replace(base, **overrides)


@dataclass(frozen=True)
class ChannelRealization:
    """
    One multipath realization.

    ``gains`` are normalized so that ``sum(gains**2) == 1``; the shadowing
    term is kept apart as a linear power gain.
    """

    shadowing_gain: float
    cluster_index: np.ndarray
    ray_index: np.ndarray
    delays_ns: np.ndarray
    gains: np.ndarray
    seed: int

    @property
    def taps(self) -> List[Tuple[int, int, float, float]]:
        return list(
            zip(
                self.cluster_index.tolist(),
                self.ray_index.tolist(),
                self.delays_ns.tolist(),
                self.gains.tolist(),
            )
        )

    @property
    def n_taps(self) -> int:
        return int(self.gains.size)


def generate_channel(profile: CmProfile, seed: int) -> ChannelRealization:
    """
    Draw a Saleh-Valenzuela realization with log-normal fading.

    Clusters arrive as a Poisson process up to ``profile.max_delay``; rays
    within each cluster arrive as a Poisson process up to ten ray decay
    constants. The first ray of every cluster sits on the cluster arrival
    time. Tap amplitudes are the product of a cluster and a ray log-normal
    term around the double-exponential mean, with an equiprobable sign.

    Args:
        profile: Channel model parameters.
        seed: Seed of the numpy generator, so equal seeds give equal taps.

    Returns:
        ChannelRealization: Energy-normalized taps plus the shadowing gain.
    """
    rng = np.random.default_rng(seed)
    ln10 = np.log(10.0)
    sigma1 = profile.cluster_fading_std_db
    sigma2 = profile.ray_fading_std_db
    mean_offset = (sigma1**2 + sigma2**2) * ln10 / 20.0
    ray_horizon = 10.0 * profile.ray_decay
    if profile.max_delay is None:
        raise ConfigurationError(f"Channel profile {profile.name} has no max_delay")

    clusters: List[int] = []
    rays: List[int] = []
    delays: List[float] = []
    amplitudes_db: List[float] = []

    cluster_time = 0.0
    cluster = 0
    while cluster_time < profile.max_delay:
        cluster_fading = rng.normal(0.0, sigma1)
        ray_time = 0.0
        ray = 0
        while ray_time < ray_horizon:
            mu = (
                -10.0 * cluster_time / profile.cluster_decay
                - 10.0 * ray_time / profile.ray_decay
            ) / ln10 - mean_offset
            amplitudes_db.append(mu + cluster_fading + rng.normal(0.0, sigma2))
            clusters.append(cluster)
            rays.append(ray)
            delays.append(cluster_time + ray_time)
            ray_time += rng.exponential(1.0 / profile.ray_arrival_rate)
            ray += 1
        cluster_time += rng.exponential(1.0 / profile.cluster_arrival_rate)
        cluster += 1

    signs = rng.choice(np.array([-1.0, 1.0]), size=len(amplitudes_db))
    gains = signs * 10.0 ** (np.asarray(amplitudes_db) / 20.0)
    gains = gains / np.sqrt(np.sum(gains**2))
    shadowing_gain = 10.0 ** (rng.normal(0.0, profile.shadowing_std_db) / 10.0)

    return ChannelRealization(
        shadowing_gain=float(shadowing_gain),
        cluster_index=np.asarray(clusters, dtype=int),
        ray_index=np.asarray(rays, dtype=int),
        delays_ns=np.asarray(delays, dtype=float),
        gains=gains,
        seed=int(seed),
    )


def total_energy(ch: ChannelRealization) -> float:
    return float(np.sum(ch.gains**2))


def rms_delay_spread(ch: ChannelRealization) -> float:
    """Power-weighted RMS delay spread in ns."""
    power = ch.gains**2
    weight = power / power.sum()
    mean_delay = np.sum(weight * ch.delays_ns)
    return float(np.sqrt(max(np.sum(weight * ch.delays_ns**2) - mean_delay**2, 0.0)))


@dataclass(frozen=True)
class BandPlan:
    """Sub-band centres of one WiMedia band group and the OFDM numerology."""

    centers_ghz: Tuple[float, ...]
    n_subcarriers: int = N_SUBCARRIERS
    spacing_mhz: float = SUBCARRIER_SPACING_MHZ
    n_data_subcarriers: int = N_DATA_SUBCARRIERS

    def __post_init__(self) -> None:
        if not self.centers_ghz:
            raise ConfigurationError("A band plan needs at least one sub-band")
        if self.n_subcarriers < 1 or self.spacing_mhz <= 0:
            raise ConfigurationError("Invalid OFDM numerology")

    @property
    def n_bands(self) -> int:
        return len(self.centers_ghz)

    @property
    def subband_bandwidth_mhz(self) -> float:
        return self.n_subcarriers * self.spacing_mhz

    @property
    def symbol_duration_ns(self) -> float:
        """Useful OFDM symbol duration, the inverse of the spacing."""
        return 1e3 / self.spacing_mhz

    def subcarrier_offsets_mhz(self) -> np.ndarray:
        return (np.arange(self.n_subcarriers) - self.n_subcarriers // 2) * self.spacing_mhz

    def subcarrier_frequencies_ghz(self, band: int) -> np.ndarray:
        return self.centers_ghz[band] + self.subcarrier_offsets_mhz() / 1e3

    def band_edges_ghz(self, band: int) -> Tuple[float, float]:
        half = self.subband_bandwidth_mhz / 2e3
        return self.centers_ghz[band] - half, self.centers_ghz[band] + half


def band_group_plan(group: int = 1) -> BandPlan:
    """
    Sub-bands of a WiMedia band group.

    The 14 sub-bands are centred at ``2904 + 528 * n`` MHz; groups 1 to 4
    hold three sub-bands each and group 5 the last two.
    """
    if group not in range(1, 6):
        raise ConfigurationError(f"band_group must be in 1..5, got {group}")
    first = 3 * (group - 1) + 1
    last = 14 if group == 5 else first + 2
    centers = tuple((2904.0 + 528.0 * n) / 1e3 for n in range(first, last + 1))
    return BandPlan(centers_ghz=centers)


@dataclass(frozen=True)
class LinkBudget:
    """
    Link budget shared by all users of a scenario.

    Attributes:
        tx_psd_dbm_mhz (float): Transmit PSD, capped at -41.3 dBm/MHz.
        noise_psd_dbm_mhz (float): Receiver noise PSD including noise figure.
        pathloss_db (float): Distance path loss applied to every user.
        primary_interference_psd_dbm_mhz (Optional[float]): PSD the primary
            user radiates into overlapped UWB subcarriers; ``None`` disables it.
    """

    tx_psd_dbm_mhz: float = FCC_PSD_CAP_DBM_MHZ
    noise_psd_dbm_mhz: float = -107.4
    pathloss_db: float = 60.0
    primary_interference_psd_dbm_mhz: Optional[float] = None

    def __post_init__(self) -> None:
        if self.tx_psd_dbm_mhz > FCC_PSD_CAP_DBM_MHZ + 1e-9:
            raise ConfigurationError(
                f"tx_psd {self.tx_psd_dbm_mhz} dBm/MHz exceeds the "
                f"{FCC_PSD_CAP_DBM_MHZ} dBm/MHz cap"
            )

    @property
    def nominal_subband_power_w(self) -> float:
        """Power of a full 528 MHz sub-band radiated at ``tx_psd``."""
        return dbm_to_w(self.tx_psd_dbm_mhz) * SUBBAND_BANDWIDTH_MHZ


def frequency_response(
    ch: ChannelRealization,
    band_center_ghz: float,
    n_subcarriers: int = N_SUBCARRIERS,
    spacing_mhz: float = SUBCARRIER_SPACING_MHZ,
    sample_period_ns: Optional[float] = SAMPLE_PERIOD_NS,
) -> np.ndarray:
    """
    Complex channel gain at each subcarrier of a sub-band.

    Taps are first binned onto the sample grid (gains falling in the same
    bin add up); ``sample_period_ns=None`` keeps the exact delays. Subcarrier
    ``i`` sits at ``band_center + (i - n/2) * spacing``.
    """
    delays = ch.delays_ns
    gains = ch.gains
    if sample_period_ns is not None:
        bins = np.floor(delays / sample_period_ns + 0.5).astype(int)
        gains = np.bincount(bins, weights=gains)
        delays = np.arange(gains.size) * sample_period_ns
        keep = gains != 0.0
        gains, delays = gains[keep], delays[keep]

    offsets = (np.arange(n_subcarriers) - n_subcarriers // 2) * spacing_mhz
    freqs_ghz = band_center_ghz + offsets / 1e3
    phase = np.exp(-2j * np.pi * np.outer(freqs_ghz, delays))
    return np.sqrt(ch.shadowing_gain) * (phase @ gains)


def per_subcarrier_sinr(
    gains: np.ndarray,
    budget: LinkBudget,
    overlapped: Collection[int] = (),
    spacing_mhz: float = SUBCARRIER_SPACING_MHZ,
    pathloss_db: Optional[float] = None,
) -> np.ndarray:
    """
    SINR per unit transmit power on every subcarrier.

    ``|H_i|^2 * pathloss / (N0 * df + J_i)`` in 1/W, where ``J_i`` is the
    primary user's power on subcarrier ``i`` when ``i`` is in ``overlapped``
    and the link budget enables it.

    Raises:
        ZeroNoiseError: If some subcarrier sees neither noise nor interference.
    """
    response = np.abs(np.asarray(gains)) ** 2
    loss = db_to_linear(-(budget.pathloss_db if pathloss_db is None else pathloss_db))
    denominator = np.full(response.size, dbm_to_w(budget.noise_psd_dbm_mhz) * spacing_mhz)
    if budget.primary_interference_psd_dbm_mhz is not None and len(overlapped):
        index = np.fromiter(overlapped, dtype=int)
        denominator[index] += (
            dbm_to_w(budget.primary_interference_psd_dbm_mhz) * spacing_mhz
        )
    if np.any(denominator <= 0):
        raise ZeroNoiseError("Noise plus interference is zero on some subcarrier")
    return response * loss / denominator
