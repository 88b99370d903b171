"""WiMedia MCS table and the EESM effective SINR compression."""

from dataclasses import asdict, dataclass
from enum import Enum
from fractions import Fraction
from typing import IO, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from cross_layer_allocator.utils.exceptions import (
    EmptyInputError,
    NonPositiveLambdaError,
    UnknownModeError,
)

# 100 data carriers out of 128 in a 528 MHz sub-band
DATA_BANDWIDTH_MHZ = 528.0 * 100 / 128

MCS_CSV_COLUMNS = [
    "rate_mbps",
    "modulation",
    "code_rate",
    "fds",
    "tds",
    "bits_per_symbol",
    "lambda",
]


class Modulation(str, Enum):
    QPSK = "QPSK"
    DCM = "DCM"


@dataclass(frozen=True)
class McsMode:
    """
    One WiMedia data rate mode.

    Attributes:
        rate_mbps (float): Information data rate in Mbps.
        modulation (Modulation): QPSK for the low rates, DCM for the high ones.
        code_rate (Fraction): Convolutional coding rate.
        fds (bool): Whether frequency-domain spreading is applied.
        tds_factor (int): Time-domain spreading factor.
        bits_per_symbol (int): Coded bits per OFDM symbol.
        eesm_lambda (float): EESM scaling factor, linear SINR domain.
    """

    rate_mbps: float
    modulation: Modulation
    code_rate: Fraction
    fds: bool
    tds_factor: int
    bits_per_symbol: int
    eesm_lambda: float

    @property
    def spectral_efficiency(self) -> float:
        """Rate expressed in bits/s/Hz over the data bandwidth of a sub-band."""
        return self.rate_mbps / DATA_BANDWIDTH_MHZ


MCS_TABLE: tuple[McsMode, ...] = (
    McsMode(53.3, Modulation.QPSK, Fraction(1, 3), True, 2, 100, 1.49),
    McsMode(80.0, Modulation.QPSK, Fraction(1, 2), True, 2, 100, 1.57),
    McsMode(110.0, Modulation.QPSK, Fraction(11, 32), False, 2, 200, 1.42),
    McsMode(160.0, Modulation.QPSK, Fraction(1, 2), False, 2, 200, 1.57),
    McsMode(200.0, Modulation.QPSK, Fraction(5, 8), False, 2, 200, 1.82),
    McsMode(320.0, Modulation.DCM, Fraction(1, 2), False, 1, 200, 1.85),
    McsMode(400.0, Modulation.DCM, Fraction(5, 8), False, 1, 200, 1.82),
    McsMode(480.0, Modulation.DCM, Fraction(3, 4), False, 1, 200, 1.80),
)

R_MIN_MBPS = MCS_TABLE[0].rate_mbps
R_MAX_MBPS = MCS_TABLE[-1].rate_mbps


def mode_for_rate(rate_mbps: float) -> McsMode:
    """
    Look up the MCS row with the given data rate.

    Raises:
        UnknownModeError: If the rate is not one of the eight WiMedia rates.
    """
    for mode in MCS_TABLE:
        if np.isclose(mode.rate_mbps, rate_mbps, rtol=1e-9, atol=1e-6):
            return mode
    raise UnknownModeError(
        f"{rate_mbps} Mbps is not a WiMedia data rate; expected one of "
        f"{[m.rate_mbps for m in MCS_TABLE]}"
    )


def effective_sinr(sinrs: Union[Sequence[float], np.ndarray], lam: float) -> float:
    """
    Exponential effective SINR mapping of a sequence of linear SINRs.

    Evaluates ``-lam * ln(mean(exp(-sinr / lam)))`` through ``logsumexp`` so
    large SINRs do not underflow to an exact zero. The result is clipped to
    ``[min(sinrs), max(sinrs)]``, which the mapping guarantees analytically.

    Args:
        sinrs: Per-subcarrier SINRs, linear, all non-negative.
        lam: EESM scaling factor, strictly positive.

    Returns:
        float: Effective SINR, linear.
    """
    values = np.asarray(sinrs, dtype=float).ravel()
    if values.size == 0:
        raise EmptyInputError("effective_sinr needs at least one SINR value")
    if not lam > 0:
        raise NonPositiveLambdaError(f"lambda must be > 0, got {lam}")
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValueError("SINR values must be finite and non-negative")

    log_mean = logsumexp(-values / lam) - np.log(values.size)
    result = -lam * log_mean
    return float(np.clip(result, values.min(), values.max()))


def effective_sinr_db(sinrs_db: Union[Sequence[float], np.ndarray], lam: float) -> float:
    """dB front end of :func:`effective_sinr`; lambda stays linear."""
    linear = 10.0 ** (np.asarray(sinrs_db, dtype=float) / 10.0)
    return float(10.0 * np.log10(effective_sinr(linear, lam)))


def mcs_table_frame() -> pd.DataFrame:
    """The MCS table as a DataFrame with the CSV column names."""
    rows = []
    for mode in MCS_TABLE:
        row = asdict(mode)
        rows.append(
            {
                "rate_mbps": row["rate_mbps"],
                "modulation": mode.modulation.value,
                "code_rate": str(mode.code_rate),
                "fds": mode.fds,
                "tds": mode.tds_factor,
                "bits_per_symbol": mode.bits_per_symbol,
                "lambda": mode.eesm_lambda,
            }
        )
    return pd.DataFrame(rows, columns=MCS_CSV_COLUMNS)


def dump_mcs_table(target: Union[str, IO[str]]) -> None:
    """Write the MCS table as CSV to a path or an open text buffer."""
    mcs_table_frame().to_csv(target, index=False)
