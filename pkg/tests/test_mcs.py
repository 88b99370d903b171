import io

import numpy as np
import pytest

from cross_layer_allocator.phy.mcs import (
    DATA_BANDWIDTH_MHZ,
    MCS_CSV_COLUMNS,
    MCS_TABLE,
    R_MAX_MBPS,
    R_MIN_MBPS,
    Modulation,
    dump_mcs_table,
    effective_sinr,
    effective_sinr_db,
    mcs_table_frame,
    mode_for_rate,
)
from cross_layer_allocator.utils.exceptions import (
    EmptyInputError,
    NonPositiveLambdaError,
    UnknownModeError,
)


def test_table_rows():
    rates = [m.rate_mbps for m in MCS_TABLE]
    assert rates == sorted(rates)
    assert len(MCS_TABLE) == 8
    assert (R_MIN_MBPS, R_MAX_MBPS) == (53.3, 480.0)
    assert all(m.eesm_lambda > 0 for m in MCS_TABLE)


@pytest.mark.parametrize(
    "rate, modulation",
    [(53.3, Modulation.QPSK), (200.0, Modulation.QPSK), (320.0, Modulation.DCM)],
)
def test_mode_for_rate(rate, modulation):
    mode = mode_for_rate(rate)
    assert mode.rate_mbps == rate
    assert mode.modulation is modulation


@pytest.mark.parametrize("rate", [0.0, 100.0, 53.0, 1000.0])
def test_mode_for_unknown_rate(rate):
    with pytest.raises(UnknownModeError):
        mode_for_rate(rate)


def test_spectral_efficiency():
    assert DATA_BANDWIDTH_MHZ == pytest.approx(412.5)
    assert mode_for_rate(320.0).spectral_efficiency == pytest.approx(320.0 / 412.5)


def test_effective_sinr_bounded_by_extremes(rng):
    for _ in range(200):
        sinrs = rng.exponential(10.0, size=rng.integers(1, 128))
        lam = rng.uniform(0.1, 20.0)
        value = effective_sinr(sinrs, lam)
        assert sinrs.min() <= value <= sinrs.max()


def test_effective_sinr_monotone(rng):
    sinrs = rng.exponential(5.0, size=64)
    base = effective_sinr(sinrs, 1.5)
    for i in range(sinrs.size):
        raised = sinrs.copy()
        raised[i] += 1.0
        assert effective_sinr(raised, 1.5) >= base


def test_effective_sinr_permutation_invariant(rng):
    sinrs = rng.exponential(5.0, size=100)
    shuffled = rng.permutation(sinrs)
    assert effective_sinr(shuffled, 1.8) == pytest.approx(
        effective_sinr(sinrs, 1.8), rel=1e-12
    )


def test_effective_sinr_constant_input():
    assert effective_sinr([7.5] * 20, 1.42) == 7.5


def test_effective_sinr_large_lambda_is_mean(rng):
    sinrs = rng.uniform(0.0, 10.0, size=100)
    assert effective_sinr(sinrs, 1e8) == pytest.approx(sinrs.mean(), rel=1e-6)


def test_effective_sinr_small_lambda_tends_to_min():
    sinrs = np.array([1.0, 50.0, 200.0])
    assert effective_sinr(sinrs, 1e-3) == pytest.approx(1.0, abs=1e-2)


def test_effective_sinr_large_values_do_not_underflow():
    value = effective_sinr([1e4, 1e4 + 1.0], 1.0)
    assert 1e4 <= value <= 1e4 + 1.0


def test_effective_sinr_errors():
    with pytest.raises(EmptyInputError):
        effective_sinr([], 1.0)
    with pytest.raises(NonPositiveLambdaError):
        effective_sinr([1.0], 0.0)
    with pytest.raises(ValueError):
        effective_sinr([1.0, -0.5], 1.0)


def test_effective_sinr_db_constant():
    assert effective_sinr_db([10.0, 10.0, 10.0], 1.49) == pytest.approx(10.0)


def test_mcs_table_frame_and_dump(tmp_path):
    frame = mcs_table_frame()
    assert list(frame.columns) == MCS_CSV_COLUMNS
    assert frame["code_rate"].tolist()[:2] == ["1/3", "1/2"]

    buffer = io.StringIO()
    dump_mcs_table(buffer)
    lines = buffer.getvalue().splitlines()
    assert lines[0] == ",".join(MCS_CSV_COLUMNS)
    assert len(lines) == 9

    path = tmp_path / "mcs.csv"
    dump_mcs_table(str(path))
    assert path.read_text().splitlines() == lines
