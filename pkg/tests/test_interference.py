import numpy as np
import pytest

from cross_layer_allocator.phy.channel import band_group_plan
from cross_layer_allocator.phy.interference import (
    PrimaryUserBand,
    band_interference_factor,
    build_constraint,
    interference_power,
    overlap_factors,
    overlap_integral,
    resolve_threshold,
    subcarrier_overlap_factor,
)
from cross_layer_allocator.utils.exceptions import ConfigurationError

BAND0_CENTER = 3.432


def riemann_overlap(distance_mhz, bandwidth_mhz, symbol_duration_ns, n=100_000):
    """Midpoint sum of the subcarrier PSD over the primary band."""
    scale = symbol_duration_ns * 1e-3
    step = bandwidth_mhz / n
    x = distance_mhz - bandwidth_mhz / 2 + (np.arange(n) + 0.5) * step
    return float(np.sum(scale * np.sinc(x * scale) ** 2) * step)


def test_subcarrier_factor_matches_riemann_sum(rng, plan):
    freqs = plan.subcarrier_frequencies_ghz(0)
    for _ in range(50):
        primary = PrimaryUserBand(
            center_ghz=BAND0_CENTER + rng.uniform(-0.1, 0.1),
            bandwidth_mhz=rng.uniform(1.0, 50.0),
        )
        nearest = int(np.argmin(np.abs(freqs - primary.center_ghz)))
        index = int(np.clip(nearest + rng.integers(-40, 41), 0, 127))
        distance = (primary.center_ghz - freqs[index]) * 1e3

        value = subcarrier_overlap_factor(index, primary, plan=plan, band=0)
        expected = riemann_overlap(
            distance, primary.bandwidth_mhz, plan.symbol_duration_ns
        )
        assert value == pytest.approx(expected, rel=1e-6)


def test_overlap_integral_limits(plan):
    t_s = plan.symbol_duration_ns
    assert overlap_integral(0.0, 1e6, t_s) == pytest.approx(1.0, abs=1e-5)
    assert overlap_integral(0.0, 0.0, t_s) == 0.0
    assert overlap_integral(25.0, 2.0, t_s) < overlap_integral(0.0, 2.0, t_s)
    with pytest.raises(ValueError):
        overlap_integral(0.0, 1.0, 0.0)


def test_band_factor_monotone_in_bandwidth(plan):
    values = [
        band_interference_factor(0, PrimaryUserBand(BAND0_CENTER, bw), plan)
        for bw in (1.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0)
    ]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_guard_distance(plan):
    factors = overlap_factors(PrimaryUserBand(BAND0_CENTER, 10.0), plan)
    assert factors.overlapped_band == 0
    assert factors.per_band[0] > 0
    assert factors.per_band[1] == 0.0 and factors.per_band[2] == 0.0
    # Raw sidelobe leakage is still recorded per subcarrier
    assert factors.per_subcarrier[1].sum() > 0

    edge = overlap_factors(PrimaryUserBand(3.69, 20.0), plan)
    assert edge.overlapped_band == 0
    assert edge.per_band[1] > 0


def test_overlapped_subcarrier_range(plan):
    factors = overlap_factors(PrimaryUserBand(BAND0_CENTER, 20.0), plan)
    assert (factors.n_ud, factors.n_up) == (62, 66)
    assert factors.n_overlapped == 5
    assert factors.overlap_fraction == pytest.approx(5 / 128)
    assert factors.overlapped_sum == pytest.approx(
        factors.per_subcarrier[0, 62:67].sum()
    )
    assert 0 < factors.overlapped_sum < factors.per_band[0]


def test_overlap_factors_cached_and_read_only(plan):
    first = overlap_factors(PrimaryUserBand(BAND0_CENTER, 5.0), plan)
    second = overlap_factors(PrimaryUserBand(BAND0_CENTER, 5.0, i_th_mw=1.0), plan)
    assert first is second
    with pytest.raises(ValueError):
        first.per_band[0] = 1.0


def test_primary_outside_plan(plan):
    with pytest.raises(ConfigurationError):
        overlap_factors(PrimaryUserBand(6.0, 10.0), plan)
    with pytest.raises(ValueError):
        band_interference_factor(3, PrimaryUserBand(BAND0_CENTER, 10.0), plan)


def test_primary_validation():
    with pytest.raises(ConfigurationError):
        PrimaryUserBand(BAND0_CENTER, -1.0)
    with pytest.raises(ConfigurationError):
        PrimaryUserBand(BAND0_CENTER, 10.0, i_th_fraction=0.0)
    assert PrimaryUserBand(BAND0_CENTER, 20.0).edges_ghz == pytest.approx(
        (3.422, 3.442)
    )


def test_resolve_threshold(plan):
    absolute = PrimaryUserBand(BAND0_CENTER, 10.0, i_th_mw=2.0)
    assert resolve_threshold(absolute, plan, 3.0) == pytest.approx(2e-3)

    relative = PrimaryUserBand(BAND0_CENTER, 10.0, i_th_fraction=0.25)
    i_b = band_interference_factor(0, relative, plan)
    assert resolve_threshold(relative, plan, 3.0) == pytest.approx(0.25 * 1.0 * i_b)

    constraint = build_constraint(relative, plan, 3.0)
    assert constraint.factors is overlap_factors(relative, plan)
    assert constraint.threshold_w == pytest.approx(0.25 * i_b)


def test_interference_power():
    assert interference_power(2.0, 0.25) == 0.5
    with pytest.raises(ValueError):
        interference_power(-1.0, 0.25)


def test_other_band_group():
    plan = band_group_plan(2)
    factors = overlap_factors(PrimaryUserBand(plan.centers_ghz[1], 30.0), plan)
    assert factors.overlapped_band == 1
    assert factors.per_band[0] == 0.0
