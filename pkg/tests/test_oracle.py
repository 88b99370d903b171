import numpy as np
import pytest

from cross_layer_allocator.mac.profile import UserProfile
from cross_layer_allocator.models.allocator import (
    AllocationFlag,
    optimal_allocate,
    spectral_rate,
)
from cross_layer_allocator.models.oracle import (
    min_power_for_rate,
    oracle_exhaustive,
    sqos_sum_rate,
    total_rate_powers,
)
from cross_layer_allocator.phy.interference import PrimaryUserBand, build_constraint
from cross_layer_allocator.utils.exceptions import (
    DataValidationError,
    InfeasibleAllocationError,
)


def test_min_power_for_rate(rng):
    for _ in range(50):
        e = rng.uniform(0.5, 30.0, size=3)
        target = rng.uniform(0.1, 6.0)
        power = min_power_for_rate(e, target)
        assert spectral_rate(power, e).sum() == pytest.approx(target, rel=1e-9)
        # Any other split of the same power reaches no more
        equal = np.full(3, power.sum() / 3)
        assert spectral_rate(equal, e).sum() <= target * (1 + 1e-9)
    np.testing.assert_array_equal(min_power_for_rate(np.ones(2), 0.0), np.zeros(2))


def test_oracle_rejects_large_instances(sqos_users):
    users = sqos_users + [UserProfile.from_request(k, "SQoS", 53.3) for k in (3, 4)]
    with pytest.raises(DataValidationError):
        oracle_exhaustive(users, np.ones((5, 3)), 1.0)
    with pytest.raises(DataValidationError):
        oracle_exhaustive(sqos_users, np.ones((3, 3)), 1.0, grid_points=1)
    with pytest.raises(DataValidationError):
        oracle_exhaustive(sqos_users, np.ones((3, 3)), 1.0, objective="max")


def test_optimal_matches_oracle_without_hqos(sqos_users, make_quality):
    for _ in range(30):
        E = make_quality()
        alloc = optimal_allocate(sqos_users, E, 3.0)
        best = oracle_exhaustive(sqos_users, E, 3.0)
        assert sqos_sum_rate(alloc, sqos_users) == pytest.approx(
            sqos_sum_rate(best, sqos_users), rel=1e-6
        )


def test_oracle_bounds_optimal(three_users, make_quality):
    hqos = np.array([u.is_hqos for u in three_users])
    for _ in range(10):
        E = make_quality()
        alloc = optimal_allocate(three_users, E, 3.0)
        by_sqos = oracle_exhaustive(three_users, E, 3.0)
        by_total = oracle_exhaustive(three_users, E, 3.0, objective="total")

        for best in (by_sqos, by_total):
            met = best.achieved_rates >= best.target_rates * (1 - 1e-6)
            assert np.all(met[hqos])
        assert sqos_sum_rate(by_sqos, three_users) >= sqos_sum_rate(
            alloc, three_users
        ) * (1 - 1e-6)
        assert by_total.achieved_rates.sum() >= alloc.achieved_rates.sum() * (1 - 1e-6)
        assert by_total.power.sum() == pytest.approx(3.0, rel=1e-6)


def test_min_power_for_one_band(rng):
    target = 320.0 / 412.5
    for _ in range(1000):
        e = np.array([rng.uniform(1e-3, 1e3)])
        power = min_power_for_rate(e, target)
        assert spectral_rate(power, e).sum() == pytest.approx(target, rel=1e-9)


@pytest.mark.slow
def test_optimal_within_two_percent_of_oracle(three_users, make_quality):
    hqos = np.array([u.is_hqos for u in three_users])
    for _ in range(200):
        E = make_quality()
        alloc = optimal_allocate(three_users, E, 3.0)
        best = oracle_exhaustive(three_users, E, 3.0)
        assert sqos_sum_rate(alloc, three_users) >= 0.98 * sqos_sum_rate(
            best, three_users
        )
        assert np.all(
            alloc.achieved_rates[hqos] >= alloc.target_rates[hqos] * (1 - 1e-9)
        )
        assert abs(alloc.power.sum() - 3.0) <= 1e-4


def test_total_rate_powers_meets_targets():
    rho = np.array([[1, 0, 0], [0, 1, 1]])
    E = np.array([[2.0, 1.0, 1.0], [1.0, 20.0, 20.0]])
    targets = np.array([2.0, 0.0])
    hqos = np.array([True, False])
    power = total_rate_powers(rho, E, 3.0, hqos, targets)
    assert power.sum() == pytest.approx(3.0)
    assert spectral_rate(power[0], E[0]).sum() == pytest.approx(2.0, rel=1e-6)

    unreachable = total_rate_powers(rho, E, 3.0, hqos, np.array([50.0, 0.0]))
    assert unreachable is None


def test_oracle_infeasible():
    users = [
        UserProfile.from_request(0, "HQoS", 480.0),
        UserProfile.from_request(1, "SQoS", 53.3),
    ]
    E = np.full((2, 2), 1e-3)
    with pytest.raises(InfeasibleAllocationError):
        oracle_exhaustive(users, E, 1.0)


def test_oracle_with_loose_primary(three_users, make_quality, plan):
    constraint = build_constraint(
        PrimaryUserBand(plan.centers_ghz[0], 20.0, i_th_mw=1e6), plan, 3.0
    )
    for _ in range(5):
        E = make_quality()
        free = oracle_exhaustive(three_users, E, 3.0)
        shared = oracle_exhaustive(three_users, E, 3.0, [constraint], grid_points=5)
        assert AllocationFlag.STILL_OVER_THRESHOLD not in shared.flags
        assert sqos_sum_rate(shared, three_users) == pytest.approx(
            sqos_sum_rate(free, three_users), rel=1e-9
        )


def test_oracle_with_binding_primary(three_users, plan):
    constraint = build_constraint(
        PrimaryUserBand(plan.centers_ghz[0], 10.0, i_th_fraction=1.0), plan, 3.0
    )
    E = np.array([[5.0, 20.0, 10.0], [30.0, 5.0, 10.0], [10.0, 10.0, 30.0]])
    best = oracle_exhaustive(three_users, E, 3.0, [constraint], grid_points=11)
    assert AllocationFlag.STILL_OVER_THRESHOLD not in best.flags
    assert best.interference_after_w[0] <= constraint.threshold_w * (1 + 1e-9)
    assert best.achieved_rates[0] >= 320.0 * (1 - 1e-6)
