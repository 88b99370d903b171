"""Service classes, weights and priority order of the UWB users."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List

from cross_layer_allocator.phy.mcs import (
    R_MAX_MBPS,
    R_MIN_MBPS,
    McsMode,
    mode_for_rate,
)
from cross_layer_allocator.utils.exceptions import (
    ConfigurationError,
    RateOutOfTableError,
)


class QosClass(str, Enum):
    HQOS = "HQoS"
    SQOS = "SQoS"

    @property
    def class_weight(self) -> int:
        return 2 if self is QosClass.HQOS else 1

    @classmethod
    def parse(cls, value: str) -> "QosClass":
        for member in cls:
            if member.value.lower() == str(value).lower():
                return member
        raise ConfigurationError(f"Unknown QoS class '{value}', use HQoS or SQoS")


def service_weight(rate_mbps: float) -> float:
    """
    Affine map of a requested rate onto ``[1, 2]``.

    Raises:
        RateOutOfTableError: If the rate lies outside the WiMedia range.
    """
    if not R_MIN_MBPS <= rate_mbps <= R_MAX_MBPS:
        raise RateOutOfTableError(
            f"{rate_mbps} Mbps outside [{R_MIN_MBPS}, {R_MAX_MBPS}]"
        )
    return 1.0 + (rate_mbps - R_MIN_MBPS) / (R_MAX_MBPS - R_MIN_MBPS)


def absolute_weight(qos_class: QosClass, s_k: float) -> float:
    return qos_class.class_weight * s_k


@dataclass(frozen=True)
class UserProfile:
    """
    One secondary user and its weights.

    Attributes:
        id (int): User identifier, also the last tie-break key.
        qos_class (QosClass): HQoS or SQoS.
        requested_rate (float): Target rate in Mbps, a WiMedia rate.
        delay_tolerance (float): Delay tolerance in ms.
        class_weight (int): 2 for HQoS, 1 for SQoS.
        service_weight (float): Rate-derived weight in [1, 2].
        absolute_weight (float): Product of both weights.
        mode (McsMode): MCS row of the requested rate.
        pathloss_db (float | None): Per-user path loss override.
    """

    id: int
    qos_class: QosClass
    requested_rate: float
    delay_tolerance: float
    class_weight: int
    service_weight: float
    absolute_weight: float
    mode: McsMode = field(compare=False)
    pathloss_db: "float | None" = None

    @classmethod
    def from_request(
        cls,
        id: int,
        qos_class: "QosClass | str",
        rate_mbps: float,
        delay_ms: float = 0.0,
        pathloss_db: "float | None" = None,
    ) -> "UserProfile":
        qos_class = (
            qos_class if isinstance(qos_class, QosClass) else QosClass.parse(qos_class)
        )
        mode = mode_for_rate(rate_mbps)
        s_k = service_weight(mode.rate_mbps)
        if delay_ms < 0:
            raise ConfigurationError("delay_ms must be >= 0")
        return cls(
            id=id,
            qos_class=qos_class,
            requested_rate=mode.rate_mbps,
            delay_tolerance=delay_ms,
            class_weight=qos_class.class_weight,
            service_weight=s_k,
            absolute_weight=absolute_weight(qos_class, s_k),
            mode=mode,
            pathloss_db=pathloss_db,
        )

    @property
    def is_hqos(self) -> bool:
        return self.qos_class is QosClass.HQOS

    @property
    def eesm_lambda(self) -> float:
        return self.mode.eesm_lambda


def priority_order(users: Iterable[UserProfile]) -> List[UserProfile]:
    """Highest weight first, then lowest delay tolerance, then lowest id."""
    return sorted(
        users, key=lambda u: (-u.absolute_weight, u.delay_tolerance, u.id)
    )


def priority_ranks(users: List[UserProfile]) -> List[int]:
    """Rank of each user (0 = highest priority) in the order of ``users``."""
    order = sorted(
        range(len(users)),
        key=lambda i: (-users[i].absolute_weight, users[i].delay_tolerance, users[i].id),
    )
    ranks = [0] * len(users)
    for rank, index in enumerate(order):
        ranks[index] = rank
    return ranks
