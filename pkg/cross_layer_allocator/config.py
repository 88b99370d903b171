# config.py
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

from cross_layer_allocator.mac.profile import QosClass, UserProfile
from cross_layer_allocator.phy.channel import (
    FCC_PSD_CAP_DBM_MHZ,
    BandPlan,
    CmProfile,
    LinkBudget,
    band_group_plan,
    cm_profile,
)
from cross_layer_allocator.phy.interference import PrimaryUserBand, overlap_factors
from cross_layer_allocator.utils.exceptions import (
    ConfigurationError,
    DataValidationError,
)

ALGORITHMS = ("optimal", "suboptimal")
ASSIGNMENT_MODES = ("per_band_argmax", "one_band_per_user")
ALGO_VARIANTS = ("bisect", "literal_step3c")
REDUCTION_RATE_MODELS = ("split", "eesm")
OBJECTIVES = ("sqos", "total")
DEFAULT_BANDWIDTHS_MHZ = (1.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0)
DEFAULT_I_TH_FRACTIONS = (0.25, 0.5, 0.75)


@dataclass
class SolverConfig:
    """
    Parameters of the allocation algorithms.

    Attributes:
        delta (float): Increment of the HQoS multipliers per outer iteration.
        power_tol (float): Relative tolerance on the total power budget.
        max_outer_iters (int): Cap on the outer multiplier loop.
        waterlevel_bisect_tol (float): Relative tolerance of the water level.
        assignment_mode (str): ``per_band_argmax`` or ``one_band_per_user``.
        algo_variant (str): ``bisect`` keeps the budget through the water
            level; ``literal_step3c`` moves every multiplier by half a step.
        reduction_rate_model (str): Rate of a partially reduced sub-band,
            ``split`` or ``eesm``.
        stall_window (int): Outer iterations without improvement of the
            worst HQoS deficit before the targets are declared infeasible.
        max_inner_iters (int): Cap on the assignment/water level fixed point.
        objective (str): What the optimal allocator maximizes once the HQoS
            targets hold: ``sqos`` the SQoS sum rate, with HQoS users held at
            their target; ``total`` the sum rate of every user.
        polish_span (int): Largest number of sub-bands that change owner in
            one move of the local search after the multiplier loop; 0 keeps
            the loop's assignment. A span of B or more searches every
            assignment in one move, which a band group of three sub-bands
            affords.
    """

    delta: float = 0.05
    power_tol: float = 1e-4
    max_outer_iters: int = 10_000
    waterlevel_bisect_tol: float = 1e-10
    assignment_mode: str = "per_band_argmax"
    algo_variant: str = "bisect"
    reduction_rate_model: str = "split"
    stall_window: int = 200
    max_inner_iters: int = 50
    objective: str = "sqos"
    polish_span: int = 3

    def __post_init__(self) -> None:
        """Validate ranges and enumerations."""
        if not self.delta > 0:
            raise ConfigurationError("solver.delta must be > 0")
        for key in ("power_tol", "waterlevel_bisect_tol"):
            value = getattr(self, key)
            if not 0 < value < 1:
                raise ConfigurationError(f"solver.{key} must lie in (0, 1)")
        for key in ("max_outer_iters", "stall_window", "max_inner_iters"):
            if getattr(self, key) < 1:
                raise ConfigurationError(f"solver.{key} must be >= 1")
        if self.polish_span < 0:
            raise ConfigurationError("solver.polish_span must be >= 0")
        _check_choice("solver.assignment_mode", self.assignment_mode, ASSIGNMENT_MODES)
        _check_choice("solver.algo_variant", self.algo_variant, ALGO_VARIANTS)
        _check_choice("solver.objective", self.objective, OBJECTIVES)
        _check_choice(
            "solver.reduction_rate_model",
            self.reduction_rate_model,
            REDUCTION_RATE_MODELS,
        )


@dataclass
class RunConfig:
    """
    Monte Carlo run parameters.

    Attributes:
        n_trials (int): Number of channel draws.
        seed (int): Base seed of every random stream.
        algorithms (tuple): Allocators to run.
        total_power_w (float | None): Total power budget; defaults to the
            nominal sub-band power times the number of sub-bands.
        band_group (int): WiMedia band group, 1 to 5.
        n_jobs (int): joblib workers for the trial loop.
    """

    n_trials: int = 100
    seed: int = 0
    algorithms: Tuple[str, ...] = ALGORITHMS
    total_power_w: Optional[float] = None
    band_group: int = 1
    n_jobs: int = 1

    def __post_init__(self) -> None:
        self.algorithms = tuple(self.algorithms)
        if self.n_trials < 1:
            raise ConfigurationError("run.n_trials must be >= 1")
        if self.seed < 0:
            raise ConfigurationError("run.seed must be >= 0")
        if not self.algorithms:
            raise ConfigurationError("run.algorithms must not be empty")
        for algo in self.algorithms:
            _check_choice("run.algorithms", algo, ALGORITHMS)
        if self.total_power_w is not None and not self.total_power_w > 0:
            raise ConfigurationError("run.total_power_w must be > 0")
        if self.band_group not in range(1, 6):
            raise ConfigurationError("run.band_group must be in 1..5")
        if self.n_jobs == 0:
            raise ConfigurationError("run.n_jobs must be non-zero")


@dataclass
class ChannelConfig:
    """Channel model name, optional model overrides and the link budget."""

    model: str = "CM1"
    cluster_arrival_rate: Optional[float] = None
    ray_arrival_rate: Optional[float] = None
    cluster_decay: Optional[float] = None
    ray_decay: Optional[float] = None
    cluster_fading_std_db: Optional[float] = None
    ray_fading_std_db: Optional[float] = None
    shadowing_std_db: Optional[float] = None
    max_delay: Optional[float] = None
    tx_psd_dbm_mhz: float = FCC_PSD_CAP_DBM_MHZ
    noise_psd_dbm_mhz: float = -107.4
    pathloss_db: float = 60.0
    primary_interference_psd_dbm_mhz: Optional[float] = None

    def __post_init__(self) -> None:
        # Construction validates both objects
        self.profile()
        self.budget()

    def profile(self) -> CmProfile:
        overrides = {
            f.name: getattr(self, f.name)
            for f in fields(CmProfile)
            if f.name != "name" and getattr(self, f.name, None) is not None
        }
        return cm_profile(self.model, **overrides)

    def budget(self) -> LinkBudget:
        return LinkBudget(
            tx_psd_dbm_mhz=self.tx_psd_dbm_mhz,
            noise_psd_dbm_mhz=self.noise_psd_dbm_mhz,
            pathloss_db=self.pathloss_db,
            primary_interference_psd_dbm_mhz=self.primary_interference_psd_dbm_mhz,
        )


@dataclass
class PrimaryConfig:
    """
    Primary user placement and the bandwidth and threshold sweeps.

    ``center_ghz`` defaults to the centre of the first sub-band of the band
    group. The threshold is either one absolute ``i_th_mw`` or a sweep of
    ``i_th_fractions`` of the unreduced interference, 0.25, 0.5 and 0.75 by
    default; giving both is an error.
    """

    center_ghz: Optional[float] = None
    bandwidths_mhz: Tuple[float, ...] = DEFAULT_BANDWIDTHS_MHZ
    i_th_mw: Optional[float] = None
    i_th_fractions: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        self.bandwidths_mhz = tuple(float(bw) for bw in self.bandwidths_mhz)
        if not self.bandwidths_mhz:
            raise ConfigurationError("primary.bandwidths_mhz must not be empty")
        if any(bw <= 0 for bw in self.bandwidths_mhz):
            raise ConfigurationError("primary.bandwidths_mhz must be > 0")
        if len(set(self.bandwidths_mhz)) != len(self.bandwidths_mhz):
            raise ConfigurationError("primary.bandwidths_mhz has duplicates")
        if self.i_th_fractions is None:
            return
        if self.i_th_mw is not None:
            raise ConfigurationError(
                "Set either primary.i_th_mw or primary.i_th_fractions, not both"
            )
        self.i_th_fractions = tuple(float(f) for f in self.i_th_fractions)
        if not self.i_th_fractions:
            raise ConfigurationError("primary.i_th_fractions must not be empty")
        if any(not f > 0 for f in self.i_th_fractions):
            raise ConfigurationError("primary.i_th_fractions must be > 0")
        if len(set(self.i_th_fractions)) != len(self.i_th_fractions):
            raise ConfigurationError("primary.i_th_fractions has duplicates")

    @property
    def threshold_levels(self) -> Tuple[Optional[float], ...]:
        """Swept threshold fractions; ``(None,)`` for an absolute threshold."""
        if self.i_th_mw is not None:
            return (None,)
        return self.i_th_fractions or DEFAULT_I_TH_FRACTIONS

    def bands(self, plan: BandPlan) -> List[PrimaryUserBand]:
        """One primary per (bandwidth, threshold level), bandwidth major."""
        center = plan.centers_ghz[0] if self.center_ghz is None else self.center_ghz
        return [
            PrimaryUserBand(
                center_ghz=center,
                bandwidth_mhz=bw,
                i_th_mw=self.i_th_mw,
                i_th_fraction=1.0 if fraction is None else fraction,
            )
            for bw in self.bandwidths_mhz
            for fraction in self.threshold_levels
        ]


@dataclass
class UserConfig:
    """One ``[[users]]`` entry."""

    id: int
    qos_class: str
    rate_mbps: float
    delay_ms: float = 0.0
    pathloss_db: Optional[float] = None

    def __post_init__(self) -> None:
        if not isinstance(self.id, int) or self.id < 0:
            raise ConfigurationError(f"users: id must be an integer >= 0, got {self.id!r}")
        self.qos_class = QosClass.parse(self.qos_class).value
        try:
            self.to_profile()
        except DataValidationError as e:
            raise ConfigurationError(f"users[{self.id}]: {e}") from e

    def to_profile(self) -> UserProfile:
        return UserProfile.from_request(
            self.id, self.qos_class, self.rate_mbps, self.delay_ms, self.pathloss_db
        )


@dataclass
class ScenarioConfig:
    """Complete, validated scenario."""

    users: List[UserConfig]
    run: RunConfig = field(default_factory=RunConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    primary: PrimaryConfig = field(default_factory=PrimaryConfig)

    def __post_init__(self) -> None:
        if not self.users:
            raise ConfigurationError("At least one [[users]] entry is required")
        ids = [u.id for u in self.users]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"Duplicate user ids: {ids}")
        # Rejects a primary centre outside the band group
        for band in self.primary.bands(self.plan):
            overlap_factors(band, self.plan)

    @property
    def plan(self) -> BandPlan:
        return band_group_plan(self.run.band_group)

    @property
    def profiles(self) -> List[UserProfile]:
        return [u.to_profile() for u in self.users]

    @property
    def total_power_w(self) -> float:
        if self.run.total_power_w is not None:
            return self.run.total_power_w
        return self.plan.n_bands * self.channel.budget().nominal_subband_power_w

    def to_dict(self) -> Dict[str, Any]:
        """Resolved configuration, JSON serializable."""
        document = {
            "run": asdict(self.run),
            "channel": asdict(self.channel),
            "solver": asdict(self.solver),
            "primary": asdict(self.primary),
            "users": [asdict(u) for u in self.users],
        }
        document["run"]["algorithms"] = list(self.run.algorithms)
        document["run"]["total_power_w"] = self.total_power_w
        document["primary"]["bandwidths_mhz"] = list(self.primary.bandwidths_mhz)
        if self.primary.i_th_mw is None:
            document["primary"]["i_th_fractions"] = list(self.primary.threshold_levels)
        for user in document["users"]:
            user["class"] = user.pop("qos_class")
        return document


def _check_choice(key: str, value: str, allowed: Iterable[str]) -> None:
    allowed = tuple(allowed)
    if value not in allowed:
        raise ConfigurationError(f"{key} must be one of {allowed}, got '{value}'")


_SECTIONS = {
    "run": RunConfig,
    "channel": ChannelConfig,
    "solver": SolverConfig,
    "primary": PrimaryConfig,
}


def _build(cls: type, section: str, values: Mapping[str, Any]) -> Any:
    if not isinstance(values, Mapping):
        raise ConfigurationError(f"[{section}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"Unknown keys in [{section}]: {unknown}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigurationError(f"[{section}]: {e}") from e


def config_from_dict(document: Mapping[str, Any]) -> ScenarioConfig:
    """
    Validate a parsed scenario document.

    Raises:
        ConfigurationError: On unknown sections or keys and invalid values.
    """
    unknown = sorted(set(document) - set(_SECTIONS) - {"users"})
    if unknown:
        raise ConfigurationError(f"Unknown sections: {unknown}")

    users = []
    for index, entry in enumerate(document.get("users", [])):
        entry = dict(entry)
        if "class" in entry:
            entry["qos_class"] = entry.pop("class")
        elif "qos_class" not in entry:
            raise ConfigurationError(f"users[{index}] needs a 'class' key")
        entry.setdefault("id", index)
        users.append(_build(UserConfig, f"users.{index}", entry))

    sections = {
        name: _build(cls, name, document.get(name, {}))
        for name, cls in _SECTIONS.items()
    }
    return ScenarioConfig(users=users, **sections)


def _parse_literal(text: str) -> Any:
    try:
        return tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(
    document: Dict[str, Any], overrides: Iterable[str]
) -> Dict[str, Any]:
    """
    Apply ``section.key=value`` overrides in place.

    ``users.<index>.key=value`` addresses one user. Values are parsed as
    TOML literals and kept as strings when that fails.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"Override '{item}' is not KEY=VALUE")
        key, raw = item.split("=", 1)
        path = key.strip().split(".")
        value = _parse_literal(raw.strip())
        if path[0] == "users":
            if len(path) != 3 or not path[1].isdigit():
                raise ConfigurationError(f"Override '{key}' must be users.<index>.<key>")
            users = document.get("users", [])
            index = int(path[1])
            if index >= len(users):
                raise ConfigurationError(f"Override '{key}': no user at index {index}")
            users[index][path[2]] = value
            continue
        if len(path) != 2:
            raise ConfigurationError(f"Override '{key}' must be <section>.<key>")
        document.setdefault(path[0], {})[path[1]] = value
    return document


def load_document(path: "str | Path") -> Dict[str, Any]:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"{path}: {e}") from e


def load_config(
    path: "str | Path", overrides: Optional[Iterable[str]] = None
) -> ScenarioConfig:
    """Read a TOML scenario, apply overrides and validate it."""
    document = load_document(path)
    apply_overrides(document, overrides or [])
    return config_from_dict(document)
