"""Highway topology, mobility and periodic message generation."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np

from .engine import US_PER_S, RngStream
from .phy import CH180, CH182


class StationKind(enum.Enum):
    VEHICLE = "vehicle"
    RSU = "rsu"


class Side(enum.Enum):
    A = "A"
    B = "B"


class Case(enum.Enum):
    SYMMETRIC = "symmetric"
    ASYMMETRIC = "asymmetric"

    @classmethod
    def parse(cls, text: str) -> "Case":
        t = text.lower()
        for c in cls:
            if c.value.startswith(t):
                return c
        raise ValueError(f"unknown case {text!r}")


class MessageType(enum.Enum):
    BSM = "bsm"
    CPM = "cpm"
    SPAT_MAP = "spat_map"
    WSA = "wsa"


@dataclass(frozen=True)
class HighwayConfig:
    length: float = 1000.0
    lanes_per_side: int = 4
    lane_width: float = 4.0
    median_width: float = 25.0
    rsu_period: float = 300.0
    sensor_range: float = 150.0
    satisfaction_range: float = 150.0

    def __post_init__(self):
        for name in ("length", "lane_width", "median_width", "rsu_period", "sensor_range",
                     "satisfaction_range"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lanes_per_side < 1:
            raise ValueError("need at least one lane per side")

    def lane_y(self, side: Side, lane: int) -> float:
        y = self.median_width / 2 + (lane + 0.5) * self.lane_width
        return y if side is Side.A else -y

    def rsu_y(self, side: Side) -> float:
        y = self.median_width / 2 + self.lanes_per_side * self.lane_width
        return y if side is Side.A else -y

    def rsu_xs(self) -> list[float]:
        xs, x = [], 0.0
        while x < self.length:
            xs.append(x)
            x += self.rsu_period
        return xs


@dataclass(frozen=True)
class TrafficProfile:
    """Rates in Hz, sizes in bytes. Disabled types generate nothing."""

    bsm_rate: float = 10.0
    bsm_size: int = 250
    cpm_rate: float = 10.0
    cpm_base: int = 250
    cpm_per_neighbor: int = 30
    spat_rate: float = 10.0
    spat_size: int = 120
    map_rate: float = 1.0
    spat_map_size: int = 1200
    wsa_rate: float = 1.0
    wsa_size: int = 100
    enabled: tuple[str, ...] = ("bsm", "cpm", "spat_map", "wsa")

    def __post_init__(self):
        for name in ("bsm_rate", "cpm_rate", "spat_rate", "map_rate", "wsa_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("bsm_size", "cpm_base", "spat_size", "spat_map_size", "wsa_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.cpm_per_neighbor < 0:
            raise ValueError("cpm_per_neighbor must be non-negative")
        ratio = self.spat_rate / self.map_rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("SPaT rate must be an integer multiple of the MAP rate")
        unknown = set(self.enabled) - {m.value for m in MessageType}
        if unknown:
            raise ValueError(f"unknown message types {sorted(unknown)}")

    def is_enabled(self, m: MessageType) -> bool:
        return m.value in self.enabled


@dataclass
class StationState:
    id: int
    kind: StationKind
    side: Side
    lane: int
    x: float
    y: float
    speed: float
    primary: int
    standard: str = field(default="")

    def __post_init__(self):
        if not self.standard:
            self.standard = "802.11p" if self.kind is StationKind.RSU else "802.11bd"

    @property
    def n_automata(self) -> int:
        return 1 if self.kind is StationKind.RSU else 2

    @property
    def direction(self) -> int:
        return 1 if self.side is Side.A else -1


def primary_for(side: Side, case: Case) -> int:
    if case is Case.ASYMMETRIC:
        return CH180
    return CH182 if side is Side.A else CH180


def build_topology(n_vehicles: int, cfg: HighwayConfig, case: Case, rng: RngStream) -> list[StationState]:
    """Vehicles first (side A then side B), then RSUs (side A then side B)."""
    if n_vehicles < 0 or n_vehicles % 2:
        raise ValueError("the number of vehicles must be even and non-negative")
    stations: list[StationState] = []
    per_side = n_vehicles // 2
    for side in (Side.A, Side.B):
        lanes = rng.integers(0, cfg.lanes_per_side, per_side)
        xs = rng.uniform(0.0, cfg.length, per_side)
        speeds = rng.uniform(10.0, 30.0, per_side)
        for lane, x, v in zip(lanes, xs, speeds):
            stations.append(StationState(len(stations), StationKind.VEHICLE, side, int(lane), float(x),
                                         cfg.lane_y(side, int(lane)), float(v), primary_for(side, case)))
    for side in (Side.A, Side.B):
        for x in cfg.rsu_xs():
            stations.append(StationState(len(stations), StationKind.RSU, side, -1, float(x),
                                         cfg.rsu_y(side), 0.0, primary_for(side, case)))
    return stations


def advance_mobility(stations: list[StationState], dt_us: int, length: float = 1000.0) -> None:
    """Move vehicles along their lane, wrapping to the start of their side."""
    if dt_us <= 0:
        raise ValueError("dt must be positive")
    dt = dt_us / US_PER_S
    for s in stations:
        if s.kind is StationKind.VEHICLE:
            s.x = (s.x + s.direction * s.speed * dt) % length


class Topology:
    """Array view of the station list used by the simulation hot path."""

    def __init__(self, stations: list[StationState], cfg: HighwayConfig):
        self.stations = stations
        self.cfg = cfg
        self.n = len(stations)
        self.is_vehicle = np.array([s.kind is StationKind.VEHICLE for s in stations], bool)
        self.side = np.array([0 if s.side is Side.A else 1 for s in stations], np.int64)
        self.primary = np.array([s.primary for s in stations], np.int64)
        self.x = np.array([s.x for s in stations], float)
        self.y = np.array([s.y for s in stations], float)
        self.velocity = np.array([s.direction * s.speed for s in stations], float)
        self.same_side = self.side[:, None] == self.side[None, :]

    def positions(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def advance(self, dt_us: int) -> None:
        if dt_us <= 0:
            raise ValueError("dt must be positive")
        self.x = np.mod(self.x + self.velocity * (dt_us / US_PER_S), self.cfg.length)

    def sync(self) -> None:
        for s, x in zip(self.stations, self.x.tolist()):
            s.x = x


def cpm_size(tx: StationState, all_stations: list[StationState], R: float = 150.0,
             base: int = 250, per_neighbor: int = 30) -> int:
    if tx.kind is not StationKind.VEHICLE:
        raise ValueError("only vehicles send CPMs")
    n = 0
    for o in all_stations:
        if o is tx or o.kind is not StationKind.VEHICLE:
            continue
        if np.hypot(o.x - tx.x, o.y - tx.y) <= R:
            n += 1
    return base + per_neighbor * n


@dataclass
class Flow:
    """Periodic generator of one message type at one station."""

    station: int
    msg_type: MessageType
    period_us: int
    phase_us: int
    queue: str  # "edca" (BSM, RSU traffic) or "bond" (CPM)
    size: int
    big_size: int = 0
    big_every: int = 0
    count: int = 0

    def next_size(self) -> int:
        k = self.count
        self.count += 1
        if self.big_every and k % self.big_every == 0:
            return self.big_size
        return self.size


def generate_messages(station: StationState, profile: TrafficProfile, case: Case,
                      rng: RngStream) -> list[Flow]:
    """Flows for one station, each with a uniform random phase in ``[0, period)``.

    RSUs send a 120 B SPaT frame at 10 Hz; at the 1 Hz MAP instants the combined
    SPaT+MAP frame replaces it. WSAs are sent only in the symmetric case.
    """
    flows = []

    def add(m: MessageType, rate: float, queue: str, size: int, **kw):
        period = int(round(US_PER_S / rate))
        phase = int(rng.integers(0, period))
        flows.append(Flow(station.id, m, period, phase, queue, size, **kw))

    if station.kind is StationKind.VEHICLE:
        if profile.is_enabled(MessageType.BSM):
            add(MessageType.BSM, profile.bsm_rate, "edca", profile.bsm_size)
        if profile.is_enabled(MessageType.CPM):
            add(MessageType.CPM, profile.cpm_rate, "bond", profile.cpm_base)
    else:
        if profile.is_enabled(MessageType.SPAT_MAP):
            add(MessageType.SPAT_MAP, profile.spat_rate, "edca", profile.spat_size,
                big_size=profile.spat_map_size, big_every=int(round(profile.spat_rate / profile.map_rate)))
        if case is Case.SYMMETRIC and profile.is_enabled(MessageType.WSA):
            add(MessageType.WSA, profile.wsa_rate, "edca", profile.wsa_size)
    return flows


TOPOLOGY_COLUMNS = ("id", "kind", "side", "lane", "x", "y", "speed", "primary")


def topology_csv(stations: list[StationState]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TOPOLOGY_COLUMNS)
    for s in stations:
        w.writerow([s.id, s.kind.value, s.side.value, s.lane, f"{s.x:.3f}", f"{s.y:.3f}",
                    f"{s.speed:.3f}", 180 if s.primary == CH180 else 182])
    return buf.getvalue()
