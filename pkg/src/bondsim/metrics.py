"""Packet loss ratio, transmission delay and per-station satisfaction."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .engine import US_PER_MS
from .scenario import MessageType

SERVICES = (MessageType.SPAT_MAP, MessageType.BSM, MessageType.CPM)


@dataclass(frozen=True)
class SatisfactionThresholds:
    bsm_delay_ms: float = 100.0
    cpm_delay_ms: float = 10.0
    spat_map_delay_ms: float = 100.0
    wsa_delay_ms: float = 100.0
    plr: float = 0.10
    delay_percentile: float = 95.0

    def __post_init__(self):
        if min(self.bsm_delay_ms, self.cpm_delay_ms, self.spat_map_delay_ms, self.wsa_delay_ms) <= 0:
            raise ValueError("delay thresholds must be positive")
        if not 0 < self.plr <= 1:
            raise ValueError("PLR threshold must be in (0, 1]")
        if not 0 < self.delay_percentile <= 100:
            raise ValueError("percentile must be in (0, 100]")

    def delay_us(self, m: MessageType) -> float:
        return {MessageType.BSM: self.bsm_delay_ms, MessageType.CPM: self.cpm_delay_ms,
                MessageType.SPAT_MAP: self.spat_map_delay_ms,
                MessageType.WSA: self.wsa_delay_ms}[m] * US_PER_MS


@dataclass
class TxRecord:
    msg_id: int
    msg_type: MessageType
    sender: int
    enqueue_time: int
    access_start: int
    send_time: int
    airtime: int
    width_mhz: int
    intended: np.ndarray  # receiver indices frozen at send time
    decoded: np.ndarray  # subset of ``intended`` that decoded the frame

    @property
    def queue_wait(self) -> int:
        return self.access_start - self.enqueue_time

    @property
    def backoff_duration(self) -> int:
        return self.send_time - self.access_start

    @property
    def F(self) -> int:
        return len(self.intended)

    @property
    def S(self) -> int:
        return len(self.decoded)


def tx_delay(record: TxRecord) -> int:
    """Queue wait plus backoff plus airtime, in microseconds."""
    return (record.send_time - record.enqueue_time) + record.airtime


class MetricLedger:
    def __init__(self, n_stations: int):
        self.n = n_stations
        self.records: list[TxRecord] = []
        self.sum_f = defaultdict(int)
        self.sum_s = defaultdict(int)
        self.expected = {m: np.zeros(n_stations, np.int64) for m in MessageType}
        self.received = {m: np.zeros(n_stations, np.int64) for m in MessageType}
        self.delays: dict[tuple[int, MessageType], list[int]] = defaultdict(list)

    def add(self, rec: TxRecord) -> None:
        self.records.append(rec)
        m = rec.msg_type
        self.sum_f[m] += rec.F
        self.sum_s[m] += rec.S
        self.expected[m][rec.intended] += 1
        self.received[m][rec.decoded] += 1
        self.delays[(rec.sender, m)].append(tx_delay(rec))

    def plr(self, m: MessageType) -> float | None:
        return plr(m, self)

    def station_plr(self, station: int, m: MessageType) -> float | None:
        e = int(self.expected[m][station])
        if e == 0:
            return None
        return 1.0 - int(self.received[m][station]) / e

    def type_delays(self, m: MessageType) -> list[int]:
        out = []
        for (_, mt), d in self.delays.items():
            if mt is m:
                out.extend(d)
        return out

    def sent(self, m: MessageType) -> int:
        return sum(1 for r in self.records if r.msg_type is m)


def plr(m: MessageType, ledger: MetricLedger) -> float | None:
    """Aggregate loss ratio ``1 - sum(S)/sum(F)``; ``None`` when nobody was addressed."""
    f = ledger.sum_f[m]
    if f == 0:
        return None
    return 1.0 - ledger.sum_s[m] / f


def station_satisfaction(station: int, m: MessageType, ledger: MetricLedger,
                         thresholds: SatisfactionThresholds = SatisfactionThresholds()) -> bool | None:
    """True if satisfied, False if not, None if the station has no data for ``m``.

    The delay criterion uses a percentile of the station's own sent-message
    delays; the loss criterion uses the station's own loss ratio as a receiver.
    """
    delays = ledger.delays.get((station, m))
    own_plr = ledger.station_plr(station, m)
    if not delays and own_plr is None:
        return None
    if delays and float(np.percentile(delays, thresholds.delay_percentile)) > thresholds.delay_us(m):
        return False
    if own_plr is not None and own_plr > thresholds.plr:
        return False
    return True


def unsatisfied_ratio(m: MessageType, ledger: MetricLedger,
                      thresholds: SatisfactionThresholds = SatisfactionThresholds()) -> float | None:
    verdicts = [station_satisfaction(i, m, ledger, thresholds) for i in range(ledger.n)]
    counted = [v for v in verdicts if v is not None]
    if not counted:
        return None
    return sum(1 for v in counted if not v) / len(counted)


def max_unsatisfied_ratio(ledger: MetricLedger,
                          thresholds: SatisfactionThresholds = SatisfactionThresholds()) -> float:
    ratios = [unsatisfied_ratio(m, ledger, thresholds) for m in SERVICES]
    ratios = [r for r in ratios if r is not None]
    return max(ratios) if ratios else 0.0


def percentile_ms(samples: list[int], q: float) -> float:
    if not samples:
        return math.nan
    return float(np.percentile(samples, q)) / US_PER_MS
