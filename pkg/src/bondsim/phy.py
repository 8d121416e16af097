"""Propagation, airtime and the shared two-channel medium.

The medium keeps, for every receiver and each 10 MHz channel, the sum of
received powers (mW) of frames on air, the preamble-lock count on the
receiver's primary channel, and the resulting busy/idle state. All frame
starts and ends that share a microsecond are applied in one batch, so the
outcome does not depend on the order in which same-tick events fire.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels as _k
from .engine import Engine, EventKind

CH180, CH182 = 0, 1
N_CHANNELS = 2


class Channel(enum.IntEnum):
    CH180 = CH180
    CH182 = CH182

    @property
    def center_ghz(self) -> float:
        return 5.900 if self is Channel.CH180 else 5.910

    @property
    def width_mhz(self) -> int:
        return 10

    @property
    def number(self) -> int:
        return 180 if self is Channel.CH180 else 182

    def adjacent(self) -> "Channel":
        return Channel(1 - int(self))


@dataclass(frozen=True)
class PathLossParams:
    gamma: float = 2.83
    pl0: float = 44.0
    l0: float = 1.0

    def __post_init__(self):
        if self.gamma <= 0 or self.l0 <= 0:
            raise ValueError("gamma and l0 must be positive")


@dataclass(frozen=True)
class RadioConfig:
    """Link-budget parameters. Thresholds are per 10 MHz channel."""

    tx_power: float = 23.0
    ed_threshold: float = -65.0
    pd_threshold: float = -85.0
    decode_snr: float = 8.0
    noise_floor: float = -95.0
    wide_split_db: float = 3.0

    def __post_init__(self):
        if self.pd_threshold > self.ed_threshold:
            raise ValueError("pd_threshold must not exceed ed_threshold")


@dataclass(frozen=True)
class McsConfig:
    """OFDM airtime parameters at 10 MHz; defaults are BPSK 3/4 (4.5 Mb/s)."""

    bits_per_symbol: int = 36
    symbol_us: int = 8
    preamble_us: int = 40
    service_bits: int = 16
    tail_bits: int = 6


def dbm_to_mw(dbm):
    return np.power(10.0, np.asarray(dbm, dtype=float) / 10.0)


def mw_to_dbm(mw):
    return 10.0 * np.log10(mw)


def path_loss(l: float, p: PathLossParams = PathLossParams()) -> float:
    if not l > 0:
        raise ValueError(f"path loss needs a positive distance, got {l}")
    return p.pl0 + 10.0 * p.gamma * math.log10(l / p.l0)


def rx_power(tx: Sequence[float], rx: Sequence[float], cfg: RadioConfig = RadioConfig(),
             p: PathLossParams = PathLossParams()) -> float:
    d = math.dist(tx, rx)
    if d == 0:
        raise ValueError("transmitter and receiver are coincident")
    return cfg.tx_power - path_loss(d, p)


def frame_duration(payload_bytes: int, width_mhz: int = 10, mcs: McsConfig = McsConfig()) -> int:
    """Airtime in microseconds. A 20 MHz frame carries twice the bits per symbol."""
    if payload_bytes <= 0:
        raise ValueError("payload must be positive")
    if width_mhz not in (10, 20):
        raise ValueError("width must be 10 or 20 MHz")
    bps = mcs.bits_per_symbol * (width_mhz // 10)
    bits = mcs.service_bits + 8 * payload_bytes + mcs.tail_bits
    return mcs.preamble_us + -(-bits // bps) * mcs.symbol_us


def gain_matrix(positions: np.ndarray, radio: RadioConfig, p: PathLossParams) -> np.ndarray:
    """Received power in mW for every (tx, rx) pair at full transmit power; zero diagonal.

    Distances below the reference distance are clamped to it.
    """
    diff = positions[:, None, :] - positions[None, :, :]
    d = np.sqrt((diff ** 2).sum(-1))
    np.maximum(d, p.l0, out=d)
    loss = p.pl0 + 10.0 * p.gamma * np.log10(d / p.l0)
    g = np.power(10.0, (radio.tx_power - loss) / 10.0)
    np.fill_diagonal(g, 0.0)
    return g


def distance_matrix(positions: np.ndarray) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    return np.sqrt((diff ** 2).sum(-1))


class FrameTransmission:
    """A frame on air. ``channels`` is ``(c,)`` for 10 MHz or ``(0, 1)`` for 20 MHz."""

    __slots__ = ("sender", "channels", "start", "duration", "payload_bytes", "msg_type", "msg_id",
                 "message", "source", "power", "slots", "lock", "success", "intended", "seq")

    def __init__(self, sender: int, channels: tuple[int, ...], duration: int, payload_bytes: int = 0,
                 msg_type=None, msg_id: int = -1, message=None, source=None):
        if len(channels) not in (1, 2) or (len(channels) == 2 and tuple(channels) != (0, 1)):
            raise ValueError(f"invalid channel set {channels}")
        if duration <= 0:
            raise ValueError("duration must be positive")
        self.sender = sender
        self.channels = tuple(channels)
        self.start = -1
        self.duration = int(duration)
        self.payload_bytes = payload_bytes
        self.msg_type = msg_type
        self.msg_id = msg_id
        self.message = message
        self.source = source
        self.power: np.ndarray | None = None
        self.slots: dict[int, int] = {}
        self.lock: np.ndarray | None = None
        self.success: np.ndarray | None = None
        self.intended: np.ndarray | None = None
        self.seq = -1

    @property
    def width_mhz(self) -> int:
        return 10 * len(self.channels)

    @property
    def end(self) -> int:
        return self.start + self.duration

    def __repr__(self) -> str:
        return (f"Frame(id={self.msg_id}, sender={self.sender}, ch={self.channels}, "
                f"start={self.start}, dur={self.duration})")


class Medium:
    """Shared channels CH180/CH182 seen by ``n`` stations.

    Busy on (receiver, channel) iff received energy (noise included) exceeds
    the ED threshold, or a preamble is locked on the receiver's primary
    channel, or the receiver itself transmits on it. A preamble locks when,
    at frame start, the receiver is not transmitting, the frame occupies its
    primary channel, the received power reaches the PD threshold and the
    SINR reaches ``decode_snr``. A frame is decoded by a receiver iff it
    locked the preamble, did not transmit during the frame, and the SINR on
    every occupied channel stayed at or above ``decode_snr`` for the whole
    frame. 11p receivers (``wide_capable`` false) never decode 20 MHz frames.

    ``busy`` and ``since`` (time of the last edge) are ``(2, n)`` arrays
    updated in place; ``ok_ch``/``ok_union`` hold whether the latest busy
    episode, per channel and for the union of both, ended on a successful
    decode, and ``sec_involved`` whether the secondary was busy during the
    latest union episode.

    Callbacks:
      * ``edge_sinks[r].on_edges(flags, now)`` for receivers that registered
        interest (``listening[r] > 0``); bit ``c`` of ``flags`` marks channel
        ``c`` as changed;
      * ``on_frame_start(frame, now)`` / ``on_frame_end(frame, now)``;
      * ``arbiter(frames, now) -> frames`` resolves several frames from one sender.
    """

    def __init__(self, engine: Engine, positions: np.ndarray, primary: Sequence[int],
                 radio: RadioConfig = RadioConfig(), pathloss: PathLossParams = PathLossParams(),
                 wide_capable: Sequence[bool] | None = None, edge_sinks: Sequence | None = None,
                 on_frame_start: Callable | None = None, on_frame_end: Callable | None = None,
                 arbiter: Callable | None = None, capacity: int = 16):
        self.engine = engine
        self.radio = radio
        self.pathloss = pathloss
        positions = np.asarray(positions, dtype=float)
        n = self.n = positions.shape[0]
        self.primary = np.asarray(primary, dtype=np.int64)
        self.secondary = 1 - self.primary
        self.wide_capable = (np.ones(n, bool) if wide_capable is None
                             else np.asarray(wide_capable, dtype=bool))
        self.noise_mw = float(dbm_to_mw(radio.noise_floor))
        self.ed_mw = float(dbm_to_mw(radio.ed_threshold))
        self.pd_mw = float(dbm_to_mw(radio.pd_threshold))
        self.snr_lin = float(10.0 ** (radio.decode_snr / 10.0))
        self.wide_factor = float(10.0 ** (-radio.wide_split_db / 10.0))
        self.positions = positions.copy()
        self.gain = gain_matrix(self.positions, radio, pathloss)

        self.contrib = np.zeros((N_CHANNELS, capacity, n))
        self.max_interf = np.zeros((N_CHANNELS, capacity, n))
        self.active = np.zeros((N_CHANNELS, capacity), bool)
        self._free = [list(range(capacity - 1, -1, -1)) for _ in range(N_CHANNELS)]
        self.total = np.zeros((N_CHANNELS, n))
        self.own_tx = np.zeros((N_CHANNELS, n), bool)
        self.pd_count = np.zeros((N_CHANNELS, n), np.int64)
        self.busy = np.zeros((N_CHANNELS, n), bool)
        self.since = np.zeros((N_CHANNELS, n), np.int64)
        self.transmitting = np.zeros(n, bool)
        self.last_tx_end = np.full(n, -1, np.int64)
        self.ok_ch = np.ones((N_CHANNELS, n), bool)
        self.ok_union = np.ones(n, bool)
        self.sec_involved = np.zeros(n, bool)
        self.listening = np.zeros(n, np.int64)
        self._edge_idx = np.zeros(n, np.int64)
        self._edge_flags = np.zeros(n, np.int64)

        self.edge_sinks = edge_sinks
        self.on_frame_start = on_frame_start
        self.on_frame_end = on_frame_end
        self.arbiter = arbiter
        self._starts: list[FrameTransmission] = []
        self._ends: list[FrameTransmission] = []
        self._flush_ev = None
        self._seq = 0
        self.on_air: dict[int, FrameTransmission] = {}

    # -- geometry -------------------------------------------------------------

    def update_positions(self, positions: np.ndarray) -> None:
        """New link gains apply to frames started from now on."""
        self.positions = np.asarray(positions, dtype=float).copy()
        self.gain = gain_matrix(self.positions, self.radio, self.pathloss)

    def energy_dbm(self, receiver: int, channel: int) -> float:
        return float(mw_to_dbm(self.total[channel, receiver] + self.noise_mw))

    # -- frame lifecycle ------------------------------------------------------

    def request_start(self, frame: FrameTransmission) -> None:
        """Queue ``frame`` to go on air at the current instant."""
        if frame.start >= 0:
            raise ValueError("frame already started")
        frame.seq = self._seq
        self._seq += 1
        self._starts.append(frame)
        self._arm()

    def _frame_end(self, frame: FrameTransmission) -> None:
        self._ends.append(frame)
        self._arm()

    def _arm(self) -> None:
        if self._flush_ev is None:
            self._flush_ev = self.engine.schedule(self.engine.now, self._flush,
                                                  kind=EventKind.CHANNEL_UPDATE, target="medium")

    def _allocate(self, c: int) -> int:
        free = self._free[c]
        if not free:
            cap = self.contrib.shape[1]
            pad = np.zeros((N_CHANNELS, cap, self.n))
            self.contrib = np.concatenate([self.contrib, pad], axis=1)
            self.max_interf = np.concatenate([self.max_interf, pad], axis=1)
            self.active = np.concatenate([self.active, np.zeros((N_CHANNELS, cap), bool)], axis=1)
            for c2 in range(N_CHANNELS):
                self._free[c2] = list(range(2 * cap - 1, cap - 1, -1)) + self._free[c2]
            free = self._free[c]
        return free.pop()

    def _flush(self) -> None:
        self._flush_ev = None
        now = self.engine.now
        ends, self._ends = self._ends, []
        starts, self._starts = self._starts, []
        touched = [False, False]
        started_on = [False, False]

        for f in ends:
            self._finish(f, now)
            for c in f.channels:
                touched[c] = True
        if self.on_frame_end is not None:
            for f in ends:
                self.on_frame_end(f, now)

        if starts:
            if self.arbiter is not None:
                starts = self.arbiter(starts, now)
            senders = [f.sender for f in starts]
            if len(set(senders)) != len(senders):
                raise RuntimeError("one radio cannot start two frames at once")
            for f in starts:
                self._begin(f, now)
                for c in f.channels:
                    touched[c] = True
                    started_on[c] = True

        for c in range(N_CHANNELS):
            if touched[c]:
                _k.refresh_channel(self.contrib, self.max_interf, self.active, self.total, c, started_on[c])

        if starts:
            for f in starts:
                f.lock = np.empty(self.n, bool)
                _k.compute_lock(f.power, 0 in f.slots, 1 in f.slots, self.total, self.primary,
                                self.transmitting, self.pd_mw, self.snr_lin, self.noise_mw, f.lock,
                                self.pd_count)
            for f in starts:
                self.engine.schedule(now + f.duration, self._frame_end, f,
                                     kind=EventKind.TX_END, target=f.sender)
            if self.on_frame_start is not None:
                for f in starts:
                    self.on_frame_start(f, now)

        if ends or starts:
            k = _k.update_busy(self.total, self.noise_mw, self.ed_mw, self.pd_count, self.own_tx, self.busy,
                               self.since, self.ok_ch, self.ok_union, self.sec_involved, self.secondary,
                               self.listening, now, self._edge_idx, self._edge_flags)
            if k and self.edge_sinks is not None:
                sinks = self.edge_sinks
                for r, flags in zip(self._edge_idx[:k].tolist(), self._edge_flags[:k].tolist()):
                    sinks[r].on_edges(flags, now)

    def _begin(self, f: FrameTransmission, now: int) -> None:
        s = f.sender
        f.start = now
        row = self.gain[s]
        if len(f.channels) == 2:
            row = row * self.wide_factor
        f.power = row
        for c in f.channels:
            slot = self._allocate(c)
            f.slots[c] = slot
            self.contrib[c, slot] = row
            self.max_interf[c, slot] = 0.0
            self.active[c, slot] = True
            self.own_tx[c, s] = True
        self.transmitting[s] = True
        self.on_air[f.seq] = f

    def _finish(self, f: FrameTransmission, now: int) -> None:
        s = f.sender
        for c in f.channels:
            self.own_tx[c, s] = False
        self.transmitting[s] = False
        self.last_tx_end[s] = now
        slots = f.slots
        f.success = np.empty(self.n, bool)
        _k.finish_frame(f.power, 0 in slots, slots.get(0, 0), 1 in slots, slots.get(1, 0), self.max_interf,
                        f.lock, self.transmitting, self.last_tx_end, f.start, self.snr_lin, self.noise_mw,
                        self.wide_capable, self.primary, self.pd_count, self.ok_ch, self.ok_union, s,
                        f.success)
        for c, slot in slots.items():
            self.contrib[c, slot] = 0.0
            self.active[c, slot] = False
            self._free[c].append(slot)
        del self.on_air[f.seq]

    # -- queries ----------------------------------------------------------------

    def decode_outcome(self, frame: FrameTransmission, receiver: int) -> bool:
        if frame.success is None:
            raise ValueError("frame has not ended")
        return bool(frame.success[receiver])

    def idle_everywhere(self) -> bool:
        return not self.busy.any() and not self.on_air
