"""Broadcast channel access: EDCA and the three channel-bonding automata.

Countdown rule shared by every method. Once the sensed medium has been idle
for the resume wait (AIFS or EIFS) a slot boundary occurs, and every slot
time after that another one. At each boundary the station transmits if its
counter is already zero, otherwise it decrements the counter. A busy edge at
time ``t`` keeps every decrement at boundaries ``<= t``. A fresh access also
waits AIFS after the frame reaches the head of the queue, so a zero draw on
an idle medium transmits exactly AIFS later. The countdown is event driven:
one pending event marks the instant the counter would run out.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Callable, Protocol

from .engine import Engine, EventKind, RngStream
from .phy import FrameTransmission, McsConfig, Medium, frame_duration

STANDARD_CW = (15, 31, 63, 127, 255, 511, 1023)


class Method(enum.Enum):
    EDCA = "edca"
    BOND_N = "bond_n"
    BOND_BD = "bond_bd"
    BOND_BD_FALLBACK = "bond_bd_fallback"

    @classmethod
    def parse(cls, text: str) -> "Method":
        try:
            return cls(text.lower().replace("-", "_"))
        except ValueError:
            raise ValueError(f"unknown access method {text!r}; expected one of "
                             f"{', '.join(m.value for m in cls)}") from None


class AccessState(enum.Enum):
    IDLE = "idle"
    DEFER = "defer"
    COUNTDOWN = "countdown"
    SUSPENDED = "suspended"
    TX = "tx"
    FALLBACK_COUNTDOWN = "fallback_countdown"


@dataclass(frozen=True)
class MacTimings:
    """Interframe timings in microseconds (10 MHz OFDM defaults)."""

    slot: int = 13
    sifs: int = 32
    aifsn: int = 2
    ack_time: int = 98

    def __post_init__(self):
        if self.slot <= 0 or self.sifs <= 0 or self.aifsn < 2 or self.ack_time < 0:
            raise ValueError("invalid MAC timings")

    @property
    def aifs(self) -> int:
        return self.sifs + self.aifsn * self.slot

    @property
    def pifs(self) -> int:
        return self.sifs + self.slot

    @property
    def eifs(self) -> int:
        return self.sifs + self.aifs + self.ack_time


def validate_cw(cw: int, research: bool = False) -> int:
    if research:
        if cw < 0:
            raise ValueError("contention window must be non-negative")
    elif cw not in STANDARD_CW:
        raise ValueError(f"CW={cw} is not in the standard set {STANDARD_CW}; "
                         "use research mode to allow arbitrary values")
    return cw


def draw_backoff(cw: int, rng: RngStream) -> int:
    """Uniform integer in ``[0, cw]``."""
    if cw < 0:
        raise ValueError("contention window must be non-negative")
    if cw == 0:
        return 0
    return rng.integer(0, cw)


class Message:
    __slots__ = ("msg_id", "msg_type", "sender", "size", "enqueue_time", "access_start",
                 "send_time", "airtime", "width_mhz", "backoff")

    def __init__(self, msg_id: int, msg_type, sender: int, size: int, enqueue_time: int):
        self.msg_id = msg_id
        self.msg_type = msg_type
        self.sender = sender
        self.size = size
        self.enqueue_time = enqueue_time
        self.access_start = -1
        self.send_time = -1
        self.airtime = 0
        self.width_mhz = 0
        self.backoff = -1

    def __repr__(self) -> str:
        return f"Message({self.msg_id}, {self.msg_type}, from={self.sender}, {self.size}B)"


class ChannelView(Protocol):
    """What an automaton senses. ``busy``/``since`` are indexed by channel."""

    primary: int
    secondary: int
    busy: list[bool]
    since: list[int]

    def primary_decoded(self) -> bool: ...

    def activity(self, delta: int) -> None: ...

    def union_needs_eifs(self) -> bool: ...

    def request_tx(self, automaton: "AccessAutomaton", channels: tuple[int, ...], now: int) -> None: ...


Tracer = Callable[[int, "AccessAutomaton", AccessState, AccessState], None]


class AccessAutomaton:
    """Backoff state machine for one transmit queue.

    EDCA and BOND_N count down on the primary channel only; BOND_N picks the
    width when the counter runs out (20 MHz iff the secondary has been idle
    for at least PIFS). BOND_BD counts down only while both channels are
    idle and always sends 20 MHz. BOND_BD_FALLBACK behaves like BOND_BD until
    the secondary turns busy while the primary is idle during the backoff;
    the running countdown then continues on the primary alone and the frame
    goes out at 10 MHz. The next frame starts over in two-channel mode.
    """

    def __init__(self, method: Method, view: ChannelView, engine: Engine, rng: RngStream,
                 cw: int, timings: MacTimings = MacTimings(), priority: int = 0, name: str = "",
                 tracer: Tracer | None = None):
        self.method = method
        self.view = view
        self.engine = engine
        self.rng = rng
        self.cw = cw
        self.t = timings
        self.priority = priority
        self.name = name
        self.tracer = tracer
        self.queue: deque[Message] = deque()
        self.state = AccessState.IDLE
        self.counter = 0
        self.fallback = False
        self.access_start = 0
        self.b0 = 0
        self.tx_time = -1
        self._event = None
        self._bd = method in (Method.BOND_BD, Method.BOND_BD_FALLBACK)
        self.union = self._bd

    # -- state bookkeeping ------------------------------------------------------

    def _set(self, state: AccessState, now: int) -> None:
        if self.tracer is not None and state is not self.state:
            self.tracer(now, self, self.state, state)
        self.state = state

    def phase(self, now: int) -> AccessState:
        """State at ``now``, telling the resume wait (DEFER) apart from the slot countdown."""
        if self.state is AccessState.DEFER and now >= self.b0:
            return AccessState.COUNTDOWN
        return self.state

    def sensed_busy(self) -> bool:
        v = self.view
        if self.union:
            return v.busy[v.primary] or v.busy[v.secondary]
        return v.busy[v.primary]

    # -- inputs -----------------------------------------------------------------

    def enqueue(self, msg: Message, now: int) -> None:
        self.queue.append(msg)
        if self.state is AccessState.IDLE:
            self.view.activity(1)
            self._begin_access(now)

    def on_edges(self, changed: tuple[bool, bool], now: int) -> None:
        st = self.state
        if st is AccessState.IDLE or st is AccessState.TX:
            return
        v = self.view
        p = v.primary
        if self.union:
            s = v.secondary
            if (self.method is Method.BOND_BD_FALLBACK and changed[s] and v.busy[s]
                    and not v.busy[p] and self._event is not None):
                self.fallback = True
                self.union = False
                self._set(AccessState.FALLBACK_COUNTDOWN, now)
                return
            busy = v.busy[p] or v.busy[s]
        else:
            if not changed[p]:
                return
            busy = v.busy[p]
        if busy:
            if self._event is not None:
                self._suspend(now)
        elif self._event is None:
            self._resume(now)

    def on_tx_denied(self, now: int) -> None:
        """Lost an intra-station tie: redraw and wait for the medium."""
        msg = self.queue[0]
        msg.send_time = -1
        self.counter = draw_backoff(self.cw, self.rng)
        msg.backoff = self.counter
        self._set(AccessState.SUSPENDED, now)

    def on_tx_end(self, now: int) -> Message:
        msg = self.queue.popleft()
        self.fallback = False
        self.union = self._bd
        self._set(AccessState.IDLE, now)
        if self.queue:
            self._begin_access(now)
        else:
            self.view.activity(-1)
        return msg

    # -- transitions --------------------------------------------------------------

    def _begin_access(self, now: int) -> None:
        msg = self.queue[0]
        msg.access_start = now
        self.access_start = now
        self.fallback = False
        self.union = self._bd
        self.counter = draw_backoff(self.cw, self.rng)
        msg.backoff = self.counter
        if self.sensed_busy():
            self._set(AccessState.SUSPENDED, now)
        else:
            self._resume(now)

    def _resume(self, now: int) -> None:
        v = self.view
        t = self.t
        if self.union:
            idle_since = max(v.since[v.primary], v.since[v.secondary])
            tau = t.eifs if v.union_needs_eifs() else t.aifs
        else:
            idle_since = v.since[v.primary]
            tau = t.aifs if v.primary_decoded() else t.eifs
        b0 = max(idle_since + tau, self.access_start + t.aifs)
        assert b0 > now, "resume boundary must lie in the future"
        self.b0 = b0
        self.tx_time = b0 + self.counter * t.slot
        self._event = self.engine.schedule(self.tx_time, self._fire, kind=EventKind.BACKOFF_SLOT_BOUNDARY,
                                           target=self.name)
        self._set(AccessState.FALLBACK_COUNTDOWN if self.fallback else AccessState.DEFER, now)

    def _suspend(self, now: int) -> None:
        self.engine.cancel(self._event)
        self._event = None
        if now >= self.b0:
            dec = (now - self.b0) // self.t.slot + 1
            assert dec <= self.counter, "backoff counter would go negative"
            self.counter -= dec
        self._set(AccessState.SUSPENDED, now)

    def width_at_zero(self, now: int) -> tuple[int, ...]:
        v = self.view
        p, s = v.primary, v.secondary
        m = self.method
        if m is Method.EDCA:
            return (p,)
        if m is Method.BOND_N:
            if not v.busy[s] and now - v.since[s] >= self.t.pifs:
                return (0, 1)
            return (p,)
        if m is Method.BOND_BD_FALLBACK and self.fallback:
            return (p,)
        return (0, 1)

    def _fire(self) -> None:
        now = self.engine.now
        self._event = None
        self.counter = 0
        channels = self.width_at_zero(now)
        self._set(AccessState.TX, now)
        self.queue[0].send_time = now
        self.view.request_tx(self, channels, now)


class RadioStation:
    """Channel view of one station on the shared medium, hosting its automata."""

    __slots__ = ("index", "primary", "secondary", "busy", "since", "medium", "automata", "mcs")

    def __init__(self, index: int, primary: int, medium: Medium, mcs: McsConfig = McsConfig()):
        self.index = index
        self.primary = primary
        self.secondary = 1 - primary
        # live column views into the medium's state arrays
        self.busy = medium.busy[:, index]
        self.since = medium.since[:, index]
        self.medium = medium
        self.automata: list[AccessAutomaton] = []
        self.mcs = mcs

    def primary_decoded(self) -> bool:
        return bool(self.medium.ok_ch[self.primary, self.index])

    def union_needs_eifs(self) -> bool:
        m = self.medium
        return bool(m.sec_involved[self.index]) and not bool(m.ok_union[self.index])

    def activity(self, delta: int) -> None:
        self.medium.listening[self.index] += delta

    def on_edges(self, flags: int, now: int) -> None:
        changed = (bool(flags & 1), bool(flags & 2))
        for a in self.automata:
            a.on_edges(changed, now)

    def request_tx(self, automaton: AccessAutomaton, channels: tuple[int, ...], now: int) -> None:
        msg = automaton.queue[0]
        width = 10 * len(channels)
        dur = frame_duration(msg.size, width, self.mcs)
        frame = FrameTransmission(self.index, channels, dur, msg.size, msg.msg_type, msg.msg_id,
                                  message=msg, source=automaton)
        self.medium.request_start(frame)


def arbitrate(frames: list[FrameTransmission], now: int) -> list[FrameTransmission]:
    """One frame per radio: the higher-priority automaton wins, the loser redraws."""
    by_sender: dict[int, FrameTransmission] = {}
    losers = []
    for f in frames:
        other = by_sender.get(f.sender)
        if other is None:
            by_sender[f.sender] = f
        elif f.source.priority > other.source.priority:
            by_sender[f.sender] = f
            losers.append(other)
        else:
            losers.append(f)
    for f in losers:
        f.source.on_tx_denied(now)
    return [f for f in frames if by_sender[f.sender] is f]
