"""Scripted two-channel medium for driving one access automaton, plus a
microsecond-stepped reference automaton used as an oracle.

A script is a list of ``Burst(channel, start, end, decoded)``: the channel is
busy on ``[start, end)`` and, when the burst ends, the station either did or
did not decode it. Bursts on one channel never overlap. The station's own
transmissions last ``DUR[width]`` and count as decoded.

Same-microsecond ordering mirrors the simulator's medium: backoff expiries
first, then frame ends (own frame first), then frame starts, then busy/idle
edges are delivered.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from bondsim.engine import Engine
from bondsim.mac import AccessAutomaton, MacTimings, Message, Method

DUR = {10: 200, 20: 120}
T = MacTimings()


@dataclass(frozen=True)
class Burst:
    channel: int
    start: int
    end: int
    decoded: bool = True


class ScriptedRng:
    def __init__(self, draws):
        self.draws = list(draws)

    def integer(self, low, high):
        v = self.draws.pop(0)
        assert low <= v <= high
        return v


class ScriptedView:
    """Channel view for the automaton under test, driven by a burst script."""

    def __init__(self, engine: Engine, primary: int, script: list[Burst], durations: dict = DUR):
        self.engine = engine
        self.durations = durations
        self.primary = primary
        self.secondary = 1 - primary
        self.busy = [False, False]
        self.since = [0, 0]
        self.ok = [True, True]
        self.ok_union = True
        self.sec_involved = False
        self.active: set = set()
        self.automaton: AccessAutomaton | None = None
        self.tx_log: list[tuple[int, int]] = []  # (start, width)
        self._pending_end = []
        self._pending_start = []
        self._armed = False
        for b in script:
            engine.schedule(b.start, self._queue, "_pending_start", b)
            engine.schedule(b.end, self._queue, "_pending_end", b)

    def _queue(self, bucket: str, item):
        getattr(self, bucket).append(item)
        if not self._armed:
            self._armed = True
            self.engine.schedule(self.engine.now, self._flush)

    # ChannelView protocol
    def primary_decoded(self) -> bool:
        return self.ok[self.primary]

    def union_needs_eifs(self) -> bool:
        return self.sec_involved and not self.ok_union

    def activity(self, delta: int) -> None:
        pass

    def request_tx(self, automaton, channels, now):
        own = ("own", tuple(channels), now + self.durations[10 * len(channels)])
        self.tx_log.append((now, 10 * len(channels)))
        self._queue("_pending_start", own)
        self.engine.schedule(own[2], self._queue, "_pending_end", own)

    def _channels(self, item):
        return item[1] if isinstance(item, tuple) else (item.channel,)

    def _flush(self):
        self._armed = False
        now = self.engine.now
        ends = sorted(self._pending_end, key=lambda x: (not isinstance(x, tuple), self._channels(x)))
        starts, self._pending_start, self._pending_end = self._pending_start, [], []
        for item in ends:
            self.active.discard(item)
            ok = True if isinstance(item, tuple) else item.decoded
            for c in self._channels(item):
                self.ok[c] = ok
            self.ok_union = ok
            if isinstance(item, tuple):
                self.automaton.on_tx_end(now)
        for item in starts:
            self.active.add(item)
        union_before = self.busy[0] or self.busy[1]
        changed = [False, False]
        for c in (0, 1):
            b = any(c in self._channels(i) for i in self.active)
            if b != self.busy[c]:
                self.busy[c] = b
                self.since[c] = now
                changed[c] = True
                if b:
                    self.ok[c] = False
        if any(changed) and (self.busy[0] or self.busy[1]) and not union_before:
            self.ok_union = False
            self.sec_involved = False
        if self.busy[self.secondary]:
            self.sec_involved = True
        if any(changed):
            self.automaton.on_edges(tuple(changed), now)


def run_automaton(method: Method, primary: int, script: list[Burst], arrivals: list[int], draws: list[int],
                  cw: int = 15, until: int = 20_000, durations: dict = DUR) -> list[tuple[int, int]]:
    eng = Engine()
    view = ScriptedView(eng, primary, script, durations)
    a = AccessAutomaton(method, view, eng, ScriptedRng(draws), cw, T)
    view.automaton = a
    for i, t in enumerate(arrivals):
        eng.schedule(t, lambda i=i: a.enqueue(Message(i, None, 0, 100, eng.now), eng.now))
    eng.run_until(until)
    return view.tx_log


# -- reference ------------------------------------------------------------------


def reference(method: Method, primary: int, script: list[Burst], arrivals: list[int], draws: list[int],
              until: int = 20_000, durations: dict = DUR) -> list[tuple[int, int]]:
    """Microsecond-by-microsecond reimplementation of the access rules.

    Each microsecond ``t`` is processed as: slot boundary (transmit when the
    counter is already zero, else decrement); arrivals; frame ends; busy state
    and episode flags; automaton reaction to the edges. Boundaries lie on the
    grid ``b0 + j*slot`` where ``b0`` is fixed when the sensed medium turns
    idle, or when access starts on an idle medium.
    """
    p, s = primary, 1 - primary
    draws = list(draws)
    arrivals = sorted(arrivals)
    bd = method in (Method.BOND_BD, Method.BOND_BD_FALLBACK)
    hist = ([], [])  # busy after the edges of each microsecond
    own = []  # (channels, start, end)
    ok = [True, True]
    ok_union = True
    sec_involved = False
    log = []
    scripted = ([False] * until, [False] * until)
    for b in script:
        for t in range(b.start, min(b.end, until)):
            scripted[b.channel][t] = True
    ends_at = {}
    for b in sorted(script, key=lambda b: b.channel):
        ends_at.setdefault(b.end, []).append(b)

    backlog = 0
    active = False  # a frame is at the head of the queue
    in_tx = None  # end time of the own frame on air
    k = access = b0 = 0
    resumed = False
    union = bd
    fallback = False

    def was_busy(c, t):
        return t >= 0 and hist[c][t]

    def run_start(c, t):
        """Start of the idle run that contains microsecond ``t``."""
        u = t
        while u > 0 and not hist[c][u - 1]:
            u -= 1
        return max(u, 0)

    def resume(t, last):
        nonlocal resumed, b0
        if union:
            start = max(run_start(p, last), run_start(s, last))
            tau = T.eifs if (sec_involved and not ok_union) else T.aifs
        else:
            start = run_start(p, last)
            tau = T.aifs if ok[p] else T.eifs
        b0 = max(start + tau, access + T.aifs)
        resumed = True

    def begin(t):
        nonlocal active, k, access, resumed, union, fallback
        active = True
        access = t
        union = bd
        fallback = False
        k = draws.pop(0)
        resumed = False
        if not (was_busy(p, t - 1) or (union and was_busy(s, t - 1))):
            resume(t, t - 1)

    for t in range(until):
        # slot boundary
        if active and resumed and in_tx is None and t >= b0 and (t - b0) % T.slot == 0:
            if k == 0:
                if method is Method.EDCA or (method is Method.BOND_BD_FALLBACK and fallback):
                    ch = (p,)
                elif method is Method.BOND_N:
                    idle_for = 0 if was_busy(s, t - 1) else t - (run_start(s, t - 1) if t > 0 else 0)
                    ch = (0, 1) if idle_for >= T.pifs else (p,)
                else:
                    ch = (0, 1)
                in_tx = t + durations[10 * len(ch)]
                own.append((ch, t, in_tx))
                log.append((t, 10 * len(ch)))
                resumed = False
            else:
                k -= 1
        # arrivals
        while arrivals and arrivals[0] == t:
            arrivals.pop(0)
            backlog += 1
            if not active:
                begin(t)
        # frame ends; the own frame first
        if in_tx == t:
            for c in own[-1][0]:
                ok[c] = True
            ok_union = True
            in_tx = None
            backlog -= 1
            active = False
            if backlog:
                begin(t)  # own channels still read busy here, so this never resumes
        for b in ends_at.get(t, ()):
            ok[b.channel] = b.decoded
            ok_union = b.decoded
        # busy state after this microsecond's starts and ends
        before = (was_busy(0, t - 1), was_busy(1, t - 1))
        for c in (0, 1):
            hist[c].append(scripted[c][t] or bool(own and c in own[-1][0] and own[-1][1] <= t < own[-1][2]))
        after = (hist[0][t], hist[1][t])
        changed = (before[0] != after[0], before[1] != after[1])
        for c in (0, 1):
            if changed[c] and after[c]:
                ok[c] = False
        if any(changed) and (after[0] or after[1]) and not (before[0] or before[1]):
            ok_union = False
            sec_involved = False
        if after[s]:
            sec_involved = True
        # automaton reaction
        if active and in_tx is None and any(changed):
            if union and method is Method.BOND_BD_FALLBACK and changed[s] and after[s] \
                    and not after[p] and resumed:
                fallback = True
                union = False
            elif changed[p] or union:
                now_busy = after[p] or (union and after[s])
                if now_busy and resumed:
                    resumed = False
                elif not now_busy and not resumed:
                    resume(t, t)
    return log


def random_case(rng: random.Random, max_t: int = 2000, max_msgs: int = 3, cw: int = 15):
    """A random burst script (no simultaneous burst ends), arrivals and backoff draws."""
    script = []
    ends = set()
    for c in (0, 1):
        t = rng.randint(0, 300)
        while t < max_t:
            d = rng.randint(5, 400)
            end = t + d
            if end in ends:
                end += 1
            if end > max_t:
                break
            ends.add(end)
            script.append(Burst(c, t, end, rng.random() < 0.6))
            t = end + rng.randint(1, 350)
    arrivals = sorted(rng.randint(0, 1500) for _ in range(rng.randint(1, max_msgs)))
    draws = [rng.randint(0, cw) for _ in range(3 * len(arrivals) + 3)]
    return script, arrivals, draws
