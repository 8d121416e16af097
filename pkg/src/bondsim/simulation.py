"""One simulation run: topology, medium, automata, traffic and the metric ledger."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .engine import US_PER_MS, Engine, EventKind, RngStream, seconds
from .mac import AccessAutomaton, AccessState, MacTimings, Message, Method, RadioStation, arbitrate, validate_cw
from .metrics import MetricLedger, SatisfactionThresholds, TxRecord
from .phy import FrameTransmission, McsConfig, Medium, PathLossParams, RadioConfig, distance_matrix
from .scenario import (Case, Flow, HighwayConfig, MessageType, StationKind, Topology, TrafficProfile,
                       build_topology, generate_messages)

TOPOLOGY_STREAM = 0


@dataclass(frozen=True)
class SimConfig:
    method: Method = Method.BOND_N
    case: Case = Case.SYMMETRIC
    cw: int = 15
    n_vehicles: int = 100
    seed: int = 1
    duration_s: float = 60.0
    warmup_s: float = 2.0
    mobility_step_ms: int = 100
    research_cw: bool = False
    radio: RadioConfig = field(default_factory=RadioConfig)
    pathloss: PathLossParams = field(default_factory=PathLossParams)
    mcs: McsConfig = field(default_factory=McsConfig)
    timings: MacTimings = field(default_factory=MacTimings)
    highway: HighwayConfig = field(default_factory=HighwayConfig)
    traffic: TrafficProfile = field(default_factory=TrafficProfile)
    thresholds: SatisfactionThresholds = field(default_factory=SatisfactionThresholds)

    def __post_init__(self):
        validate_cw(self.cw, self.research_cw)
        if self.duration_s <= 0 or self.warmup_s < 0 or self.warmup_s >= self.duration_s:
            raise ValueError("need 0 <= warmup < duration")
        if self.mobility_step_ms <= 0:
            raise ValueError("mobility step must be positive")


@dataclass
class RunResult:
    config: SimConfig
    ledger: MetricLedger
    stations: list
    trace: list | None
    events: int
    wall_s: float
    generated: int
    sent: int


class Simulation:
    def __init__(self, cfg: SimConfig, trace: bool = False):
        self.cfg = cfg
        self.engine = Engine()
        self.end_us = seconds(cfg.duration_s)
        self.warmup_us = seconds(cfg.warmup_s)
        stations = build_topology(cfg.n_vehicles, cfg.highway, cfg.case, RngStream(cfg.seed, TOPOLOGY_STREAM))
        self.topology = topo = Topology(stations, cfg.highway)
        n = topo.n
        self.ledger = MetricLedger(n)
        self.trace: list | None = [] if trace else None
        self.medium = Medium(self.engine, topo.positions(), topo.primary, cfg.radio, cfg.pathloss,
                             wide_capable=topo.is_vehicle,
                             on_frame_start=self._on_frame_start, on_frame_end=self._on_frame_end,
                             arbiter=arbitrate)
        self.radios = [RadioStation(i, int(topo.primary[i]), self.medium, cfg.mcs) for i in range(n)]
        self.medium.edge_sinks = self.radios
        self._refresh_geometry()

        tracer = self._trace if trace else None
        self.queues: list[dict[str, AccessAutomaton]] = []
        self.flows: list[Flow] = []
        self._msg_id = 0
        self.generated = 0
        self.sent = 0
        for st, radio in zip(stations, self.radios):
            rng = RngStream(cfg.seed, st.id + 1)
            qs = {"edca": AccessAutomaton(Method.EDCA, radio, self.engine, rng, cfg.cw, cfg.timings,
                                          priority=0, name=f"{st.id}/edca", tracer=tracer)}
            if st.kind is StationKind.VEHICLE:
                qs["bond"] = AccessAutomaton(cfg.method, radio, self.engine, rng, cfg.cw, cfg.timings,
                                             priority=1, name=f"{st.id}/bond", tracer=tracer)
            radio.automata = list(qs.values())
            self.queues.append(qs)
            for flow in generate_messages(st, cfg.traffic, cfg.case, rng):
                self.flows.append(flow)
                if flow.phase_us < self.end_us:
                    self.engine.schedule(flow.phase_us, self._generate, flow,
                                         kind=EventKind.MESSAGE_GENERATION, target=st.id)
        step = cfg.mobility_step_ms * US_PER_MS
        if cfg.n_vehicles and step < self.end_us:
            self.engine.schedule(step, self._mobility, step, kind=EventKind.MOBILITY_STEP, target="topology")

    # -- geometry -----------------------------------------------------------------

    def _refresh_geometry(self) -> None:
        topo = self.topology
        dist = distance_matrix(topo.positions())
        self.dist = dist
        n = topo.n
        not_self = ~np.eye(n, dtype=bool)
        in_range = (dist <= self.cfg.highway.satisfaction_range) & topo.same_side & not_self
        vehicles = topo.is_vehicle[None, :]
        self.intended_mask = {
            MessageType.BSM: in_range,
            MessageType.CPM: in_range & vehicles,
            MessageType.SPAT_MAP: in_range & vehicles,
            MessageType.WSA: in_range & vehicles,
        }
        self.cpm_neighbors = ((dist <= self.cfg.highway.sensor_range) & not_self
                              & vehicles).sum(axis=1)

    def _mobility(self, step: int) -> None:
        self.topology.advance(step)
        self.medium.update_positions(self.topology.positions())
        self._refresh_geometry()
        nxt = self.engine.now + step
        if nxt < self.end_us:
            self.engine.schedule(nxt, self._mobility, step, kind=EventKind.MOBILITY_STEP, target="topology")

    # -- traffic ---------------------------------------------------------------------

    def _generate(self, flow: Flow) -> None:
        now = self.engine.now
        if flow.msg_type is MessageType.CPM:
            tr = self.cfg.traffic
            size = tr.cpm_base + tr.cpm_per_neighbor * int(self.cpm_neighbors[flow.station])
        else:
            size = flow.next_size()
        msg = Message(self._msg_id, flow.msg_type, flow.station, size, now)
        self._msg_id += 1
        self.generated += 1
        self.queues[flow.station][flow.queue].enqueue(msg, now)
        nxt = now + flow.period_us
        if nxt < self.end_us:
            self.engine.schedule(nxt, self._generate, flow, kind=EventKind.MESSAGE_GENERATION,
                                 target=flow.station)

    # -- medium callbacks -----------------------------------------------------------

    def _on_frame_start(self, frame: FrameTransmission, now: int) -> None:
        msg: Message = frame.message
        msg.airtime = frame.duration
        msg.width_mhz = frame.width_mhz
        self.sent += 1
        if msg.enqueue_time >= self.warmup_us:
            frame.intended = np.flatnonzero(self.intended_mask[msg.msg_type][frame.sender])

    def _on_frame_end(self, frame: FrameTransmission, now: int) -> None:
        frame.source.on_tx_end(now)
        if frame.intended is None:
            return
        msg: Message = frame.message
        intended = frame.intended
        self.ledger.add(TxRecord(msg.msg_id, msg.msg_type, msg.sender, msg.enqueue_time, msg.access_start,
                                 msg.send_time, msg.airtime, msg.width_mhz, intended,
                                 intended[frame.success[intended]]))

    def _trace(self, now: int, a: AccessAutomaton, old: AccessState, new: AccessState) -> None:
        self.trace.append((now, a.name, old.value, new.value, a.counter))

    # -- run ---------------------------------------------------------------------------

    def run(self) -> RunResult:
        t0 = time.perf_counter()
        events = self.engine.run_until(self.end_us)
        self.topology.sync()
        return RunResult(self.cfg, self.ledger, self.topology.stations, self.trace, events,
                         time.perf_counter() - t0, self.generated, self.sent)


def simulate(cfg: SimConfig, trace: bool = False) -> RunResult:
    return Simulation(cfg, trace=trace).run()
