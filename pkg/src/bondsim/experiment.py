"""Sweep orchestration, per-run CSV rows and plot-ready aggregation."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import statistics
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .mac import STANDARD_CW, MacTimings, Method, validate_cw
from .metrics import SERVICES, SatisfactionThresholds, max_unsatisfied_ratio, percentile_ms, unsatisfied_ratio
from .phy import McsConfig, PathLossParams, RadioConfig
from .scenario import Case, HighwayConfig, MessageType, TrafficProfile
from .simulation import RunResult, SimConfig, simulate

WORKERS_ENV = "BONDSIM_WORKERS"

_SECTIONS = {
    "radio": RadioConfig,
    "pathloss": PathLossParams,
    "mcs": McsConfig,
    "timings": MacTimings,
    "highway": HighwayConfig,
    "traffic": TrafficProfile,
    "thresholds": SatisfactionThresholds,
}


def _as_tuple(v, conv):
    if isinstance(v, (list, tuple)):
        return tuple(conv(x) for x in v)
    return (conv(v),)


@dataclass(frozen=True)
class ExperimentConfig:
    """A cartesian sweep over cases, methods, contention windows, vehicle counts and seeds."""

    methods: tuple[Method, ...] = tuple(Method)
    cws: tuple[int, ...] = (15,)
    vehicles: tuple[int, ...] = (100,)
    cases: tuple[Case, ...] = (Case.SYMMETRIC,)
    duration_s: float = 60.0
    seeds: int = 10
    base_seed: int = 1
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
        if self.seeds < 1:
            raise ValueError("need at least one replication")
        if not (self.methods and self.cws and self.vehicles and self.cases):
            raise ValueError("every sweep axis needs at least one value")
        for cw in self.cws:
            validate_cw(cw, self.research_cw)
        for n in self.vehicles:
            if n < 0 or n % 2:
                raise ValueError(f"vehicle count {n} must be even and non-negative")

    def points(self) -> list[SimConfig]:
        """Every run in sweep order: case, method, cw, vehicle count, seed."""
        shared = {f.name: getattr(self, f.name) for f in dataclasses.fields(SimConfig)
                  if f.name in {"duration_s", "warmup_s", "mobility_step_ms", "research_cw", *_SECTIONS}}
        out = []
        for case in self.cases:
            for m in self.methods:
                for cw in self.cws:
                    for n in self.vehicles:
                        for k in range(self.seeds):
                            out.append(SimConfig(method=m, case=case, cw=cw, n_vehicles=n,
                                                 seed=self.base_seed + k, **shared))
        return out

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "methods": [m.value for m in self.methods],
            "cws": list(self.cws),
            "vehicles": list(self.vehicles),
            "cases": [c.value for c in self.cases],
            "duration_s": self.duration_s,
            "seeds": self.seeds,
            "base_seed": self.base_seed,
            "warmup_s": self.warmup_s,
            "mobility_step_ms": self.mobility_step_ms,
            "research_cw": self.research_cw,
        }
        for name in _SECTIONS:
            d[name] = {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in dataclasses.asdict(getattr(self, name)).items()}
        return d

    @classmethod
    def from_dict(cls, d: dict, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        """Overlay ``d`` on ``base`` (defaults if omitted). Unknown keys are rejected."""
        base = base or cls()
        kw: dict[str, Any] = {}
        for key, value in d.items():
            if key in _SECTIONS:
                if not isinstance(value, dict):
                    raise ValueError(f"section {key!r} must be a mapping")
                sub = getattr(base, key)
                names = {f.name for f in dataclasses.fields(sub)}
                bad = set(value) - names
                if bad:
                    raise ValueError(f"unknown {key} parameters: {sorted(bad)}")
                value = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
                kw[key] = dataclasses.replace(sub, **value)
            elif key == "methods":
                kw[key] = _as_tuple(value, Method.parse)
            elif key == "cases":
                kw[key] = _as_tuple(value, Case.parse)
            elif key in ("cws", "vehicles"):
                kw[key] = _as_tuple(value, int)
            elif key in ("duration_s", "warmup_s"):
                kw[key] = float(value)
            elif key in ("seeds", "base_seed", "mobility_step_ms"):
                kw[key] = int(value)
            elif key == "research_cw":
                kw[key] = bool(value)
            else:
                raise ValueError(f"unknown configuration key {key!r}")
        return dataclasses.replace(base, **kw)

    @classmethod
    def load(cls, path: str | os.PathLike, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), base)


# -- result rows ----------------------------------------------------------------

_TYPES = tuple(MessageType)

RESULT_COLUMNS: tuple[str, ...] = (
    "method", "case", "cw", "n_vehicles", "seed", "duration_s", "warmup_s", "R_s",
    "max_unsatisfied_ratio",
    *(f"unsat_{m.value}" for m in SERVICES),
    *(f"plr_{m.value}" for m in _TYPES),
    *(f"delay_p50_ms_{m.value}" for m in _TYPES),
    *(f"delay_p95_ms_{m.value}" for m in _TYPES),
    *(f"sent_{m.value}" for m in _TYPES),
    *(f"received_{m.value}" for m in _TYPES),
    *(f"intended_{m.value}" for m in _TYPES),
    "tx_power_dbm", "ed_threshold_dbm", "pd_threshold_dbm", "noise_floor_dbm", "decode_snr_db",
    "wide_split_db", "gamma", "pl0_db", "l0_m", "slot_us", "sifs_us", "aifs_us", "pifs_us", "eifs_us",
    "cpm_rate_hz", "delay_percentile", "plr_threshold", "td_bsm_ms", "td_cpm_ms", "td_spat_map_ms",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return f"{v:.6f}"
    return str(v)


def result_row(res: RunResult) -> dict[str, str]:
    """Flatten one run into the fixed CSV schema."""
    cfg = res.config
    L = res.ledger
    th = cfg.thresholds
    row: dict[str, Any] = {
        "method": cfg.method.value,
        "case": cfg.case.value,
        "cw": cfg.cw,
        "n_vehicles": cfg.n_vehicles,
        "seed": cfg.seed,
        "duration_s": float(cfg.duration_s),
        "warmup_s": float(cfg.warmup_s),
        "R_s": float(cfg.highway.satisfaction_range),
        "max_unsatisfied_ratio": float(max_unsatisfied_ratio(L, th)),
    }
    for m in SERVICES:
        row[f"unsat_{m.value}"] = unsatisfied_ratio(m, L, th)
    for m in _TYPES:
        d = L.type_delays(m)
        row[f"plr_{m.value}"] = L.plr(m)
        row[f"delay_p50_ms_{m.value}"] = percentile_ms(d, 50)
        row[f"delay_p95_ms_{m.value}"] = percentile_ms(d, 95)
        row[f"sent_{m.value}"] = L.sent(m)
        row[f"received_{m.value}"] = int(L.sum_s[m])
        row[f"intended_{m.value}"] = int(L.sum_f[m])
    r, p, t = cfg.radio, cfg.pathloss, cfg.timings
    row.update({
        "tx_power_dbm": float(r.tx_power), "ed_threshold_dbm": float(r.ed_threshold),
        "pd_threshold_dbm": float(r.pd_threshold), "noise_floor_dbm": float(r.noise_floor),
        "decode_snr_db": float(r.decode_snr), "wide_split_db": float(r.wide_split_db),
        "gamma": float(p.gamma), "pl0_db": float(p.pl0), "l0_m": float(p.l0),
        "slot_us": t.slot, "sifs_us": t.sifs, "aifs_us": t.aifs, "pifs_us": t.pifs, "eifs_us": t.eifs,
        "cpm_rate_hz": float(cfg.traffic.cpm_rate), "delay_percentile": float(th.delay_percentile),
        "plr_threshold": float(th.plr), "td_bsm_ms": float(th.bsm_delay_ms),
        "td_cpm_ms": float(th.cpm_delay_ms), "td_spat_map_ms": float(th.spat_map_delay_ms),
    })
    return {k: _fmt(row[k]) for k in RESULT_COLUMNS}


MESSAGE_COLUMNS = ("method", "case", "cw", "n_vehicles", "seed", "msg_id", "type", "sender", "enqueue_us",
                   "access_us", "send_us", "airtime_us", "width_mhz", "queue_wait_us", "backoff_us",
                   "delay_us", "F", "S")
TRACE_COLUMNS = ("method", "case", "cw", "n_vehicles", "seed", "time_us", "automaton", "from", "to",
                 "counter")


def _key(cfg: SimConfig) -> list:
    return [cfg.method.value, cfg.case.value, cfg.cw, cfg.n_vehicles, cfg.seed]


def message_rows(res: RunResult) -> list[list]:
    k = _key(res.config)
    out = []
    for rec in res.ledger.records:
        out.append(k + [rec.msg_id, rec.msg_type.value, rec.sender, rec.enqueue_time, rec.access_start,
                        rec.send_time, rec.airtime, rec.width_mhz, rec.queue_wait, rec.backoff_duration,
                        rec.send_time - rec.enqueue_time + rec.airtime, rec.F, rec.S])
    return out


def trace_rows(res: RunResult) -> list[list]:
    k = _key(res.config)
    return [k + list(t) for t in (res.trace or [])]


@dataclass
class _Job:
    cfg: SimConfig
    trace: bool
    log_messages: bool


def _run_one(job: _Job) -> tuple[dict, list, list]:
    res = simulate(job.cfg, trace=job.trace)
    return (result_row(res),
            message_rows(res) if job.log_messages else [],
            trace_rows(res) if job.trace else [])


def worker_count(default: int | None = None) -> int:
    v = os.environ.get(WORKERS_ENV)
    if v:
        n = int(v)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be a positive integer")
        return n
    return default or 1


def _atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def rows_to_csv(rows: Sequence[dict]) -> str:
    return _csv_text(RESULT_COLUMNS, ([r[c] for c in RESULT_COLUMNS] for r in rows))


def run(cfg: ExperimentConfig, out: str | os.PathLike | None = None, *, workers: int | None = None,
        trace_out: str | os.PathLike | None = None, messages_out: str | os.PathLike | None = None,
        progress=None) -> list[dict]:
    """Execute every sweep point and return rows in sweep order.

    Output files are written only after all runs succeed (temp file plus rename).
    """
    jobs = [_Job(p, trace_out is not None, messages_out is not None) for p in cfg.points()]
    n_workers = min(workers or worker_count(), len(jobs))
    results: list[tuple[dict, list, list]] = []
    if n_workers <= 1:
        for j in jobs:
            results.append(_run_one(j))
            if progress:
                progress(len(results), len(jobs))
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for r in pool.map(_run_one, jobs):
                results.append(r)
                if progress:
                    progress(len(results), len(jobs))
    rows = [r[0] for r in results]
    if out is not None:
        _atomic_write(out, rows_to_csv(rows))
    if messages_out is not None:
        _atomic_write(messages_out, _csv_text(MESSAGE_COLUMNS, (m for r in results for m in r[1])))
    if trace_out is not None:
        _atomic_write(trace_out, _csv_text(TRACE_COLUMNS, (t for r in results for t in r[2])))
    return rows


def read_rows(path: str | os.PathLike) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise ValueError(f"{path}: header does not match the result schema")
        return list(reader)


# -- plot data --------------------------------------------------------------------

FIGURES = ("fig2", "fig3", "fig4", "fig5")
PLOT_COLUMNS = ("figure", "case", "method", "cw", "x", "mean", "std", "n_seeds")


class CoverageError(ValueError):
    """The rows do not contain every point a figure needs."""

    def __init__(self, figure: str, missing: list[tuple]):
        self.figure = figure
        self.missing = missing
        shown = ", ".join(str(m) for m in missing[:20])
        more = f" (+{len(missing) - 20} more)" if len(missing) > 20 else ""
        super().__init__(f"{figure}: missing sweep points (case, method, cw, n_vehicles): {shown}{more}")


def _group(rows: Iterable[dict]) -> dict[tuple, list[float]]:
    g: dict[tuple, list[float]] = {}
    for r in rows:
        k = (r["case"], r["method"], int(r["cw"]), int(r["n_vehicles"]))
        g.setdefault(k, []).append(float(r["max_unsatisfied_ratio"]))
    return g


def _stats(v: list[float]) -> tuple[float, float]:
    mean = statistics.fmean(v)
    std = statistics.stdev(v) if len(v) > 1 else 0.0
    return mean, std


def emit_plotdata(rows: Sequence[dict], figure: str) -> list[dict]:
    """Mean and sample standard deviation over seeds, laid out like the target figure.

    fig2/fig4: x = vehicle count at CW 15, one series per method (symmetric/asymmetric).
    fig3: x = CW at 100 vehicles, symmetric, one series per method, every standard CW.
    fig5: x = vehicle count for BOND_N, one series per (case, CW); both cases and CW 511 required.
    """
    if figure not in FIGURES:
        raise ValueError(f"unknown figure {figure!r}; expected one of {FIGURES}")
    g = _group(rows)
    methods = [m.value for m in Method]
    need: list[tuple] = []
    if figure in ("fig2", "fig4"):
        case = "symmetric" if figure == "fig2" else "asymmetric"
        ns = sorted({k[3] for k in g if k[0] == case and k[2] == 15}) or [100]
        need = [(case, m, 15, n) for m in methods for n in ns]
    elif figure == "fig3":
        need = [("symmetric", m, cw, 100) for m in methods for cw in STANDARD_CW]
    else:
        cws = sorted({k[2] for k in g if k[1] == "bond_n"} | {15, 511})
        ns = sorted({k[3] for k in g if k[1] == "bond_n"}) or [100]
        need = [(c, "bond_n", cw, n) for c in ("symmetric", "asymmetric") for cw in cws for n in ns]
    missing = [k for k in need if k not in g]
    if missing:
        raise CoverageError(figure, missing)
    out = []
    for k in need:
        mean, std = _stats(g[k])
        x = k[2] if figure == "fig3" else k[3]
        out.append({"figure": figure, "case": k[0], "method": k[1], "cw": k[2], "x": x,
                    "mean": f"{mean:.6f}", "std": f"{std:.6f}", "n_seeds": len(g[k])})
    return out


def plotdata_csv(table: Sequence[dict]) -> str:
    return _csv_text(PLOT_COLUMNS, ([r[c] for c in PLOT_COLUMNS] for r in table))
