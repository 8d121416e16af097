import csv
import json

import pytest

from bondsim.cli import main
from bondsim.experiment import (MESSAGE_COLUMNS, PLOT_COLUMNS, RESULT_COLUMNS, TRACE_COLUMNS, CoverageError,
                                ExperimentConfig, emit_plotdata, read_rows)
from bondsim.mac import Method
from bondsim.scenario import TOPOLOGY_COLUMNS, Case

TINY = ["--duration", "0.4", "--warmup", "0.1", "--quiet"]


def _csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_writes_result_rows(tmp_path):
    out = tmp_path / "r.csv"
    rc = main(["run", "--method", "edca,bond_n", "--cw", "15", "--vehicles", "4", "--seeds", "2",
               "--out", str(out), *TINY])
    assert rc == 0
    rows = read_rows(out)
    assert len(rows) == 4
    assert [(r["method"], r["seed"]) for r in rows] == [("edca", "1"), ("edca", "2"), ("bond_n", "1"), ("bond_n", "2")]
    for r in rows:
        assert 0.0 <= float(r["max_unsatisfied_ratio"]) <= 1.0


def test_run_to_stdout(capsys):
    assert main(["run", "--method", "bond_bd", "--vehicles", "2", "--seeds", "1", *TINY]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split(",") == list(RESULT_COLUMNS) and len(lines) == 2


def test_nonstandard_cw_rejected(capsys):
    assert main(["run", "--cw", "14", "--vehicles", "2", "--seeds", "1", *TINY]) == 2
    assert "CW=14" in capsys.readouterr().err
    assert main(["run", "--cw", "14", "--research-cw", "--method", "edca", "--vehicles", "2", "--seeds", "1",
                 *TINY]) == 0


def test_odd_vehicle_count_rejected():
    assert main(["run", "--vehicles", "3", *TINY]) == 2


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"methods": ["edca"], "cws": [31, 63], "seeds": 3,
                               "radio": {"tx_power": 20.0}, "traffic": {"enabled": ["bsm"]}}))
    assert main(["run", "--config", str(cfg), "--cw", "127", "--show-config"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["methods"] == ["edca"] and d["cws"] == [127] and d["seeds"] == 3
    assert d["radio"]["tx_power"] == 20.0 and d["traffic"]["enabled"] == ["bsm"]
    assert ExperimentConfig.from_dict(d).cws == (127,)


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"radio": {"power": 3}}))
    assert main(["run", "--config", str(cfg), "--show-config"]) == 2
    cfg.write_text(json.dumps({"colour": 1}))
    with pytest.raises(ValueError):
        ExperimentConfig.load(cfg)


def test_config_roundtrip():
    c = ExperimentConfig(methods=(Method.BOND_N,), cws=(15, 511), vehicles=(20, 40), cases=tuple(Case), seeds=4)
    assert ExperimentConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


def test_trace_and_message_logs(tmp_path):
    tr, ms = tmp_path / "t.csv", tmp_path / "m.csv"
    assert main(["run", "--method", "bond_bd_fallback", "--vehicles", "6", "--seeds", "1", "--out",
                 str(tmp_path / "r.csv"), "--trace", str(tr), "--log-messages", str(ms), *TINY]) == 0
    t, m = _csv(tr), _csv(ms)
    assert tuple(t[0]) == TRACE_COLUMNS and len(t) > 1
    assert tuple(m[0]) == MESSAGE_COLUMNS and len(m) > 1
    times = [int(r[TRACE_COLUMNS.index("time_us")]) for r in t[1:]]
    assert times == sorted(times)
    states = {r[TRACE_COLUMNS.index("to")] for r in t[1:]}
    assert {"tx", "idle"} <= states


def test_dump_topology(tmp_path):
    out = tmp_path / "topo.csv"
    assert main(["dump-topology", "--vehicles", "10", "--case", "asymmetric", "--seed", "3", "--out", str(out)]) == 0
    rows = _csv(out)
    assert tuple(rows[0]) == TOPOLOGY_COLUMNS and len(rows) == 1 + 10 + 8
    assert main(["dump-topology", "--vehicles", "10,20"]) == 2


def _fake_rows(case, methods, cws, ns, seeds=2):
    rows = []
    for m in methods:
        for cw in cws:
            for n in ns:
                for s in range(seeds):
                    r = {c: "" for c in RESULT_COLUMNS}
                    r.update(method=m, case=case, cw=str(cw), n_vehicles=str(n), seed=str(s + 1),
                             max_unsatisfied_ratio=f"{0.1 * (s + 1):.6f}")
                    rows.append(r)
    return rows


def test_plotdata_shapes_and_coverage(tmp_path, capsys):
    methods = [m.value for m in Method]
    rows = _fake_rows("symmetric", methods, [15], [20, 100])
    table = emit_plotdata(rows, "fig2")
    assert len(table) == 8 and {t["x"] for t in table} == {20, 100}
    assert table[0]["mean"] == "0.150000" and table[0]["std"] == "0.070711" and table[0]["n_seeds"] == 2
    with pytest.raises(CoverageError) as e:
        emit_plotdata(rows, "fig3")
    assert ("symmetric", "edca", 31, 100) in e.value.missing
    with pytest.raises(CoverageError):
        emit_plotdata(rows, "fig4")
    with pytest.raises(CoverageError):
        emit_plotdata(rows, "fig5")
    good = rows + _fake_rows("symmetric", methods, [31, 63, 127, 255, 511, 1023], [100])
    assert len(emit_plotdata(good, "fig3")) == 28
    fig5 = _fake_rows("symmetric", ["bond_n"], [15, 511], [20]) + _fake_rows("asymmetric", ["bond_n"], [15, 511], [20])
    assert [(t["case"], t["cw"]) for t in emit_plotdata(fig5, "fig5")] == \
        [("symmetric", 15), ("symmetric", 511), ("asymmetric", 15), ("asymmetric", 511)]

    src = tmp_path / "r.csv"
    with open(src, "w", newline="") as fh:
        w = csv.DictWriter(fh, RESULT_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    assert main(["plotdata", "fig3", str(src)]) == 3
    assert "missing sweep points" in capsys.readouterr().err
    out = tmp_path / "p.csv"
    assert main(["plotdata", "fig2", str(src), "--out", str(out)]) == 0
    assert tuple(_csv(out)[0]) == PLOT_COLUMNS


def test_plotdata_rejects_foreign_csv(tmp_path):
    bad = tmp_path / "x.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["plotdata", "fig2", str(bad)]) == 2


def test_repeat_runs_are_byte_identical(tmp_path):
    args = ["run", "--vehicles", "2,4", "--seeds", "2", "--duration", "0.3", "--warmup", "0.1", "--quiet"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main([*args, "--out", str(a)]) == 0
    assert main([*args, "--out", str(b), "--workers", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
