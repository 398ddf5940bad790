import csv
import io
import statistics

import pytest

from vcdsim.cli import REPORT_HEADER, main
from vcdsim.config import sample_config
from vcdsim.contact_map import (ContactGraph, ContactRecord, learn_from_trace, read_map,
                                write_map, write_trace)

from .test_contact_map import example_graph

SMALL = """[scenario]
vehicle_count = 3
duration_s = 300
strategy = {strategy}
[mobility]
mode = markov
ap_count = 6
"""


@pytest.fixture
def small_cfg(tmp_path):
    def make(strategy="mpp", name="small"):
        p = tmp_path / f"{name}.ini"
        p.write_text(SMALL.format(strategy=strategy), encoding="utf-8")
        return str(p)
    return make


def trace_file(tmp_path, recs):
    p = tmp_path / "trace.csv"
    with open(p, "w", encoding="utf-8", newline="") as fh:
        write_trace(recs, fh)
    return str(p)


def test_learn_three_contacts(tmp_path):
    recs = []
    for i, ap in enumerate("ABC"):
        recs += [ContactRecord(100 * i, "v", ap, "arrive"), ContactRecord(100 * i + 10, "v", ap, "depart")]
    out = tmp_path / "map.csv"
    assert main(["learn", "--trace", trace_file(tmp_path, recs), "--out", str(out)]) == 0
    text = out.read_text(encoding="utf-8")
    assert text == "from_ap,to_ap,count\nA,B,1\nB,C,1\n"
    # idempotent, and reloads to the in-memory graph
    assert main(["learn", "--trace", trace_file(tmp_path, recs), "--out", str(out)]) == 0
    assert out.read_text(encoding="utf-8") == text
    with open(out, encoding="utf-8") as fh:
        assert read_map(fh) == learn_from_trace(recs)


def test_learn_header_only(tmp_path):
    out = tmp_path / "map.csv"
    assert main(["learn", "--trace", trace_file(tmp_path, []), "--out", str(out)]) == 0
    assert out.read_text(encoding="utf-8") == "from_ap,to_ap,count\n"


def test_learn_bad_event(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("time_s,vehicle_id,ap_id,event\n0,v,A,arrive\n5,v,A,vanish\n", encoding="utf-8")
    assert main(["learn", "--trace", str(p), "--out", str(tmp_path / "m.csv")]) == 2
    assert "3" in capsys.readouterr().err


def test_learn_missing_file(tmp_path):
    assert main(["learn", "--trace", str(tmp_path / "none.csv"), "--out", str(tmp_path / "m")]) == 3


def map_file(tmp_path, graph):
    p = tmp_path / "map.csv"
    with open(p, "w", encoding="utf-8", newline="") as fh:
        write_map(graph, fh)
    return str(p)


def test_plan_example_tree(tmp_path, capsys):
    m = map_file(tmp_path, example_graph())
    assert main(["plan", "--map", m, "--root", "A", "--k", "2", "--strategy", "mpp",
                 "--prune-epsilon", "0"]) == 0
    out = capsys.readouterr().out
    lines = out.splitlines()
    assert lines[1:7] == ["  A 1.0000", "    B 0.6000", "      F 0.4200", "      G 0.1800",
                          "    C 0.4000", "      H 0.4000"]
    assert "most probable path: [B, F]" in out


def test_plan_chain_and_k0(tmp_path, capsys):
    m = map_file(tmp_path, ContactGraph().observe("A", "B").observe("B", "C"))
    assert main(["plan", "--map", m, "--root", "A", "--k", "3", "--strategy", "mpp"]) == 0
    assert "[B, C]" in capsys.readouterr().out
    assert main(["plan", "--map", m, "--root", "A", "--k", "0", "--strategy", "all"]) == 0
    assert "no prediction" in capsys.readouterr().out
    assert main(["plan", "--map", m, "--root", "Z", "--k", "2", "--strategy", "all"]) == 2


def test_simulate_one_row_and_determinism(tmp_path, small_cfg):
    cfg = small_cfg()
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(b)]) == 0
    rows = list(csv.reader(io.StringIO(a.read_text(encoding="utf-8"))))
    assert rows[0] == REPORT_HEADER and len(rows) == 2
    assert a.read_text(encoding="utf-8") == b.read_text(encoding="utf-8")
    assert all(len(v.split(".")[1]) == 6 for v in rows[1][3:])


def test_simulate_repeat_appends_in_seed_order(tmp_path, small_cfg):
    cfg = small_cfg()
    out = tmp_path / "r.csv"
    assert main(["simulate", "--config", cfg, "--out", str(out), "--repeat", "3",
                 "--seed", "10", "--jobs", "2"]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(out), "--seed", "20"]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text(encoding="utf-8"))))
    assert [r["seed"] for r in rows] == ["10", "11", "12", "20"]
    serial = tmp_path / "s.csv"
    main(["simulate", "--config", cfg, "--out", str(serial), "--repeat", "3", "--seed", "10"])
    assert serial.read_text(encoding="utf-8").splitlines() == \
        out.read_text(encoding="utf-8").splitlines()[:4]


def test_simulate_bad_strategy(tmp_path, small_cfg, capsys):
    cfg = small_cfg(strategy="mostprobable")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "r.csv")]) == 2
    assert "scenario.strategy" in capsys.readouterr().err


def test_simulate_unwritable_output(tmp_path, small_cfg):
    assert main(["simulate", "--config", small_cfg(),
                 "--out", str(tmp_path / "no" / "dir" / "r.csv")]) == 3


def report_csv(tmp_path, rows, name="rep.csv"):
    p = tmp_path / name
    with open(p, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        w.writerows(rows)
    return str(p)


def row(run_id, strategy, seed, *metrics):
    vals = list(metrics) + [0.0] * (10 - len(metrics))
    return [run_id, strategy, seed] + [f"{v:.6f}" for v in vals]


def parse_report(text):
    return {r["strategy"]: r for r in csv.DictReader(io.StringIO(text))}


def test_report_single_row(tmp_path, capsys):
    p = report_csv(tmp_path, [row("x-1", "mpp", 1, 0.5, 1.0, 30.0)])
    assert main(["report", p]) == 0
    r = parse_report(capsys.readouterr().out)["mpp"]
    assert r["cache_hit_bytes_ratio_mean"] == "0.500000"
    assert r["cache_hit_bytes_ratio_std"] == "0.000000"


def test_report_hand_arithmetic(tmp_path, capsys):
    rows = [row("a", "all", 1, 0.2, 1.0, 10.0), row("b", "all", 2, 0.4, 0.5, 20.0),
            row("c", "all", 3, 0.9, 0.0, 60.0), row("d", "mpp", 1, 0.1)]
    p = report_csv(tmp_path, rows)
    assert main(["report", p]) == 0
    out = parse_report(capsys.readouterr().out)
    assert list(out) == ["all", "mpp"]
    a = out["all"]
    # hand: mean(0.2, 0.4, 0.9) = 0.5; sample sd = sqrt((0.09 + 0.01 + 0.16) / 2)
    assert a["cache_hit_bytes_ratio_mean"] == "0.500000"
    assert float(a["cache_hit_bytes_ratio_std"]) == pytest.approx(0.360555, abs=1e-6)
    assert a["completion_fraction_mean"] == "0.500000"
    assert a["mean_completion_s_mean"] == "30.000000"
    assert float(a["mean_completion_s_std"]) == pytest.approx(statistics.stdev([10, 20, 60]), abs=1e-6)
    assert a["runs"] == "3"


def test_report_identical_rows_zero_std(tmp_path, capsys):
    r = row("a", "rep", 1, 0.3, 0.7)
    assert main(["report", report_csv(tmp_path, [r, r])]) == 0
    assert parse_report(capsys.readouterr().out)["rep"]["completion_fraction_std"] == "0.000000"


def test_report_header_mismatch(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("run_id,strategy\nx,all\n", encoding="utf-8")
    assert main(["report", str(p)]) == 2


def test_trace_then_learn(tmp_path, small_cfg):
    t, m = tmp_path / "t.csv", tmp_path / "m.csv"
    assert main(["trace", "--config", small_cfg(), "--out", str(t)]) == 0
    assert main(["learn", "--trace", str(t), "--out", str(m)]) == 0
    assert m.read_text(encoding="utf-8").startswith("from_ap,to_ap,count\n")


def test_sample_config_command(tmp_path, capsys):
    assert main(["sample-config"]) == 0
    assert capsys.readouterr().out == sample_config()
