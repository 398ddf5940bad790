"""Acceptance criteria, one test each.

Every test appends a PASS/FAIL line to ``RESULTS``; ``conftest.py`` prints
them in the terminal summary. Tolerances and scenario settings are pinned
here and nowhere else.
"""

import dataclasses
import statistics
import time

import numpy as np

from vcdsim.contact_map import (build_lookahead_tree, hit_probability, learn_from_trace,
                                most_probable_sequence)
from vcdsim.gfcode import (GenerationBuffer, encode, gf_inv, gf_mul, random_coeffs, reassemble,
                           segment)
from vcdsim.node import PrefetchFlow
from vcdsim.planner import Strategy, select_aps
from vcdsim.sim import Scenario, Simulation, Uniform, generate_mobility, grid_topology, run

from .oracles import gf_inv_slow, gf_mul_slow, hit_brute, mpp_brute, probs_exact
from .test_contact_map import random_graph

RESULTS: list[str] = []

SEEDS = range(20)

# pinned tolerances
ROUND_TRIP_CASES = 200
ROUND_TRIP_BUDGET_S = 30.0
MUL_PAIRS = 10_000
GRAPHS = 100
PROB_TOL = 1e-9
MIN_TRANSITIONS = 10_000
LEARN_TOL = 0.05
TREES = 100
NOISE_LEVELS = (0.0, 0.1, 0.2, 0.3)
MIN_SESSIONS = 8
LONG_RUN_BUDGET_S = 60.0


def record(n, name, ok, detail):
    RESULTS.append(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


def mean(runs, attr):
    return statistics.fmean(getattr(r, attr) for r in runs)


# ---------------------------------------------------------------- 1

def test_c01_rlnc_round_trip():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(ROUND_TRIP_CASES):
        g = int(rng.integers(1, 33))
        piece_size = int(rng.integers(1, 1025))
        # keep the piece count of a case bounded so the whole run stays short
        size = int(rng.integers(1, min(256 * 1024, piece_size * g * 16) + 1))
        data = rng.integers(0, 256, size=size, dtype=np.uint8).tobytes()
        out = []
        for j, src in enumerate(segment(data, piece_size, g)):
            buf = GenerationBuffer(g, piece_size, "c", j)
            while not buf.full:
                buf.absorb(encode(src, random_coeffs(rng, g), "c", j))
            out.append(buf.decode())
        bad += reassemble(out, size) != data
    took = time.perf_counter() - t0
    record(1, "RLNC round trip", bad == 0 and took < ROUND_TRIP_BUDGET_S,
           f"{ROUND_TRIP_CASES} cases, {bad} mismatches, {took:.1f} s (< {ROUND_TRIP_BUDGET_S:.0f} s)")


# ---------------------------------------------------------------- 2

def test_c02_field_exhaustives():
    bad_inv = sum(1 for a in range(1, 256)
                  if gf_mul(a, gf_inv(a)) != 1 or gf_inv(a) != gf_inv_slow(a))
    rng = np.random.default_rng(7)
    pairs = rng.integers(0, 256, size=(MUL_PAIRS, 2))
    bad_mul = sum(1 for a, b in pairs if gf_mul(int(a), int(b)) != gf_mul_slow(int(a), int(b)))
    record(2, "field exhaustives", bad_inv == 0 and bad_mul == 0,
           f"{bad_inv} bad inverses of 255, {bad_mul} mismatches in {MUL_PAIRS} products")


# ---------------------------------------------------------------- 3

def test_c03_prediction_oracles():
    rng = np.random.default_rng(3)
    bad_seq = bad_prob = 0
    worst = 0.0
    for _ in range(GRAPHS):
        n = int(rng.integers(2, 13))
        k = int(rng.integers(0, 5))
        g = random_graph(rng, n)
        tree = build_lookahead_tree(g, "N0", k, prune_epsilon=0, max_children=None)
        probs = probs_exact(g.counts)
        bad_seq += most_probable_sequence(tree) != mpp_brute(probs, "N0", k)
        sel = {a for a in sorted(g.aps) if rng.random() < 0.4}
        err = abs(hit_probability(tree, sel) - float(hit_brute(probs, "N0", k, sel)))
        worst = max(worst, err)
        bad_prob += err > PROB_TOL
    record(3, "prediction oracles", bad_seq == 0 and bad_prob == 0,
           f"{GRAPHS} graphs, {bad_seq} sequence mismatches, max |dp| {worst:.2e} (<= {PROB_TOL})")


# ---------------------------------------------------------------- 4

def test_c04_learned_model():
    truth, nb = grid_topology(9, np.random.default_rng(0))
    trace = generate_mobility(truth, 60, 200_000, Uniform(10, 60), Uniform(20, 120),
                              np.random.default_rng(100), neighbors=nb)
    learned = learn_from_trace(trace)
    n = sum(learned.counts.values())
    dev = max(abs(learned.probability(a, b) - p)
              for a in truth.aps for b, p in truth.successors(a).items())
    record(4, "learned model", n >= MIN_TRANSITIONS and dev <= LEARN_TOL,
           f"{n} transitions (>= {MIN_TRANSITIONS}), max edge deviation {dev:.4f} (<= {LEARN_TOL})")


# ---------------------------------------------------------------- 5

def test_c05_spectrum_ordering():
    rng = np.random.default_rng(5)
    violations = trees = 0
    while trees < TREES:
        g = random_graph(rng, int(rng.integers(3, 11)))
        tree = build_lookahead_tree(g, "N0", int(rng.integers(1, 5)), prune_epsilon=0)
        if tree.is_root_only:
            continue
        trees += 1
        a = select_aps(tree, Strategy.all_lookahead())
        m = select_aps(tree, Strategy.most_probable_path())
        budget = int(rng.integers(len(m), len(a) + 1))
        r = select_aps(tree, Strategy.representative(max_aps=budget), 1)
        ha, hr, hm = (hit_probability(tree, s) for s in (a, r, m))
        ok = ha >= hr - 1e-12 and hr >= hm - 1e-12 and len(a) >= len(r) >= len(m)
        violations += not ok
    record(5, "spectrum ordering", violations == 0, f"{TREES} trees, {violations} violations")


# ---------------------------------------------------------------- 6

def noise_scenario(seed, strategy, eps):
    sc = Scenario(seed=seed, vehicle_count=10, duration_s=1200, strategy=strategy, noise=eps,
                  requests_per_vehicle=2)
    sc.mobility.ap_count = 16
    return sc


def test_c06_noise_robustness():
    waste = {}
    for eps in NOISE_LEVELS:
        waste[eps] = mean([run(noise_scenario(s, "mpp", eps)) for s in SEEDS],
                          "wasted_prefetch_bytes")
    mpp_hit = mean([run(noise_scenario(s, "mpp", 0.3)) for s in SEEDS], "cache_hit_bytes_ratio")
    all_hit = mean([run(noise_scenario(s, "all", 0.3)) for s in SEEDS], "cache_hit_bytes_ratio")
    w = [waste[e] for e in NOISE_LEVELS]
    monotone = all(x <= y for x, y in zip(w, w[1:]))
    record(6, "noise robustness", monotone and all_hit >= mpp_hit,
           "MPP waste MB " + " / ".join(f"{x / 1e6:.1f}" for x in w)
           + f" at eps {NOISE_LEVELS}; hit at 0.3: All {all_hit:.3f} vs MPP {mpp_hit:.3f}")


# ---------------------------------------------------------------- 7

CONTENT_MIB = 96


def pressure_scenario(seed, strategy):
    sc = Scenario(seed=seed, vehicle_count=20, duration_s=600, strategy=strategy,
                  storage_bytes=1.5 * CONTENT_MIB * 2**20)
    sc.mobility.ap_count = 16
    sc.content.size_bytes = CONTENT_MIB * 2**20
    sc.content.piece_size = 2**20
    return sc


def test_c07_eviction_pressure():
    sc = pressure_scenario(0, "all")
    assert sc.storage_bytes < 2 * sc.content.size_bytes
    rep = [run(pressure_scenario(s, "representative")) for s in SEEDS]
    alls = [run(pressure_scenario(s, "all")) for s in SEEDS]
    sessions = min(r.peak_sessions for r in rep + alls)
    cf_rep, cf_all = mean(rep, "completion_fraction"), mean(alls, "completion_fraction")
    diffs = [a.completion_fraction - b.completion_fraction for a, b in zip(rep, alls)]
    sd = statistics.stdev(diffs)
    effect = statistics.fmean(diffs) / sd if sd else float("inf")
    record(7, "eviction pressure", sessions >= MIN_SESSIONS and cf_rep >= cf_all,
           f"completion Rep {cf_rep:.3f} vs All {cf_all:.3f} (diff {cf_rep - cf_all:+.3f}, "
           f"paired d {effect:.2f}); min peak sessions {sessions}")


# ---------------------------------------------------------------- 8

def benefit_scenario(seed, strategy):
    sc = Scenario(seed=seed, vehicle_count=5, duration_s=1200, strategy=strategy)
    sc.mobility.ap_count = 16
    sc.content.size_bytes = 128 * 2**20
    sc.content.piece_size = 2**20
    return sc


def test_c08_prefetch_benefit():
    sc = benefit_scenario(0, "none")
    assert sc.radio.wireless_mbps > sc.radio.backhaul_mbps
    per = {st: mean([run(benefit_scenario(s, st)) for s in SEEDS], "mean_contact_bytes")
           for st in ("none", "all", "mpp", "representative")}
    ok = all(per[st] > per["none"] for st in ("all", "mpp", "representative"))
    record(8, "prefetch benefit", ok,
           "mean contact MB " + ", ".join(f"{st} {v / 1e6:.2f}" for st, v in per.items()))


# ---------------------------------------------------------------- 9

def perfect_scenario(seed):
    sc = Scenario(seed=seed, vehicle_count=5, duration_s=3600, strategy="all", noise=0.0)
    sc.mobility.map_source = "truth"
    sc.mobility.ap_count = 16
    # long trips between APs so staging finishes before the vehicle arrives
    sc.mobility.travel_min_s, sc.mobility.travel_max_s = 400, 600
    sc.planner.k, sc.planner.prune_epsilon = 2, 0.0
    sc.content.size_bytes = 64 * 2**20
    sc.content.piece_size = 2**20
    return sc


def test_c09_perfect_prediction():
    contacts = full = 0
    ratios = []
    staged_late = 0
    for s in SEEDS:
        sim = Simulation(perfect_scenario(s))
        arrive = sim._on_arrive

        def checked(rec, sim=sim, arrive=arrive):
            nonlocal staged_late
            staged_late += any(isinstance(f, PrefetchFlow) and f.ap.id == rec.ap
                               and f.notice.vehicle == rec.vehicle for f in sim.flows)
            arrive(rec)

        sim._on_arrive = checked
        r = sim.run()
        contacts += r.post_first_contacts
        full += r.post_first_full_hit_contacts
        ratios.append(r.post_first_hit_ratio)
    assert staged_late == 0, "scenario does not give lead time > transfer time"
    ok = contacts > 0 and full == contacts and all(x == 1.0 for x in ratios)
    record(9, "perfect-prediction cache hit", ok,
           f"{full}/{contacts} post-first contacts fully served from cache, "
           f"min per-run ratio {min(ratios)}")


# ---------------------------------------------------------------- 10

def test_c10_determinism_and_speed():
    same = 0
    cases = [Scenario(seed=s, vehicle_count=6, duration_s=900, strategy=st)
             for s, st in ((1, "all"), (2, "mpp"), (3, "representative"), (4, "none"))]
    noisy = Scenario(seed=5, vehicle_count=6, duration_s=900, noise=0.2, storage_bytes=64 * 2**20)
    cases.append(noisy)
    for sc in cases:
        same += run(sc).csv_values() == run(dataclasses.replace(sc)).csv_values()
    big = Scenario(seed=1, vehicle_count=50, duration_s=3600)
    big.mobility.ap_count = 20
    t0 = time.perf_counter()
    first = run(big)
    took = time.perf_counter() - t0
    again = run(dataclasses.replace(big))
    ok = same == len(cases) and first.csv_values() == again.csv_values() and took < LONG_RUN_BUDGET_S
    record(10, "determinism and speed", ok,
           f"{same}/{len(cases)} scenarios identical on rerun; 50 vehicles, 20 APs, 1 h in "
           f"{took:.1f} s (< {LONG_RUN_BUDGET_S:.0f} s)")
