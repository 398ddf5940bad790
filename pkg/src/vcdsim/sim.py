"""Deterministic discrete-event simulation of AP-assisted content delivery.

Transfers are fluid flows under processor sharing: every link splits its
capacity equally among the flows crossing it and a flow moves at the
minimum of its per-link shares. Rates are piecewise constant between events
and progress is integrated exactly; whole pieces are handed to the node
layer as they complete.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .contact_map import (ContactGraph, ContactRecord, ShardedContactMap,
                          learn_from_trace)
from .node import ApNode, ContentItem, Counters, Download, Flow, OriginServer
from .planner import REPRESENTATIVE, STRATEGY_NAMES, Strategy

MBPS = 1_000_000 / 8  # bytes per second in one Mbit/s
NO_PREFETCH = "none"
STREAMS = ("topology", "mobility", "noise", "workload", "coding", "training")

# byte slack when deciding that a piece boundary has been crossed
BYTE_EPS = 1e-6


class ScenarioError(ValueError):
    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{k}: {m}" for k, m in errors))


@dataclass
class RadioConfig:
    wireless_mbps: float = 10.0
    backhaul_mbps: float = 5.0
    lan_mbps: float = 100.0
    origin_latency_s: float = 0.1
    lan_latency_s: float = 0.001


@dataclass
class ContentConfig:
    catalog_size: int = 10
    # whole-scenario defaults: large enough to span several contacts, with pieces
    # coarse enough that an hour of fifty vehicles stays quick to simulate
    size_bytes: int = 32 * 1024 * 1024
    piece_size: int = 256 * 1024
    generation_size: int = 16
    zipf_skew: float = 0.8


@dataclass
class MobilityConfig:
    mode: str = "markov"
    ap_count: int = 20
    topology_seed: int | None = None
    dwell_min_s: float = 10.0
    dwell_max_s: float = 60.0
    travel_min_s: float = 20.0
    travel_max_s: float = 120.0
    start_spread_s: float = 60.0
    training_transitions: int = 5000
    map_source: str = "learned"
    online_learning: bool = True
    lan_scope: str = "neighbors"
    trace: str | None = None


@dataclass
class PlannerConfig:
    k: int = 3
    prune_epsilon: float = 0.01
    max_children: int | None = 8
    max_aps: int | None = 4
    budget_bytes: float | None = None
    target_hit_prob: float | None = None
    quota_mode: str = "full"
    rank_sum_weighted: bool = False


@dataclass
class Scenario:
    seed: int = 1
    duration_s: float = 3600.0
    vehicle_count: int = 10
    strategy: str = REPRESENTATIVE
    noise: float = 0.0
    requests_per_vehicle: int = 1
    think_time_s: float = 30.0
    storage_bytes: float = math.inf
    read_through: bool = True
    pin_timeout_s: float = 300.0
    max_gap_s: float = 600.0
    radio: RadioConfig = field(default_factory=RadioConfig)
    content: ContentConfig = field(default_factory=ContentConfig)
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    # explicit inputs for programmatic runs; None means generate from the knobs above
    trace: list[ContactRecord] | None = None
    contact_graph: ContactGraph | None = None
    requests: list[tuple[float, str, str]] | None = None
    catalog: list[ContentItem] | None = None
    preload: dict[str, list[str]] = field(default_factory=dict)
    lan_peers: dict[str, list[str]] | None = None

    def validate(self) -> None:
        errs = []

        def need(cond, key, msg):
            if not cond:
                errs.append((key, msg))

        need(self.duration_s > 0, "scenario.duration_s", "must be > 0")
        need(self.vehicle_count >= 0, "scenario.vehicle_count", "must be >= 0")
        need(self.strategy in STRATEGY_NAMES + (NO_PREFETCH,), "scenario.strategy",
             f"must be one of {', '.join(STRATEGY_NAMES + (NO_PREFETCH,))}")
        need(0 <= self.noise <= 1, "scenario.noise", "must lie in [0, 1]")
        need(self.requests_per_vehicle >= 0, "scenario.requests_per_vehicle", "must be >= 0")
        need(self.storage_bytes >= 0, "scenario.storage_bytes", "must be >= 0")
        need(self.pin_timeout_s >= 0, "scenario.pin_timeout_s", "must be >= 0")
        r = self.radio
        need(r.wireless_mbps > 0, "radio.wireless_mbps", "must be > 0")
        need(r.wireless_mbps <= 600, "radio.wireless_mbps", "802.11n tops out at 600 Mbps")
        need(r.backhaul_mbps > 0, "radio.backhaul_mbps", "must be > 0")
        need(r.lan_mbps > 0, "radio.lan_mbps", "must be > 0")
        need(r.origin_latency_s >= 0, "radio.origin_latency_s", "must be >= 0")
        need(r.lan_latency_s >= 0, "radio.lan_latency_s", "must be >= 0")
        c = self.content
        need(c.catalog_size >= 1, "content.catalog_size", "must be >= 1")
        need(c.size_bytes >= 1, "content.size_bytes", "must be >= 1")
        need(c.piece_size >= 1, "content.piece_size", "must be >= 1")
        need(1 <= c.generation_size <= 255, "content.generation_size", "must lie in [1, 255]")
        need(c.zipf_skew >= 0, "content.zipf_skew", "must be >= 0")
        m = self.mobility
        need(m.mode in ("markov", "trace"), "mobility.mode", "must be markov or trace")
        need(m.mode != "trace" or self.trace is not None or m.trace, "mobility.trace",
             "trace mode needs a trace file")
        need(m.mode != "markov" or m.ap_count >= 2 or self.contact_graph is not None,
             "mobility.ap_count", "must be >= 2")
        need(0 <= m.dwell_min_s <= m.dwell_max_s and m.dwell_max_s > 0, "mobility.dwell_max_s",
             "need 0 <= dwell_min_s <= dwell_max_s, dwell_max_s > 0")
        need(0 <= m.travel_min_s <= m.travel_max_s, "mobility.travel_max_s",
             "need 0 <= travel_min_s <= travel_max_s")
        need(m.map_source in ("learned", "truth"), "mobility.map_source", "must be learned or truth")
        need(m.lan_scope in ("neighbors", "all", "none"), "mobility.lan_scope",
             "must be neighbors, all or none")
        need(m.training_transitions >= 0, "mobility.training_transitions", "must be >= 0")
        p = self.planner
        need(p.k >= 0, "planner.k", "must be >= 0")
        need(0 <= p.prune_epsilon <= 1, "planner.prune_epsilon", "must lie in [0, 1]")
        need(p.max_children is None or p.max_children >= 1, "planner.max_children", "must be >= 1")
        need(p.quota_mode in ("full", "split"), "planner.quota_mode", "must be full or split")
        need(p.target_hit_prob is None or 0 < p.target_hit_prob <= 1, "planner.target_hit_prob",
             "must lie in (0, 1]")
        if self.strategy == REPRESENTATIVE:
            need(any(v is not None for v in (p.max_aps, p.budget_bytes, p.target_hit_prob)),
                 "planner.max_aps", "representative needs max_aps, budget_bytes or target_hit_prob")
        if errs:
            raise ScenarioError(errs)

    def make_strategy(self) -> Strategy | None:
        if self.strategy == NO_PREFETCH:
            return None
        if self.strategy == REPRESENTATIVE:
            p = self.planner
            return Strategy.representative(max_total_prefetch_bytes=p.budget_bytes,
                                           max_aps=p.max_aps, target_hit_prob=p.target_hit_prob)
        return Strategy(self.strategy)


CSV_FIELDS = ["cache_hit_bytes_ratio", "completion_fraction", "mean_completion_s",
              "backhaul_bytes", "lan_bytes", "wireless_bytes", "wasted_prefetch_bytes",
              "duplicate_pieces", "evictions", "declined_prefetches"]


@dataclass(frozen=True)
class MetricsReport:
    cache_hit_bytes_ratio: float = 0.0
    completion_fraction: float = 0.0
    mean_completion_s: float = 0.0
    backhaul_bytes: int = 0
    lan_bytes: int = 0
    wireless_bytes: int = 0
    wasted_prefetch_bytes: int = 0
    duplicate_pieces: int = 0
    evictions: int = 0
    declined_prefetches: int = 0
    # diagnostics beyond the report CSV
    requests: int = 0
    completed: int = 0
    completion_undefined: bool = False
    rejected_requests: int = 0
    prefetched_bytes: int = 0
    contacts: int = 0
    mean_contact_bytes: float = 0.0
    post_first_hit_ratio: float | None = None
    post_first_contacts: int = 0
    post_first_full_hit_contacts: int = 0
    peak_sessions: int = 0
    peak_active_downloads: int = 0

    def csv_values(self) -> list[float]:
        return [getattr(self, k) for k in CSV_FIELDS]


@dataclass
class ContactStat:
    vehicle: str
    ap: str
    start: float
    end: float
    hit_bytes: int
    miss_bytes: int
    first: bool


# ---------------------------------------------------------------- mobility

@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __call__(self, rng) -> float:
        return float(rng.uniform(self.lo, self.hi)) if self.hi > self.lo else float(self.lo)

    @property
    def mean(self) -> float:
        return (self.lo + self.hi) / 2


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, rng) -> float:
        return float(self.value)

    @property
    def mean(self) -> float:
        return self.value


def undirected_neighbors(graph: ContactGraph) -> dict[str, list[str]]:
    nb: dict[str, set[str]] = {a: set() for a in graph.aps}
    for (a, b) in graph.counts:
        nb[a].add(b)
        nb[b].add(a)
    return {a: sorted(s) for a, s in nb.items()}


def _choose(succ: dict[str, float], u: float) -> str:
    acc = 0.0
    items = sorted(succ.items())
    for ap, p in items:
        acc += p
        if u < acc:
            return ap
    return items[-1][0]


def generate_mobility(graph: ContactGraph, vehicle_count: int, duration_s: float,
                      dwell_dist: Callable = Uniform(10, 60), travel_dist: Callable = Uniform(20, 120),
                      rng: np.random.Generator | None = None, *, noise: float = 0.0,
                      noise_rng: np.random.Generator | None = None,
                      neighbors: dict[str, list[str]] | None = None,
                      start_spread_s: float = 0.0, vehicle_prefix: str = "V") -> list[ContactRecord]:
    """Markov walks over ``graph``; each hop deviates from the model with probability ``noise``.

    A deviating hop goes to a uniformly chosen road neighbour other than the
    AP the model picked. Draws for the deviation come from ``noise_rng`` and
    are taken on every hop so that runs differing only in ``noise`` stay
    paired.
    """
    if not graph.aps:
        raise ValueError("graph has no APs")
    rng = np.random.default_rng(0) if rng is None else rng
    noise_rng = rng if noise_rng is None else noise_rng
    neighbors = undirected_neighbors(graph) if neighbors is None else neighbors
    starts = sorted(a for a in graph.aps if graph.successors(a)) or sorted(graph.aps)
    width = max(3, len(str(max(vehicle_count - 1, 0))))
    records = []
    for v in range(vehicle_count):
        vid = f"{vehicle_prefix}{v:0{width}d}"
        t = float(rng.uniform(0, start_spread_s)) if start_spread_s > 0 else 0.0
        ap = starts[int(rng.integers(len(starts)))]
        seq = 0
        while t < duration_s:
            dwell = dwell_dist(rng)
            records.append((t, v, seq, ContactRecord(t, vid, ap, "arrive")))
            records.append((t + dwell, v, seq + 1, ContactRecord(t + dwell, vid, ap, "depart")))
            seq += 2
            t += dwell + travel_dist(rng)
            succ = graph.successors(ap)
            u, dev, pick = rng.random(), noise_rng.random(), noise_rng.random()
            if not succ:
                break
            nxt = _choose(succ, u)
            if dev < noise:
                options = [a for a in neighbors.get(ap, []) if a not in (nxt, ap)]
                if options:
                    nxt = options[int(pick * len(options))]
            ap = nxt
    records.sort(key=lambda r: (r[0], r[1], r[2]))
    return [r[3] for r in records]


def grid_topology(ap_count: int, rng: np.random.Generator):
    """Road grid of APs with skewed integer transition counts toward grid neighbours."""
    cols = math.ceil(math.sqrt(ap_count))
    width = max(2, len(str(ap_count - 1)))
    ids = [f"AP{i:0{width}d}" for i in range(ap_count)]
    neighbors: dict[str, list[str]] = {}
    for i, a in enumerate(ids):
        r, c = divmod(i, cols)
        nb = []
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = r + dr, c + dc
            j = rr * cols + cc
            if 0 <= rr and 0 <= cc < cols and j < ap_count:
                nb.append(ids[j])
        neighbors[a] = sorted(nb)
    truth = ContactGraph(ids)
    for a in ids:
        for b in neighbors[a]:
            truth.observe(a, b, 1 + int(1000 * rng.gamma(0.5)))
    return truth, neighbors


# ---------------------------------------------------------------- engine

def reallocate_rates(capacities: dict, flows: list[Flow]) -> dict[Flow, float]:
    """Equal share of each link per flow; a flow runs at its tightest share."""
    load: dict = {}
    for f in flows:
        for link in f.links:
            load[link] = load.get(link, 0) + 1
    return {f: min(capacities[link] / load[link] for link in f.links) for f in flows}


@dataclass
class VehicleState:
    id: str
    at: str | None = None
    last_depart: tuple[str, float] | None = None
    downloads: list[Download] = field(default_factory=list)
    pending_requests: int = 0
    contact_history: list[tuple[str, float]] = field(default_factory=list)

    @property
    def active(self) -> Download | None:
        if self.downloads:
            d = self.downloads[-1]
            if not d.complete and not d.rejected:
                return d
        return None


class Simulation:
    """One scenario run. Use :func:`run` unless you need to poke at the state."""

    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = sc = scenario
        seq = np.random.SeedSequence(sc.seed)
        self.rngs = {name: np.random.default_rng(child)
                     for name, child in zip(STREAMS, seq.spawn(len(STREAMS)))}
        if sc.mobility.topology_seed is not None:
            self.rngs["topology"] = np.random.default_rng(sc.mobility.topology_seed)
        self.coding_rng = self.rngs["coding"]
        self.counters = Counters()
        self.strategy = sc.make_strategy()
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self._flow_seq = 0
        self._check_version = 0
        self.flows: list[Flow] = []
        self.contacts: list[ContactStat] = []
        self.completed: list[Download] = []
        self._open_sessions = 0
        self.peak_sessions = 0
        self.dwell = Uniform(sc.mobility.dwell_min_s, sc.mobility.dwell_max_s)
        self.travel = Uniform(sc.mobility.travel_min_s, sc.mobility.travel_max_s)
        self.mean_dwell_s = self.dwell.mean
        self.mean_travel_s = self.travel.mean
        self.lan_latency_s = sc.radio.lan_latency_s
        self._build_world()

    # world construction -------------------------------------------------

    def _build_world(self):
        sc = self.scenario
        m = sc.mobility
        neighbors = None
        if sc.trace is not None or m.mode == "trace":
            trace = sc.trace
            if trace is None:
                from .contact_map import read_trace
                with open(m.trace, encoding="utf-8") as fh:
                    trace = read_trace(fh)
            learned = sc.contact_graph or learn_from_trace(trace, sc.max_gap_s)
            self.truth = learned
            self.map = ShardedContactMap(learned)
        else:
            if sc.contact_graph is not None:
                truth = sc.contact_graph
                neighbors = undirected_neighbors(truth)
            else:
                truth, neighbors = grid_topology(m.ap_count, self.rngs["topology"])
            self.truth = truth
            trace = generate_mobility(truth, sc.vehicle_count, sc.duration_s, self.dwell,
                                      self.travel, self.rngs["mobility"], noise=sc.noise,
                                      noise_rng=self.rngs["noise"], neighbors=neighbors,
                                      start_spread_s=m.start_spread_s)
            if m.map_source == "truth":
                self.map = ShardedContactMap(truth)
            else:
                self.map = ShardedContactMap(self._training_map(truth, neighbors))
        self.contact_map = self.map
        self.trace = trace
        ap_ids = sorted(self.truth.aps | {r.ap for r in trace})
        self.map.aps |= set(ap_ids)
        if sc.lan_peers is not None:
            peers = sc.lan_peers
        elif m.lan_scope == "all":
            peers = {a: [b for b in ap_ids if b != a] for a in ap_ids}
        elif m.lan_scope == "none":
            peers = {}
        else:
            nb = neighbors or undirected_neighbors(self.truth)
            peers = {a: nb.get(a, []) for a in ap_ids}
        self.aps = {a: ApNode(a, sc.storage_bytes, peers.get(a, []), sc.read_through)
                    for a in ap_ids}
        r = sc.radio
        self.capacity = {}
        for a in ap_ids:
            self.capacity[("wl", a)] = r.wireless_mbps * MBPS
            self.capacity[("bh", a)] = r.backhaul_mbps * MBPS
            self.capacity[("lan", a)] = r.lan_mbps * MBPS
        c = sc.content
        if sc.catalog is not None:
            catalog = {item.content_id: item for item in sc.catalog}
        else:
            width = max(3, len(str(c.catalog_size - 1)))
            catalog = {f"C{i:0{width}d}": ContentItem(f"C{i:0{width}d}", c.size_bytes,
                                                       c.piece_size, c.generation_size)
                       for i in range(c.catalog_size)}
        self.origin = OriginServer(catalog, r.origin_latency_s)
        for ap, items in sc.preload.items():
            for cid in items:
                self.aps[ap].preload(catalog[cid])
        self.vehicles: dict[str, VehicleState] = {}
        for rec in trace:
            self.vehicles.setdefault(rec.vehicle, VehicleState(rec.vehicle))
        for rec in trace:
            kind = "arrive" if rec.event == "arrive" else "depart"
            self._push(rec.time_s, kind, rec)
        self._schedule_workload()

    def _training_map(self, truth: ContactGraph, neighbors) -> ContactGraph:
        m = self.scenario.mobility
        if m.training_transitions <= 0:
            return ContactGraph(truth.aps)
        vehicles = 20
        hops = m.training_transitions / vehicles
        horizon = (hops + 1) * (self.mean_dwell_s + self.mean_travel_s)
        rng = self.rngs["training"]
        trace = generate_mobility(truth, vehicles, horizon, self.dwell, self.travel, rng,
                                  neighbors=neighbors, vehicle_prefix="T")
        return learn_from_trace(trace, self.scenario.max_gap_s, ContactGraph(truth.aps))

    def _schedule_workload(self):
        sc = self.scenario
        if sc.requests is not None:
            for t, vid, cid in sorted(sc.requests):
                self.vehicles.setdefault(vid, VehicleState(vid))
                self._push(t, "request", (vid, cid))
            return
        rng = self.rngs["workload"]
        ids = sorted(self.origin.catalog)
        weights = 1.0 / np.arange(1, len(ids) + 1) ** sc.content.zipf_skew
        self._popularity = (ids, weights / weights.sum())
        first_arrival: dict[str, float] = {}
        for rec in self.trace:
            if rec.event == "arrive":
                first_arrival.setdefault(rec.vehicle, rec.time_s)
        for vid in sorted(first_arrival):
            v = self.vehicles[vid]
            v.pending_requests = sc.requests_per_vehicle
            if v.pending_requests > 0:
                v.pending_requests -= 1
                self._push(first_arrival[vid], "request", (vid, self._pick_content()))

    def _pick_content(self) -> str:
        ids, p = self._popularity
        return ids[int(self.rngs["workload"].choice(len(ids), p=p))]

    # event plumbing -----------------------------------------------------

    def _push(self, t: float, kind: str, payload):
        heapq.heappush(self._heap, (t, self._seq, kind, payload))
        self._seq += 1

    def start_flow(self, flow: Flow):
        flow.seq = self._flow_seq
        self._flow_seq += 1
        self.flows.append(flow)

    def stop_flow(self, flow: Flow):
        if not flow.closed:
            flow.closed = True
            flow.on_close(self)

    def send_notice(self, ap: str, notice, delay: float):
        self.counters.notices += 1
        self._push(self.now + delay, "notice", (ap, notice))

    def wireless_rate(self, ap: str) -> float:
        return self.capacity[("wl", ap)]

    def record_contact(self, session, now: float):
        self._open_sessions -= 1
        self.contacts.append(ContactStat(session.download.vehicle, session.ap.id,
                                         session.started_at, now, session.hit_bytes,
                                         session.miss_bytes, session.first_contact))

    def vehicle_progress(self, download: Download, now: float):
        if download.completed_at is None and download.complete:
            download.completed_at = now
            self.completed.append(download)
            v = self.vehicles[download.vehicle]
            if v.pending_requests > 0 and self.scenario.requests is None:
                v.pending_requests -= 1
                self._push(now + self.scenario.think_time_s, "request",
                           (download.vehicle, self._pick_content()))

    # flow integration ---------------------------------------------------

    def _advance(self, t: float):
        dt = t - self.now
        if dt > 0:
            for f in self.flows:
                if f.closed or f.rate <= 0:
                    continue
                f.bytes_done += f.rate * dt
        self.now = t
        for f in self.flows:
            if f.closed or f.start_at > t:
                continue
            ps = f.piece_size
            due = int((f.bytes_done + BYTE_EPS) // ps) - f.pieces_done
            if due <= 0:
                continue
            n = min(due, f.wanted_pieces())
            sent = 0
            while sent < n and f.deliver_piece(t, self):
                sent += 1
            f.pieces_done += sent
            if sent < due:
                # bytes beyond what the receiver could use are dropped
                f.bytes_done = f.pieces_done * ps

    def _reschedule(self):
        live = []
        for f in self.flows:
            if f.closed:
                continue
            if f.kind in ("prefetch", "lan_share") and f.start_at <= self.now \
                    and f.wanted_pieces() <= 0:
                self.stop_flow(f)
                continue
            live.append(f)
        self.flows = live
        busy, nxt = [], math.inf
        for f in live:
            if f.start_at > self.now:
                f.rate = 0.0
                nxt = min(nxt, f.start_at)
                continue
            rem = f.remaining_bytes()
            if rem > BYTE_EPS:
                busy.append((f, rem))
            else:
                f.rate = 0.0
        rates = reallocate_rates(self.capacity, [f for f, _ in busy])
        for f, rem in busy:
            f.rate = rates[f]
            # wake at the next generation's worth of pieces so arrivals reach peers promptly
            step = min(rem, 16 * f.piece_size - f.partial_bytes)
            nxt = min(nxt, self.now + max(step, BYTE_EPS) / f.rate)
        self._check_version += 1
        if nxt < math.inf:
            self._push(nxt, "check", self._check_version)

    # main loop ------------------------------------------------------------

    def run(self) -> MetricsReport:
        end = self.scenario.duration_s
        while self._heap and self._heap[0][0] <= end:
            t, _, kind, payload = heapq.heappop(self._heap)
            if kind == "check" and payload != self._check_version:
                continue
            self._advance(t)
            getattr(self, f"_on_{kind}")(payload)
            self._reschedule()
        self._advance(end)
        for ap in self.aps.values():
            for vid in sorted(ap.sessions):
                ap.close_session(vid, end, self)
        return self.finalize_metrics()

    def _on_check(self, _):
        pass

    def _on_arrive(self, rec: ContactRecord):
        v = self.vehicles[rec.vehicle]
        v.at = rec.ap
        v.contact_history.append((rec.ap, rec.time_s))
        if (self.scenario.mobility.online_learning and self.scenario.mobility.map_source != "truth"
                and v.last_depart is not None and v.last_depart[0] != rec.ap
                and rec.time_s - v.last_depart[1] <= self.scenario.max_gap_s):
            self.map.observe(v.last_depart[0], rec.ap)
        self._associate(v)

    def _associate(self, v: VehicleState):
        dl = v.active
        if dl is None or v.at is None:
            return
        self.aps[v.at].on_vehicle_associate(dl, self.now, self)
        dl.contacts += 1
        self._open_sessions += 1
        self.peak_sessions = max(self.peak_sessions, self._open_sessions)

    def _on_depart(self, rec: ContactRecord):
        v = self.vehicles[rec.vehicle]
        self.aps[rec.ap].on_vehicle_depart(rec.vehicle, self.now, self)
        v.at = None
        v.last_depart = (rec.ap, rec.time_s)

    def _on_request(self, payload):
        vid, cid = payload
        v = self.vehicles[vid]
        content = self.origin.catalog.get(cid)
        if content is None:
            content = ContentItem(cid, 1)
        dl = Download(vid, content, self.now)
        v.downloads.append(dl)
        if cid not in self.origin.catalog:
            dl.rejected = True
            self.counters.rejected_requests += 1
            return
        if v.at is not None:
            self.aps[v.at].close_session(vid, self.now, self)
            self._associate(v)

    def _on_notice(self, payload):
        ap, notice = payload
        self.aps[ap].on_prefetch_notice(notice, self.now, self)

    # metrics ------------------------------------------------------------

    def finalize_metrics(self) -> MetricsReport:
        c = self.counters
        hit = sum(s.hit_bytes for s in self.contacts)
        total = sum(s.hit_bytes + s.miss_bytes for s in self.contacts)
        downloads = [d for v in self.vehicles.values() for d in v.downloads]
        done = [d for d in downloads if d.completed_at is not None]
        post = [s for s in self.contacts if not s.first and s.hit_bytes + s.miss_bytes > 0]
        post_total = sum(s.hit_bytes + s.miss_bytes for s in post)
        wasted = sum(sum(ap.prefetch_ledger.values()) for ap in self.aps.values())
        edges = sorted([(d.issued_at, 1) for d in downloads if not d.rejected]
                       + [(d.completed_at, -1) for d in done])
        active = peak_active = 0
        for _, step in edges:
            active += step
            peak_active = max(peak_active, active)
        return MetricsReport(
            cache_hit_bytes_ratio=hit / total if total else 0.0,
            completion_fraction=len(done) / len(downloads) if downloads else 0.0,
            mean_completion_s=(sum(d.completed_at - d.issued_at for d in done) / len(done)
                               if done else 0.0),
            backhaul_bytes=c.backhaul_bytes,
            lan_bytes=c.lan_bytes,
            wireless_bytes=c.wireless_bytes,
            wasted_prefetch_bytes=wasted,
            duplicate_pieces=c.duplicate_pieces,
            evictions=c.evictions,
            declined_prefetches=c.declined_prefetches,
            requests=len(downloads),
            completed=len(done),
            completion_undefined=not downloads,
            rejected_requests=c.rejected_requests,
            prefetched_bytes=c.prefetched_bytes,
            contacts=len(self.contacts),
            mean_contact_bytes=total / len(self.contacts) if self.contacts else 0.0,
            post_first_hit_ratio=(sum(s.hit_bytes for s in post) / post_total
                                  if post_total else None),
            post_first_contacts=len(post),
            post_first_full_hit_contacts=sum(1 for s in post if s.miss_bytes == 0),
            peak_sessions=self.peak_sessions,
            peak_active_downloads=peak_active,
        )


def run(scenario: Scenario) -> MetricsReport:
    return Simulation(scenario).run()


def report_fields() -> list[str]:
    return [f.name for f in fields(MetricsReport)]
