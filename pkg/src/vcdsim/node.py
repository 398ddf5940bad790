"""Access point and origin server behaviour.

APs hold coded generations in a byte-budgeted LRU cache, serve associated
vehicles, fetch misses through from the origin, and act on prefetch notices
by pulling pieces from LAN peers or the origin. Transfers are modelled as
flows; the engine in :mod:`vcdsim.sim` assigns their rates and calls
:meth:`Flow.deliver_piece` each time a whole piece has crossed the path.

All coding state here is coefficient-only (``piece_size=0`` buffers): the
simulator tracks which pieces are innovative, never the payload bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gfcode import GenerationBuffer, generation_layout, random_coeffs, union_rank
from .planner import NoPrediction, forecast_shortfall, make_plan

# attempts at drawing a piece outside the receiver's span before giving up
DRAW_TRIES = 16


class InsufficientStorage(Exception):
    pass


@dataclass(frozen=True)
class ContentItem:
    content_id: str
    size_bytes: int
    piece_size: int = 4096
    g: int = 16

    def __post_init__(self):
        if self.size_bytes < 1:
            raise ValueError("content size must be >= 1 byte")

    @property
    def layout(self) -> list[int]:
        return generation_layout(self.size_bytes, self.piece_size, self.g)

    @property
    def generation_count(self) -> int:
        return math.ceil(self.size_bytes / (self.piece_size * self.g))

    def new_buffer(self, gen: int) -> GenerationBuffer:
        return GenerationBuffer(self.g, 0, self.content_id, gen, self.layout[gen])


@dataclass
class OriginServer:
    catalog: dict[str, ContentItem]
    response_latency_s: float = 0.1

    def __contains__(self, content_id):
        return content_id in self.catalog

    def coded_row(self, content: ContentItem, gen: int, rng, avoid: GenerationBuffer | None = None):
        """Fresh random piece of generation ``gen``, outside ``avoid``'s span when possible."""
        live = content.layout[gen]
        for _ in range(DRAW_TRIES):
            row = random_coeffs(rng, content.g, live)
            if avoid is None or avoid.full or not avoid.contains(row):
                return row
        return row


@dataclass
class Counters:
    backhaul_bytes: int = 0
    lan_bytes: int = 0
    wireless_bytes: int = 0
    duplicate_pieces: int = 0
    evictions: int = 0
    declined_prefetches: int = 0
    prefetched_bytes: int = 0
    rejected_requests: int = 0
    notices: int = 0


class Download:
    """A vehicle's request: per-generation coded state plus timing."""

    def __init__(self, vehicle: str, content: ContentItem, issued_at: float):
        self.vehicle = vehicle
        self.content = content
        self.issued_at = issued_at
        self.completed_at: float | None = None
        self.buffers = [content.new_buffer(j) for j in range(len(content.layout))]
        self.contacts = 0
        self.rejected = False

    @property
    def pieces_received(self) -> int:
        return sum(b.rank for b in self.buffers)

    @property
    def bytes_received(self) -> int:
        return min(self.content.size_bytes, self.pieces_received * self.content.piece_size)

    @property
    def remaining_bytes(self) -> int:
        return self.content.size_bytes - self.bytes_received

    @property
    def complete(self) -> bool:
        return all(b.full for b in self.buffers)

    def needed_generations(self) -> list[tuple[int, int]]:
        return [(j, b.deficit) for j, b in enumerate(self.buffers) if b.deficit > 0]


@dataclass
class CacheEntry:
    buffer: GenerationBuffer
    last_use: float


@dataclass
class PrefetchNotice:
    vehicle: str
    content_id: str
    source_ap: str
    assignments: list[tuple[int, int]]
    vehicle_state: dict[int, GenerationBuffer]
    created_at: float
    estimated_arrival_s: float


class Session:
    """One vehicle associated with one AP for one download."""

    def __init__(self, ap: "ApNode", download: Download, now: float):
        self.ap = ap
        self.download = download
        self.started_at = now
        self.supply = [0] * len(download.buffers)
        self.dirty: set[int] = set(range(len(download.buffers)))
        self.hit_bytes = 0
        self.miss_bytes = 0
        self.flows: list[Flow] = []
        self.first_contact = download.contacts == 0

    def refresh(self):
        for j in self.dirty:
            vb = self.download.buffers[j]
            entry = self.ap.entries.get((self.download.content.content_id, j))
            if entry is None or vb.full:
                self.supply[j] = 0
            else:
                self.supply[j] = union_rank(vb, entry.buffer) - vb.rank
        self.dirty.clear()

    def deficits(self):
        return [b.deficit for b in self.download.buffers]

    @property
    def delivered_bytes(self) -> int:
        return self.hit_bytes + self.miss_bytes


class Flow:
    """A transfer along one or more links. Subclasses decide what each piece is."""

    kind = "flow"

    def __init__(self, src, dst, content_id, links, piece_size, start_at):
        self.src = src
        self.dst = dst
        self.content_id = content_id
        self.links = tuple(links)
        self.piece_size = piece_size
        self.start_at = start_at
        self.bytes_done = 0.0
        self.pieces_done = 0
        self.rate = 0.0
        self.closed = False
        self.seq = -1

    def wanted_pieces(self) -> int:
        raise NotImplementedError

    def deliver_piece(self, now: float, net) -> bool:
        """Hand over one piece; False when there was nothing worth sending."""
        raise NotImplementedError

    def on_close(self, net) -> None:
        pass

    @property
    def partial_bytes(self) -> float:
        return self.bytes_done - self.pieces_done * self.piece_size

    def remaining_bytes(self) -> float:
        return max(0.0, self.wanted_pieces() * self.piece_size - self.partial_bytes)

    def __repr__(self):
        return f"<{self.kind} {self.src}->{self.dst} {self.content_id} rate={self.rate:.0f}>"


class ServeFlow(Flow):
    kind = "serve"

    def __init__(self, session: Session, now: float):
        ap = session.ap
        super().__init__(ap.id, session.download.vehicle, session.download.content.content_id,
                         [("wl", ap.id)], session.download.content.piece_size, now)
        self.session = session

    def wanted_pieces(self):
        s = self.session
        s.refresh()
        return sum(min(d, c) for d, c in zip(s.deficits(), s.supply) if c)

    def deliver_piece(self, now, net):
        s = self.session
        picked = s.ap.serve_piece(s.download, net.coding_rng, s.supply, now)
        if picked is None:
            return False
        net.counters.wireless_bytes += self.piece_size
        j, row = picked
        if s.download.buffers[j].absorb_row(row):
            s.supply[j] -= 1
            s.hit_bytes += self.piece_size
            s.ap.consume_prefetch(s.download.vehicle, s.download.content.content_id, j,
                                  self.piece_size)
            net.vehicle_progress(s.download, now)
        else:
            net.counters.duplicate_pieces += 1
            s.dirty.add(j)
        return True


class FetchThroughFlow(Flow):
    kind = "fetch_through"

    def __init__(self, session: Session, now: float, latency: float):
        ap = session.ap
        super().__init__("origin", session.download.vehicle, session.download.content.content_id,
                         [("bh", ap.id), ("wl", ap.id)], session.download.content.piece_size,
                         now + latency)
        self.session = session

    def wanted_pieces(self):
        s = self.session
        s.refresh()
        return sum(d - c for d, c in zip(s.deficits(), s.supply) if d > c)

    def deliver_piece(self, now, net):
        s = self.session
        ap, dl = s.ap, s.download
        s.refresh()
        gaps = [d - c for d, c in zip(s.deficits(), s.supply)]
        j = int(np.argmax(gaps))
        if gaps[j] <= 0:
            return False
        net.counters.backhaul_bytes += self.piece_size
        net.counters.wireless_bytes += self.piece_size
        vb = dl.buffers[j]
        row = net.origin.coded_row(dl.content, j, net.coding_rng, avoid=vb)
        if not vb.absorb_row(row):
            net.counters.duplicate_pieces += 1
            return True
        s.miss_bytes += self.piece_size
        net.vehicle_progress(dl, now)
        if ap.read_through:
            cached = ap.cache_piece(dl.content, j, row, now, net, feeder=s)
            if s.supply[j] > 0 or not cached:
                s.dirty.add(j)
        return True


class NoticeWork:
    """Per-notice state shared by the origin and LAN flows that serve it.

    ``combined[j]`` spans the vehicle's rows plus everything this AP holds
    or has been sent for generation j; pieces are drawn outside it.
    """

    def __init__(self, combined: dict[int, GenerationBuffer]):
        self.combined = combined
        self.version = 0


class PrefetchFlow(Flow):
    """Pieces pulled into ``ap`` for a notice, from the origin or a LAN peer."""

    def __init__(self, ap: "ApNode", notice: PrefetchNotice, content: ContentItem, source: str,
                 assignments: list[tuple[int, int]], work: NoticeWork,
                 links, start_at: float, reserved_bytes: int, net):
        super().__init__(source, ap.id, content.content_id, links, content.piece_size, start_at)
        self.net = net
        self.kind = "prefetch" if source == "origin" else "lan_share"
        self.ap = ap
        self.notice = notice
        self.content = content
        self.remaining = dict(assignments)
        self.order = [j for j, _ in assignments]
        self.work = work
        self.reserved = reserved_bytes
        self._cached = (-1, 0)

    def _want(self, j):
        left = self.remaining[j]
        comb = self.work.combined[j]
        if left <= 0 or comb.full:
            return 0
        return min(left, comb.live - comb.rank)

    def wanted_pieces(self):
        v = self.work.version
        if self._cached[0] != v:
            self.order = [j for j in self.order if self._want(j) > 0]
            self._cached = (v, sum(self._want(j) for j in self.order))
        return self._cached[1]

    def deliver_piece(self, now, net):
        j = next((j for j in self.order if self._want(j) > 0), None)
        if j is None:
            return False
        comb = self.work.combined[j]
        c = net.counters
        if self.src == "origin":
            row = net.origin.coded_row(self.content, j, net.coding_rng, avoid=comb)
        else:
            peer = net.aps[self.src]
            if (self.content_id, j) not in peer.entries:
                self.remaining[j] = 0
                self.work.version += 1
                return False
            peer.touch(self.content_id, j, now)
            row = peer.recode_outside(self.content_id, j, comb, net.coding_rng)
        if self.src == "origin":
            c.backhaul_bytes += self.piece_size
        else:
            c.lan_bytes += self.piece_size
        self.reserved -= self.piece_size
        self.ap.reserved_bytes -= self.piece_size
        self.work.version += 1
        if not comb.absorb_row(row) and self.src != "origin":
            # the peer has nothing left outside the combined span
            self.remaining[j] = 1
        if self.ap.cache_piece(self.content, j, row, now, net, reserved=True):
            key = (self.notice.vehicle, self.content_id, j)
            self.ap.prefetch_ledger[key] = self.ap.prefetch_ledger.get(key, 0) + self.piece_size
            c.prefetched_bytes += self.piece_size
        else:
            c.duplicate_pieces += 1
        self.remaining[j] -= 1
        return True

    def on_close(self, net):
        self.ap.reserved_bytes -= self.reserved
        self.reserved = 0


class ApNode:
    def __init__(self, ap_id: str, storage_capacity_bytes: float = math.inf,
                 lan_peers=(), read_through: bool = True):
        self.id = ap_id
        self.storage_capacity_bytes = storage_capacity_bytes
        self.used_bytes = 0
        self.reserved_bytes = 0
        self.entries: dict[tuple[str, int], CacheEntry] = {}
        self.pins: dict[str, dict[object, float]] = {}
        self.prefetch_ledger: dict[tuple[str, str, int], int] = {}
        self.lan_peers = sorted(lan_peers)
        self.read_through = read_through
        self.sessions: dict[str, Session] = {}
        self.piece_sizes: dict[str, int] = {}

    # storage -----------------------------------------------------------

    @property
    def free_bytes(self) -> float:
        return self.storage_capacity_bytes - self.used_bytes - self.reserved_bytes

    def rank_view(self) -> dict[tuple[str, int], int]:
        return {k: e.buffer.rank for k, e in self.entries.items() if e.buffer.rank}

    def pin(self, content_id, holder, until: float = math.inf):
        self.pins.setdefault(content_id, {})[holder] = until

    def unpin(self, content_id, holder):
        holders = self.pins.get(content_id)
        if holders is not None:
            holders.pop(holder, None)
            if not holders:
                del self.pins[content_id]

    def is_pinned(self, content_id, now: float) -> bool:
        return any(t > now for t in self.pins.get(content_id, {}).values())

    def evict_for(self, bytes_needed: float, now: float, protect=()) -> list[tuple[str, int]]:
        """Free ``bytes_needed`` by evicting least-recently-used unpinned generations.

        Raises InsufficientStorage, leaving the cache untouched, when even
        evicting every candidate would not be enough.
        """
        if bytes_needed < 0:
            raise ValueError("bytes_needed must be >= 0")
        if self.free_bytes >= bytes_needed:
            return []
        victims = sorted(
            (e.last_use, key) for key, e in self.entries.items()
            if key[0] not in protect and not self.is_pinned(key[0], now))
        reclaimable = sum(self.entries[k].buffer.rank * self.piece_sizes[k[0]] for _, k in victims)
        if self.free_bytes + reclaimable < bytes_needed:
            raise InsufficientStorage(
                f"{self.id}: need {bytes_needed} B, at most {self.free_bytes + reclaimable} B free")
        evicted = []
        for _, key in victims:
            if self.free_bytes >= bytes_needed:
                break
            entry = self.entries.pop(key)
            self.used_bytes -= entry.buffer.rank * self.piece_sizes[key[0]]
            evicted.append(key)
        return evicted

    def register_content(self, content: ContentItem):
        self.piece_sizes[content.content_id] = content.piece_size

    def entry(self, content: ContentItem, gen: int, now: float) -> CacheEntry:
        key = (content.content_id, gen)
        e = self.entries.get(key)
        if e is None:
            self.register_content(content)
            e = self.entries[key] = CacheEntry(content.new_buffer(gen), now)
        return e

    def touch(self, content_id, gen, now):
        e = self.entries.get((content_id, gen))
        if e is not None:
            e.last_use = now

    def store_row(self, content: ContentItem, gen: int, row, now: float, reserved=False) -> bool:
        """Absorb a coded row; storage must already be free or reserved."""
        if not reserved and self.free_bytes < content.piece_size:
            return False
        e = self.entry(content, gen, now)
        e.last_use = now
        if e.buffer.absorb_row(row):
            self.used_bytes += content.piece_size
            return True
        if e.buffer.rank == 0:
            del self.entries[(content.content_id, gen)]
        return False

    def cache_piece(self, content, gen, row, now, net, reserved=False, feeder=None) -> bool:
        if not reserved:
            try:
                evicted = self.evict_for(content.piece_size, now, protect={content.content_id})
            except InsufficientStorage:
                return False
            net.counters.evictions += len(evicted)
        ok = self.store_row(content, gen, row, now, reserved=reserved)
        if ok:
            for s in self.sessions.values():
                if s is not feeder and s.download.content.content_id == content.content_id:
                    s.dirty.add(gen)
        return ok

    def preload(self, content: ContentItem, now: float = 0.0):
        """Fill every generation of ``content`` to full rank."""
        self.register_content(content)
        for j, live in enumerate(content.layout):
            e = self.entry(content, j, now)
            for i in range(live):
                unit = np.zeros(content.g, dtype=np.uint8)
                unit[i] = 1
                if e.buffer.absorb_row(unit):
                    self.used_bytes += content.piece_size

    def consume_prefetch(self, vehicle, content_id, gen, nbytes):
        key = (vehicle, content_id, gen)
        left = self.prefetch_ledger.get(key, 0)
        if left:
            take = min(left, nbytes)
            if left - take:
                self.prefetch_ledger[key] = left - take
            else:
                del self.prefetch_ledger[key]

    def check_storage(self):
        recomputed = sum(e.buffer.rank * self.piece_sizes[k[0]] for k, e in self.entries.items())
        assert recomputed == self.used_bytes, (recomputed, self.used_bytes)
        assert self.used_bytes + max(self.reserved_bytes, 0) <= self.storage_capacity_bytes
        assert self.reserved_bytes >= 0

    def dump_cache(self) -> str:
        return "".join(f"{c},{j},{e.buffer.rank}\n" for (c, j), e in sorted(self.entries.items()))

    # coding ------------------------------------------------------------

    def recode_outside(self, content_id, gen, avoid: GenerationBuffer, rng):
        buf = self.entries[(content_id, gen)].buffer
        for _ in range(DRAW_TRIES):
            piece = buf.recode(rng)
            if not avoid.contains(piece.coeffs):
                break
        return piece.coeffs

    def serve_piece(self, download: Download, rng, supply=None, now: float = 0.0):
        """Pick the needed generation with the largest deficit and recode from it.

        Only generations where this AP holds something the vehicle lacks are
        considered (``supply``; computed exactly when not given). Returns
        ``(generation, coefficient row)`` or None when nothing useful is held.
        """
        cid = download.content.content_id
        best = None
        for j, vb in enumerate(download.buffers):
            if vb.full:
                continue
            entry = self.entries.get((cid, j))
            if entry is None or entry.buffer.rank == 0:
                continue
            useful = supply[j] if supply is not None else union_rank(vb, entry.buffer) - vb.rank
            if useful <= 0:
                continue
            if best is None or vb.deficit > best[1]:
                best = (j, vb.deficit)
        if best is None:
            return None
        j = best[0]
        entry = self.entries[(cid, j)]
        entry.last_use = now
        vb = download.buffers[j]
        for _ in range(DRAW_TRIES):
            piece = entry.buffer.recode(rng)
            if not vb.contains(piece.coeffs):
                break
        return j, piece.coeffs

    # protocol ----------------------------------------------------------

    def on_vehicle_associate(self, download: Download, now: float, net) -> list[Flow]:
        cid = download.content.content_id
        if cid not in net.origin:
            download.rejected = True
            net.counters.rejected_requests += 1
            return []
        session = Session(self, download, now)
        self.sessions[download.vehicle] = session
        self.pin(cid, ("session", download.vehicle))
        serve = ServeFlow(session, now)
        fetch = FetchThroughFlow(session, now, net.origin.response_latency_s)
        session.flows = [serve, fetch]
        for f in session.flows:
            net.start_flow(f)
        return session.flows

    def close_session(self, vehicle: str, now: float, net) -> Session | None:
        session = self.sessions.pop(vehicle, None)
        if session is None:
            return None
        self.unpin(session.download.content.content_id, ("session", vehicle))
        for f in session.flows:
            net.stop_flow(f)
        net.record_contact(session, now)
        return session

    def on_vehicle_depart(self, vehicle: str, now: float, net) -> list[PrefetchNotice]:
        for cid in list(self.pins):
            self.unpin(cid, ("prefetch", vehicle))
        session = self.close_session(vehicle, now, net)
        if session is None or session.download.complete or net.strategy is None:
            return []
        return self.plan_prefetch(session.download, now, net)

    def plan_prefetch(self, dl: Download, now: float, net) -> list[PrefetchNotice]:
        sc = net.scenario
        shortfall = forecast_shortfall(dl.remaining_bytes, net.wireless_rate(self.id), 0.0)
        if shortfall <= 0:
            return []
        tree, rounds = net.contact_map.build_tree(self.id, sc.planner.k, sc.planner.prune_epsilon,
                                                  sc.planner.max_children)
        content = dl.content
        try:
            plan = make_plan(dl.vehicle, content.content_id, dl.needed_generations(), tree,
                             net.strategy, shortfall, content.piece_size, content.g,
                             {a: net.aps[a].rank_view() for a in tree.lookahead_aps()},
                             created_at=now, mean_travel_s=net.mean_travel_s,
                             mean_dwell_s=net.mean_dwell_s, quota_mode=sc.planner.quota_mode,
                             weighted_rank_sum=sc.planner.rank_sum_weighted)
        except NoPrediction:
            return []
        vstate = {j: dl.buffers[j].copy() for j, _ in dl.needed_generations()}
        delay = rounds * 2 * net.lan_latency_s + net.lan_latency_s
        notices = []
        for t in plan.targets:
            if not t.assignments:
                continue
            n = PrefetchNotice(dl.vehicle, content.content_id, self.id, t.assignments, vstate,
                               now, t.estimated_arrival_s)
            net.send_notice(t.ap, n, delay)
            notices.append(n)
        return notices

    def on_prefetch_notice(self, notice: PrefetchNotice, now: float, net) -> list[Flow]:
        content = net.origin.catalog[notice.content_id]
        cid = content.content_id
        work = NoticeWork({})
        combined = work.combined
        from_peer: dict[str, list[tuple[int, int]]] = {}
        from_origin: list[tuple[int, int]] = []
        total = 0
        for j, count in notice.assignments:
            comb = notice.vehicle_state[j].copy()
            own = self.entries.get((cid, j))
            if own is not None:
                for r in own.buffer.coefficient_rows():
                    comb.absorb_row(r)
            need = min(count, comb.live - comb.rank)
            if need <= 0:
                continue
            combined[j] = comb
            best, best_u = None, 0
            for peer in self.lan_peers:
                pe = net.aps[peer].entries.get((cid, j))
                if pe is None or pe.buffer.rank == 0:
                    continue
                u = union_rank(pe.buffer, comb) - comb.rank
                if u > best_u:
                    best, best_u = peer, u
            lan_n = min(need, best_u)
            if lan_n:
                from_peer.setdefault(best, []).append((j, lan_n))
            if need - lan_n:
                from_origin.append((j, need - lan_n))
            total += need
        if total == 0:
            return []
        ps = content.piece_size
        holder = ("prefetch", notice.vehicle)
        try:
            evicted = self.evict_for(total * ps, now, protect={cid})
        except InsufficientStorage:
            net.counters.declined_prefetches += 1
            return []
        net.counters.evictions += len(evicted)
        self.pin(cid, holder, now + net.scenario.pin_timeout_s)
        self.register_content(content)
        flows = []
        if from_origin:
            n = sum(c for _, c in from_origin)
            flows.append(PrefetchFlow(self, notice, content, "origin", from_origin, work,
                                      [("bh", self.id)], now + net.origin.response_latency_s,
                                      n * ps, net))
        for peer, assigned in sorted(from_peer.items()):
            n = sum(c for _, c in assigned)
            flows.append(PrefetchFlow(self, notice, content, peer, assigned, work,
                                      [("lan", peer), ("lan", self.id)], now + net.lan_latency_s,
                                      n * ps, net))
        for f in flows:
            self.reserved_bytes += f.reserved
            net.start_flow(f)
        return flows
