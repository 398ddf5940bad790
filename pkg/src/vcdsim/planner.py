"""Prefetch decisions: when (shortfall), where (AP selection), what (piece assignment)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .contact_map import (PROB_TIE, LookaheadTree, hit_probability,
                          most_probable_sequence)

ALL = "all"
MPP = "mpp"
REPRESENTATIVE = "representative"
STRATEGY_NAMES = (ALL, MPP, REPRESENTATIVE)


class NoPrediction(Exception):
    """The lookahead tree has no node beyond the root."""


@dataclass(frozen=True)
class SelectionBudget:
    max_total_prefetch_bytes: float | None = None
    max_aps: int | None = None
    target_hit_prob: float | None = None

    def __post_init__(self):
        if (self.max_total_prefetch_bytes is None and self.max_aps is None
                and self.target_hit_prob is None):
            raise ValueError("representative selection needs at least one budget limit")
        if self.target_hit_prob is not None and not 0 < self.target_hit_prob <= 1:
            raise ValueError("target_hit_prob must lie in (0, 1]")
        if self.max_aps is not None and self.max_aps < 0:
            raise ValueError("max_aps must be >= 0")

    def ap_limit(self, per_ap_cost_bytes: float) -> float:
        limit = math.inf
        if self.max_aps is not None:
            limit = self.max_aps
        if (self.max_total_prefetch_bytes is not None and per_ap_cost_bytes > 0
                and math.isfinite(self.max_total_prefetch_bytes)):
            limit = min(limit, math.floor(self.max_total_prefetch_bytes / per_ap_cost_bytes))
        return limit


@dataclass(frozen=True)
class Strategy:
    kind: str
    budget: SelectionBudget | None = None

    def __post_init__(self):
        if self.kind not in STRATEGY_NAMES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGY_NAMES}")
        if self.kind == REPRESENTATIVE and self.budget is None:
            raise ValueError("representative strategy needs a SelectionBudget")

    @classmethod
    def all_lookahead(cls):
        return cls(ALL)

    @classmethod
    def most_probable_path(cls):
        return cls(MPP)

    @classmethod
    def representative(cls, **limits):
        return cls(REPRESENTATIVE, SelectionBudget(**limits))

    def __str__(self):
        return self.kind


def forecast_shortfall(remaining_bytes: float, effective_rate: float,
                       remaining_contact_s: float) -> float:
    """Bytes that will still be missing when the contact ends."""
    if min(remaining_bytes, effective_rate, remaining_contact_s) < 0:
        raise ValueError("inputs must be non-negative")
    return max(0.0, remaining_bytes - effective_rate * remaining_contact_s)


def greedy_representative(tree: LookaheadTree, budget: SelectionBudget,
                          per_ap_cost_bytes: float) -> list[str]:
    """MPP seed grown greedily by marginal hit probability under ``budget``."""
    seed = [ap for ap in dict.fromkeys(most_probable_sequence(tree)) if ap != tree.root]
    limit = budget.ap_limit(per_ap_cost_bytes)
    if len(seed) > limit:
        return seed[: int(limit)]
    chosen = list(seed)
    current = hit_probability(tree, chosen)
    best_pp = tree.best_path_prob()
    candidates = [ap for ap in tree.lookahead_aps() if ap not in chosen]
    while candidates and len(chosen) < limit:
        if budget.target_hit_prob is not None and current >= budget.target_hit_prob - PROB_TIE:
            break
        best = None
        for ap in candidates:
            h = hit_probability(tree, chosen + [ap])
            key = (h - current, best_pp[ap])
            if best is None or _better(key, ap, best):
                best = (key, ap, h)
        (_, ap, h) = best
        chosen.append(ap)
        candidates.remove(ap)
        current = h
    return chosen


def _better(key, ap, best) -> bool:
    (gain, pp), (bgain, bpp) = key, best[0]
    if gain > bgain + PROB_TIE:
        return True
    if gain < bgain - PROB_TIE:
        return False
    if pp > bpp + PROB_TIE:
        return True
    if pp < bpp - PROB_TIE:
        return False
    return ap < best[1]


def select_aps(tree: LookaheadTree, strategy: Strategy, per_ap_cost_bytes: float = 1.0) -> list[str]:
    """Prefetch targets, in notification order. Raises NoPrediction for a root-only tree."""
    if tree.is_root_only:
        raise NoPrediction(f"no lookahead APs beyond {tree.root}")
    if strategy.kind == ALL:
        return tree.lookahead_aps()
    if strategy.kind == MPP:
        return list(dict.fromkeys(ap for ap in most_probable_sequence(tree) if ap != tree.root))
    if per_ap_cost_bytes <= 0:
        raise ValueError("per_ap_cost_bytes must be positive for representative selection")
    return greedy_representative(tree, strategy.budget, per_ap_cost_bytes)


# A view of one AP's storage: (content_id, generation_id) -> rank.
ApView = Mapping[tuple, int]


def rank_sum(content_id, generation_id: int, neighbor_states: Sequence[ApView],
             weights: Sequence[float] | None = None):
    """Sum of neighbor ranks for one generation; a missing entry counts as 0."""
    key = (content_id, generation_id)
    if weights is None:
        return sum(view.get(key, 0) for view in neighbor_states)
    return sum(w * view.get(key, 0) for view, w in zip(neighbor_states, weights))


def assign_pieces(content_id, needed_generations: Sequence[tuple[int, int]], target_view: ApView,
                  neighbor_states: Sequence[ApView], quota_pieces: int, g: int,
                  weights: Sequence[float] | None = None) -> list[tuple[int, int]]:
    """Fill ``quota_pieces`` generation by generation, lowest rank-sum first."""
    if quota_pieces < 1:
        raise ValueError("quota_pieces must be >= 1")
    order = sorted(needed_generations,
                   key=lambda gn: (rank_sum(content_id, gn[0], neighbor_states, weights), gn[0]))
    out, left = [], quota_pieces
    for gen, need in order:
        if left <= 0:
            break
        cap = min(need, g - target_view.get((content_id, gen), 0), left)
        if cap > 0:
            out.append((gen, cap))
            left -= cap
    return out


@dataclass
class PlanTarget:
    ap: str
    assignments: list[tuple[int, int]]
    estimated_arrival_s: float
    reach_prob: float


@dataclass
class PrefetchPlan:
    vehicle: str
    content_id: object
    needed_generations: list[tuple[int, int]]
    targets: list[PlanTarget]
    created_at: float = 0.0
    strategy: str = ""
    mpp: list[str] = field(default_factory=list)

    @property
    def target_aps(self) -> list[str]:
        return [t.ap for t in self.targets]


def make_plan(vehicle: str, content_id, needed_generations: Sequence[tuple[int, int]],
              tree: LookaheadTree, strategy: Strategy, shortfall_bytes: float, piece_size: int,
              g: int, ap_states: Mapping[str, ApView] | None = None, *, created_at: float = 0.0,
              mean_travel_s: float = 0.0, mean_dwell_s: float = 0.0, quota_mode: str = "full",
              weighted_rank_sum: bool = False) -> PrefetchPlan:
    """Run selection and assignment for one vehicle's remaining download."""
    if shortfall_bytes <= 0:
        raise ValueError("make_plan needs a positive shortfall")
    ap_states = ap_states or {}
    quota = math.ceil(shortfall_bytes / piece_size)
    aps = select_aps(tree, strategy, per_ap_cost_bytes=quota * piece_size)
    if not aps:
        raise NoPrediction("empty selection")
    reach = {ap: hit_probability(tree, [ap]) for ap in aps}
    depth = tree.first_depth()
    total_reach = sum(reach.values())
    targets = []
    for ap in aps:
        others = [a for a in aps if a != ap]
        views = [ap_states.get(a, {}) for a in others]
        weights = [reach[a] for a in others] if weighted_rank_sum else None
        if quota_mode == "split" and total_reach > 0:
            q = max(1, math.ceil(quota * reach[ap] / total_reach))
        elif quota_mode == "full":
            q = quota
        else:
            raise ValueError(f"unknown quota mode {quota_mode!r}")
        assigned = assign_pieces(content_id, needed_generations, ap_states.get(ap, {}), views,
                                 q, g, weights)
        d = depth[ap]
        eta = created_at + d * mean_travel_s + (d - 1) * mean_dwell_s
        targets.append(PlanTarget(ap, assigned, eta, reach[ap]))
    return PrefetchPlan(vehicle, content_id, list(needed_generations), targets, created_at,
                        strategy.kind, most_probable_sequence(tree))


def format_plan(tree: LookaheadTree, strategy: Strategy, plan: PrefetchPlan | None,
                selected: Sequence[str] | None = None) -> str:
    """Human-readable dump of the tree, MPP, selection and assignments."""
    lines = [f"lookahead tree (root {tree.root}, k={tree.k})"]

    def walk(i, indent):
        n = tree.nodes[i]
        lines.append(f"{'  ' * indent}{n.ap} {n.path_prob:.4f}")
        for c in n.children:
            walk(c, indent + 1)

    walk(0, 1)
    lines.append(f"strategy: {strategy.kind}")
    mpp = most_probable_sequence(tree)
    if not mpp:
        lines.append("no prediction")
        return "\n".join(lines) + "\n"
    lines.append(f"most probable path: [{', '.join(mpp)}]")
    sel = plan.target_aps if plan is not None else list(selected or [])
    lines.append(f"selected: [{', '.join(sel)}]")
    lines.append(f"hit probability: {hit_probability(tree, sel):.4f}")
    if plan is not None:
        for t in plan.targets:
            parts = ", ".join(f"gen{gen}:{n}" for gen, n in t.assignments) or "-"
            lines.append(f"  {t.ap}: {parts}")
    return "\n".join(lines) + "\n"
