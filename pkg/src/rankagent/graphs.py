"""Item-relation graph and user-item knowledge graph.

The relation graph scores item pairs by summing typed relation weights
(also_bought 3, also_viewed 2, same_category 1, same_brand 1) and serves
top-K neighbors. The knowledge graph connects users, items, and shared
demographic attributes, and yields 2-hop / 3-hop collaborative evidence
paths rendered as templated explanations.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping

from .corpus import BehaviorSequence, Demographics, Interaction, ItemMeta
from .util import canonical_json, sha256_text

log = logging.getLogger(__name__)

PATH_ENUMERATION_CAP = 10_000


class RelationType(str, Enum):
    ALSO_BOUGHT = "also_bought"
    ALSO_VIEWED = "also_viewed"
    SAME_CATEGORY = "same_category"
    SAME_BRAND = "same_brand"


_WEIGHTS = {
    RelationType.ALSO_BOUGHT: 3,
    RelationType.ALSO_VIEWED: 2,
    RelationType.SAME_CATEGORY: 1,
    RelationType.SAME_BRAND: 1,
}

RELATION_LABELS = {
    RelationType.ALSO_BOUGHT: "often bought together",
    RelationType.ALSO_VIEWED: "often viewed together",
    RelationType.SAME_CATEGORY: "same category",
    RelationType.SAME_BRAND: "same brand",
}


def relation_weight(relation: RelationType) -> int:
    return _WEIGHTS[relation]


@dataclass(frozen=True)
class RelatedItem:
    item: str
    score: int
    relations: frozenset[RelationType]


class UnknownItemError(KeyError):
    pass


class UnknownUserError(KeyError):
    pass


@dataclass
class ItemRelationGraph:
    """Typed item-item relations with attribute-derived edges computed lazily.

    also_bought/also_viewed adjacency is symmetrized at build time (source
    metadata lists them directionally) so pair scores are symmetric;
    same_category/same_brand relations come from shared attributes via
    inverted indices, which keeps large category groups from being
    materialized pairwise.
    """

    items: frozenset[str]
    also_bought: dict[str, frozenset[str]]
    also_viewed: dict[str, frozenset[str]]
    categories: dict[str, frozenset[str]]
    brands: dict[str, str]
    dangling_refs: int = 0
    _category_index: dict[str, frozenset[str]] = field(default_factory=dict, repr=False)
    _brand_index: dict[str, frozenset[str]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._category_index:
            cat_idx: dict[str, set[str]] = {}
            for item, cats in self.categories.items():
                for c in cats:
                    cat_idx.setdefault(c, set()).add(item)
            self._category_index = {c: frozenset(v) for c, v in cat_idx.items()}
        if not self._brand_index:
            brand_idx: dict[str, set[str]] = {}
            for item, b in self.brands.items():
                brand_idx.setdefault(b, set()).add(item)
            self._brand_index = {b: frozenset(v) for b, v in brand_idx.items()}

    def require(self, item: str) -> None:
        if item not in self.items:
            raise UnknownItemError(item)

    def relations_between(self, i: str, j: str) -> frozenset[RelationType]:
        self.require(i)
        self.require(j)
        if i == j:
            return frozenset()
        rels = set()
        if j in self.also_bought.get(i, frozenset()):
            rels.add(RelationType.ALSO_BOUGHT)
        if j in self.also_viewed.get(i, frozenset()):
            rels.add(RelationType.ALSO_VIEWED)
        if self.categories.get(i, frozenset()) & self.categories.get(j, frozenset()):
            rels.add(RelationType.SAME_CATEGORY)
        bi, bj = self.brands.get(i), self.brands.get(j)
        if bi is not None and bi == bj:
            rels.add(RelationType.SAME_BRAND)
        return frozenset(rels)

    def neighbor_candidates(self, i: str) -> set[str]:
        self.require(i)
        out: set[str] = set()
        out |= self.also_bought.get(i, frozenset())
        out |= self.also_viewed.get(i, frozenset())
        for c in self.categories.get(i, frozenset()):
            out |= self._category_index.get(c, frozenset())
        b = self.brands.get(i)
        if b is not None:
            out |= self._brand_index.get(b, frozenset())
        out.discard(i)
        return out

    def to_dict(self) -> dict:
        return {
            "items": sorted(self.items),
            "also_bought": {i: sorted(v) for i, v in sorted(self.also_bought.items()) if v},
            "also_viewed": {i: sorted(v) for i, v in sorted(self.also_viewed.items()) if v},
            "categories": {i: sorted(v) for i, v in sorted(self.categories.items()) if v},
            "brands": dict(sorted(self.brands.items())),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ItemRelationGraph":
        return cls(
            items=frozenset(data["items"]),
            also_bought={i: frozenset(v) for i, v in data["also_bought"].items()},
            also_viewed={i: frozenset(v) for i, v in data["also_viewed"].items()},
            categories={i: frozenset(v) for i, v in data["categories"].items()},
            brands=dict(data["brands"]),
        )

    def content_hash(self) -> str:
        return sha256_text(canonical_json(self.to_dict()))


def _symmetrize(pairs: Iterable[tuple[str, str]], known: frozenset[str]) -> tuple[dict[str, frozenset[str]], int]:
    adj: dict[str, set[str]] = {}
    dangling = 0
    for a, b in pairs:
        if a == b:
            continue
        if a not in known or b not in known:
            dangling += 1
            continue
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    return {k: frozenset(v) for k, v in adj.items()}, dangling


def build_item_relation_graph(
    items: Mapping[str, ItemMeta],
    extra_viewed_pairs: Iterable[tuple[str, str]] = (),
) -> ItemRelationGraph:
    """Assemble the relation graph from item metadata.

    also_bought/also_viewed links come from the metadata records;
    ``extra_viewed_pairs`` adds co-view pairs derived elsewhere (used for
    datasets without native co-purchase links, see derive_coview_pairs).
    Links pointing at items missing from the metadata are counted and skipped.
    """
    known = frozenset(items)
    bought_pairs = [(m.item, j) for m in items.values() for j in m.also_bought]
    viewed_pairs = [(m.item, j) for m in items.values() for j in m.also_viewed]
    viewed_pairs.extend(extra_viewed_pairs)
    also_bought, dang_b = _symmetrize(bought_pairs, known)
    also_viewed, dang_v = _symmetrize(viewed_pairs, known)
    if dang_b + dang_v:
        log.warning("relation graph: skipped %d dangling item references", dang_b + dang_v)
    return ItemRelationGraph(
        items=known,
        also_bought=also_bought,
        also_viewed=also_viewed,
        categories={m.item: frozenset(m.categories) for m in items.values()},
        brands={m.item: m.brand for m in items.values() if m.brand is not None},
        dangling_refs=dang_b + dang_v,
    )


def derive_coview_pairs(
    sequences: Mapping[str, BehaviorSequence], window: int = 10
) -> list[tuple[str, str]]:
    """Co-occurrence substitute for co-view links: two items rated by the same
    user within a window of 10 consecutive interactions."""
    pairs = []
    for user in sorted(sequences):
        ids = sequences[user].item_ids
        for a in range(len(ids)):
            for b in range(a + 1, min(a + window, len(ids))):
                if ids[a] != ids[b]:
                    pairs.append((ids[a], ids[b]))
    return pairs


def item_score(graph: ItemRelationGraph, i: str, j: str) -> int:
    """Sum of relation weights between two items; 0 when unrelated."""
    return sum(relation_weight(r) for r in graph.relations_between(i, j))


def related_items(graph: ItemRelationGraph, i: str, k: int) -> list[RelatedItem]:
    """Top-k neighbors by summed relation weight, ties broken by ascending item id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    graph.require(i)
    scored = []
    for j in graph.neighbor_candidates(i):
        rels = graph.relations_between(i, j)
        if rels:
            scored.append(RelatedItem(item=j, score=sum(relation_weight(r) for r in rels), relations=rels))
    scored.sort(key=lambda r: (-r.score, r.item))
    return scored[:k]


# --- knowledge graph -------------------------------------------------------

EDGE_BUY = "buy"
EDGE_BOUGHT_BY = "bought_by"
EDGE_ALSO_BOUGHT = "also_bought"
EDGE_SHARES_DEMOGRAPHICS = "shares_demographics"


@dataclass(frozen=True)
class KgPath:
    hops: int
    nodes: tuple[str, ...]
    edge_types: tuple[str, ...]
    terminal_user: str


@dataclass(frozen=True)
class KgEvidence:
    paths: tuple[KgPath, ...]
    explanations: tuple[str, ...]
    profiles: tuple[str, ...]


@dataclass
class KnowledgeGraph:
    """Heterogeneous user-item-attribute graph; buy/bought_by are mutual inverses."""

    user_items: dict[str, frozenset[str]]
    item_users: dict[str, frozenset[str]]
    item_also: dict[str, frozenset[str]]
    demo_key: dict[str, str]
    demo_groups: dict[str, frozenset[str]]

    def require_user(self, user: str) -> None:
        if user not in self.user_items:
            raise UnknownUserError(user)

    def to_dict(self) -> dict:
        return {
            "user_items": {u: sorted(v) for u, v in sorted(self.user_items.items())},
            "item_also": {i: sorted(v) for i, v in sorted(self.item_also.items()) if v},
            "demo_key": dict(sorted(self.demo_key.items())),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KnowledgeGraph":
        user_items = {u: frozenset(v) for u, v in data["user_items"].items()}
        return cls(
            user_items=user_items,
            item_users=_invert(user_items),
            item_also={i: frozenset(v) for i, v in data["item_also"].items()},
            demo_key=dict(data["demo_key"]),
            demo_groups=_group_by_value(data["demo_key"]),
        )

    def content_hash(self) -> str:
        return sha256_text(canonical_json(self.to_dict()))


def _invert(user_items: Mapping[str, frozenset[str]]) -> dict[str, frozenset[str]]:
    inv: dict[str, set[str]] = {}
    for u, its in user_items.items():
        for i in its:
            inv.setdefault(i, set()).add(u)
    return {i: frozenset(v) for i, v in inv.items()}


def _group_by_value(key_by_user: Mapping[str, str]) -> dict[str, frozenset[str]]:
    groups: dict[str, set[str]] = {}
    for u, k in key_by_user.items():
        groups.setdefault(k, set()).add(u)
    return {k: frozenset(v) for k, v in groups.items()}


def build_knowledge_graph(
    interactions: Iterable[Interaction],
    demographics: Mapping[str, Demographics] | None,
    items: Mapping[str, ItemMeta],
) -> KnowledgeGraph:
    """Buy edges from positive interactions, also_bought edges from metadata,
    demographic-sharing edges between users with equal (age, gender, occupation)."""
    user_items: dict[str, set[str]] = {}
    for inter in interactions:
        user_items.setdefault(inter.user, set()).add(inter.item)
    frozen_ui = {u: frozenset(v) for u, v in user_items.items()}

    known = frozenset(items)
    also_pairs = [(m.item, j) for m in items.values() for j in m.also_bought]
    item_also, _ = _symmetrize(also_pairs, known)

    demo_key: dict[str, str] = {}
    if demographics:
        for u in frozen_ui:
            d = demographics.get(u)
            if d is not None:
                demo_key[u] = f"{d.age}|{d.gender}|{d.occupation}"

    return KnowledgeGraph(
        user_items=frozen_ui,
        item_users=_invert(frozen_ui),
        item_also=item_also,
        demo_key=demo_key,
        demo_groups=_group_by_value(demo_key),
    )


def enumerate_two_hop(
    kg: KnowledgeGraph, user: str, cap: int = PATH_ENUMERATION_CAP, exclude_item: str | None = None
) -> list[KgPath]:
    """All u -buy-> i -bought_by-> v paths plus demographic-sharing paths, capped.

    Enumeration order is sorted, so the capped prefix is deterministic.
    """
    kg.require_user(user)
    paths: list[KgPath] = []
    for i in sorted(kg.user_items[user]):
        if i == exclude_item:
            continue
        for v in sorted(kg.item_users.get(i, frozenset())):
            if v == user:
                continue
            paths.append(
                KgPath(hops=2, nodes=(user, i, v), edge_types=(EDGE_BUY, EDGE_BOUGHT_BY), terminal_user=v)
            )
            if len(paths) >= cap:
                return paths
    key = kg.demo_key.get(user)
    if key is not None:
        demo_node = f"demo:{key}"
        for v in sorted(kg.demo_groups.get(key, frozenset())):
            if v == user:
                continue
            paths.append(
                KgPath(
                    hops=2,
                    nodes=(user, demo_node, v),
                    edge_types=(EDGE_SHARES_DEMOGRAPHICS, EDGE_SHARES_DEMOGRAPHICS),
                    terminal_user=v,
                )
            )
            if len(paths) >= cap:
                return paths
    return paths


def enumerate_three_hop(
    kg: KnowledgeGraph, user: str, cap: int = PATH_ENUMERATION_CAP, exclude_item: str | None = None
) -> list[KgPath]:
    """All u -buy-> i -also_bought-> i' -bought_by-> v paths, capped deterministically."""
    kg.require_user(user)
    paths: list[KgPath] = []
    for i in sorted(kg.user_items[user]):
        if i == exclude_item:
            continue
        for i2 in sorted(kg.item_also.get(i, frozenset())):
            if i2 == exclude_item:
                continue
            for v in sorted(kg.item_users.get(i2, frozenset())):
                if v == user:
                    continue
                paths.append(
                    KgPath(
                        hops=3,
                        nodes=(user, i, i2, v),
                        edge_types=(EDGE_BUY, EDGE_ALSO_BOUGHT, EDGE_BOUGHT_BY),
                        terminal_user=v,
                    )
                )
                if len(paths) >= cap:
                    return paths
    return paths


def explain_path(path: KgPath) -> str:
    """Render the fixed explanation template for a path shape."""
    u = path.nodes[0]
    v = path.terminal_user
    if path.hops == 2 and path.edge_types[0] == EDGE_SHARES_DEMOGRAPHICS:
        return (
            f"User {u} may have the same interests as {v} because both share "
            f"the same age, gender, and occupation group."
        )
    if path.hops == 2:
        i = path.nodes[1]
        return (
            f"User {u} may have the same interests as {v} because both {u} "
            f"and {v} purchased item {i}."
        )
    i, i2 = path.nodes[1], path.nodes[2]
    return (
        f"User {u} may have the same interests as {v} because {u} purchased item {i}, "
        f"{v} purchased item {i2}, and {i} and {i2} are often bought together."
    )


def sample_kg_evidence(
    kg: KnowledgeGraph,
    user: str,
    k1: int = 2,
    k2: int = 3,
    seed: int = 0,
    profile_lookup: Callable[[str], str] | None = None,
    exclude_item: str | None = None,
) -> KgEvidence:
    """Uniformly sample up to k1 two-hop and k2 three-hop paths (k1 < k2).

    Fewer paths than requested is not an error; whatever exists is returned.
    ``exclude_item`` drops paths touching that item (used to keep held-out
    evaluation items out of tool payloads).
    """
    if not (k1 < k2):
        raise ValueError(f"k1 must be < k2 (got k1={k1}, k2={k2})")
    kg.require_user(user)
    rng = random.Random(seed)
    two = enumerate_two_hop(kg, user, exclude_item=exclude_item)
    three = enumerate_three_hop(kg, user, exclude_item=exclude_item)
    chosen = rng.sample(two, min(k1, len(two))) + rng.sample(three, min(k2, len(three)))
    explanations = tuple(explain_path(p) for p in chosen)
    if profile_lookup is None:
        profiles = tuple("" for _ in chosen)
    else:
        profiles = tuple(profile_lookup(p.terminal_user) for p in chosen)
    return KgEvidence(paths=tuple(chosen), explanations=explanations, profiles=profiles)


def path_is_valid(kg: KnowledgeGraph, path: KgPath) -> bool:
    """Replay a path edge-by-edge against the graph."""
    if len(path.nodes) != path.hops + 1 or len(path.edge_types) != path.hops:
        return False
    if path.nodes[-1] != path.terminal_user or path.terminal_user == path.nodes[0]:
        return False
    for idx, edge in enumerate(path.edge_types):
        a, b = path.nodes[idx], path.nodes[idx + 1]
        if edge == EDGE_BUY:
            if b not in kg.user_items.get(a, frozenset()):
                return False
        elif edge == EDGE_BOUGHT_BY:
            if b not in kg.item_users.get(a, frozenset()):
                return False
        elif edge == EDGE_ALSO_BOUGHT:
            if b not in kg.item_also.get(a, frozenset()):
                return False
        elif edge == EDGE_SHARES_DEMOGRAPHICS:
            # two-hop through the shared attribute node
            if idx == 0:
                if a not in kg.demo_key or f"demo:{kg.demo_key[a]}" != b:
                    return False
            else:
                if b not in kg.demo_key or f"demo:{kg.demo_key[b]}" != a:
                    return False
        else:
            return False
    return True
