"""Dataset ingestion and split construction.

Reads raw interaction datasets in two layouts (a "::"-delimited ratings file
with separate item/user metadata files, or line-delimited JSON review/metadata
files), filters to positive feedback, builds chronological per-user behavior
sequences, produces leave-one-out validation/test cases, and samples the
10-item candidate sets (one held-out positive plus nine negatives) that every
evaluated policy ranks.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

from .util import read_jsonl, stable_hash, write_jsonl

log = logging.getLogger(__name__)

FORMATS = ("movielens", "amazon")

_YEAR_RE = re.compile(r"\((\d{4})\)")


@dataclass(frozen=True)
class Interaction:
    """One user-item event with an explicit rating and epoch timestamp."""

    user: str
    item: str
    rating: float
    timestamp: int


class SeqEvent(NamedTuple):
    item: str
    rating: float
    timestamp: int


@dataclass(frozen=True)
class BehaviorSequence:
    """A user's positive interactions in chronological order."""

    user: str
    items: tuple[SeqEvent, ...]

    @property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(e.item for e in self.items)

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class SplitCase:
    """One leave-one-out evaluation case: rank the held-out item against negatives."""

    case_id: str
    user: str
    train_prefix: BehaviorSequence
    held_out: str
    split_role: str  # "validation" | "test"


@dataclass(frozen=True)
class CandidateSet:
    """The 10 items (one positive, nine negatives) presented to the policy, shuffled."""

    case_id: str
    user: str
    candidates: tuple[str, ...]
    positive_index: int
    seed: int

    @property
    def gold(self) -> str:
        return self.candidates[self.positive_index]


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_items: int
    n_interactions: int
    inters_per_user: float
    inters_per_item: float
    sparsity: float


@dataclass(frozen=True)
class ItemMeta:
    item: str
    title: str
    categories: tuple[str, ...] = ()
    brand: str | None = None
    price: str | None = None
    description: str | None = None
    year: str | None = None
    also_bought: tuple[str, ...] = ()
    also_viewed: tuple[str, ...] = ()


@dataclass(frozen=True)
class Demographics:
    user: str
    gender: str
    age: str
    occupation: str

    def rendered(self) -> str:
        return f"{self.gender}, {self.age}, {self.occupation}"


@dataclass
class IngestResult:
    """Everything pulled out of a raw dataset directory."""

    interactions: list[Interaction]
    items: dict[str, ItemMeta]
    users: dict[str, Demographics] = field(default_factory=dict)
    malformed_lines: int = 0


def load_interactions(fmt: str, path: str | Path) -> IngestResult:
    """Parse a dataset directory into interactions plus item/user metadata.

    ``fmt`` selects the layout: "movielens" expects ratings.dat / movies.dat
    (and optionally users.dat) with "::"-separated fields; "amazon" expects
    reviews.jsonl / meta.jsonl with one JSON record per line. Malformed lines
    are counted, logged, and skipped.
    """
    path = Path(path)
    if fmt not in FORMATS:
        raise ValueError(f"unknown format tag {fmt!r}; expected one of {FORMATS}")
    if not path.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {path}")
    if fmt == "movielens":
        result = _load_movielens(path)
    else:
        result = _load_amazon(path)
    if not result.interactions:
        raise ValueError(f"zero valid records in {path} (format {fmt})")
    if result.malformed_lines:
        log.warning("%d malformed lines skipped while loading %s", result.malformed_lines, path)
    return result


def _load_movielens(path: Path) -> IngestResult:
    ratings_file = path / "ratings.dat"
    movies_file = path / "movies.dat"
    users_file = path / "users.dat"
    if not ratings_file.exists():
        raise FileNotFoundError(f"missing ratings file: {ratings_file}")

    interactions: list[Interaction] = []
    malformed = 0
    with open(ratings_file, encoding="latin-1") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != 4:
                malformed += 1
                continue
            try:
                interactions.append(
                    Interaction(user=parts[0], item=parts[1], rating=float(parts[2]), timestamp=int(parts[3]))
                )
            except ValueError:
                malformed += 1

    items: dict[str, ItemMeta] = {}
    if movies_file.exists():
        with open(movies_file, encoding="latin-1") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("::")
                if len(parts) != 3:
                    malformed += 1
                    continue
                item_id, title, genres = parts
                m = _YEAR_RE.search(title)
                items[item_id] = ItemMeta(
                    item=item_id,
                    title=title,
                    categories=tuple(g for g in genres.split("|") if g),
                    year=m.group(1) if m else None,
                )

    users: dict[str, Demographics] = {}
    if users_file.exists():
        with open(users_file, encoding="latin-1") as f:
            for line in f:
                parts = line.strip().split("::")
                if len(parts) < 4:
                    malformed += 1
                    continue
                users[parts[0]] = Demographics(user=parts[0], gender=parts[1], age=parts[2], occupation=parts[3])

    return IngestResult(interactions=interactions, items=items, users=users, malformed_lines=malformed)


def _as_tuple(value) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        return (value,)
    return tuple(str(v) for v in value)


def _load_amazon(path: Path) -> IngestResult:
    reviews_file = path / "reviews.jsonl"
    meta_file = path / "meta.jsonl"
    if not reviews_file.exists():
        raise FileNotFoundError(f"missing reviews file: {reviews_file}")

    interactions: list[Interaction] = []
    malformed = 0
    with open(reviews_file, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                interactions.append(
                    Interaction(
                        user=str(rec["reviewerID"]),
                        item=str(rec["asin"]),
                        rating=float(rec["overall"]),
                        timestamp=int(rec["unixReviewTime"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                malformed += 1

    items: dict[str, ItemMeta] = {}
    if meta_file.exists():
        with open(meta_file, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                    item_id = str(rec["asin"])
                except (json.JSONDecodeError, KeyError, TypeError):
                    malformed += 1
                    continue
                items[item_id] = ItemMeta(
                    item=item_id,
                    title=str(rec.get("title", item_id)),
                    categories=_as_tuple(rec.get("category") or rec.get("categories")),
                    brand=rec.get("brand"),
                    price=str(rec["price"]) if rec.get("price") is not None else None,
                    description=rec.get("description"),
                    also_bought=_as_tuple(rec.get("also_buy") or rec.get("also_bought")),
                    also_viewed=_as_tuple(rec.get("also_view") or rec.get("also_viewed")),
                )

    return IngestResult(interactions=interactions, items=items, malformed_lines=malformed)


def build_sequences(
    interactions: Iterable[Interaction], positive_threshold: float = 3.0
) -> dict[str, BehaviorSequence]:
    """Keep interactions rated strictly above the threshold, ordered by time per user.

    Timestamp ties keep input-file order (stable sort), so runs are reproducible.
    Users with no positive interactions are omitted.
    """
    per_user: dict[str, list[SeqEvent]] = {}
    for inter in interactions:
        if inter.rating > positive_threshold:
            per_user.setdefault(inter.user, []).append(
                SeqEvent(inter.item, inter.rating, inter.timestamp)
            )
    sequences = {}
    for user, events in per_user.items():
        events.sort(key=lambda e: e.timestamp)
        sequences[user] = BehaviorSequence(user=user, items=tuple(events))
    return sequences


def positives_of(sequences: Mapping[str, BehaviorSequence]) -> dict[str, set[str]]:
    """Full positive item set per user (used to exclude negatives)."""
    return {u: set(seq.item_ids) for u, seq in sequences.items()}


def leave_one_out_split(sequences: Mapping[str, BehaviorSequence]) -> list[SplitCase]:
    """Last item -> test case, second-to-last -> validation case, per user.

    The test case's train prefix includes the validation item. Users with
    fewer than 3 positives cannot supply all three roles and are skipped
    (count is logged; recompute it as len(sequences) - n_test_cases).
    """
    cases: list[SplitCase] = []
    skipped = 0
    for user in sorted(sequences):
        seq = sequences[user]
        if len(seq) < 3:
            skipped += 1
            continue
        cases.append(
            SplitCase(
                case_id=f"validation:{user}",
                user=user,
                train_prefix=BehaviorSequence(user=user, items=seq.items[:-2]),
                held_out=seq.items[-2].item,
                split_role="validation",
            )
        )
        cases.append(
            SplitCase(
                case_id=f"test:{user}",
                user=user,
                train_prefix=BehaviorSequence(user=user, items=seq.items[:-1]),
                held_out=seq.items[-1].item,
                split_role="test",
            )
        )
    if skipped:
        log.info("leave-one-out: skipped %d users with fewer than 3 positives", skipped)
    return cases


def training_sequences(sequences: Mapping[str, BehaviorSequence]) -> dict[str, BehaviorSequence]:
    """Sequences with the last two items (validation + test targets) removed.

    This is the only data the shared indices (profiles, graphs, similarity)
    may be built from, so that neither evaluation role can leak.
    """
    out = {}
    for user, seq in sequences.items():
        if len(seq) >= 3:
            out[user] = BehaviorSequence(user=user, items=seq.items[:-2])
    return out


def sample_candidates(
    case: SplitCase,
    item_universe: Iterable[str],
    user_positives: set[str],
    n_neg: int = 9,
    seed: int = 0,
) -> CandidateSet:
    """Draw n_neg negatives outside the user's full positive history, shuffle with the gold.

    Deterministic under ``seed``; the candidate order is a seeded shuffle so the
    positive's position carries no signal, and the gold index is stored separately.
    """
    pool = sorted(set(item_universe) - user_positives)
    if len(pool) < n_neg:
        raise ValueError(
            f"insufficient negatives for {case.case_id}: pool has {len(pool)}, need {n_neg}"
        )
    rng = random.Random(seed)
    negatives = rng.sample(pool, n_neg)
    candidates = negatives + [case.held_out]
    rng.shuffle(candidates)
    return CandidateSet(
        case_id=case.case_id,
        user=case.user,
        candidates=tuple(candidates),
        positive_index=candidates.index(case.held_out),
        seed=seed,
    )


def sample_all_candidates(
    cases: Iterable[SplitCase],
    sequences: Mapping[str, BehaviorSequence],
    item_universe: Iterable[str],
    n_neg: int = 9,
    seed: int = 0,
) -> list[CandidateSet]:
    """Candidate sets for every case, each with a per-case seed derived from ``seed``."""
    universe = sorted(set(item_universe))
    positives = positives_of(sequences)
    return [
        sample_candidates(
            case,
            universe,
            positives[case.user],
            n_neg=n_neg,
            seed=stable_hash(seed, case.case_id),
        )
        for case in cases
    ]


def save_candidate_sets(path: str | Path, candidate_sets: Iterable[CandidateSet]) -> int:
    """Persist candidate sets as JSONL so all evaluated policies rank identical lists."""
    return write_jsonl(
        path,
        (
            {
                "case_id": cs.case_id,
                "user": cs.user,
                "candidates": list(cs.candidates),
                "positive_index": cs.positive_index,
                "seed": cs.seed,
            }
            for cs in candidate_sets
        ),
    )


def load_candidate_sets(path: str | Path) -> list[CandidateSet]:
    return [
        CandidateSet(
            case_id=rec["case_id"],
            user=rec["user"],
            candidates=tuple(rec["candidates"]),
            positive_index=rec["positive_index"],
            seed=rec["seed"],
        )
        for rec in read_jsonl(path)
    ]


def dataset_stats(interactions: Iterable[Interaction]) -> DatasetStats:
    """Counts and sparsity over (already filtered) interactions."""
    users: set[str] = set()
    items: set[str] = set()
    n = 0
    for inter in interactions:
        users.add(inter.user)
        items.add(inter.item)
        n += 1
    if n == 0:
        raise ValueError("no interactions")
    n_users, n_items = len(users), len(items)
    return DatasetStats(
        n_users=n_users,
        n_items=n_items,
        n_interactions=n,
        inters_per_user=n / n_users,
        inters_per_item=n / n_items,
        sparsity=1.0 - n / (n_users * n_items),
    )
