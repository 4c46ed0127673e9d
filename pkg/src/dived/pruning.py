"""Duplicate-event pruning by trigger overlap within a tree.

Two events of the same tree whose generated triggers overlap beyond a
threshold are considered duplicates; the event that comes later in pre-order
is removed and its children are re-parented to its parent, preserving the
sibling structure needed for hard negatives.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from . import jsonl
from .curation import EventRecord, dataset_to_trees
from .errors import DivedError

logger = logging.getLogger(__name__)


class PruneInputError(DivedError):
    """prune_tree precondition violation: an event without samples."""


@dataclass(frozen=True)
class OverlapRecord:
    """Audit row for one removed pair; event_a precedes event_b in pre-order
    and event_b is the one that was removed."""

    event_a: str
    event_b: str
    ratio: float
    matched_triggers: tuple[str, ...]


def overlap_ratio(triggers_a: Sequence[str], triggers_b: Sequence[str]) -> float:
    """|A ∩ B| / min(|A|, |B|) over deduplicated, trimmed trigger sets.

    Symmetric in its arguments. With the nominal ten distinct triggers per
    event this equals matches/10.
    """
    if not triggers_a or not triggers_b:
        raise ValueError("trigger lists must be non-empty")
    set_a = {t.strip() for t in triggers_a}
    set_b = {t.strip() for t in triggers_b}
    return len(set_a & set_b) / min(len(set_a), len(set_b))


def _matched(triggers_a: Sequence[str], triggers_b: Sequence[str]) -> tuple[str, ...]:
    return tuple(sorted({t.strip() for t in triggers_a} & {t.strip() for t in triggers_b}))


def prune_tree(
    tree: Sequence[EventRecord], threshold: float = 0.5
) -> tuple[list[EventRecord], list[OverlapRecord]]:
    """Remove duplicate events from one tree (records in pre-order).

    Event pairs are compared in pre-order; when their trigger overlap ratio
    strictly exceeds the threshold and both are still alive, the pre-order
    later event is removed together with its samples. Removed events take no
    further part in comparisons; children of a removed node are re-parented
    to its nearest surviving ancestor. Returns the surviving records (copies;
    the input is unchanged) and the audit records for each removed pair.
    """
    for rec in tree:
        if not rec.samples:
            raise PruneInputError(f"event {rec.event!r} has no samples; cannot compute trigger overlap")

    triggers = {rec.event: [s.trigger for s in rec.samples] for rec in tree}
    dead: set[str] = set()
    audits: list[OverlapRecord] = []
    for i, first in enumerate(tree):
        if first.event in dead:
            continue
        for second in tree[i + 1 :]:
            if second.event in dead:
                continue
            ratio = overlap_ratio(triggers[first.event], triggers[second.event])
            if ratio > threshold:
                dead.add(second.event)
                audits.append(
                    OverlapRecord(
                        event_a=first.event,
                        event_b=second.event,
                        ratio=ratio,
                        matched_triggers=_matched(triggers[first.event], triggers[second.event]),
                    )
                )
                logger.info("pruning %r: trigger overlap %.2f with %r", second.event, ratio, first.event)

    parent_of = {rec.event: rec.parent for rec in tree}

    def surviving_parent(event: str) -> str | None:
        parent = parent_of[event]
        while parent is not None and parent in dead:
            parent = parent_of[parent]
        return parent

    survivors: list[EventRecord] = []
    new_parent = {rec.event: surviving_parent(rec.event) for rec in tree}
    for rec in tree:
        if rec.event in dead:
            continue
        kept = copy.deepcopy(rec)
        kept.parent = new_parent[rec.event]
        kept.children = [other.event for other in tree if other.event not in dead and new_parent[other.event] == rec.event]
        survivors.append(kept)
    return survivors, audits


def prune_dataset(
    records: Sequence[EventRecord], threshold: float = 0.5
) -> tuple[list[EventRecord], list[OverlapRecord]]:
    """Apply prune_tree to every tree of a dataset. Cross-tree duplicates are
    deliberately not considered."""
    survivors: list[EventRecord] = []
    audits: list[OverlapRecord] = []
    for tree in dataset_to_trees(records):
        kept, removed = prune_tree(tree, threshold)
        survivors.extend(kept)
        audits.extend(removed)
    return survivors, audits


def write_audit(records: Iterable[OverlapRecord], path: str | Path) -> int:
    return jsonl.write_rows(
        path,
        (
            {
                "event_a": r.event_a,
                "event_b": r.event_b,
                "ratio": r.ratio,
                "matched_triggers": list(r.matched_triggers),
            }
            for r in records
        ),
    )
