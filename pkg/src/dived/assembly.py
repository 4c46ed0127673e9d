"""Training/evaluation instance assembly.

Turns a (pruned) generated dataset into serialized instruction instances:
positives, sentence-reusing negatives with target "None", sibling
hard-negatives, optional ontology context, and the definition-removal
ablation variant. All sampling is seeded and derived per event, so output is
a pure function of (dataset, ontology, spec) regardless of scheduling.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from . import jsonl
from .curation import EventRecord
from .errors import DivedError
from .llm_client import MissingPlaceholderError
from .ontology import Ontology
from .ontology import siblings as ontology_siblings

logger = logging.getLogger(__name__)

NONE_TARGET = "None"
KINDS = ("positive", "negative", "hard_negative")


class AssemblyError(DivedError):
    pass


class InsufficientDataError(AssemblyError):
    """Not enough events/definitions/samples for the requested slice."""


class NoNegativeCandidatesError(AssemblyError):
    """Negative instances requested but no candidate event types exist."""


@dataclass(frozen=True)
class OntologyContext:
    parent: str | None
    children: tuple[str, ...]


@dataclass(frozen=True)
class TrainingInstance:
    instance_id: str
    event_name: str
    definition: str
    ontology_context: OntologyContext | None
    sentence: str
    target: str
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"bad kind {self.kind!r}")
        if self.kind == "positive":
            if self.target == NONE_TARGET:
                raise ValueError("positive instance cannot have target 'None'")
            if self.target not in self.sentence:
                raise ValueError(f"positive target {self.target!r} is not a substring of the sentence")
        elif self.target != NONE_TARGET:
            raise ValueError(f"{self.kind} instance must have target 'None', got {self.target!r}")


@dataclass(frozen=True)
class SliceSpec:
    """One point on the scaling grid: how much of each data component to use."""

    n_events: int
    n_definitions: int
    n_samples: int
    n_negatives: int = 0
    n_hard_negatives: int = 0
    with_ontology: bool = False
    with_definition: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_events", "n_definitions", "n_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.n_negatives < 0:
            raise ValueError("n_negatives must be non-negative")
        if not 0 <= self.n_hard_negatives <= self.n_negatives:
            raise ValueError("n_hard_negatives must satisfy 0 <= H <= n_negatives")


def _rng(seed: int, *scope: str) -> random.Random:
    return random.Random("|".join([str(seed), *scope]))


def _cousin_pool(ontology: Ontology, event: str) -> list[str]:
    """Descendants of the event's ancestors, nearest ancestor first, excluding
    the event's own subtree, its siblings, and the ancestors themselves."""
    node = ontology.get(event)
    subtree = {n.name for n in node.iter_preorder()}
    skip = subtree | {a.name for a in node.ancestors()}
    if node.parent is not None:
        skip |= {c.name for c in node.parent.children}
    pool: list[str] = []
    seen = set(skip)
    for ancestor in node.ancestors():
        for desc in ancestor.iter_preorder():
            if desc.name not in seen:
                seen.add(desc.name)
                pool.append(desc.name)
    return pool


def assemble(
    dataset: Sequence[EventRecord], ontology: Ontology, spec: SliceSpec
) -> list[TrainingInstance]:
    """Build instances for one slice of the dataset.

    Selects n_events events (seeded, without replacement), per event
    n_samples samples and n_definitions definitions; definitions are assigned
    to positives round-robin so the instance count is invariant along the
    definition axis. Every positive is followed by n_negatives negatives that
    reuse its sentence with target "None": the first n_hard_negatives drawn
    from siblings in the ontology, the rest from non-sibling events with no
    gold sample for this sentence. When an event has fewer siblings than
    requested, the shortfall is filled from cousins and then random
    non-occurring events; those fillers are plain negatives (kind
    "negative"), since only true siblings count as hard negatives.
    """
    records = list(dataset)
    if len(records) < spec.n_events:
        raise InsufficientDataError(f"need {spec.n_events} events, dataset has {len(records)}")
    if spec.n_negatives > 0 and len(records) < 2:
        raise NoNegativeCandidatesError("negative instances need at least 2 events in the dataset")

    by_name = {r.event: r for r in records}
    sentences = {r.event: {s.sentence for s in r.samples} for r in records}

    select_rng = _rng(spec.seed, "select")
    chosen = sorted(select_rng.sample(range(len(records)), spec.n_events))
    selected = [records[i] for i in chosen]

    for rec in selected:
        if len(rec.definitions) < spec.n_definitions:
            raise InsufficientDataError(
                f"event {rec.event!r} has {len(rec.definitions)} definitions, need {spec.n_definitions}"
            )
        if len(rec.samples) < spec.n_samples:
            raise InsufficientDataError(
                f"event {rec.event!r} has {len(rec.samples)} samples, need {spec.n_samples}"
            )

    def context(event: str) -> OntologyContext | None:
        if not spec.with_ontology:
            return None
        node = ontology.get(event)
        return OntologyContext(
            parent=node.parent.name if node.parent is not None else None,
            children=tuple(c.name for c in node.children),
        )

    def definition_of(event: str) -> str:
        defs = by_name[event].definitions
        return defs[0] if defs else ""

    instances: list[TrainingInstance] = []
    fallback_count = 0
    for rec in selected:
        event = rec.event
        defs_rng = _rng(spec.seed, event, "defs")
        samples_rng = _rng(spec.seed, event, "samples")
        negatives_rng = _rng(spec.seed, event, "negatives")

        sel_defs = [rec.definitions[i] for i in defs_rng.sample(range(len(rec.definitions)), spec.n_definitions)]
        sel_samples = [rec.samples[i] for i in sorted(samples_rng.sample(range(len(rec.samples)), spec.n_samples))]

        all_siblings = ontology_siblings(ontology, event)
        sibling_names = [s.name for s in all_siblings if s.name in by_name and by_name[s.name].definitions]
        sibling_set = {s.name for s in all_siblings}
        cousins = [c for c in _cousin_pool(ontology, event) if c in by_name and by_name[c].definitions]

        for si, sample in enumerate(sel_samples):
            definition = sel_defs[si % spec.n_definitions]
            instances.append(
                TrainingInstance(
                    instance_id=f"{event}|s{si}|p",
                    event_name=event,
                    definition=definition if spec.with_definition else "",
                    ontology_context=context(event),
                    sentence=sample.sentence,
                    target=sample.trigger,
                    kind="positive",
                )
            )
            if spec.n_negatives == 0:
                continue

            sentence = sample.sentence
            used: set[str] = set()

            def eligible(pool: Iterable[str]) -> list[str]:
                return [c for c in pool if c != event and c not in used and sentence not in sentences[c]]

            negative_events: list[tuple[str, str]] = []  # (event, kind)
            sib_pool = eligible(sibling_names)
            hard = negatives_rng.sample(sib_pool, min(spec.n_hard_negatives, len(sib_pool)))
            used.update(hard)
            negative_events.extend((name, "hard_negative") for name in hard)

            shortfall = spec.n_hard_negatives - len(hard)
            if shortfall > 0:
                fallback_count += shortfall
                cousin_pool = eligible(cousins)
                fill = negatives_rng.sample(cousin_pool, min(shortfall, len(cousin_pool)))
                used.update(fill)
                negative_events.extend((name, "negative") for name in fill)
                shortfall -= len(fill)

            plain_needed = (spec.n_negatives - spec.n_hard_negatives) + shortfall
            plain_pool = eligible(r.event for r in records if r.event not in sibling_set and r.definitions)
            plain = negatives_rng.sample(plain_pool, min(plain_needed, len(plain_pool)))
            if len(plain) < plain_needed:
                # Non-sibling candidates exhausted (small trees): top up from
                # the remaining siblings, still as plain negatives.
                used.update(plain)
                overflow_pool = eligible(sibling_names)
                overflow = negatives_rng.sample(overflow_pool, min(plain_needed - len(plain), len(overflow_pool)))
                plain.extend(overflow)
            if len(plain) < plain_needed:
                raise InsufficientDataError(
                    f"event {event!r}, sample {si}: need {plain_needed - len(plain)} more "
                    f"negative candidates than the dataset offers"
                )
            negative_events.extend((name, "negative") for name in plain)

            for ni, (neg_event, kind) in enumerate(negative_events):
                instances.append(
                    TrainingInstance(
                        instance_id=f"{event}|s{si}|n{ni}",
                        event_name=neg_event,
                        definition=definition_of(neg_event) if spec.with_definition else "",
                        ontology_context=context(neg_event),
                        sentence=sentence,
                        target=NONE_TARGET,
                        kind=kind,
                    )
                )

    if fallback_count:
        logger.info("hard-negative fallback used for %d slots (not enough siblings)", fallback_count)
    return instances


# ---------------------------------------------------------------------------
# Instance rendering
# ---------------------------------------------------------------------------

DEFAULT_INSTANCE_TEMPLATE = (
    "Identify the event trigger in the sentence.\n"
    "Event type: {event}\n"
    "{definition_block}"
    "{ontology_block}"
    "Sentence: {sentence}\n"
    "Answer with the trigger word, or None if the event does not occur.\n"
)

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


def render_instance(
    instance: TrainingInstance, template: str = DEFAULT_INSTANCE_TEMPLATE
) -> tuple[str, str]:
    """Serialize one instance into a (prompt, completion) pair.

    The definition and ontology blocks are emitted only when the instance
    carries them, so the ablation variant simply has no Definition block.
    """
    present = set(_PLACEHOLDER_RE.findall(template))
    required = {"event", "sentence"}
    if instance.definition:
        required.add("definition_block")
    if instance.ontology_context is not None:
        required.add("ontology_block")
    missing = required - present
    if missing:
        raise MissingPlaceholderError(sorted(missing))

    definition_block = f"Definition: {instance.definition}\n" if instance.definition else ""
    if instance.ontology_context is not None:
        ctx = instance.ontology_context
        ontology_block = (
            f"Ontology: parent event: {ctx.parent or 'none'}; "
            f"child events: {', '.join(ctx.children) or 'none'}\n"
        )
    else:
        ontology_block = ""
    values = {
        "event": instance.event_name,
        "sentence": instance.sentence,
        "definition_block": definition_block,
        "ontology_block": ontology_block,
    }
    prompt = _PLACEHOLDER_RE.sub(lambda m: values.get(m.group(1), m.group(0)), template)
    return prompt, instance.target


# ---------------------------------------------------------------------------
# Instance JSONL round-trip
# ---------------------------------------------------------------------------


def write_jsonl(instances: Iterable[TrainingInstance], path: str | Path) -> int:
    """Write instances as JSONL with a stable field order."""
    return jsonl.write_rows(
        path,
        (
            {
                "instance_id": inst.instance_id,
                "event_name": inst.event_name,
                "definition": inst.definition,
                "ontology_context": (
                    {"parent": inst.ontology_context.parent, "children": list(inst.ontology_context.children)}
                    if inst.ontology_context is not None
                    else None
                ),
                "sentence": inst.sentence,
                "target": inst.target,
                "kind": inst.kind,
            }
            for inst in instances
        ),
    )


def read_jsonl(path: str | Path) -> list[TrainingInstance]:
    """Read instances back, enforcing the schema; violations name the line."""
    instances: list[TrainingInstance] = []
    for lineno, obj in jsonl.read_rows(path):
        missing = [k for k in ("instance_id", "event_name", "definition", "sentence", "target", "kind") if k not in obj]
        if missing:
            raise jsonl.JsonlError(path, lineno, f"missing required fields: {', '.join(missing)}")
        ctx_obj = obj.get("ontology_context")
        ctx: OntologyContext | None = None
        if ctx_obj is not None:
            if (
                not isinstance(ctx_obj, dict)
                or "parent" not in ctx_obj
                or not isinstance(ctx_obj.get("children"), list)
            ):
                raise jsonl.JsonlError(path, lineno, "ontology_context must be null or {parent, children}")
            ctx = OntologyContext(parent=ctx_obj["parent"], children=tuple(ctx_obj["children"]))
        try:
            instances.append(
                TrainingInstance(
                    instance_id=obj["instance_id"],
                    event_name=obj["event_name"],
                    definition=obj["definition"],
                    ontology_context=ctx,
                    sentence=obj["sentence"],
                    target=obj["target"],
                    kind=obj["kind"],
                )
            )
        except (ValueError, TypeError) as exc:
            raise jsonl.JsonlError(path, lineno, str(exc)) from exc
    return instances


def count_kinds(instances: Iterable[TrainingInstance]) -> dict[str, int]:
    counts = {kind: 0 for kind in KINDS}
    for inst in instances:
        counts[inst.kind] += 1
    return counts
