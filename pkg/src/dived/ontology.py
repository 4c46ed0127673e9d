"""Event-type ontology: dependency trees of event types with parent/child/sibling
queries and held-out filtering.

An ontology is a forest of event-type trees. Ontology values are treated as
immutable after construction and are safe to share across threads; all
filtering operations return new ontologies.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from . import jsonl
from .errors import DivedError

logger = logging.getLogger(__name__)


class OntologyFormatError(DivedError):
    """Malformed ontology row (missing/invalid fields, unknown parent reference)."""

    def __init__(self, origin: str, line: int, message: str):
        super().__init__(f"{origin}:{line}: {message}")
        self.origin = origin
        self.line = line


class DuplicateEventNameError(DivedError):
    """The same event name appears twice; the message names both occurrences."""


class OntologyCycleError(DivedError):
    """A node is its own ancestor; the message names the offending node."""


class UnknownEventError(DivedError):
    """Lookup of an event name that does not exist in the ontology."""


def normalize_name(name: str) -> str:
    """Canonical form used for held-out matching: lowercase, trimmed, internal
    whitespace collapsed, hyphens and underscores treated as spaces."""
    return re.sub(r"\s+", " ", name.replace("-", " ").replace("_", " ")).strip().casefold()


def _name_key(name: str) -> str:
    # Uniqueness/lookup key: case-insensitive after trimming.
    return name.strip().casefold()


@dataclass(eq=False)
class EventTypeNode:
    """One event type inside a dependency tree.

    ``definitions`` starts empty and is filled by the curation/expansion steps;
    ``definitions[0]`` is the curated seed definition.
    """

    name: str
    external_id: str | None = None
    parent: "EventTypeNode | None" = None
    children: list["EventTypeNode"] = field(default_factory=list)
    definitions: list[str] = field(default_factory=list)

    def iter_preorder(self) -> Iterator["EventTypeNode"]:
        yield self
        for child in self.children:
            yield from child.iter_preorder()

    def ancestors(self) -> Iterator["EventTypeNode"]:
        node = self.parent
        while node is not None:
            yield node
            node = node.parent

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"EventTypeNode({self.name!r}, children={len(self.children)})"


@dataclass(eq=False)
class Ontology:
    """A forest of event-type trees with deterministic iteration order:
    trees in file order, nodes in pre-order within a tree."""

    trees: list[EventTypeNode]
    version: str = "1"
    source: str = ""

    def __post_init__(self) -> None:
        self._index: dict[str, EventTypeNode] = {}
        for node in self.iter_nodes():
            self._index[_name_key(node.name)] = node

    def iter_nodes(self) -> Iterator[EventTypeNode]:
        for tree in self.trees:
            yield from tree.iter_preorder()

    def __len__(self) -> int:
        return sum(1 for _ in self.iter_nodes())

    def __contains__(self, name: str) -> bool:
        return _name_key(name) in self._index

    def get(self, name: str) -> EventTypeNode:
        try:
            return self._index[_name_key(name)]
        except KeyError:
            raise UnknownEventError(f"unknown event type: {name!r}") from None

    def names(self) -> list[str]:
        return [node.name for node in self.iter_nodes()]


def build_ontology(
    rows: Iterable[tuple[str, str | None, str | None]],
    version: str = "1",
    source: str = "",
    origin: str = "<memory>",
) -> Ontology:
    """Build an Ontology from (name, parent_name, external_id) tuples.

    Rows are in file order; a row may reference a parent declared later.
    Raises OntologyFormatError, DuplicateEventNameError, or OntologyCycleError
    on invariant violations.
    """
    numbered = [(lineno, row) for lineno, row in enumerate(rows, start=1)]
    return _build_ontology(numbered, version=version, source=source, origin=origin)


def _build_ontology(
    numbered_rows: list[tuple[int, tuple[str, str | None, str | None]]],
    version: str,
    source: str,
    origin: str,
) -> Ontology:
    nodes: dict[str, EventTypeNode] = {}
    first_seen: dict[str, tuple[int, str]] = {}
    ordered: list[tuple[int, EventTypeNode, str | None]] = []

    for lineno, (name, parent_name, external_id) in numbered_rows:
        if not isinstance(name, str) or not name.strip():
            raise OntologyFormatError(origin, lineno, "field 'name' must be a non-empty string")
        if parent_name is not None and not isinstance(parent_name, str):
            raise OntologyFormatError(origin, lineno, "field 'parent' must be a string or null")
        if external_id is not None and not isinstance(external_id, str):
            raise OntologyFormatError(origin, lineno, "field 'external_id' must be a string or null")
        key = _name_key(name)
        if key in first_seen:
            prev_line, prev_name = first_seen[key]
            raise DuplicateEventNameError(
                f"duplicate event name: {name!r} at {origin}:{lineno} "
                f"already defined as {prev_name!r} at {origin}:{prev_line}"
            )
        first_seen[key] = (lineno, name)
        node = EventTypeNode(name=name.strip(), external_id=external_id)
        nodes[key] = node
        ordered.append((lineno, node, parent_name))

    for lineno, node, parent_name in ordered:
        if parent_name is None:
            continue
        parent = nodes.get(_name_key(parent_name))
        if parent is None:
            raise OntologyFormatError(origin, lineno, f"unknown parent {parent_name!r} for node {node.name!r}")
        node.parent = parent
        parent.children.append(node)

    _check_acyclic(nodes.values())
    trees = [node for _, node, parent_name in ordered if parent_name is None]
    return Ontology(trees=trees, version=version, source=source)


def _check_acyclic(nodes: Iterable[EventTypeNode]) -> None:
    safe: set[int] = set()
    for start in nodes:
        chain: list[EventTypeNode] = []
        on_chain: set[int] = set()
        node: EventTypeNode | None = start
        while node is not None and id(node) not in safe:
            if id(node) in on_chain:
                raise OntologyCycleError(f"cycle detected at node {node.name!r}: it is its own ancestor")
            chain.append(node)
            on_chain.add(id(node))
            node = node.parent
        safe.update(id(n) for n in chain)


def load_ontology(path: str | Path) -> Ontology:
    """Load an ontology from a JSONL file of {"name", "parent", "external_id"} rows.

    File order defines tree order and the order of children under a parent.
    """
    numbered: list[tuple[int, tuple[str, str | None, str | None]]] = []
    for lineno, obj in jsonl.read_rows(path):
        if "name" not in obj:
            raise OntologyFormatError(str(path), lineno, "missing required field 'name'")
        numbered.append((lineno, (obj["name"], obj.get("parent"), obj.get("external_id"))))
    return _build_ontology(numbered, version="1", source=str(path), origin=str(path))


def save_ontology(ontology: Ontology, path: str | Path) -> int:
    """Write an ontology as JSONL in pre-order. Returns the node count written."""
    return jsonl.write_rows(
        path,
        (
            {
                "name": node.name,
                "parent": node.parent.name if node.parent is not None else None,
                "external_id": node.external_id,
            }
            for node in ontology.iter_nodes()
        ),
    )


def siblings(ontology: Ontology, name: str) -> list[EventTypeNode]:
    """All nodes sharing the named node's parent, excluding the node itself.

    Root nodes have no parent and therefore no siblings (an empty list), unless
    an explicit synthetic parent was built into the ontology.
    """
    node = ontology.get(name)
    if node.parent is None:
        return []
    return [child for child in node.parent.children if child is not node]


def filter_heldout(ontology: Ontology, heldout_names: list[str]) -> Ontology:
    """Remove every tree containing a node whose normalized name matches a
    held-out name. Returns a new Ontology; the input is unchanged."""
    targets = {normalize_name(n) for n in heldout_names if n.strip()}
    present = {normalize_name(node.name) for node in ontology.iter_nodes()}
    for missing in sorted(t for t in targets if t not in present):
        logger.warning("held-out name %r matches no event type; ignored", missing)

    kept_rows: list[tuple[str, str | None, str | None]] = []
    defs: dict[str, list[str]] = {}
    for tree in ontology.trees:
        tree_nodes = list(tree.iter_preorder())
        if any(normalize_name(n.name) in targets for n in tree_nodes):
            logger.info("removing tree rooted at %r (%d nodes): held-out match", tree.name, len(tree_nodes))
            continue
        for n in tree_nodes:
            kept_rows.append((n.name, n.parent.name if n.parent else None, n.external_id))
            if n.definitions:
                defs[n.name] = list(n.definitions)

    filtered = build_ontology(kept_rows, version=ontology.version, source=ontology.source)
    for node in filtered.iter_nodes():
        if node.name in defs:
            node.definitions = defs[node.name]
    return filtered
