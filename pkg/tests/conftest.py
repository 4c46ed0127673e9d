from __future__ import annotations

from pathlib import Path

import pytest

from dived.curation import EventRecord, GeneratedSample
from dived.llm_client import Backend
from dived.ontology import Ontology, build_ontology, load_ontology

REPO_ROOT = Path(__file__).resolve().parents[1]
FIXTURES = REPO_ROOT / "fixtures"
TOY_ONTOLOGY = FIXTURES / "ontology_toy.jsonl"


@pytest.fixture
def toy_ontology_path() -> Path:
    return TOY_ONTOLOGY


@pytest.fixture
def toy_ontology() -> Ontology:
    return load_ontology(TOY_ONTOLOGY)


class ScriptedBackend(Backend):
    """Test backend that replays a fixed list of responses (or raises the
    exception found in the list) in call order."""

    name = "scripted"

    def __init__(self, script: list):
        self.script = list(script)
        self.calls = 0

    def generate(self, request):
        self.calls += 1
        if not self.script:
            raise AssertionError("ScriptedBackend ran out of responses")
        item = self.script.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def make_sample(event: str, idx: int) -> GeneratedSample:
    trigger = f"{event}trig{idx}"
    return GeneratedSample(
        event_name=event,
        sentence=f"The {event} unit {trigger} during incident number {idx}.",
        trigger=trigger,
    )


def grid_dataset(
    n_trees: int = 4,
    children_per_tree: int = 10,
    n_definitions: int = 10,
    n_samples: int = 10,
) -> tuple[list[EventRecord], Ontology]:
    """Synthetic dataset for slicing tests: n_trees roots, each with
    children_per_tree children. Only the children carry data records, so every
    dataset event has children_per_tree - 1 siblings."""
    rows: list[tuple[str, str | None, str | None]] = []
    records: list[EventRecord] = []
    for t in range(n_trees):
        root = f"root{t}"
        rows.append((root, None, None))
        for c in range(children_per_tree):
            event = f"ev{t}_{c}"
            rows.append((event, root, None))
            records.append(
                EventRecord(
                    event=event,
                    parent=root,
                    children=[],
                    definitions=[f"{event} definition number {d}" for d in range(n_definitions)],
                    samples=[make_sample(event, s) for s in range(n_samples)],
                )
            )
    return records, build_ontology(rows)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results: dict[str, str] = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" in nodeid and getattr(rep, "when", "call") in ("call", "setup"):
                name = nodeid.split("::")[-1]
                if status != "passed" or name not in results:
                    results[name] = "PASS" if status == "passed" else "FAIL"
    if results:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name in sorted(results):
            terminalreporter.write_line(f"[{results[name]}] {name}")
