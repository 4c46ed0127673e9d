"""Trigger identification/classification scoring and ablation drop rates.

Identification (ID) matches predicted trigger strings against gold trigger
strings within a sentence, pooled over event types; classification (CLS)
additionally requires the event type to match. Matching is one-to-one over
multisets with exact string equality after trim and whitespace collapse
(case-sensitive), which makes greedy matching optimal. When every record of
a sentence carries character spans on both sides, span equality replaces
string equality.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import jsonl
from .errors import DivedError

NONE_TOKEN = "none"


class EvaluationInputError(DivedError):
    """Bad gold/prediction input: unknown sentence id or duplicate record."""


def normalize_trigger(text: str) -> str:
    return re.sub(r"\s+", " ", text.strip())


def parse_model_output(raw: str, delimiters: str = ",\n") -> list[str]:
    """Split raw model output into trigger strings.

    Splits on any delimiter character, trims, drops empty pieces and the
    literal "None" (case-insensitive). Order is preserved and duplicates are
    kept: triggers are multisets.
    """
    parts = re.split(f"[{re.escape(delimiters)}]", raw)
    out = []
    for part in parts:
        trimmed = part.strip()
        if trimmed and trimmed.casefold() != NONE_TOKEN:
            out.append(trimmed)
    return out


@dataclass(frozen=True)
class GoldRecord:
    """Gold triggers for one (sentence, event type). An empty trigger list is
    an explicit no-event marker."""

    sentence_id: str
    event_type: str
    triggers: tuple[str, ...]
    spans: tuple[tuple[int, int], ...] | None = None


@dataclass(frozen=True)
class PredictionRecord:
    sentence_id: str
    event_type: str
    triggers: tuple[str, ...]
    spans: tuple[tuple[int, int], ...] | None = None

    @classmethod
    def from_raw(
        cls,
        sentence_id: str,
        event_type: str,
        triggers: Sequence[str],
        spans: Sequence[Sequence[int]] | None = None,
    ) -> "PredictionRecord":
        """Normalize raw trigger strings: "None" outputs become no triggers."""
        kept: list[str] = []
        kept_spans: list[tuple[int, int]] = []
        for i, trigger in enumerate(triggers):
            if normalize_trigger(trigger).casefold() == NONE_TOKEN:
                continue
            kept.append(trigger)
            if spans is not None:
                kept_spans.append(tuple(spans[i]))
        return cls(
            sentence_id=sentence_id,
            event_type=event_type,
            triggers=tuple(kept),
            spans=tuple(kept_spans) if spans is not None else None,
        )


@dataclass(frozen=True)
class Scores:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "Scores":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, f1=f1)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Scores":
        return cls(
            tp=obj["tp"], fp=obj["fp"], fn=obj["fn"],
            precision=obj["precision"], recall=obj["recall"], f1=obj["f1"],
        )


@dataclass
class ScoreReport:
    id_scores: Scores
    cls_scores: Scores
    per_event_type: dict[str, Scores] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "identification": self.id_scores.to_dict(),
            "classification": self.cls_scores.to_dict(),
            "per_event_type": {t: s.to_dict() for t, s in sorted(self.per_event_type.items())},
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ScoreReport":
        return cls(
            id_scores=Scores.from_dict(obj["identification"]),
            cls_scores=Scores.from_dict(obj["classification"]),
            per_event_type={t: Scores.from_dict(s) for t, s in obj.get("per_event_type", {}).items()},
        )

    def to_table(self) -> str:
        rows = [("", "P", "R", "F1", "TP", "FP", "FN")]

        def fmt(label: str, s: Scores) -> tuple[str, ...]:
            return (label, f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.f1:.4f}", str(s.tp), str(s.fp), str(s.fn))

        rows.append(fmt("identification", self.id_scores))
        rows.append(fmt("classification", self.cls_scores))
        for event_type in sorted(self.per_event_type):
            rows.append(fmt(f"  {event_type}", self.per_event_type[event_type]))
        widths = [max(len(r[i]) for r in rows) for i in range(7)]
        return "\n".join(
            "  ".join(cell.ljust(widths[0]) if i == 0 else cell.rjust(widths[i]) for i, cell in enumerate(row))
            for row in rows
        )


def _check_inputs(gold: Sequence[GoldRecord], pred: Sequence[PredictionRecord]) -> None:
    gold_keys = set()
    for rec in gold:
        key = (rec.sentence_id, rec.event_type)
        if key in gold_keys:
            raise EvaluationInputError(f"duplicate gold record for sentence {rec.sentence_id!r}, type {rec.event_type!r}")
        gold_keys.add(key)
    gold_sentences = {rec.sentence_id for rec in gold}
    pred_keys = set()
    for rec in pred:
        key = (rec.sentence_id, rec.event_type)
        if key in pred_keys:
            raise EvaluationInputError(
                f"duplicate prediction record for sentence {rec.sentence_id!r}, type {rec.event_type!r}"
            )
        pred_keys.add(key)
        if rec.sentence_id not in gold_sentences:
            raise EvaluationInputError(f"prediction for unknown sentence id {rec.sentence_id!r}")


def _span_mode(records: Sequence[GoldRecord | PredictionRecord]) -> bool:
    return bool(records) and all(
        rec.spans is not None and len(rec.spans) == len(rec.triggers) for rec in records
    )


def _keys(rec: GoldRecord | PredictionRecord, spans: bool, with_type: bool) -> list[tuple]:
    keys = []
    for i, trigger in enumerate(rec.triggers):
        ident = rec.spans[i] if spans else normalize_trigger(trigger)
        keys.append((rec.event_type, ident) if with_type else (ident,))
    return keys


def match_and_score(gold: Sequence[GoldRecord], pred: Sequence[PredictionRecord]) -> ScoreReport:
    """Micro-averaged trigger identification and classification scores.

    Per sentence, predicted triggers are matched one-to-one against gold
    triggers: pooled over event types for identification, within the event
    type for classification. Matched pairs are TP; unmatched predictions FP;
    unmatched gold FN.
    """
    _check_inputs(gold, pred)
    sentence_ids = sorted({rec.sentence_id for rec in gold} | {rec.sentence_id for rec in pred})
    gold_by_sentence: dict[str, list[GoldRecord]] = {sid: [] for sid in sentence_ids}
    pred_by_sentence: dict[str, list[PredictionRecord]] = {sid: [] for sid in sentence_ids}
    for rec in gold:
        gold_by_sentence[rec.sentence_id].append(rec)
    for rec in pred:
        pred_by_sentence[rec.sentence_id].append(rec)

    id_tp = id_fp = id_fn = 0
    type_counts: dict[str, list[int]] = {}  # type -> [tp, fp, fn]

    for sid in sentence_ids:
        g_recs = gold_by_sentence[sid]
        p_recs = pred_by_sentence[sid]
        spans = _span_mode(g_recs) and _span_mode(p_recs)

        g_pool = Counter(k for rec in g_recs for k in _keys(rec, spans, with_type=False))
        p_pool = Counter(k for rec in p_recs for k in _keys(rec, spans, with_type=False))
        matched = sum((g_pool & p_pool).values())
        id_tp += matched
        id_fp += sum(p_pool.values()) - matched
        id_fn += sum(g_pool.values()) - matched

        g_typed = Counter(k for rec in g_recs for k in _keys(rec, spans, with_type=True))
        p_typed = Counter(k for rec in p_recs for k in _keys(rec, spans, with_type=True))
        overlap = g_typed & p_typed
        for event_type in {rec.event_type for rec in g_recs} | {rec.event_type for rec in p_recs}:
            tp = sum(n for (t, _), n in overlap.items() if t == event_type)
            fp = sum(n for (t, _), n in p_typed.items() if t == event_type) - tp
            fn = sum(n for (t, _), n in g_typed.items() if t == event_type) - tp
            acc = type_counts.setdefault(event_type, [0, 0, 0])
            acc[0] += tp
            acc[1] += fp
            acc[2] += fn

    cls_tp = sum(c[0] for c in type_counts.values())
    cls_fp = sum(c[1] for c in type_counts.values())
    cls_fn = sum(c[2] for c in type_counts.values())
    return ScoreReport(
        id_scores=Scores.from_counts(id_tp, id_fp, id_fn),
        cls_scores=Scores.from_counts(cls_tp, cls_fp, cls_fn),
        per_event_type={t: Scores.from_counts(*c) for t, c in type_counts.items()},
    )


def relative_drop_pct(base_f1: float, ablated_f1: float) -> float:
    """100 * (base - ablated) / base, as a reporting percentage (9 decimal
    places, so exact decimal inputs give exact percentages). 0 when base is 0."""
    if base_f1 == 0:
        return 0.0
    return round(100.0 * (base_f1 - ablated_f1) / base_f1, 9)


def drop_rate(baseline: ScoreReport, ablated: ScoreReport) -> dict:
    """Performance drop after an ablation, relative to the baseline F1.

    Also reports the absolute drop in F1 points for comparison, and flags the
    degenerate zero-baseline case.
    """
    return {
        "id_drop_pct": relative_drop_pct(baseline.id_scores.f1, ablated.id_scores.f1),
        "cls_drop_pct": relative_drop_pct(baseline.cls_scores.f1, ablated.cls_scores.f1),
        "id_drop_points": round(100.0 * (baseline.id_scores.f1 - ablated.id_scores.f1), 9),
        "cls_drop_points": round(100.0 * (baseline.cls_scores.f1 - ablated.cls_scores.f1), 9),
        "id_base_zero": baseline.id_scores.f1 == 0,
        "cls_base_zero": baseline.cls_scores.f1 == 0,
    }


# ---------------------------------------------------------------------------
# Gold / prediction JSONL
# ---------------------------------------------------------------------------


def _parse_spans(obj: dict, path: str | Path, lineno: int, n_triggers: int):
    spans = obj.get("spans")
    if spans is None:
        return None
    if (
        not isinstance(spans, list)
        or len(spans) != n_triggers
        or not all(isinstance(s, list) and len(s) == 2 and all(isinstance(x, int) for x in s) for s in spans)
    ):
        raise jsonl.JsonlError(path, lineno, "field 'spans' must be a [start, end] pair per trigger")
    return [tuple(s) for s in spans]


def _validate_record(obj: dict, path: str | Path, lineno: int) -> tuple[str, str, list[str]]:
    for key in ("sentence_id", "event_type", "triggers"):
        if key not in obj:
            raise jsonl.JsonlError(path, lineno, f"missing required field {key!r}")
    if not isinstance(obj["triggers"], list) or not all(isinstance(t, str) for t in obj["triggers"]):
        raise jsonl.JsonlError(path, lineno, "field 'triggers' must be a list of strings")
    return obj["sentence_id"], obj["event_type"], obj["triggers"]


def read_gold(path: str | Path) -> list[GoldRecord]:
    records = []
    for lineno, obj in jsonl.read_rows(path):
        sid, event_type, triggers = _validate_record(obj, path, lineno)
        spans = _parse_spans(obj, path, lineno, len(triggers))
        records.append(
            GoldRecord(
                sentence_id=sid,
                event_type=event_type,
                triggers=tuple(triggers),
                spans=tuple(spans) if spans is not None else None,
            )
        )
    return records


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    records = []
    for lineno, obj in jsonl.read_rows(path):
        sid, event_type, triggers = _validate_record(obj, path, lineno)
        spans = _parse_spans(obj, path, lineno, len(triggers))
        records.append(PredictionRecord.from_raw(sid, event_type, triggers, spans))
    return records


def write_report(report: ScoreReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.to_dict(), fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def read_report(path: str | Path) -> ScoreReport:
    with open(path, encoding="utf-8") as fh:
        return ScoreReport.from_dict(json.load(fh))
