from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dived.evaluation import (
    EvaluationInputError,
    GoldRecord,
    PredictionRecord,
    ScoreReport,
    Scores,
    drop_rate,
    match_and_score,
    normalize_trigger,
    parse_model_output,
    read_gold,
    read_predictions,
    read_report,
    relative_drop_pct,
    write_report,
)
from dived.jsonl import JsonlError


def gold(sid, etype, triggers, spans=None):
    return GoldRecord(sentence_id=sid, event_type=etype, triggers=tuple(triggers),
                      spans=tuple(map(tuple, spans)) if spans is not None else None)


def pred(sid, etype, triggers, spans=None):
    return PredictionRecord.from_raw(sid, etype, list(triggers), spans)


# ---------------------------------------------------------------------------
# brute-force optimal matching oracle
# ---------------------------------------------------------------------------


def oracle_max_matching(preds, golds, match_fn):
    """Maximum one-to-one matching via exhaustive backtracking."""
    best = 0

    def recurse(i, used, count):
        nonlocal best
        if count + (len(preds) - i) <= best:
            return
        if i == len(preds):
            best = max(best, count)
            return
        recurse(i + 1, used, count)
        for j in range(len(golds)):
            if j not in used and match_fn(preds[i], golds[j]):
                used.add(j)
                recurse(i + 1, used, count + 1)
                used.discard(j)

    recurse(0, set(), 0)
    return best


def oracle_scores(gold_records, pred_records):
    """Independent scorer: pools triggers per sentence and finds the optimal
    matching by brute force, for ID (string only) and CLS (string + type)."""
    sentences = {r.sentence_id for r in gold_records} | {r.sentence_id for r in pred_records}
    id_tp = cls_tp = total_gold = total_pred = 0
    for sid in sentences:
        g = [(r.event_type, normalize_trigger(t)) for r in gold_records if r.sentence_id == sid for t in r.triggers]
        p = [(r.event_type, normalize_trigger(t)) for r in pred_records if r.sentence_id == sid for t in r.triggers]
        total_gold += len(g)
        total_pred += len(p)
        id_tp += oracle_max_matching(p, g, lambda a, b: a[1] == b[1])
        cls_tp += oracle_max_matching(p, g, lambda a, b: a == b)
    return {
        "id": (id_tp, total_pred - id_tp, total_gold - id_tp),
        "cls": (cls_tp, total_pred - cls_tp, total_gold - cls_tp),
    }


def random_case(rng):
    alphabet = ["a", "b", "c", "d", "x", "y"]
    types = ["T1", "T2", "T3"]
    gold_records, pred_records = [], []
    for which, bucket in (("gold", gold_records), ("pred", pred_records)):
        total = rng.randint(0, 5)
        chosen_types = rng.sample(types, rng.randint(1, 2))
        per_type = [[] for _ in chosen_types]
        for _ in range(total):
            per_type[rng.randrange(len(chosen_types))].append(rng.choice(alphabet))
        for etype, triggers in zip(chosen_types, per_type):
            if which == "gold":
                bucket.append(gold("s0", etype, triggers))
            else:
                bucket.append(pred("s0", etype, triggers))
    return gold_records, pred_records


# ---------------------------------------------------------------------------
# match_and_score
# ---------------------------------------------------------------------------


def perfect_fixture():
    records = [
        gold("s1", "attack", ["bombed"]),
        gold("s1", "protest", ["marched", "rallied"]),
        gold("s2", "attack", ["raided"]),
        gold("s2", "movement", []),
        gold("s3", "purchase", ["bought"]),
        gold("s4", "attack", ["struck", "hit"]),
        gold("s5", "protest", ["chanted"]),
        gold("s6", "refund", ["refunded"]),
    ]
    preds = [pred(r.sentence_id, r.event_type, list(r.triggers)) for r in records]
    return records, preds


def test_perfect_prediction_scores_one():
    gold_records, pred_records = perfect_fixture()
    report = match_and_score(gold_records, pred_records)
    for scores in (report.id_scores, report.cls_scores):
        assert scores.precision == 1.0
        assert scores.recall == 1.0
        assert scores.f1 == 1.0
    assert report.id_scores.fp == 0 and report.id_scores.fn == 0


def test_empty_predictions_score_zero():
    gold_records, _ = perfect_fixture()
    report = match_and_score(gold_records, [])
    assert report.id_scores.precision == 0.0
    assert report.id_scores.recall == 0.0
    assert report.id_scores.f1 == 0.0


def test_worked_arithmetic_example():
    gold_records = [gold("s1", "T", ["a", "b", "c"])]
    pred_records = [pred("s1", "T", ["a", "x"])]
    report = match_and_score(gold_records, pred_records)
    assert report.id_scores.tp == 1 and report.id_scores.fp == 1 and report.id_scores.fn == 2
    assert abs(report.id_scores.precision - 0.5) < 1e-12
    assert abs(report.id_scores.recall - 1 / 3) < 1e-12
    assert abs(report.id_scores.f1 - 0.4) < 1e-12
    assert report.cls_scores == report.id_scores


def test_cls_requires_matching_type():
    gold_records = [gold("s1", "T1", ["a"])]
    pred_records = [pred("s1", "T2", ["a"])]
    report = match_and_score(gold_records, pred_records)
    assert report.id_scores.tp == 1
    assert report.cls_scores.tp == 0
    assert report.cls_scores.fp == 1 and report.cls_scores.fn == 1


def test_matching_is_multiset_one_to_one():
    gold_records = [gold("s1", "T", ["hit", "hit"])]
    pred_records = [pred("s1", "T", ["hit", "hit", "hit"])]
    report = match_and_score(gold_records, pred_records)
    assert report.id_scores.tp == 2
    assert report.id_scores.fp == 1
    assert report.id_scores.fn == 0


def test_trigger_normalization_trim_and_collapse_case_sensitive():
    gold_records = [gold("s1", "T", ["took  over"])]
    assert match_and_score(gold_records, [pred("s1", "T", [" took over "])]).id_scores.tp == 1
    assert match_and_score(gold_records, [pred("s1", "T", ["Took over"])]).id_scores.tp == 0


def test_unknown_sentence_id_rejected():
    with pytest.raises(EvaluationInputError):
        match_and_score([gold("s1", "T", ["a"])], [pred("s2", "T", ["a"])])


def test_duplicate_records_rejected():
    with pytest.raises(EvaluationInputError):
        match_and_score([gold("s1", "T", ["a"]), gold("s1", "T", ["b"])], [])
    with pytest.raises(EvaluationInputError):
        match_and_score([gold("s1", "T", ["a"])], [pred("s1", "T", ["a"]), pred("s1", "T", ["b"])])


def test_scorer_matches_brute_force_oracle():
    rng = random.Random(20240917)
    for _ in range(300):
        gold_records, pred_records = random_case(rng)
        report = match_and_score(gold_records, pred_records)
        expected = oracle_scores(gold_records, pred_records)
        assert (report.id_scores.tp, report.id_scores.fp, report.id_scores.fn) == expected["id"]
        assert (report.cls_scores.tp, report.cls_scores.fp, report.cls_scores.fn) == expected["cls"]
        assert report.cls_scores.tp <= report.id_scores.tp
        assert report.cls_scores.f1 <= report.id_scores.f1 + 1e-12


def test_permutation_invariance():
    rng = random.Random(7)
    gold_records, pred_records = random_case(rng)
    while not gold_records or not pred_records:
        gold_records, pred_records = random_case(rng)
    base = match_and_score(gold_records, pred_records)
    shuffled = match_and_score(list(reversed(gold_records)), list(reversed(pred_records)))
    assert base.id_scores == shuffled.id_scores
    assert base.cls_scores == shuffled.cls_scores


def test_scale_consistency_on_duplicated_corpus():
    gold_records = [gold("s1", "T", ["a", "b", "c"]), gold("s2", "U", ["d"])]
    pred_records = [pred("s1", "T", ["a", "x"]), pred("s2", "U", ["d"])]
    base = match_and_score(gold_records, pred_records)
    doubled_gold = gold_records + [gold(f"{r.sentence_id}-copy", r.event_type, list(r.triggers)) for r in gold_records]
    doubled_pred = pred_records + [pred(f"{r.sentence_id}-copy", r.event_type, list(r.triggers)) for r in pred_records]
    doubled = match_and_score(doubled_gold, doubled_pred)
    for attr in ("precision", "recall", "f1"):
        assert getattr(doubled.id_scores, attr) == pytest.approx(getattr(base.id_scores, attr))
        assert getattr(doubled.cls_scores, attr) == pytest.approx(getattr(base.cls_scores, attr))


def test_per_event_type_breakdown():
    gold_records = [gold("s1", "T1", ["a"]), gold("s1", "T2", ["b"])]
    pred_records = [pred("s1", "T1", ["a"]), pred("s1", "T2", ["z"])]
    report = match_and_score(gold_records, pred_records)
    assert report.per_event_type["T1"].f1 == 1.0
    assert report.per_event_type["T2"].f1 == 0.0


def test_span_override_when_both_sides_carry_spans():
    # same strings, different offsets: span mode must not match them
    gold_records = [gold("s1", "T", ["hit"], spans=[[0, 3]])]
    pred_records = [pred("s1", "T", ["hit"], spans=[[10, 13]])]
    assert match_and_score(gold_records, pred_records).id_scores.tp == 0
    # matching offsets count even with different surface strings
    gold_records = [gold("s1", "T", ["hit"], spans=[[0, 3]])]
    pred_records = [pred("s1", "T", ["HIT"], spans=[[0, 3]])]
    assert match_and_score(gold_records, pred_records).id_scores.tp == 1
    # spans on one side only: falls back to string matching
    gold_records = [gold("s1", "T", ["hit"], spans=[[0, 3]])]
    pred_records = [pred("s1", "T", ["hit"])]
    assert match_and_score(gold_records, pred_records).id_scores.tp == 1


# ---------------------------------------------------------------------------
# parse_model_output
# ---------------------------------------------------------------------------


def test_parse_none_is_empty():
    assert parse_model_output("None") == []
    assert parse_model_output("none") == []


def test_parse_splits_on_comma_and_newline():
    assert parse_model_output("attacked, bombing") == ["attacked", "bombing"]
    assert parse_model_output(" attacked \n None \n attacked") == ["attacked", "attacked"]


def test_parse_keeps_order_and_duplicates():
    assert parse_model_output("b,a,b") == ["b", "a", "b"]


@given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=80))
def test_parse_never_emits_empty_or_none(raw):
    out = parse_model_output(raw)
    assert all(t and t.casefold() != "none" for t in out)


# ---------------------------------------------------------------------------
# drop rate
# ---------------------------------------------------------------------------


def _report(f1_id, f1_cls=None):
    f1_cls = f1_id if f1_cls is None else f1_cls
    mk = lambda f1: Scores(tp=0, fp=0, fn=0, precision=0.0, recall=0.0, f1=f1)
    return ScoreReport(id_scores=mk(f1_id), cls_scores=mk(f1_cls))


def test_drop_rate_twenty_percent_exact():
    drops = drop_rate(_report(0.50), _report(0.40))
    assert drops["id_drop_pct"] == 20.0
    assert drops["cls_drop_pct"] == 20.0
    assert drops["id_drop_points"] == 10.0


def test_drop_rate_identity_and_negative():
    assert drop_rate(_report(0.5), _report(0.5))["id_drop_pct"] == 0.0
    assert drop_rate(_report(0.50), _report(0.55))["id_drop_pct"] == -10.0


def test_drop_rate_zero_baseline_flagged():
    drops = drop_rate(_report(0.0), _report(0.3))
    assert drops["id_drop_pct"] == 0.0
    assert drops["id_base_zero"] is True


def test_relative_drop_pct_plain_values():
    assert relative_drop_pct(0.5, 0.4) == 20.0
    assert relative_drop_pct(0.8, 0.2) == 75.0


# ---------------------------------------------------------------------------
# JSONL inputs and report round-trip
# ---------------------------------------------------------------------------


def test_read_gold_and_predictions(tmp_path):
    path = tmp_path / "gold.jsonl"
    path.write_text(
        '{"sentence_id": "s1", "event_type": "T", "triggers": ["a", "b"]}\n'
        '{"sentence_id": "s2", "event_type": "U", "triggers": []}\n',
        encoding="utf-8",
    )
    records = read_gold(path)
    assert len(records) == 2
    assert records[0].triggers == ("a", "b")

    pred_path = tmp_path / "pred.jsonl"
    pred_path.write_text('{"sentence_id": "s1", "event_type": "T", "triggers": ["None", "a"]}\n', encoding="utf-8")
    preds = read_predictions(pred_path)
    assert preds[0].triggers == ("a",)  # "None" normalized away


def test_read_gold_schema_error_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(
        '{"sentence_id": "s1", "event_type": "T", "triggers": ["a"]}\n'
        '{"sentence_id": "s2", "event_type": "T"}\n',
        encoding="utf-8",
    )
    with pytest.raises(JsonlError) as err:
        read_gold(path)
    assert err.value.line == 2


def test_report_json_round_trip(tmp_path):
    gold_records, pred_records = perfect_fixture()
    report = match_and_score(gold_records, pred_records)
    path = tmp_path / "report.json"
    write_report(report, path)
    loaded = read_report(path)
    assert loaded.id_scores == report.id_scores
    assert loaded.cls_scores == report.cls_scores
    assert loaded.per_event_type == report.per_event_type
    table = report.to_table()
    assert "identification" in table and "classification" in table
