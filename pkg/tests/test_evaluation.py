import json
import random

import pytest

from annoflow.evaluation import (
    Chunk,
    InvalidLabel,
    LengthMismatch,
    RaggedLine,
    chunk_extract,
    label_inventory,
    merge_datasets,
    micro_f1,
    read_conll,
    report_to_json,
    token_f1,
)

from helpers import oracle_report, random_labels


def write(tmp_path, text, name="data.conll"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


TWO_SENTENCES = (
    "Patient\tO\n"
    "denies\tO\n"
    "nausea\tB-Symptom\n"
    "\n"
    "History\tO\n"
    "of\tO\n"
    "heart\tB-Disease\n"
    "failure\tI-Disease\n"
)


# --- read_conll ---------------------------------------------------------------


def test_read_two_sentence_file(tmp_path):
    ds = read_conll(write(tmp_path, TWO_SENTENCES))
    assert len(ds) == 2
    assert ds.sentences[0] == (["Patient", "denies", "nausea"], ["O", "O", "B-Symptom"])
    assert ds.sentences[1][1] == ["O", "O", "B-Disease", "I-Disease"]
    assert ds.labels == ["O", "B-Disease", "B-Symptom", "I-Disease"]
    assert ds.iob1_rewrites == 0


def test_read_space_separated_extra_fields(tmp_path):
    # conll2003 style: token POS chunk label; the label is the last field.
    ds = read_conll(write(tmp_path, "Paris NNP I-NP B-Loc\nis VBZ I-VP O\n"))
    assert ds.sentences[0] == (["Paris", "is"], ["B-Loc", "O"])


def test_read_invalid_label(tmp_path):
    path = write(tmp_path, "word\tX-Disease\n")
    with pytest.raises(InvalidLabel) as err:
        read_conll(path)
    assert err.value.line == 1
    assert err.value.label == "X-Disease"


def test_read_ragged_line(tmp_path):
    path = write(tmp_path, "word\tO\njusttoken\n")
    with pytest.raises(RaggedLine) as err:
        read_conll(path)
    assert err.value.line == 2


def test_read_empty_file(tmp_path):
    ds = read_conll(write(tmp_path, ""))
    assert len(ds) == 0
    assert ds.labels == ["O"]


def test_read_skips_docstart(tmp_path):
    text = "-DOCSTART- -X- O O\n\nParis\tB-Loc\n"
    ds = read_conll(write(tmp_path, text))
    assert len(ds) == 1
    assert ds.sentences[0][0] == ["Paris"]


def test_read_rewrites_iob1(tmp_path):
    text = "Paris\tI-Loc\nFrance\tI-Loc\n\nin\tO\nRome\tI-Loc\n"
    ds = read_conll(write(tmp_path, text))
    assert ds.sentences[0][1] == ["B-Loc", "I-Loc"]
    assert ds.sentences[1][1] == ["O", "B-Loc"]
    assert ds.iob1_rewrites == 2


def test_read_type_switch_rewrite(tmp_path):
    ds = read_conll(write(tmp_path, "a\tB-Loc\nb\tI-Org\n"))
    assert ds.sentences[0][1] == ["B-Loc", "B-Org"]
    assert ds.iob1_rewrites == 1


def test_label_inventory_order():
    assert label_inventory({"I-b", "B-a", "O", "B-b"}) == ["O", "B-a", "B-b", "I-b"]
    assert label_inventory(set()) == ["O"]


def test_merge_datasets(tmp_path):
    a = read_conll(write(tmp_path, TWO_SENTENCES, "a.conll"))
    b = read_conll(write(tmp_path, "Rome\tI-Loc\n", "b.conll"))
    merged = merge_datasets(a, b)
    assert len(merged) == 3
    assert merged.iob1_rewrites == 1
    assert merged.labels[0] == "O" and "B-Loc" in merged.labels


# --- chunk_extract --------------------------------------------------------------


def test_chunk_extract_basic():
    got = chunk_extract(["B-Dis", "I-Dis", "O", "B-Chem"])
    assert got == [Chunk(0, 0, 1, "Dis"), Chunk(0, 3, 3, "Chem")]


def test_chunk_extract_all_o():
    assert chunk_extract(["O", "O", "O"]) == []


def test_chunk_extract_repair_flags():
    got = chunk_extract(["I-Dis", "I-Dis"], repair=True)
    assert got == [Chunk(0, 0, 1, "Dis")]
    assert got[0].repaired is True


def test_chunk_extract_strict_raises():
    with pytest.raises(ValueError, match="dangling"):
        chunk_extract(["I-Dis", "I-Dis"])
    with pytest.raises(ValueError, match="dangling"):
        chunk_extract(["O", "I-Dis"])
    with pytest.raises(ValueError, match="invalid"):
        chunk_extract(["B-Dis", "Q-Dis"], repair=True)


def test_chunk_extract_adjacent_chunks():
    got = chunk_extract(["B-Dis", "B-Dis", "I-Dis"])
    assert got == [Chunk(0, 0, 0, "Dis"), Chunk(0, 1, 2, "Dis")]


def test_chunk_extract_type_switch_repair():
    got = chunk_extract(["B-Dis", "I-Chem"], repair=True)
    assert got == [Chunk(0, 0, 0, "Dis"), Chunk(0, 1, 1, "Chem")]
    assert got[1].repaired


def test_chunk_sentence_index_carried():
    assert chunk_extract(["B-Dis"], sentence=7)[0].sentence == 7


# --- micro_f1 -------------------------------------------------------------------


def test_perfect_match():
    seq = [["B-Dis", "I-Dis", "O"], ["O", "B-Chem"]]
    report = micro_f1(seq, seq)
    assert (report.precision, report.recall, report.f1) == (1.0, 1.0, 1.0)
    assert report.tp == 2 and report.fp == 0 and report.fn == 0


def test_hand_case_half_recall():
    gold = [["B-Dis", "O", "B-Chem"]]
    pred = [["B-Dis", "O", "O"]]
    report = micro_f1(pred, gold)
    assert report.precision == 1.0
    assert report.recall == 0.5
    assert round(report.f1, 4) == 0.6667


def test_all_o_prediction_zero_convention():
    report = micro_f1([["O", "O"]], [["B-Dis", "O"]])
    assert (report.precision, report.recall, report.f1) == (0.0, 0.0, 0.0)


def test_boundary_error_counts_both_ways():
    report = micro_f1([["B-Dis", "I-Dis"]], [["B-Dis", "O"]])
    assert report.tp == 0 and report.fp == 1 and report.fn == 1


def test_type_error_is_not_a_match():
    report = micro_f1([["B-Chem"]], [["B-Dis"]])
    assert report.tp == 0 and report.fp == 1 and report.fn == 1


def test_chunk_to_sentence_end_matches():
    report = micro_f1([["O", "B-Dis", "I-Dis"]], [["O", "B-Dis", "I-Dis"]])
    assert report.tp == 1


def test_length_mismatch_raises():
    with pytest.raises(LengthMismatch):
        micro_f1([["O"]], [["O"], ["O"]])
    with pytest.raises(LengthMismatch) as err:
        micro_f1([["O", "O"]], [["O"]])
    assert err.value.sentence == 0


def test_report_json_and_table():
    report = micro_f1([["B-Dis", "O"]], [["B-Dis", "B-Chem"]])
    obj = report.to_json_obj()
    assert obj["chunks"] == {"tp": 1, "fp": 0, "fn": 1}
    json.loads(report_to_json(report))  # serializable
    table = report.to_table()
    assert "ALL" in table and "Dis" in table and "Chem" in table


def test_micro_f1_matches_set_oracle_fuzz():
    rnd = random.Random(606)
    for _ in range(150):
        n_sent = rnd.randint(1, 5)
        gold = [random_labels(rnd, rnd.randint(0, 10)) for _ in range(n_sent)]
        pred = [random_labels(rnd, len(g)) for g in gold]
        report = micro_f1(pred, gold)
        want = oracle_report(pred, gold)
        assert (report.tp, report.fp, report.fn) == (want["tp"], want["fp"], want["fn"])
        assert report.precision == want["precision"]
        assert report.recall == want["recall"]
        assert report.f1 == want["f1"]
        assert set(report.per_type) == set(want["per_type"])
        for ent, row in want["per_type"].items():
            got = report.per_type[ent]
            assert (got["tp"], got["fp"], got["fn"]) == (row["tp"], row["fp"], row["fn"])


def test_precision_recall_swap_metamorphic_fuzz():
    rnd = random.Random(909)
    for _ in range(100):
        a = [random_labels(rnd, rnd.randint(1, 8)) for _ in range(3)]
        b = [random_labels(rnd, len(s)) for s in a]
        ab = micro_f1(a, b)
        ba = micro_f1(b, a)
        assert ab.precision == ba.recall
        assert ab.recall == ba.precision
        assert ab.f1 == ba.f1


def test_per_type_counts_sum_to_overall_fuzz():
    rnd = random.Random(303)
    for _ in range(100):
        gold = [random_labels(rnd, rnd.randint(0, 12)) for _ in range(4)]
        pred = [random_labels(rnd, len(g)) for g in gold]
        report = micro_f1(pred, gold)
        assert report.tp == sum(r["tp"] for r in report.per_type.values())
        assert report.fp == sum(r["fp"] for r in report.per_type.values())
        assert report.fn == sum(r["fn"] for r in report.per_type.values())


# --- token_f1 -------------------------------------------------------------------


def test_token_f1_excludes_o():
    pred = [["B-Dis", "O", "O"]]
    gold = [["B-Dis", "O", "B-Dis"]]
    got = token_f1(pred, gold)
    assert got["tp"] == 1 and got["fp"] == 0 and got["fn"] == 1
    assert got["precision"] == 1.0 and got["recall"] == 0.5


def test_token_f1_differs_from_chunk_f1():
    # Half-matched chunk: token level gives partial credit, chunk level none.
    pred = [["B-Dis", "O"]]
    gold = [["B-Dis", "I-Dis"]]
    assert micro_f1(pred, gold).tp == 0
    assert token_f1(pred, gold)["tp"] == 1
