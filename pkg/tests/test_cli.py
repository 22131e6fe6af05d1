"""Command line surface: exit codes, file IO, stdio protocol."""

import io
import json
import shutil
import subprocess
import sys
from contextlib import redirect_stdout
from pathlib import Path

import pytest

from annoflow import cli
from annoflow.core import (
    FittedPipeline,
    StageSpec,
    record_from_json,
    record_to_json,
    schema_check,
    stage_type,
)
from annoflow.embeddings import WordEmbeddingsStage
from annoflow.ner import NerModelStage
from annoflow.store import load_pipeline, save_pipeline

from helpers import text_frame

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def pipeline_dir(fitted_pipeline, tmp_path_factory):
    target = tmp_path_factory.mktemp("cli") / "pipe"
    save_pipeline(fitted_pipeline, target)
    return target


def write_docs(path: Path, texts: list[str]) -> None:
    frame = text_frame(texts)
    path.write_text(
        "".join(record_to_json(r) + "\n" for r in frame.records), encoding="utf-8"
    )


TEXTS = [
    "Patient denies nausea.",
    "Heart failure was ruled out. BP stable.",
    "Dr. Smith noted chest pain at 2.5 mg daily.",
    "",
    "Family history of depression.",
    "Dyspnea while climbing stairs!",
    "No fever today?",
    "Plan: continue meds.",
    "Nausea resolved after treatment.",
    "Follow up in 3 weeks.",
]


# --- annotate ---


def test_annotate_writes_one_line_per_input_record(pipeline_dir, tmp_path, capsys):
    inp = tmp_path / "in.jsonl"
    out = tmp_path / "out.jsonl"
    write_docs(inp, TEXTS)
    rc = cli.main(
        ["annotate", "--pipeline", str(pipeline_dir), "--input", str(inp), "--output", str(out)]
    )
    assert rc == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 10
    records = [record_from_json(line) for line in lines]
    assert [r.id for r in records] == [f"doc-{i:04d}" for i in range(10)]
    for rec, text in zip(records, TEXTS):
        assert rec.error is None
        assert rec.text == text
        assert "token" in rec.columns
    assert "annotated 10 records" in capsys.readouterr().err


def test_annotate_missing_pipeline_directory(tmp_path, capsys):
    inp = tmp_path / "in.jsonl"
    write_docs(inp, ["hi"])
    rc = cli.main(
        [
            "annotate",
            "--pipeline",
            str(tmp_path / "nope"),
            "--input",
            str(inp),
            "--output",
            str(tmp_path / "out.jsonl"),
        ]
    )
    assert rc == 3
    assert capsys.readouterr().err.startswith("error:")


def test_annotate_malformed_line_becomes_error_record(pipeline_dir, tmp_path):
    inp = tmp_path / "in.jsonl"
    out = tmp_path / "out.jsonl"
    frame = text_frame(TEXTS)
    lines = [record_to_json(r) for r in frame.records]
    lines[3] = '{"id": "doc-0003", "text": '  # truncated JSON
    inp.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    rc = cli.main(
        ["annotate", "--pipeline", str(pipeline_dir), "--input", str(inp), "--output", str(out)]
    )
    assert rc == 0
    records = [record_from_json(line) for line in out.read_text().splitlines()]
    assert len(records) == 10
    assert records[3].error is not None and "input line 4" in records[3].error
    assert records[3].id == ""
    good = [r for i, r in enumerate(records) if i != 3]
    assert all(r.error is None and r.columns["token"] for r in good)


def test_annotate_stdin_to_stdout(pipeline_dir, monkeypatch, capsys):
    frame = text_frame(["Patient denies nausea.", "BP stable."])
    payload = "".join(record_to_json(r) + "\n" for r in frame.records)
    monkeypatch.setattr(sys, "stdin", io.StringIO(payload))
    rc = cli.main(["annotate", "--pipeline", str(pipeline_dir), "--input", "-", "--output", "-"])
    captured = capsys.readouterr()
    assert rc == 0
    out_lines = captured.out.splitlines()
    assert len(out_lines) == 2
    assert all(record_from_json(line).error is None for line in out_lines)
    assert "annotated 2 records" in captured.err


def test_annotate_rejects_bad_workers(pipeline_dir, tmp_path, monkeypatch, capsys):
    inp = tmp_path / "in.jsonl"
    write_docs(inp, ["hi"])
    args = ["annotate", "--pipeline", str(pipeline_dir), "--input", str(inp), "--output", "-"]
    assert cli.main(args + ["--workers", "0"]) == 2
    monkeypatch.setenv("ANNOFLOW_WORKERS", "zap")
    assert cli.main(args) == 2
    capsys.readouterr()


# --- train-ner ---


@pytest.fixture(scope="module")
def cli_trained(tmp_path_factory):
    """Pipeline trained through the CLI on the toy corpus, plus its summary."""
    target = tmp_path_factory.mktemp("cli_train") / "trained"
    buf = io.StringIO()
    with redirect_stdout(buf):
        rc = cli.main(
            [
                "train-ner",
                "--train", str(DATA / "ner_toy.conll"),
                "--embeddings", str(DATA / "glove_toy.txt"),
                "--output", str(target),
                "--epochs", "120",
                "--hidden", "16",
                "--char-dim", "8",
                "--conv-filters", "8",
                "--learning-rate", "0.3",
            ]
        )
    assert rc == 0
    return target, json.loads(buf.getvalue())


def test_train_ner_saves_pipeline_and_reports_labels(cli_trained, toy_conll, toy_table):
    target, summary = cli_trained
    assert (target / "manifest.json").is_file()
    assert summary["labels"] == list(toy_conll.labels)
    assert summary["sentences"] == 20
    tokens = [tok for sent, _ in toy_conll.sentences for tok in sent]
    found = sum(1 for tok in tokens if toy_table.lookup(tok)[1])
    assert summary["embedding_coverage"] == found / len(tokens)
    assert len(summary["loss_trace"]) == 120
    assert summary["final_loss"] == summary["loss_trace"][-1] > 0.0
    pipeline = load_pipeline(target)
    stages = {spec.stage_id: stage for spec, stage in pipeline.stages}
    assert list(stages["entities"].model.labels) == list(toy_conll.labels)


def test_evaluate_own_training_set_reaches_f1_one(cli_trained, capsys):
    target, _ = cli_trained
    rc = cli.main(["evaluate", "--pipeline", str(target), "--data", str(DATA / "ner_toy.conll")])
    captured = capsys.readouterr()
    assert rc == 0
    report = json.loads(captured.out)
    assert report["f1"] == 1.0
    assert report["precision"] == 1.0 and report["recall"] == 1.0
    assert "ALL" in captured.err  # human-readable table goes to stderr


def test_train_ner_epochs_zero_saves_initialized_model(tmp_path, capsys):
    target = tmp_path / "zero"
    rc = cli.main(
        [
            "train-ner",
            "--train", str(DATA / "ner_toy.conll"),
            "--embeddings", str(DATA / "glove_toy.txt"),
            "--output", str(target),
            "--epochs", "0",
        ]
    )
    captured = capsys.readouterr()
    assert rc == 0
    summary = json.loads(captured.out)
    assert summary["loss_trace"] == []
    assert summary["final_loss"] is None
    pipeline = load_pipeline(target)  # saved model loads cleanly
    assert any(spec.stage_type == "ner_model" for spec, _ in pipeline.stages)


def test_train_ner_unreadable_embeddings(tmp_path, capsys):
    args = [
        "train-ner",
        "--train", str(DATA / "ner_toy.conll"),
        "--output", str(tmp_path / "out"),
        "--epochs", "0",
    ]
    rc = cli.main(args + ["--embeddings", str(tmp_path / "missing.txt")])
    assert rc == 4
    bad = tmp_path / "bad.txt"
    bad.write_text("word one two\nword2 3.0\n", encoding="utf-8")
    rc = cli.main(args + ["--embeddings", str(bad)])
    assert rc == 4
    capsys.readouterr()


def test_train_ner_empty_training_file(tmp_path, capsys):
    empty = tmp_path / "empty.conll"
    empty.write_text("", encoding="utf-8")
    rc = cli.main(
        [
            "train-ner",
            "--train", str(empty),
            "--embeddings", str(DATA / "glove_toy.txt"),
            "--output", str(tmp_path / "out"),
        ]
    )
    assert rc == 2
    assert "no sentences" in capsys.readouterr().err


def test_train_ner_refuses_overwrite_without_force(tmp_path, capsys):
    target = tmp_path / "occupied"
    target.mkdir()
    (target / "keep.txt").write_text("x", encoding="utf-8")
    args = [
        "train-ner",
        "--train", str(DATA / "ner_toy.conll"),
        "--embeddings", str(DATA / "glove_toy.txt"),
        "--output", str(target),
        "--epochs", "0",
    ]
    assert cli.main(args) == 3
    assert cli.main(args + ["--force"]) == 0
    capsys.readouterr()


# --- evaluate ---


def test_evaluate_empty_dataset(pipeline_dir, tmp_path, capsys):
    empty = tmp_path / "empty.conll"
    empty.write_text("\n\n", encoding="utf-8")
    rc = cli.main(["evaluate", "--pipeline", str(pipeline_dir), "--data", str(empty)])
    assert rc == 2
    assert "no sentences" in capsys.readouterr().err


@pytest.fixture()
def mismatch_pipeline_dir(fitted_pipeline, toy_table, tmp_path):
    """Pipeline whose tagger runs on its own re-tokenization instead of the
    dataset tokens, so token counts can disagree with a gold file."""
    ner_stage = {s.stage_id: st for s, st in fitted_pipeline.stages}["entities"]
    specs = [
        StageSpec("assemble", "document_assembler", ("text",), "document"),
        StageSpec("sentences", "sentence_detector", ("document",), "sentence"),
        StageSpec("tokens", "tokenizer", ("sentence",), "token"),
        StageSpec("retokens", "tokenizer", ("sentence",), "token2"),
        StageSpec("embed", "word_embeddings", ("token2",), "embedding"),
        StageSpec("entities", "ner_model", ("sentence", "token2", "embedding"), "entity"),
    ]
    stages = []
    for spec in specs:
        if spec.stage_type == "word_embeddings":
            stages.append(WordEmbeddingsStage(toy_table))
        elif spec.stage_type == "ner_model":
            stages.append(NerModelStage(ner_stage.model))
        else:
            stages.append(stage_type(spec.stage_type).build(spec))
    pipeline = FittedPipeline(list(zip(specs, stages)), schema_check(specs))
    target = tmp_path / "mismatch"
    save_pipeline(pipeline, target)
    return target


def test_evaluate_alignment_mismatch_exits_6(mismatch_pipeline_dir, tmp_path, capsys):
    data = tmp_path / "align.conll"
    data.write_text("Pt\tO\nhas\tO\nx=1\tO\n", encoding="utf-8")
    rc = cli.main(["evaluate", "--pipeline", str(mismatch_pipeline_dir), "--data", str(data)])
    assert rc == 6
    err = capsys.readouterr().err
    assert "alignment" in err
    assert "sentence 0" in err  # first offending sentence is named


def test_evaluate_writes_report_file(cli_trained, tmp_path, capsys):
    target, _ = cli_trained
    report_path = tmp_path / "report.json"
    rc = cli.main(
        [
            "evaluate",
            "--pipeline", str(target),
            "--data", str(DATA / "ner_toy.conll"),
            "--output", str(report_path),
            "--token-level",
        ]
    )
    captured = capsys.readouterr()
    assert rc == 0
    assert report_path.read_text(encoding="utf-8") == captured.out
    report = json.loads(captured.out)
    assert report["token_level_excluding_o"]["f1"] == 1.0
    assert report["seed"] == 42


# --- benchmark ---


def test_benchmark_preset_smoke(tmp_path):
    out = tmp_path / "bench.json"
    csv = tmp_path / "bench.csv"
    rc = cli.main(
        [
            "benchmark",
            "--preset", "tokenize",
            "--docs", "24",
            "--workers", "1,2",
            "--repetitions", "3",
            "--output", str(out),
            "--csv", str(csv),
        ]
    )
    assert rc == 0
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["corpus"]["docs"] == 24
    assert [s["id"] for s in report["stages"]] == ["assemble", "sentences", "tokens", "normalize"]
    for stage in report["stages"]:
        assert set(stage["workers"]) == {"1", "2"}
        assert stage["workers"]["1"]["speedup"] == 1.0
    lines = csv.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1 + 4 * 2  # header + stages x worker counts


def test_benchmark_rejects_bad_parameters(tmp_path, capsys):
    base = ["benchmark", "--preset", "tokenize", "--docs", "4"]
    assert cli.main(base + ["--workers", "1,x"]) == 2
    assert cli.main(base + ["--workers", "2,4"]) == 2  # no serial baseline
    assert cli.main(base + ["--workers", "1", "--repetitions", "2"]) == 2
    capsys.readouterr()


# --- registry ---


def test_registry_lists_saved_pipelines(pipeline_dir, tmp_path, monkeypatch, capsys):
    root = tmp_path / "reg"
    root.mkdir()
    shutil.copytree(pipeline_dir, root / "beta")
    shutil.copytree(pipeline_dir, root / "alpha")
    (root / "not_a_pipeline").mkdir()
    rc = cli.main(["registry", "--registry", str(root)])
    assert rc == 0
    entries = json.loads(capsys.readouterr().out)
    assert [e["name"] for e in entries] == ["alpha", "beta"]
    assert all("stages" in e for e in entries)

    monkeypatch.setenv(cli.ENV_REGISTRY, str(root))
    rc = cli.main(["registry"])
    assert rc == 0
    assert [e["name"] for e in json.loads(capsys.readouterr().out)] == ["alpha", "beta"]


# --- serve-stdio ---


def test_serve_stdio_missing_pipeline(tmp_path, capsys):
    rc = cli.main(["serve-stdio", "--pipeline", str(tmp_path / "nope")])
    assert rc == 3
    capsys.readouterr()


def test_serve_stdio_protocol(pipeline_dir, tmp_path, capsys):
    record_obj = {"id": "r1", "text": "Patient denies nausea."}
    requests = [
        json.dumps({"op": "ping", "id": 1}),
        '{"op": "annotate", "id": 2, "record":',  # malformed request line
        json.dumps({"op": "annotate", "id": 3, "record": record_obj}),
        json.dumps({"op": "warp", "id": 4}),
    ]
    proc = subprocess.run(
        ["annoflow", "serve-stdio", "--pipeline", str(pipeline_dir)],
        input="".join(r + "\n" for r in requests),
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0  # EOF ends the loop cleanly
    responses = [json.loads(line) for line in proc.stdout.splitlines()]
    assert len(responses) == 4
    assert responses[0] == {"id": 1, "result": "pong"}
    assert "error" in responses[1] and responses[1]["id"] is None
    assert responses[2]["id"] == 3 and "result" in responses[2]
    assert "error" in responses[3] and "warp" in responses[3]["error"]

    # the served annotation matches the batch command on the same record
    inp = tmp_path / "one.jsonl"
    inp.write_text(json.dumps(record_obj) + "\n", encoding="utf-8")
    rc = cli.main(["annotate", "--pipeline", str(pipeline_dir), "--input", str(inp), "--output", "-"])
    captured = capsys.readouterr()
    assert rc == 0
    assert json.loads(captured.out.splitlines()[0]) == responses[2]["result"]


# --- top level ---


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as excinfo:
        cli.main(["--version"])
    assert excinfo.value.code == 0
    assert capsys.readouterr().out.startswith("annoflow ")


def test_requires_subcommand(capsys):
    with pytest.raises(SystemExit) as excinfo:
        cli.main([])
    assert excinfo.value.code == 2
    capsys.readouterr()
