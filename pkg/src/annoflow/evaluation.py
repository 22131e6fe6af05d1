"""CoNLL data handling and chunk-level evaluation.

Scoring is exact-match over chunks: a predicted chunk counts as correct only
when its sentence, token span and entity type all agree with a gold chunk.
Precision, recall and F1 are micro-averaged over all chunks; a separate
token-level score (excluding the O class) is available behind its own
function since the two metrics are not comparable.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

_LABEL_RE = re.compile(r"^(O|[BI]-\S+)$")


class ConllError(Exception):
    pass


class RaggedLine(ConllError):
    def __init__(self, path: str, line: int):
        super().__init__(f"{path}, line {line}: token line has no label field")
        self.line = line


class InvalidLabel(ConllError):
    def __init__(self, path: str, line: int, label: str):
        super().__init__(f"{path}, line {line}: invalid BIO label '{label}'")
        self.line = line
        self.label = label


class LengthMismatch(ConllError):
    def __init__(self, sentence: int, pred: int, gold: int):
        super().__init__(
            f"sentence {sentence}: {pred} predicted labels vs {gold} gold labels"
        )
        self.sentence = sentence


@dataclass
class ConllDataset:
    """Sentences as (tokens, labels) pairs plus the label inventory.

    ``iob1_rewrites`` counts labels that had to be rewritten from IOB1 style
    (chunk-initial I-X) to the IOB2 form this package uses everywhere.
    """

    sentences: list[tuple[list[str], list[str]]] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    iob1_rewrites: int = 0

    def __len__(self) -> int:
        return len(self.sentences)


def read_conll(path: str) -> ConllDataset:
    """Read whitespace-separated CoNLL: first field is the token, last field
    the BIO label, blank lines separate sentences, -DOCSTART- lines are
    skipped.  Chunk-initial I-X labels are normalized to B-X and counted."""
    sentences: list[tuple[list[str], list[str]]] = []
    tokens: list[str] = []
    labels: list[str] = []
    inventory: set[str] = set()
    rewrites = 0

    def flush() -> None:
        nonlocal tokens, labels, rewrites
        if tokens:
            rewrites += _normalize_iob2(labels)
            inventory.update(labels)
            sentences.append((tokens, labels))
            tokens, labels = [], []

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                flush()
                continue
            fields = line.split()
            if fields[0] == "-DOCSTART-":
                flush()
                continue
            if len(fields) < 2:
                raise RaggedLine(path, lineno)
            label = fields[-1]
            if not _LABEL_RE.match(label):
                raise InvalidLabel(path, lineno, label)
            tokens.append(fields[0])
            labels.append(label)
    flush()
    return ConllDataset(sentences, label_inventory(inventory), rewrites)


def label_inventory(labels: set[str]) -> list[str]:
    """Canonical inventory order: O first, the rest sorted."""
    rest = sorted(l for l in labels if l != "O")
    return ["O"] + rest


def _normalize_iob2(labels: list[str]) -> int:
    changed = 0
    prev = "O"
    for i, lab in enumerate(labels):
        if lab.startswith("I-"):
            ent = lab[2:]
            if prev == "O" or (prev != "B-" + ent and prev != "I-" + ent):
                labels[i] = "B-" + ent
                changed += 1
        prev = labels[i]
    return changed


@dataclass(frozen=True)
class Chunk:
    """A maximal entity span: sentence index, inclusive token span, type."""

    sentence: int
    begin: int
    end: int
    entity: str
    repaired: bool = field(default=False, compare=False)


def chunk_extract(labels: list[str], sentence: int = 0, repair: bool = False) -> list[Chunk]:
    """Chunks are maximal B-X (I-X)* runs.

    With ``repair`` a dangling I-X (at sentence start, after O, or after a
    different type) is treated as B-X and the chunk is flagged repaired;
    without it the same input raises ValueError.
    """
    chunks: list[Chunk] = []
    start: int | None = None
    ent = ""
    fixed = False

    def close(upto: int) -> None:
        nonlocal start
        if start is not None:
            chunks.append(Chunk(sentence, start, upto, ent, fixed))
            start = None

    for i, lab in enumerate(labels):
        if lab == "O":
            close(i - 1)
        elif lab.startswith("B-"):
            close(i - 1)
            start, ent, fixed = i, lab[2:], False
        elif lab.startswith("I-"):
            if start is not None and lab[2:] == ent:
                continue
            if not repair:
                raise ValueError(f"dangling {lab} at position {i}")
            close(i - 1)
            start, ent, fixed = i, lab[2:], True
        else:
            raise ValueError(f"invalid BIO label '{lab}' at position {i}")
    close(len(labels) - 1)
    return chunks


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    per_type: dict[str, dict[str, float]]
    sentences: int

    def to_json_obj(self) -> dict:
        return {
            "sentences": self.sentences,
            "chunks": {"tp": self.tp, "fp": self.fp, "fn": self.fn},
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_type": self.per_type,
        }

    def to_table(self) -> str:
        lines = [
            f"{'type':<28}{'prec':>8}{'rec':>8}{'f1':>8}{'tp':>6}{'fp':>6}{'fn':>6}"
        ]
        for name in sorted(self.per_type):
            row = self.per_type[name]
            lines.append(
                f"{name:<28}{row['precision']:>8.4f}{row['recall']:>8.4f}"
                f"{row['f1']:>8.4f}{int(row['tp']):>6}{int(row['fp']):>6}{int(row['fn']):>6}"
            )
        lines.append(
            f"{'ALL':<28}{self.precision:>8.4f}{self.recall:>8.4f}{self.f1:>8.4f}"
            f"{self.tp:>6}{self.fp:>6}{self.fn:>6}"
        )
        return "\n".join(lines)


def _split_label(label: str) -> tuple[str, str]:
    if label == "O":
        return "O", ""
    return label[0], label[2:]


def _start_of_chunk(prev_tag: str, prev_ent: str, tag: str, ent: str) -> bool:
    if tag == "B":
        return True
    if tag == "I" and prev_tag == "O":
        return True  # dangling I counts as a chunk start when scoring
    return tag == "I" and ent != prev_ent


def _end_of_chunk(prev_tag: str, prev_ent: str, tag: str, ent: str) -> bool:
    if prev_tag == "O":
        return False
    if tag == "O" or tag == "B":
        return True
    return ent != prev_ent


def micro_f1(
    pred: list[list[str]], gold: list[list[str]], repair: bool = True
) -> EvalReport:
    """Micro-averaged exact-match chunk P/R/F1 over aligned sentences.

    Counting walks both label streams token by token, tracking whether the
    currently open predicted and gold chunks still agree; a chunk scores as
    correct only when both close at the same token.  This never materializes
    chunk sets, so it doubles as an independent check against
    :func:`chunk_extract`-based scoring.
    """
    if len(pred) != len(gold):
        raise LengthMismatch(-1, len(pred), len(gold))
    correct = 0
    guessed = 0
    actual = 0
    by_type: dict[str, list[int]] = {}  # entity -> [correct, guessed, actual]

    for si, (p_labels, g_labels) in enumerate(zip(pred, gold)):
        if len(p_labels) != len(g_labels):
            raise LengthMismatch(si, len(p_labels), len(g_labels))
        in_correct = False
        prev_p = ("O", "")
        prev_g = ("O", "")
        open_ent = ""
        for p_lab, g_lab in zip(p_labels, g_labels):
            p = _split_label(p_lab)
            g = _split_label(g_lab)
            p_end = _end_of_chunk(*prev_p, *p)
            g_end = _end_of_chunk(*prev_g, *g)
            p_start = _start_of_chunk(*prev_p, *p)
            g_start = _start_of_chunk(*prev_g, *g)
            if in_correct:
                if p_end and g_end:
                    correct += 1
                    by_type[open_ent][0] += 1
                    in_correct = False
                elif p_end != g_end or p[1] != g[1]:
                    in_correct = False
            if p_start and g_start and p[1] == g[1]:
                in_correct = True
                open_ent = p[1]
            if p_start:
                guessed += 1
                by_type.setdefault(p[1], [0, 0, 0])[1] += 1
            if g_start:
                actual += 1
                by_type.setdefault(g[1], [0, 0, 0])[2] += 1
            prev_p, prev_g = p, g
        if in_correct:  # both chunks ran to the sentence end
            correct += 1
            by_type[open_ent][0] += 1

    tp = correct
    fp = guessed - correct
    fn = actual - correct
    precision, recall, f1 = _prf(tp, fp, fn)
    per_type = {}
    for ent, (c, gu, ac) in sorted(by_type.items()):
        tp_t, fp_t, fn_t = c, gu - c, ac - c
        p_t, r_t, f_t = _prf(tp_t, fp_t, fn_t)
        per_type[ent] = {
            "tp": tp_t, "fp": fp_t, "fn": fn_t,
            "precision": p_t, "recall": r_t, "f1": f_t,
        }
    return EvalReport(tp, fp, fn, precision, recall, f1, per_type, len(gold))


def token_f1(pred: list[list[str]], gold: list[list[str]]) -> dict[str, float]:
    """Token-level micro P/R/F1 excluding O.  Not comparable to chunk-level
    scores; kept behind its own function on purpose."""
    if len(pred) != len(gold):
        raise LengthMismatch(-1, len(pred), len(gold))
    tp = fp = fn = 0
    for si, (p_labels, g_labels) in enumerate(zip(pred, gold)):
        if len(p_labels) != len(g_labels):
            raise LengthMismatch(si, len(p_labels), len(g_labels))
        for p_lab, g_lab in zip(p_labels, g_labels):
            if p_lab == "O" and g_lab == "O":
                continue
            if p_lab == g_lab:
                tp += 1
            else:
                if p_lab != "O":
                    fp += 1
                if g_lab != "O":
                    fn += 1
    p, r, f = _prf(tp, fp, fn)
    return {"tp": tp, "fp": fp, "fn": fn, "precision": p, "recall": r, "f1": f}


def merge_datasets(*datasets: ConllDataset) -> ConllDataset:
    """Concatenate datasets (train plus validation is the usual pairing
    before a final training run)."""
    merged = ConllDataset()
    inventory: set[str] = set()
    for ds in datasets:
        merged.sentences.extend(ds.sentences)
        inventory.update(ds.labels)
        merged.iob1_rewrites += ds.iob1_rewrites
    merged.labels = label_inventory(inventory)
    return merged


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report.to_json_obj(), indent=2, sort_keys=True) + "\n"
