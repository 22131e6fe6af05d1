"""Shared test utilities: independent oracles and corpus builders.

The chunk oracle here deliberately re-derives chunking with a span-scan
instead of the streaming state machine used by the scorer, so comparisons
between the two are meaningful.
"""
from __future__ import annotations

import itertools
import random

import numpy as np

from annoflow.annotators import (
    SentenceRules,
    TokenRules,
    assemble_document,
    detect_sentences,
    tokenize,
)
from annoflow.assertion import AssertionExample, char_span_to_token_span
from annoflow.core import DocumentRecord, Frame
from annoflow.ner import NerConfig, NerExample, init_model


def oracle_chunks(labels: list[str]) -> list[tuple[int, int, str]]:
    """(begin, end, entity) spans under the scoring convention: B-X always
    starts a chunk, I-X starts one unless it continues a same-type chunk."""
    spans = []
    i = 0
    n = len(labels)
    while i < n:
        lab = labels[i]
        if lab == "O":
            i += 1
            continue
        ent = lab[2:]
        j = i + 1
        while j < n and labels[j] == "I-" + ent:
            j += 1
        spans.append((i, j - 1, ent))
        i = j
    return spans


def oracle_report(pred: list[list[str]], gold: list[list[str]]) -> dict:
    """Chunk-set scoring: TP = exact (sentence, begin, end, type) matches."""
    pred_set = set()
    gold_set = set()
    for si, labels in enumerate(pred):
        pred_set |= {(si, b, e, t) for b, e, t in oracle_chunks(labels)}
    for si, labels in enumerate(gold):
        gold_set |= {(si, b, e, t) for b, e, t in oracle_chunks(labels)}
    types = {c[3] for c in pred_set | gold_set}

    def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return p, r, f

    tp = len(pred_set & gold_set)
    fp = len(pred_set - gold_set)
    fn = len(gold_set - pred_set)
    per_type = {}
    for t in types:
        ps = {c for c in pred_set if c[3] == t}
        gs = {c for c in gold_set if c[3] == t}
        tp_t = len(ps & gs)
        fp_t = len(ps - gs)
        fn_t = len(gs - ps)
        p_t, r_t, f_t = prf(tp_t, fp_t, fn_t)
        per_type[t] = {
            "tp": tp_t, "fp": fp_t, "fn": fn_t,
            "precision": p_t, "recall": r_t, "f1": f_t,
        }
    p, r, f = prf(tp, fp, fn)
    return {
        "tp": tp, "fp": fp, "fn": fn,
        "precision": p, "recall": r, "f1": f,
        "per_type": per_type,
    }


def random_labels(rnd: random.Random, n: int, ents=("Dis", "Chem")) -> list[str]:
    """Arbitrary label streams; invalid BIO (dangling I-X) is intentional."""
    out = []
    for _ in range(n):
        roll = rnd.random()
        if roll < 0.5:
            out.append("O")
        elif roll < 0.75:
            out.append("B-" + rnd.choice(ents))
        else:
            out.append("I-" + rnd.choice(ents))
    return out


def valid_bio(labels: list[str]) -> bool:
    prev = "O"
    for lab in labels:
        if lab.startswith("I-"):
            if prev != "B-" + lab[2:] and prev != "I-" + lab[2:]:
                return False
        prev = lab
    return True


def brute_force_decode(scores, labels):
    """Exhaustive max-score valid path; summation order matches the dp."""
    T, L = scores.shape
    best_path, best_score = None, -np.inf
    for path in itertools.product(range(L), repeat=T):
        if labels[path[0]].startswith("I-"):
            continue
        if not valid_bio([labels[k] for k in path]):
            continue
        total = 0.0
        for t, k in enumerate(path):
            total = total + scores[t, k]
        if total > best_score:
            best_score, best_path = total, path
    return [labels[k] for k in best_path], best_score


LABELS3 = ["O", "B-Dis", "I-Dis"]


def tiny_model(seed=0, labels=LABELS3, word_dim=5, **kw):
    cfg = NerConfig(char_dim=3, conv_width=2, conv_filters=4, hidden=4, seed=seed, **kw)
    vocab = {ch: i + 1 for i, ch in enumerate("abcdef")}
    rng = np.random.Generator(np.random.PCG64(seed))
    return init_model(list(labels), vocab, word_dim, cfg, rng), cfg


def random_batch(rng, model, n_examples, max_len=5):
    chars = list(model.char_vocab) + ["z", "Q"]
    batch = []
    for _ in range(n_examples):
        T = int(rng.integers(1, max_len + 1))
        tokens = [
            "".join(rng.choice(chars) for _ in range(int(rng.integers(1, 5))))
            for _ in range(T)
        ]
        vectors = rng.standard_normal((T, model.word_dim))
        labels = ["O"] * T
        if T >= 2:
            labels[0], labels[1] = "B-Dis", "I-Dis"
        batch.append(NerExample(tokens, vectors, labels))
    return batch


def examples_from_conll(dataset, table) -> list[NerExample]:
    out = []
    for tokens, labels in dataset.sentences:
        vecs = np.stack([table.lookup(t)[0] for t in tokens]).astype(np.float64)
        out.append(NerExample(list(tokens), vecs, list(labels)))
    return out


def sentence_tokens(text: str):
    doc = assemble_document(text)
    sents = detect_sentences(doc, SentenceRules())
    assert len(sents) == 1, text
    return tokenize(sents[0], TokenRules())


def assertion_examples(rows, table) -> list[AssertionExample]:
    out = []
    for row in rows:
        toks = sentence_tokens(row["text"])
        vecs = np.stack([table.lookup(t.result)[0] for t in toks]).astype(np.float64)
        span = char_span_to_token_span(toks, row["chunk_begin"], row["chunk_end"])
        out.append(AssertionExample(vecs, span, row["label"]))
    return out


def phrase_example(text: str, chunk: str, table) -> AssertionExample:
    begin = text.index(chunk)
    row = {
        "text": text,
        "chunk_begin": begin,
        "chunk_end": begin + len(chunk) - 1,
        "label": "",
    }
    return assertion_examples([row], table)[0]


def text_frame(texts: list[str], prefix: str = "doc") -> Frame:
    return Frame([DocumentRecord(f"{prefix}-{i:04d}", t) for i, t in enumerate(texts)])


def random_text(rnd: random.Random, max_sentences: int = 4) -> str:
    """Messy but plausible text: abbreviations, decimals, tabs, punctuation."""
    words = [
        "patient", "denies", "nausea", "fever", "Dr.", "Smith", "saw", "b.i.d.",
        "dose", "2.5", "mg", "x=1", "COVID-19", "chest", "pain", "a", "I",
        "follow-up", "(stable)", "3rd", "q.d.", "...",
    ]
    parts = []
    for _ in range(rnd.randint(1, max_sentences)):
        n = rnd.randint(1, 8)
        sent = " ".join(rnd.choice(words) for _ in range(n))
        parts.append(sent + rnd.choice([".", "?", "!", "."]))
        parts.append(rnd.choice([" ", "  ", "\n", "\t", " "]))
    return "".join(parts).rstrip()
