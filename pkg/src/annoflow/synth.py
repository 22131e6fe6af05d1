"""Seeded synthetic clinical-note corpus for benchmarks and fuzz tests.

Documents are template-filled sentences over small clinical word pools, so
the text exercises the interesting annotator paths (abbreviations, decimals,
negation and family-history cues) while staying fully deterministic for a
given seed.  A matching embedding table can be derived from the vocabulary
so end-to-end pipelines run without external downloads.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass

import numpy as np

from .core import DocumentRecord, Frame
from .embeddings import EmbeddingTable

DISEASES = (
    "diabetes", "hypertension", "asthma", "pneumonia", "anemia",
    "depression", "migraine", "arthritis", "bronchitis", "gastritis",
)
SYMPTOMS = (
    "nausea", "dyspnea", "fatigue", "dizziness", "fever",
    "vomiting", "headache", "wheezing", "palpitations", "chills",
)
DRUGS = (
    "metformin", "lisinopril", "albuterol", "amoxicillin", "ibuprofen",
    "omeprazole", "atorvastatin", "prednisone",
)
ACTIVITIES = ("climbing stairs", "walking uphill", "light exercise", "lifting boxes")
RELATIVES = ("mother", "father", "brother", "sister", "aunt", "grandfather")
SURNAMES = ("Alvarez", "Chen", "Okafor", "Patel", "Novak", "Reyes")
TESTS = ("chest x-ray", "blood panel", "ecg", "ct scan", "mri")

_TEMPLATES = (
    "Patient denies {symptom} and {symptom2}.",
    "Patient is a {age} year old with known {disease}.",
    "Family history of {disease} in the {relative}.",
    "Reports {symptom} while {activity}.",
    "Prescribed {drug} {dose} mg twice daily.",
    "Dr. {surname} reviewed the {test} results.",
    "No evidence of {disease} on {test}.",
    "Exam shows {symptom} without {symptom2}.",
    "Denies {symptom}, {symptom2}, or {symptom3}.",
    "The {relative} was diagnosed with {disease} at age {age}.",
    "Follow up in {weeks} weeks for {disease} management.",
    "Temperature {temp_i}.{temp_f} and stable vitals.",
)


@dataclass(frozen=True)
class CorpusParams:
    docs: int = 1000
    min_sentences: int = 2
    max_sentences: int = 6
    seed: int = 42


def _fill(template: str, rnd: random.Random) -> str:
    symptoms = rnd.sample(SYMPTOMS, 3)
    values = {
        "symptom": symptoms[0],
        "symptom2": symptoms[1],
        "symptom3": symptoms[2],
        "disease": rnd.choice(DISEASES),
        "drug": rnd.choice(DRUGS),
        "activity": rnd.choice(ACTIVITIES),
        "relative": rnd.choice(RELATIVES),
        "surname": rnd.choice(SURNAMES),
        "test": rnd.choice(TESTS),
        "age": rnd.randint(18, 90),
        "dose": rnd.choice((5, 10, 20, 40, 250, 500)),
        "weeks": rnd.randint(2, 12),
        "temp_i": rnd.randint(36, 39),
        "temp_f": rnd.randint(0, 9),
    }
    return template.format(**values)


def make_document(rnd: random.Random, min_sentences: int, max_sentences: int) -> str:
    n = rnd.randint(min_sentences, max_sentences)
    return " ".join(_fill(rnd.choice(_TEMPLATES), rnd) for _ in range(n))


def make_corpus(params: CorpusParams) -> Frame:
    rnd = random.Random(params.seed)
    records = [
        DocumentRecord(id=f"doc-{i:05d}", text=make_document(rnd, params.min_sentences, params.max_sentences))
        for i in range(params.docs)
    ]
    return Frame(records)


_WORD_RE = re.compile(r"[^\W_]+")


def vocabulary() -> list[str]:
    """Lowercase word forms the generator can emit, sorted.  Numbers are
    excluded on purpose: they stay out-of-vocabulary like in real tables."""
    words: set[str] = set()
    for pool in (DISEASES, SYMPTOMS, DRUGS, ACTIVITIES, RELATIVES, SURNAMES, TESTS):
        for entry in pool:
            words.update(w.lower() for w in _WORD_RE.findall(entry))
    for template in _TEMPLATES:
        words.update(w.lower() for w in _WORD_RE.findall(re.sub(r"\{[^}]*\}", " ", template)))
    return sorted(words)


def synthetic_table(dim: int = 24, seed: int = 42, extra: list[str] | None = None) -> EmbeddingTable:
    """Embedding table over the synthetic vocabulary, rows drawn from a
    seeded generator in sorted-token order so the table is reproducible."""
    tokens = sorted(set(vocabulary()) | set(extra or []))
    rng = np.random.Generator(np.random.PCG64(seed))
    vectors = rng.normal(0.0, 0.5, size=(len(tokens), dim)).astype(np.float32)
    return EmbeddingTable(tokens, vectors)


def write_glove_text(table: EmbeddingTable, path: str) -> None:
    """Text-format dump readable by the GloVe loader; float32 values print
    with full round-trip precision."""
    with open(path, "w", encoding="utf-8") as fh:
        for token in table.tokens():
            vec, _ = table.lookup(token)
            fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")
