import pathlib

import pytest

from annoflow.assertion import AssertionConfig, read_assertion_jsonl, train_assertion
from annoflow.embeddings import load_glove
from annoflow.evaluation import read_conll
from annoflow.ner import NerConfig, train_ner
from annoflow.presets import assemble_ner_pipeline

DATA = pathlib.Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def toy_glove_path() -> str:
    return str(DATA / "glove_toy.txt")


@pytest.fixture(scope="session")
def toy_table(toy_glove_path):
    return load_glove(toy_glove_path)


@pytest.fixture(scope="session")
def toy_conll_path() -> str:
    return str(DATA / "ner_toy.conll")


@pytest.fixture(scope="session")
def toy_conll(toy_conll_path):
    return read_conll(toy_conll_path)


@pytest.fixture(scope="session")
def toy_assertion_path() -> str:
    return str(DATA / "assertion_toy.jsonl")


@pytest.fixture(scope="session")
def toy_assertion_rows(toy_assertion_path):
    return read_assertion_jsonl(toy_assertion_path)


@pytest.fixture(scope="session")
def fitted_pipeline(toy_conll, toy_table, toy_assertion_rows):
    """Full rules + embeddings + NER + chunker + assertion pipeline, trained
    small but for real, shared by persistence and CLI tests."""
    from helpers import assertion_examples, examples_from_conll

    ner_model, _ = train_ner(
        examples_from_conll(toy_conll, toy_table),
        NerConfig(
            char_dim=8, conv_width=3, conv_filters=8, hidden=16,
            learning_rate=0.3, epochs=120, batch_size=8, seed=42,
        ),
    )
    assertion_model = train_assertion(
        assertion_examples(toy_assertion_rows, toy_table),
        AssertionConfig(epochs=150),
    )
    return assemble_ner_pipeline(toy_table, ner_model, assertion_model)
