"""Shared fixtures: bundled rules, corpus paths and the corpus profile."""
from pathlib import Path

import pytest

from app.models.schemas import DslRule, FunctionClassification
from app.services.cmodel import load_classification
from app.services.dsl import load_rules


BACKEND_DIR = Path(__file__).resolve().parent.parent
RULES_DIR = BACKEND_DIR / "rules"
CORPUS_DIR = BACKEND_DIR / "corpus"
TA_DIR = CORPUS_DIR / "ta"
GOLDEN_DIR = Path(__file__).resolve().parent / "golden"


@pytest.fixture(scope="session")
def rules() -> dict[str, DslRule]:
    return load_rules(RULES_DIR)


@pytest.fixture(scope="session")
def corpus_fc() -> FunctionClassification:
    return load_classification(CORPUS_DIR / "classify.yaml")


@pytest.fixture
def default_fc() -> FunctionClassification:
    return FunctionClassification()
