from __future__ import annotations

from pathlib import Path

import pytest

from regcheck.corpus import parse_document

FIXTURES = Path(__file__).parent / "fixtures"
DATA = Path(__file__).parent.parent / "src" / "regcheck" / "data"


@pytest.fixture(scope="session")
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def gold_doc():
    raw = (FIXTURES / "sfcr_gold_corpus.txt").read_text(encoding="utf-8")
    return parse_document(raw, "structured", doc_id="gold")


@pytest.fixture(scope="session")
def dpa_doc():
    raw = (FIXTURES / "dpa_demo.txt").read_text(encoding="utf-8")
    return parse_document(raw, "structured", doc_id="dpa_demo")
