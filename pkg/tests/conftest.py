from __future__ import annotations

import datetime as dt
import shutil
from pathlib import Path

import pytest

from textkg.corpus import Article
from textkg.extraction import Provenance, Triplet

DATA_DIR = Path(__file__).parent / "data"
GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture()
def data_copy(tmp_path: Path) -> Path:
    """Copy of tests/data in a scratch directory, so pipeline runs that write
    run_dir/cache files relative to the config never touch the repo."""
    target = tmp_path / "data"
    shutil.copytree(DATA_DIR, target)
    return target


@pytest.fixture()
def article() -> Article:
    return Article(
        id="a1",
        title="Soluna soaks up surplus renewable power",
        body="Soluna soaks up excess energy in Kentucky to keep turbines spinning.",
        source_domain="greenreport.example",
        published_at=dt.date(2023, 2, 20),
        language="en",
    )


def make_triplet(subject: str, predicate: str, obj: str, article_id: str = "a1") -> Triplet:
    return Triplet(subject, predicate, obj, Provenance(article_id, 0, "test-backend"))
