from __future__ import annotations

import sqlite3
from pathlib import Path

import pytest

from pginsight.catalog import SchemaCatalog, build_lexicon
from pginsight.executor import SqliteBackend
from pginsight.fixtures import (
    FIXTURE_CLOCK,
    fixture_catalog,
    fixture_connection,
    fixture_lexicon,
    fixture_synonyms,
)

ASSETS = Path(__file__).parent / "assets"


@pytest.fixture(scope="session")
def catalog() -> SchemaCatalog:
    return fixture_catalog()


@pytest.fixture(scope="session")
def lexicon(catalog):
    return fixture_lexicon(catalog)


@pytest.fixture(scope="session")
def synonyms():
    return fixture_synonyms()


@pytest.fixture(scope="session")
def db() -> sqlite3.Connection:
    return fixture_connection()


@pytest.fixture(scope="session")
def backend(db):
    return SqliteBackend(db)


@pytest.fixture()
def clock():
    return lambda: FIXTURE_CLOCK
