"""Bundled demo retail schema: catalog, synonyms, and a deterministically seeded
SQLite database.

The data is hand-designed so key answers are known in advance: per-user
revenue totals give an unambiguous top five, four users are flagged inactive
inside the demo reference window, and the daily refund-count metric carries a
weekend spike against a flat baseline. The `fixture://` connection scheme
builds this database in memory.
"""

from __future__ import annotations

import json
import random
import sqlite3
from datetime import timedelta
from importlib import resources

from .catalog import SchemaCatalog, SchemaLexicon, build_lexicon, load_catalog
from .util import iso_utc, utc

FIXTURE_CLOCK = utc(2024, 7, 1)

TOP5_CUSTOMERS = [
    ("Alice Fox", 5000.0),
    ("Bob Hale", 4200.0),
    ("Carol Vega", 3800.0),
    ("David Liu", 3100.0),
    ("Erin Shaw", 2600.0),
]

_USER_NAMES = [
    "Alice Fox",
    "Bob Hale",
    "Carol Vega",
    "David Liu",
    "Erin Shaw",
    "Frank Ortiz",
    "Grace Kim",
    "Henry Moss",
    "Iris Chen",
    "Jack Doyle",
    "Karen Patel",
    "Leo Walsh",
    "Mona Reyes",
    "Nina Brooks",
    "Omar Haddad",
    "Paula Jensen",
    "Quinn Avery",
    "Rosa Marin",
    "Sam Turner",
    "Tara Singh",
]

_REVENUE_SPLITS = {
    1: [1500.0, 1200.0, 1300.0, 1000.0],
    2: [1400.0, 1600.0, 1200.0],
    3: [1900.0, 1100.0, 800.0],
    4: [1000.0, 1050.0, 1050.0],
    5: [900.0, 850.0, 850.0],
    6: [700.0, 675.0, 675.0],
    7: [600.0, 600.0, 600.0],
    8: [550.0, 525.0, 525.0],
    9: [700.0, 700.0],
    10: [650.0, 600.0],
    11: [550.0, 550.0],
    12: [475.0, 475.0],
    13: [400.0, 400.0],
    14: [350.0, 350.0],
    15: [300.0, 300.0],
    16: [250.0, 250.0],
    17: [210.0, 210.0],
    18: [190.0, 190.0],
    19: [150.0, 150.0],
    20: [120.0, 120.0],
}

REFUND_BASELINE = [
    98.0, 101.0, 99.0, 103.0, 100.0, 97.0, 102.0, 99.0, 101.0, 100.0,
    98.0, 102.0, 100.0, 99.0, 101.0, 97.0, 103.0, 100.0, 98.0, 102.0,
    99.0, 101.0, 100.0, 98.0, 103.0, 99.0,
]
REFUND_SPIKE = [300.0, 300.0]
REFUND_SERIES_START = utc(2024, 3, 4)

_DDL = """
CREATE TABLE regions (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL,
    code TEXT NOT NULL
);
CREATE TABLE users (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL,
    email TEXT NOT NULL,
    premium BOOLEAN NOT NULL,
    inactive BOOLEAN NOT NULL,
    signup_date TIMESTAMP NOT NULL,
    region_id INTEGER NOT NULL REFERENCES regions(id)
);
CREATE TABLE categories (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL
);
CREATE TABLE products (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL,
    category_id INTEGER NOT NULL REFERENCES categories(id),
    price REAL NOT NULL,
    stock_count INTEGER NOT NULL,
    revenue_note TEXT
);
CREATE TABLE stores (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL,
    region_id INTEGER NOT NULL REFERENCES regions(id),
    opened_on DATE NOT NULL
);
CREATE TABLE sales (
    id INTEGER PRIMARY KEY,
    user_id INTEGER NOT NULL REFERENCES users(id),
    product_id INTEGER NOT NULL REFERENCES products(id),
    store_id INTEGER NOT NULL REFERENCES stores(id),
    revenue REAL NOT NULL,
    quantity INTEGER NOT NULL,
    created_at TIMESTAMP NOT NULL
);
CREATE TABLE refunds (
    id INTEGER PRIMARY KEY,
    sale_id INTEGER NOT NULL REFERENCES sales(id),
    amount REAL NOT NULL,
    refunded_at TIMESTAMP NOT NULL,
    reason TEXT NOT NULL
);
CREATE TABLE transactions (
    id INTEGER PRIMARY KEY,
    user_id INTEGER NOT NULL REFERENCES users(id),
    amount REAL NOT NULL,
    status TEXT NOT NULL,
    occurred_at TIMESTAMP NOT NULL
);
CREATE TABLE warehouses (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL,
    region_id INTEGER NOT NULL REFERENCES regions(id),
    capacity INTEGER NOT NULL
);
CREATE TABLE inventory (
    id INTEGER PRIMARY KEY,
    product_id INTEGER NOT NULL REFERENCES products(id),
    warehouse_id INTEGER NOT NULL REFERENCES warehouses(id),
    on_hand INTEGER NOT NULL,
    updated_at TIMESTAMP NOT NULL
);
CREATE TABLE shipments (
    id INTEGER PRIMARY KEY,
    warehouse_id INTEGER NOT NULL REFERENCES warehouses(id),
    carrier TEXT NOT NULL,
    shipped_at TIMESTAMP NOT NULL,
    weight_kg REAL NOT NULL,
    details JSONB
);
CREATE TABLE metrics_daily (
    id INTEGER PRIMARY KEY,
    metric TEXT NOT NULL,
    day TIMESTAMP NOT NULL,
    value REAL NOT NULL
);
"""


def fixture_catalog_document() -> str:
    return resources.files("pginsight.data").joinpath("catalog.json").read_text(encoding="utf-8")


def fixture_synonyms() -> dict[str, list[str]]:
    raw = resources.files("pginsight.data").joinpath("synonyms.json").read_text(encoding="utf-8")
    return json.loads(raw)


def fixture_catalog() -> SchemaCatalog:
    return load_catalog(fixture_catalog_document())


def fixture_lexicon(catalog: SchemaCatalog | None = None) -> SchemaLexicon:
    return build_lexicon(catalog or fixture_catalog(), fixture_synonyms())


def seed_fixture_db(connection: sqlite3.Connection) -> None:
    """Create and populate the demo schema on an open SQLite connection."""
    connection.executescript(_DDL)

    connection.executemany(
        "INSERT INTO regions VALUES (?, ?, ?)",
        [(1, "Europe", "EU"), (2, "North America", "NA"), (3, "Asia Pacific", "APAC")],
    )
    connection.executemany(
        "INSERT INTO categories VALUES (?, ?)",
        [(1, "Electronics"), (2, "Furniture"), (3, "Accessories"), (4, "Audio")],
    )

    users = []
    signup_base = utc(2023, 1, 10)
    for i, name in enumerate(_USER_NAMES, start=1):
        users.append(
            (
                i,
                name,
                name.lower().replace(" ", ".") + "@example.com",
                1 if i in (1, 3, 5, 7, 9, 11, 13, 15) else 0,
                1 if i >= 17 else 0,
                iso_utc(signup_base + timedelta(days=(i - 1) * 25)),
                (i - 1) % 3 + 1,
            )
        )
    connection.executemany("INSERT INTO users VALUES (?, ?, ?, ?, ?, ?, ?)", users)

    products = [
        (1, "Laptop Pro", 1, 1899.0, 42, "flagship line"),
        (2, "Desk Chair", 2, 349.5, 120, None),
        (3, "Monitor 27", 1, 429.0, 75, None),
        (4, "USB Hub", 3, 49.9, 300, None),
        (5, "Webcam HD", 1, 89.0, 150, "bundle candidate"),
        (6, "Standing Desk", 2, 799.0, 35, None),
        (7, "Keyboard MX", 3, 119.0, 210, None),
        (8, "Mouse Lite", 3, 39.0, 400, None),
        (9, "Dock Station", 1, 279.0, 90, None),
        (10, "Headset Air", 4, 199.0, 130, "refresh planned"),
    ]
    connection.executemany("INSERT INTO products VALUES (?, ?, ?, ?, ?, ?)", products)

    connection.executemany(
        "INSERT INTO stores VALUES (?, ?, ?, ?)",
        [
            (1, "Berlin Flagship", 1, "2019-03-12"),
            (2, "Austin Outlet", 2, "2020-07-01"),
            (3, "Tokyo Hub", 3, "2021-11-20"),
            (4, "Paris Corner", 1, "2022-05-15"),
        ],
    )

    sales = []
    sale_id = 0
    created_base = utc(2024, 1, 3, 10)
    for user_id in sorted(_REVENUE_SPLITS):
        for amount in _REVENUE_SPLITS[user_id]:
            sale_id += 1
            sales.append(
                (
                    sale_id,
                    user_id,
                    (sale_id - 1) % 10 + 1,
                    (sale_id - 1) % 4 + 1,
                    amount,
                    (sale_id - 1) % 5 + 1,
                    iso_utc(created_base + timedelta(days=(sale_id * 3) % 178)),
                )
            )
    connection.executemany("INSERT INTO sales VALUES (?, ?, ?, ?, ?, ?, ?)", sales)

    refunds = []
    refund_base = utc(2024, 2, 2, 9)
    reasons = ["damaged", "late delivery", "wrong item"]
    for i in range(1, 25):
        refunds.append(
            (
                i,
                (i * 2 - 1) % 49 + 1,
                40.0 + i * 2.5,
                iso_utc(refund_base + timedelta(days=(i * 4) % 120)),
                reasons[(i - 1) % 3],
            )
        )
    connection.executemany("INSERT INTO refunds VALUES (?, ?, ?, ?, ?)", refunds)

    transactions = []
    txn_base = utc(2024, 1, 10, 14)
    statuses = ["completed", "completed", "pending", "refunded"]
    for i in range(1, 41):
        transactions.append(
            (
                i,
                (i - 1) % 20 + 1,
                120.0 + (i * 7) % 260 + (0.5 if i % 2 else 0.0),
                statuses[(i - 1) % 4],
                iso_utc(txn_base + timedelta(days=(i * 4) % 170)),
            )
        )
    connection.executemany("INSERT INTO transactions VALUES (?, ?, ?, ?, ?)", transactions)

    connection.executemany(
        "INSERT INTO warehouses VALUES (?, ?, ?, ?)",
        [
            (1, "Hamburg Depot", 1, 5000),
            (2, "Dallas Depot", 2, 8000),
            (3, "Osaka Depot", 3, 4200),
        ],
    )

    inventory = []
    inv_base = utc(2024, 6, 1, 6)
    for i in range(1, 13):
        inventory.append(
            (i, (i - 1) % 10 + 1, (i - 1) % 3 + 1, 20 + i * 5, iso_utc(inv_base + timedelta(hours=i * 7)))
        )
    connection.executemany("INSERT INTO inventory VALUES (?, ?, ?, ?, ?)", inventory)

    shipments = []
    ship_base = utc(2024, 5, 3, 8)
    carriers = ["DHL", "UPS", "FedEx"]
    for i in range(1, 11):
        shipments.append(
            (
                i,
                (i - 1) % 3 + 1,
                carriers[(i - 1) % 3],
                iso_utc(ship_base + timedelta(days=i * 5)),
                50.0 + i * 12.5,
                json.dumps({"pallets": (i % 4) + 1, "fragile": bool(i % 2)}),
            )
        )
    connection.executemany("INSERT INTO shipments VALUES (?, ?, ?, ?, ?, ?)", shipments)

    metrics = []
    metric_id = 0
    for offset, value in enumerate(REFUND_BASELINE + REFUND_SPIKE):
        metric_id += 1
        metrics.append(
            (metric_id, "refund_count", iso_utc(REFUND_SERIES_START + timedelta(days=offset)), value)
        )
    rng = random.Random(1234)
    level = 5000.0
    revenue_start = utc(2024, 5, 2)
    for offset in range(60):
        level = 1000.0 + 0.8 * level + rng.gauss(0.0, 50.0)
        metric_id += 1
        metrics.append(
            (
                metric_id,
                "revenue_total",
                iso_utc(revenue_start + timedelta(days=offset)),
                round(level, 2),
            )
        )
    connection.executemany("INSERT INTO metrics_daily VALUES (?, ?, ?, ?)", metrics)
    connection.commit()


def fixture_connection() -> sqlite3.Connection:
    """Fresh in-memory demo database."""
    conn = sqlite3.connect(":memory:", check_same_thread=False)
    seed_fixture_db(conn)
    return conn


def fixture_events():
    from .report import load_events_jsonl

    text = resources.files("pginsight.data").joinpath("events.jsonl").read_text(encoding="utf-8")
    return load_events_jsonl(text)


def fixture_report_config(seed: int = 0):
    """Report configuration wired to the demo database's standing metrics."""
    from .report import MetricQuery, ReportConfig

    return ReportConfig(
        title="Retail Demo Analytics Report",
        seed=seed,
        metrics=(
            MetricQuery(
                name="refund_count",
                sql=(
                    "SELECT metrics_daily.day, metrics_daily.value FROM metrics_daily "
                    "WHERE metrics_daily.metric = 'refund_count' ORDER BY metrics_daily.day ASC"
                ),
            ),
            MetricQuery(
                name="revenue_total",
                sql=(
                    "SELECT metrics_daily.day, metrics_daily.value FROM metrics_daily "
                    "WHERE metrics_daily.metric = 'revenue_total' ORDER BY metrics_daily.day ASC"
                ),
            ),
        ),
        events=tuple(fixture_events()),
        forecast_metric="revenue_total",
    )
