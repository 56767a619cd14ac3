"""Schema metadata: catalog loading, introspection, join paths, and the lexical index.

The catalog is the grounding target for everything downstream: intent phrases
are bound against it, SQL is validated against it, and join paths between the
tables an intent references are searched on its foreign-key graph.
"""

from __future__ import annotations

import json
import sqlite3
from collections import deque
from dataclasses import dataclass, field

from .util import singularize, tokenize

TYPE_TAGS = ("integer", "float", "text", "boolean", "timestamp", "date", "jsonb", "other")
NUMERIC_TAGS = ("integer", "float")
TEMPORAL_TAGS = ("timestamp", "date")


class CatalogError(ValueError):
    """Malformed catalog input: duplicate names, dangling references, empty tables."""


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    type_tag: str
    nullable: bool = True
    is_primary_key: bool = False
    description: str | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise CatalogError("column name must be non-empty")
        if self.type_tag not in TYPE_TAGS:
            raise CatalogError(f"unknown type tag {self.type_tag!r} on column {self.name!r}")


@dataclass(frozen=True)
class TableMeta:
    name: str
    columns: tuple[ColumnMeta, ...]
    row_estimate: int = 1000

    def __post_init__(self) -> None:
        if not self.columns:
            raise CatalogError(f"table {self.name!r} has no columns")
        if self.row_estimate < 0:
            raise CatalogError(f"table {self.name!r} has negative row estimate")
        seen: set[str] = set()
        for col in self.columns:
            low = col.name.lower()
            if low in seen:
                raise CatalogError(f"duplicate column {self.name}.{col.name}")
            seen.add(low)

    def column(self, name: str) -> ColumnMeta | None:
        low = name.lower()
        for col in self.columns:
            if col.name.lower() == low:
                return col
        return None

    @property
    def primary_key(self) -> tuple[ColumnMeta, ...]:
        return tuple(c for c in self.columns if c.is_primary_key)


@dataclass(frozen=True)
class ForeignKey:
    from_table: str
    from_column: str
    to_table: str
    to_column: str

    def key(self) -> tuple[str, str, str, str]:
        return (self.from_table, self.from_column, self.to_table, self.to_column)


@dataclass(frozen=True)
class JoinPath:
    edges: tuple[ForeignKey, ...]
    endpoints: tuple[str, str]

    def __len__(self) -> int:
        return len(self.edges)

    def tables(self) -> list[str]:
        """Tables in traversal order, starting at the first endpoint."""
        order = [self.endpoints[0]]
        for edge in self.edges:
            nxt = edge.to_table if edge.from_table == order[-1] else edge.from_table
            order.append(nxt)
        return order


@dataclass
class SchemaCatalog:
    tables: dict[str, TableMeta]
    foreign_keys: list[ForeignKey]
    adjacency: dict[str, list[tuple[str, ForeignKey]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        lowered: set[str] = set()
        for name in self.tables:
            low = name.lower()
            if low in lowered:
                raise CatalogError(f"duplicate table name {name!r}")
            lowered.add(low)
        for fk in self.foreign_keys:
            self._check_endpoint(fk, fk.from_table, fk.from_column)
            self._check_endpoint(fk, fk.to_table, fk.to_column)
        self.adjacency = self._build_adjacency()

    def _check_endpoint(self, fk: ForeignKey, table: str, column: str) -> None:
        meta = self.tables.get(table)
        if meta is None:
            raise CatalogError(f"foreign key references unknown table {table!r}")
        if meta.column(column) is None:
            raise CatalogError(f"foreign key references unknown column {table}.{column}")

    def _build_adjacency(self) -> dict[str, list[tuple[str, ForeignKey]]]:
        adjacency: dict[str, list[tuple[str, ForeignKey]]] = {name: [] for name in self.tables}
        for fk in self.foreign_keys:
            adjacency[fk.from_table].append((fk.to_table, fk))
            adjacency[fk.to_table].append((fk.from_table, fk))
        for entries in adjacency.values():
            entries.sort(key=lambda item: (item[0],) + item[1].key())
        return adjacency

    def table(self, name: str) -> TableMeta:
        meta = self.tables.get(name)
        if meta is None:
            raise CatalogError(f"unknown table {name!r}")
        return meta

    def has_column(self, table: str, column: str) -> bool:
        meta = self.tables.get(table)
        return meta is not None and meta.column(column) is not None

    def column(self, table: str, column: str) -> ColumnMeta:
        meta = self.table(table)
        col = meta.column(column)
        if col is None:
            raise CatalogError(f"unknown column {table}.{column}")
        return col

    def element_ids(self) -> list[str]:
        """Every table name and table.column id, in canonical order."""
        out: list[str] = []
        for name in sorted(self.tables):
            out.append(name)
            out.extend(f"{name}.{col.name}" for col in self.tables[name].columns)
        return out


@dataclass(frozen=True)
class SchemaLexicon:
    entries: dict[str, frozenset[str]]
    synonym_map: dict[str, frozenset[str]]

    def tokens(self, element_id: str) -> frozenset[str]:
        try:
            return self.entries[element_id]
        except KeyError:
            raise CatalogError(f"unknown element {element_id!r}") from None


DEFAULT_ROW_ESTIMATE = 1000


def _column_from_doc(raw: dict, table_name: str) -> ColumnMeta:
    try:
        name = raw["name"]
        type_tag = raw["type"]
    except KeyError as exc:
        raise CatalogError(f"column in table {table_name!r} missing field {exc}") from None
    return ColumnMeta(
        name=name,
        type_tag=type_tag,
        nullable=bool(raw.get("nullable", True)),
        is_primary_key=bool(raw.get("primary_key", False)),
        description=raw.get("description"),
    )


def load_catalog(document: str | dict) -> SchemaCatalog:
    """Build a catalog from its JSON document form.

    Tables and columns are stored in canonical name-sorted order so that
    load and export round-trip byte for byte.
    """
    doc = json.loads(document) if isinstance(document, str) else document
    tables: dict[str, TableMeta] = {}
    for raw in doc.get("tables", []):
        name = raw.get("name")
        if not name:
            raise CatalogError("table entry missing name")
        if name.lower() in {t.lower() for t in tables}:
            raise CatalogError(f"duplicate table name {name!r}")
        columns = sorted(
            (_column_from_doc(c, name) for c in raw.get("columns", [])),
            key=lambda c: c.name,
        )
        tables[name] = TableMeta(
            name=name,
            columns=tuple(columns),
            row_estimate=int(raw.get("row_estimate", DEFAULT_ROW_ESTIMATE)),
        )
    ordered = {name: tables[name] for name in sorted(tables)}
    fks = [
        ForeignKey(raw["from_table"], raw["from_column"], raw["to_table"], raw["to_column"])
        for raw in doc.get("foreign_keys", [])
    ]
    fks.sort(key=ForeignKey.key)
    return SchemaCatalog(tables=ordered, foreign_keys=fks)


def export_catalog(catalog: SchemaCatalog) -> str:
    """Canonical JSON document for a catalog (sorted tables, columns, keys)."""
    doc = {
        "tables": [
            {
                "name": table.name,
                "columns": [
                    {
                        "name": col.name,
                        "type": col.type_tag,
                        "nullable": col.nullable,
                        "primary_key": col.is_primary_key,
                        **({"description": col.description} if col.description else {}),
                    }
                    for col in sorted(table.columns, key=lambda c: c.name)
                ],
                "row_estimate": table.row_estimate,
            }
            for table in sorted(catalog.tables.values(), key=lambda t: t.name)
        ],
        "foreign_keys": [
            {
                "from_table": fk.from_table,
                "from_column": fk.from_column,
                "to_table": fk.to_table,
                "to_column": fk.to_column,
            }
            for fk in sorted(catalog.foreign_keys, key=ForeignKey.key)
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


class IntrospectionError(RuntimeError):
    """Connection or permission failure while reading schema metadata."""


_SQLITE_TYPE_MAP = [
    (("INT",), "integer"),
    (("REAL", "FLOA", "DOUB", "NUMER", "DECIM"), "float"),
    (("CHAR", "CLOB", "TEXT"), "text"),
    (("BOOL",), "boolean"),
    (("TIMESTAMP", "DATETIME"), "timestamp"),
    (("DATE",), "date"),
    (("JSON",), "jsonb"),
]


def _sqlite_type_tag(declared: str) -> str:
    upper = (declared or "").upper()
    if "TIMESTAMP" in upper or "DATETIME" in upper:
        return "timestamp"
    if upper.startswith("DATE"):
        return "date"
    for needles, tag in _SQLITE_TYPE_MAP:
        if any(n in upper for n in needles):
            return tag
    return "other"


def _introspect_sqlite(conn: sqlite3.Connection) -> SchemaCatalog:
    cur = conn.execute(
        "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name"
    )
    table_names = [row[0] for row in cur.fetchall()]
    tables: dict[str, TableMeta] = {}
    fks: list[ForeignKey] = []
    for name in table_names:
        cols = []
        for _, col_name, declared, notnull, _default, pk in conn.execute(f"PRAGMA table_info('{name}')"):
            cols.append(
                ColumnMeta(
                    name=col_name,
                    type_tag=_sqlite_type_tag(declared),
                    nullable=not notnull and not pk,
                    is_primary_key=bool(pk),
                )
            )
        count = conn.execute(f"SELECT COUNT(*) FROM \"{name}\"").fetchone()[0]
        tables[name] = TableMeta(
            name=name,
            columns=tuple(sorted(cols, key=lambda c: c.name)),
            row_estimate=count if count else DEFAULT_ROW_ESTIMATE,
        )
        for row in conn.execute(f"PRAGMA foreign_key_list('{name}')"):
            _, _, target, from_col, to_col = row[0], row[1], row[2], row[3], row[4]
            fks.append(ForeignKey(name, from_col, target, to_col or "id"))
    fks.sort(key=ForeignKey.key)
    ordered = {name: tables[name] for name in sorted(tables)}
    return SchemaCatalog(tables=ordered, foreign_keys=fks)


_PG_INTROSPECTION_SQL = """
SELECT c.table_name, c.column_name, c.data_type, c.is_nullable
FROM information_schema.columns c
JOIN information_schema.tables t
  ON t.table_name = c.table_name AND t.table_schema = c.table_schema
WHERE c.table_schema = 'public' AND t.table_type = 'BASE TABLE'
ORDER BY c.table_name, c.column_name
"""

_PG_PK_SQL = """
SELECT tc.table_name, kcu.column_name
FROM information_schema.table_constraints tc
JOIN information_schema.key_column_usage kcu
  ON kcu.constraint_name = tc.constraint_name
WHERE tc.constraint_type = 'PRIMARY KEY' AND tc.table_schema = 'public'
"""

_PG_FK_SQL = """
SELECT kcu.table_name, kcu.column_name, ccu.table_name, ccu.column_name
FROM information_schema.table_constraints tc
JOIN information_schema.key_column_usage kcu
  ON kcu.constraint_name = tc.constraint_name
JOIN information_schema.constraint_column_usage ccu
  ON ccu.constraint_name = tc.constraint_name
WHERE tc.constraint_type = 'FOREIGN KEY' AND tc.table_schema = 'public'
"""

_PG_TYPE_MAP = {
    "integer": "integer",
    "bigint": "integer",
    "smallint": "integer",
    "numeric": "float",
    "real": "float",
    "double precision": "float",
    "text": "text",
    "character varying": "text",
    "character": "text",
    "boolean": "boolean",
    "timestamp without time zone": "timestamp",
    "timestamp with time zone": "timestamp",
    "date": "date",
    "jsonb": "jsonb",
    "json": "jsonb",
}


def _introspect_postgres(dsn: str, connect=None) -> SchemaCatalog:
    if connect is None:
        try:
            import psycopg2  # type: ignore

            connect = psycopg2.connect
        except ImportError as exc:
            raise IntrospectionError(
                "PostgreSQL introspection requires the psycopg2 driver (install extra 'postgres')"
            ) from exc
    try:
        conn = connect(dsn)
    except Exception as exc:
        raise IntrospectionError(f"could not connect to database: {exc}") from exc
    try:
        cur = conn.cursor()
        cur.execute(_PG_INTROSPECTION_SQL)
        col_rows = cur.fetchall()
        cur.execute(_PG_PK_SQL)
        pk_rows = {(t, c) for t, c in cur.fetchall()}
        cur.execute(_PG_FK_SQL)
        fk_rows = cur.fetchall()
    except Exception as exc:
        raise IntrospectionError(f"schema metadata query failed: {exc}") from exc
    finally:
        conn.close()
    grouped: dict[str, list[ColumnMeta]] = {}
    for table, column, data_type, nullable in col_rows:
        grouped.setdefault(table, []).append(
            ColumnMeta(
                name=column,
                type_tag=_PG_TYPE_MAP.get(data_type, "other"),
                nullable=nullable == "YES",
                is_primary_key=(table, column) in pk_rows,
            )
        )
    tables = {
        name: TableMeta(name=name, columns=tuple(sorted(cols, key=lambda c: c.name)))
        for name, cols in sorted(grouped.items())
    }
    fks = sorted((ForeignKey(*row) for row in fk_rows), key=ForeignKey.key)
    return SchemaCatalog(tables=tables, foreign_keys=fks)


def introspect(connection_params: str | sqlite3.Connection, connect=None) -> SchemaCatalog:
    """Read schema metadata from a database endpoint.

    Accepts an open SQLite connection, a ``sqlite:///path`` URL, or a
    ``postgresql://`` DSN (requires the optional psycopg2 driver).
    """
    if isinstance(connection_params, sqlite3.Connection):
        return _introspect_sqlite(connection_params)
    if connection_params.startswith("sqlite:"):
        path = connection_params.split("sqlite:", 1)[1].lstrip("/")
        try:
            conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
        except sqlite3.Error as exc:
            raise IntrospectionError(f"could not open {path!r}: {exc}") from exc
        try:
            return _introspect_sqlite(conn)
        finally:
            conn.close()
    if connection_params.startswith(("postgresql:", "postgres:")):
        return _introspect_postgres(connection_params, connect=connect)
    raise IntrospectionError(f"unsupported connection descriptor {connection_params!r}")


def join_path(catalog: SchemaCatalog, a: str, b: str) -> JoinPath | None:
    """Shortest foreign-key path between two tables, or None when disconnected.

    Ties on length break toward the lexicographically smallest sequence of
    traversed table names, which keeps generated joins stable across runs.
    """
    catalog.table(a)
    catalog.table(b)
    if a == b:
        return JoinPath(edges=(), endpoints=(a, a))
    best_paths: dict[str, tuple[str, ...]] = {a: (a,)}
    frontier: deque[str] = deque([a])
    while frontier:
        level = sorted(frontier, key=lambda t: best_paths[t])
        frontier = deque()
        next_best: dict[str, tuple[str, ...]] = {}
        for node in level:
            for neighbor, _edge in catalog.adjacency[node]:
                if neighbor in best_paths:
                    continue
                candidate = best_paths[node] + (neighbor,)
                if neighbor not in next_best or candidate < next_best[neighbor]:
                    next_best[neighbor] = candidate
        for neighbor, path in next_best.items():
            best_paths[neighbor] = path
            frontier.append(neighbor)
        if b in best_paths:
            break
    if b not in best_paths:
        return None
    names = best_paths[b]
    edges = []
    for left, right in zip(names, names[1:]):
        edge = _edge_between(catalog, left, right)
        edges.append(edge)
    return JoinPath(edges=tuple(edges), endpoints=(a, b))


def _edge_between(catalog: SchemaCatalog, a: str, b: str) -> ForeignKey:
    candidates = [edge for neighbor, edge in catalog.adjacency[a] if neighbor == b]
    return min(candidates, key=ForeignKey.key)


def connected(catalog: SchemaCatalog, a: str, b: str) -> bool:
    return join_path(catalog, a, b) is not None


def build_lexicon(catalog: SchemaCatalog, synonyms: dict[str, list[str]] | None = None) -> SchemaLexicon:
    """Token bags for every table and column.

    A bag holds the identifier split into lowercase singularized tokens plus
    description words; synonym terms whose targets intersect the bag are
    folded in so user vocabulary can reach schema vocabulary.
    """
    synonym_map = {
        singularize(term.lower()): frozenset(singularize(t.lower()) for t in targets)
        for term, targets in (synonyms or {}).items()
    }
    entries: dict[str, frozenset[str]] = {}
    for table in catalog.tables.values():
        entries[table.name] = _expand(tokenize(table.name), synonym_map)
        for col in table.columns:
            bag = set(tokenize(col.name))
            if col.description:
                bag |= tokenize(col.description)
            entries[f"{table.name}.{col.name}"] = _expand(bag, synonym_map)
    return SchemaLexicon(entries=entries, synonym_map=synonym_map)


def _expand(bag: set[str], synonym_map: dict[str, frozenset[str]]) -> frozenset[str]:
    expanded = set(bag)
    for term, targets in synonym_map.items():
        if targets & bag:
            expanded.add(term)
    return frozenset(expanded)
