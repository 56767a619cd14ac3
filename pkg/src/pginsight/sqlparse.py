"""Tokenizer and recursive-descent parser for the supported SELECT dialect subset.

Accepts exactly what the renderer can emit (case-insensitive keywords, optional
trailing semicolon) and rejects everything else with a position-annotated
error. Statements that are not a single SELECT are refused outright; that
refusal is the first layer of the read-only execution guard.
"""

from __future__ import annotations

import re
from datetime import datetime

from .sqlast import (
    Aggregate,
    ColumnRef,
    DerivedTable,
    Join,
    Literal,
    OrderItem,
    Predicate,
    SelectAst,
    SelectItem,
    Star,
    TimeBucket,
)
from .util import parse_iso_utc


class SqlParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class SqlLexError(SqlParseError):
    pass


class NonSelectStatement(SqlParseError):
    """The statement is something other than a single SELECT."""


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<string>'(?:[^']|'')*')
  | (?P<number>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<symbol><>|<=|>=|[(),.*=<>;])
    """,
    re.VERBOSE,
)

_KEYWORDS = {
    "select",
    "distinct",
    "from",
    "join",
    "on",
    "where",
    "and",
    "group",
    "order",
    "by",
    "limit",
    "as",
    "asc",
    "desc",
    "between",
    "like",
    "true",
    "false",
    "timestamp",
    "date",
    "date_trunc",
}

_AGG_BY_KEYWORD = {"sum": "sum", "count": "count", "avg": "avg", "min": "min", "max": "max"}

_COMPARATOR_BY_SYMBOL = {"=": "=", "<>": "!=", "<": "<", "<=": "<=", ">": ">", ">=": ">="}


class _Token:
    __slots__ = ("kind", "text", "pos")

    def __init__(self, kind: str, text: str, pos: int):
        self.kind = kind
        self.text = text
        self.pos = pos

    def keyword(self) -> str | None:
        if self.kind == "ident" and self.text.lower() in _KEYWORDS:
            return self.text.lower()
        return None


def _lex(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SqlLexError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup or "", m.group(), pos))
        pos = m.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.index = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.index]

    def advance(self) -> _Token:
        tok = self.current
        self.index += 1
        return tok

    def error(self, message: str) -> SqlParseError:
        return SqlParseError(message, self.current.pos)

    def expect_keyword(self, word: str) -> _Token:
        if self.current.keyword() != word:
            raise self.error(f"expected {word.upper()}")
        return self.advance()

    def accept_keyword(self, word: str) -> bool:
        if self.current.keyword() == word:
            self.advance()
            return True
        return False

    def expect_symbol(self, symbol: str) -> _Token:
        if not (self.current.kind == "symbol" and self.current.text == symbol):
            raise self.error(f"expected {symbol!r}")
        return self.advance()

    def accept_symbol(self, symbol: str) -> bool:
        if self.current.kind == "symbol" and self.current.text == symbol:
            self.advance()
            return True
        return False

    def expect_ident(self, what: str) -> str:
        tok = self.current
        if tok.kind != "ident" or tok.keyword() is not None:
            raise self.error(f"expected {what}")
        self.advance()
        return tok.text

    # grammar -----------------------------------------------------------

    def parse_statement(self) -> SelectAst:
        if self.current.keyword() != "select":
            raise NonSelectStatement(
                f"only SELECT statements are supported, got {self.current.text!r}",
                self.current.pos,
            )
        ast = self.parse_select()
        self.accept_symbol(";")
        if self.current.kind != "eof":
            raise self.error(f"unexpected trailing input {self.current.text!r}")
        return ast

    def parse_select(self) -> SelectAst:
        self.expect_keyword("select")
        distinct = self.accept_keyword("distinct")
        items = [self.parse_select_item()]
        while self.accept_symbol(","):
            items.append(self.parse_select_item())
        self.expect_keyword("from")
        from_source: str | DerivedTable
        if self.accept_symbol("("):
            inner = self.parse_select()
            self.expect_symbol(")")
            self.expect_keyword("as")
            alias = self.expect_ident("derived table alias")
            from_source = DerivedTable(query=inner, alias=alias)
        else:
            from_source = self.expect_ident("table name")
        joins: list[Join] = []
        while self.accept_keyword("join"):
            table = self.expect_ident("join table name")
            self.expect_keyword("on")
            left = self.parse_column_ref()
            self.expect_symbol("=")
            right = self.parse_column_ref()
            joins.append(Join(table=table, left=left, right=right))
        where: list[Predicate] = []
        if self.accept_keyword("where"):
            where.append(self.parse_predicate())
            while self.accept_keyword("and"):
                where.append(self.parse_predicate())
        group_by: list = []
        if self.accept_keyword("group"):
            self.expect_keyword("by")
            group_by.append(self.parse_group_expr())
            while self.accept_symbol(","):
                group_by.append(self.parse_group_expr())
        order_by: list[OrderItem] = []
        if self.accept_keyword("order"):
            self.expect_keyword("by")
            order_by.append(self.parse_order_item())
            while self.accept_symbol(","):
                order_by.append(self.parse_order_item())
        limit: int | None = None
        if self.accept_keyword("limit"):
            tok = self.current
            if tok.kind != "number" or not tok.text.isdigit():
                raise self.error("expected integer limit")
            limit = int(tok.text)
            self.advance()
        return SelectAst(
            select_items=tuple(items),
            from_source=from_source,
            joins=tuple(joins),
            where=tuple(where),
            group_by=tuple(group_by),
            order_by=tuple(order_by),
            limit=limit,
            distinct=distinct,
        )

    def parse_select_item(self) -> SelectItem:
        expr = self.parse_expression()
        alias = None
        if self.accept_keyword("as"):
            alias = self.expect_ident("alias")
        return SelectItem(expression=expr, alias=alias)

    def parse_expression(self):
        tok = self.current
        if tok.kind == "symbol" and tok.text == "*":
            self.advance()
            return Star()
        if tok.keyword() == "date_trunc":
            self.advance()
            self.expect_symbol("(")
            grain_tok = self.current
            if grain_tok.kind != "string":
                raise self.error("expected grain string")
            grain = grain_tok.text[1:-1]
            self.advance()
            self.expect_symbol(",")
            arg = self.parse_column_ref()
            self.expect_symbol(")")
            return TimeBucket(grain=grain, arg=arg)
        if tok.kind == "ident" and tok.text.lower() in _AGG_BY_KEYWORD:
            peek = self.tokens[self.index + 1]
            if peek.kind == "symbol" and peek.text == "(":
                fn = _AGG_BY_KEYWORD[tok.text.lower()]
                self.advance()
                self.advance()
                if self.accept_symbol("*"):
                    self.expect_symbol(")")
                    if fn != "count":
                        raise self.error(f"{fn.upper()}(*) is not supported")
                    return Aggregate(fn="count", arg=Star())
                if self.accept_keyword("distinct"):
                    if fn != "count":
                        raise self.error("DISTINCT argument only valid in COUNT")
                    arg = self.parse_column_ref()
                    self.expect_symbol(")")
                    return Aggregate(fn="count_distinct", arg=arg)
                arg = self.parse_column_ref()
                self.expect_symbol(")")
                return Aggregate(fn=fn, arg=arg)
        return self.parse_column_ref()

    def parse_column_ref(self) -> ColumnRef:
        table = self.expect_ident("table-qualified column reference")
        self.expect_symbol(".")
        column = self.expect_ident("column name")
        return ColumnRef(table=table, column=column)

    def parse_group_expr(self):
        expr = self.parse_expression()
        if isinstance(expr, (ColumnRef, TimeBucket)):
            return expr
        raise self.error("GROUP BY accepts column references or DATE_TRUNC expressions")

    def parse_order_item(self) -> OrderItem:
        expr = self.parse_expression()
        direction = "asc"
        if self.accept_keyword("desc"):
            direction = "desc"
        elif self.accept_keyword("asc"):
            direction = "asc"
        return OrderItem(expression=expr, direction=direction)

    def parse_predicate(self) -> Predicate:
        column = self.parse_column_ref()
        tok = self.current
        if tok.keyword() == "between":
            self.advance()
            low = self.parse_literal()
            self.expect_keyword("and")
            high = self.parse_literal()
            return Predicate(column=column, comparator="between", value=(low, high))
        if tok.keyword() == "like":
            self.advance()
            value = self.parse_literal()
            if not isinstance(value.value, str):
                raise self.error("LIKE needs a string pattern")
            return Predicate(column=column, comparator="contains", value=value)
        if tok.kind == "symbol" and tok.text in _COMPARATOR_BY_SYMBOL:
            self.advance()
            comparator = _COMPARATOR_BY_SYMBOL[tok.text]
            nxt = self.current
            if nxt.kind == "ident" and nxt.keyword() is None and self.tokens[self.index + 1].text == ".":
                return Predicate(column=column, comparator=comparator, value=self.parse_column_ref())
            return Predicate(column=column, comparator=comparator, value=self.parse_literal())
        raise self.error("expected comparison operator")

    def parse_literal(self) -> Literal:
        tok = self.current
        if tok.kind == "number":
            self.advance()
            if "." in tok.text or "e" in tok.text or "E" in tok.text:
                return Literal(float(tok.text))
            return Literal(int(tok.text))
        if tok.kind == "string":
            self.advance()
            return Literal(tok.text[1:-1].replace("''", "'"))
        if tok.keyword() == "true":
            self.advance()
            return Literal(True)
        if tok.keyword() == "false":
            self.advance()
            return Literal(False)
        if tok.keyword() == "timestamp":
            self.advance()
            inner = self.current
            if inner.kind != "string":
                raise self.error("expected timestamp string")
            self.advance()
            return Literal(parse_iso_utc(inner.text[1:-1]))
        if tok.keyword() == "date":
            self.advance()
            inner = self.current
            if inner.kind != "string":
                raise self.error("expected date string")
            self.advance()
            return Literal(datetime.strptime(inner.text[1:-1], "%Y-%m-%d").date())
        raise self.error(f"expected literal, got {tok.text!r}")


def parse_sql(text: str) -> SelectAst:
    """Parse a statement in the supported subset into a query tree.

    Raises NonSelectStatement for anything that is not a single SELECT, and a
    position-annotated SqlParseError for lexical or grammar errors.
    """
    tokens = _lex(text)
    if tokens[0].kind == "eof":
        raise SqlParseError("empty statement", 0)
    return _Parser(tokens).parse_statement()
