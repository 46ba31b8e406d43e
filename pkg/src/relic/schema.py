"""Schema model: semantic column types, keys, links, derived columns.

Inference is deterministic and every inferred element can be overridden:
  (a) a primary key is a unique non-null column named "id", "<table>id",
      "<table>_id" or the singular forms;
  (b) the time column is the first timestamp-typed column, names containing
      "time"/"date" first;
  (c) a link is a column whose name equals another table's primary-key name
      and whose distinct values are contained in that key's values.
"""

from __future__ import annotations

import json
import re
from copy import deepcopy
from dataclasses import dataclass, field
from enum import Enum

from .times import parse_timestamp


class SchemaError(ValueError):
    pass


class SemanticType(str, Enum):
    IDENTIFIER = "identifier"
    NUMERICAL = "numerical"
    CATEGORICAL = "categorical"
    TEXT = "text"
    TIMESTAMP = "timestamp"


@dataclass
class Column:
    name: str
    stype: SemanticType


@dataclass
class DerivedColumn:
    name: str
    expr: str


@dataclass
class TableMeta:
    name: str
    columns: list[Column]
    primary_key: str | None = None
    time_column: str | None = None
    derived_columns: list[DerivedColumn] = field(default_factory=list)

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"table {self.name!r} has no column {name!r}")

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]


@dataclass
class LinkMeta:
    src_table: str
    fkey_column: str
    dst_table: str

    @property
    def name(self) -> str:
        return f"{self.src_table}.{self.fkey_column}->{self.dst_table}"


@dataclass
class Schema:
    tables: list[TableMeta]
    links: list[LinkMeta] = field(default_factory=list)

    def table(self, name: str) -> TableMeta:
        for t in self.tables:
            if t.name == name:
                return t
        raise SchemaError(f"unknown table {name!r}")

    def has_table(self, name: str) -> bool:
        return any(t.name == name for t in self.tables)

    def validate(self) -> None:
        names = [t.name for t in self.tables]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate table names: {sorted(names)}")
        ident = re.compile(r"[A-Za-z_]\w*\Z")
        for t in self.tables:
            if not ident.match(t.name):
                raise SchemaError(f"table name {t.name!r} is not a valid identifier")
            cnames = t.column_names
            if len(set(cnames)) != len(cnames):
                raise SchemaError(f"duplicate column names in table {t.name!r}")
            for c in t.columns:
                if not ident.match(c.name):
                    raise SchemaError(
                        f"column name {t.name}.{c.name!r} is not a valid identifier")
            if t.primary_key is not None:
                pk = t.column(t.primary_key)
                if pk.stype != SemanticType.IDENTIFIER:
                    raise SchemaError(
                        f"primary key {t.name}.{t.primary_key} must be an identifier, "
                        f"got {pk.stype.value}")
            if t.time_column is not None:
                tc = t.column(t.time_column)
                if tc.stype != SemanticType.TIMESTAMP:
                    raise SchemaError(
                        f"time column {t.name}.{t.time_column} must be a timestamp, "
                        f"got {tc.stype.value}")
            derived = {d.name for d in t.derived_columns}
            for d in t.derived_columns:
                refs = expr_columns(d.expr)
                for ref in refs:
                    if ref not in cnames:
                        raise SchemaError(
                            f"derived column {t.name}.{d.name} references unknown "
                            f"column {ref!r}")
                    if ref in derived:
                        raise SchemaError(
                            f"derived column {t.name}.{d.name} may not reference "
                            f"another derived column ({ref!r})")
                    if t.column(ref).stype != SemanticType.NUMERICAL:
                        raise SchemaError(
                            f"type mismatch in derived expression {t.name}.{d.name}: "
                            f"{ref!r} is {t.column(ref).stype.value}, not numerical")
        seen_fkeys = set()
        for link in self.links:
            src = self.table(link.src_table)
            dst = self.table(link.dst_table)
            if not src.has_column(link.fkey_column):
                raise SchemaError(f"link {link.name}: no column "
                                  f"{link.fkey_column!r} in {src.name!r}")
            if dst.primary_key is None:
                raise SchemaError(f"link {link.name}: table {dst.name!r} has no primary key")
            key = (link.src_table, link.fkey_column)
            if key in seen_fkeys:
                raise SchemaError(
                    f"foreign key column {link.src_table}.{link.fkey_column} used by "
                    f"more than one link")
            seen_fkeys.add(key)

    # JSON document format (stable field names):
    # {"tables": [{"name", "columns": [{"name", "stype"}], "primary_key",
    #              "time_column", "derived_columns": [{"name", "expr"}]}],
    #  "links": [{"src_table", "fkey_column", "dst_table"}]}
    def to_json(self) -> str:
        doc = {
            "tables": [
                {
                    "name": t.name,
                    "columns": [{"name": c.name, "stype": c.stype.value} for c in t.columns],
                    "primary_key": t.primary_key,
                    "time_column": t.time_column,
                    "derived_columns": [{"name": d.name, "expr": d.expr}
                                        for d in t.derived_columns],
                }
                for t in self.tables
            ],
            "links": [
                {"src_table": l.src_table, "fkey_column": l.fkey_column,
                 "dst_table": l.dst_table}
                for l in self.links
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Schema":
        doc = json.loads(text)
        tables = [
            TableMeta(
                name=t["name"],
                columns=[Column(c["name"], SemanticType(c["stype"])) for c in t["columns"]],
                primary_key=t.get("primary_key"),
                time_column=t.get("time_column"),
                derived_columns=[DerivedColumn(d["name"], d["expr"])
                                 for d in t.get("derived_columns", [])],
            )
            for t in doc["tables"]
        ]
        links = [LinkMeta(l["src_table"], l["fkey_column"], l["dst_table"])
                 for l in doc.get("links", [])]
        schema = cls(tables=tables, links=links)
        schema.validate()
        return schema


# ---------------------------------------------------------------------------
# derived-column expressions: + - * / and parentheses over numerical columns

_EXPR_TOKEN = re.compile(r"\s*(?:(?P<num>\d+(?:\.\d+)?)|(?P<ident>[A-Za-z_]\w*)"
                         r"|(?P<op>[+\-*/()]))")


def _expr_tokens(expr: str):
    pos = 0
    out = []
    while pos < len(expr):
        m = _EXPR_TOKEN.match(expr, pos)
        if m is None or m.end() == pos:
            if expr[pos:].strip() == "":
                break
            raise SchemaError(f"bad character in expression at offset {pos}: {expr!r}")
        pos = m.end()
        if m.group("num") is not None:
            out.append(("num", float(m.group("num"))))
        elif m.group("ident") is not None:
            out.append(("ident", m.group("ident")))
        else:
            out.append(("op", m.group("op")))
    return out


def _parse_expr(tokens, pos=0):
    def parse_sum(pos):
        node, pos = parse_term(pos)
        while pos < len(tokens) and tokens[pos] == ("op", "+") or \
                pos < len(tokens) and tokens[pos] == ("op", "-"):
            op = tokens[pos][1]
            rhs, pos = parse_term(pos + 1)
            node = (op, node, rhs)
        return node, pos

    def parse_term(pos):
        node, pos = parse_atom(pos)
        while pos < len(tokens) and tokens[pos][0] == "op" and tokens[pos][1] in "*/":
            op = tokens[pos][1]
            rhs, pos = parse_atom(pos + 1)
            node = (op, node, rhs)
        return node, pos

    def parse_atom(pos):
        if pos >= len(tokens):
            raise SchemaError("expression ended unexpectedly")
        kind, val = tokens[pos]
        if kind == "num":
            return ("lit", val), pos + 1
        if kind == "ident":
            return ("col", val), pos + 1
        if (kind, val) == ("op", "("):
            node, pos = parse_sum(pos + 1)
            if pos >= len(tokens) or tokens[pos] != ("op", ")"):
                raise SchemaError("missing closing parenthesis in expression")
            return node, pos + 1
        if (kind, val) == ("op", "-"):
            node, pos = parse_atom(pos + 1)
            return ("*", ("lit", -1.0), node), pos
        raise SchemaError(f"unexpected token {val!r} in expression")

    node, end = parse_sum(pos)
    if end != len(tokens):
        raise SchemaError(f"trailing tokens in expression: {tokens[end:]}")
    return node


def parse_expression(expr: str):
    tokens = _expr_tokens(expr)
    if not tokens:
        raise SchemaError("empty expression")
    return _parse_expr(tokens)


def expr_columns(expr: str) -> list[str]:
    """Column names referenced by an expression, in first-use order."""
    seen: list[str] = []

    def walk(node):
        if node[0] == "col" and node[1] not in seen:
            seen.append(node[1])
        elif node[0] in "+-*/":
            walk(node[1])
            walk(node[2])

    walk(parse_expression(expr))
    return seen


def eval_expression(expr: str, columns) -> "np.ndarray":
    """Evaluate over float arrays; NaN propagates, division by zero yields NaN."""
    import numpy as np

    def ev(node):
        kind = node[0]
        if kind == "lit":
            return node[1]
        if kind == "col":
            return np.asarray(columns[node[1]], dtype=np.float64)
        a, b = ev(node[1]), ev(node[2])
        if kind == "+":
            return a + b
        if kind == "-":
            return a - b
        if kind == "*":
            return a * b
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a / b
        return np.where(np.asarray(b) == 0.0, np.nan, out)

    result = ev(parse_expression(expr))
    return np.asarray(result, dtype=np.float64)


# ---------------------------------------------------------------------------
# inference


def _is_null(v) -> bool:
    if v is None:
        return True
    if isinstance(v, float):
        import math
        return math.isnan(v)
    return isinstance(v, str) and v.strip() == ""


def _parses_as_timestamp(v) -> bool:
    if isinstance(v, (int, float, bool)):
        return False
    try:
        parse_timestamp(v)
        return True
    except (ValueError, TypeError):
        return False


def _parses_as_number(v) -> bool:
    if isinstance(v, bool):
        return True
    if isinstance(v, (int, float)):
        return True
    if isinstance(v, str):
        try:
            float(v)
            return True
        except ValueError:
            return False
    return False


def _classify(values) -> SemanticType:
    nonnull = [v for v in values if not _is_null(v)]
    if not nonnull:
        raise SchemaError("column has no non-null sampled values to infer a type from")
    if all(_parses_as_timestamp(v) for v in nonnull):
        return SemanticType.TIMESTAMP
    if all(_parses_as_number(v) for v in nonnull):
        return SemanticType.NUMERICAL
    if all(isinstance(v, str) for v in nonnull):
        distinct = len({v for v in nonnull})
        if distinct <= 16 or distinct <= 0.5 * len(nonnull):
            return SemanticType.CATEGORICAL
        return SemanticType.TEXT
    raise SchemaError("column values parse to no supported semantic type")


def _pk_candidates(table: str) -> list[str]:
    sing = table[:-1] if table.endswith("s") else table
    names = ["id", f"{table}id", f"{table}_id", f"{sing}id", f"{sing}_id"]
    out = []
    for n in names:
        if n not in out:
            out.append(n)
    return out


def infer_schema(raw_tables) -> Schema:
    """Infer semantic types, primary keys, time columns and links.

    `raw_tables` maps table name -> (column name -> sampled values). Inference
    runs in a fixed order so the result is deterministic.
    """
    if not raw_tables:
        raise SchemaError("need at least one table")
    names = list(raw_tables)
    if len(set(names)) != len(names):
        raise SchemaError("duplicate table names")

    tables: list[TableMeta] = []
    for tname in names:
        cols = raw_tables[tname]
        if not cols:
            raise SchemaError(f"table {tname!r} has no columns")
        for cname in cols:
            if not cname:
                raise SchemaError(f"empty column name in table {tname!r}")
        columns = [Column(cname, _classify(values)) for cname, values in cols.items()]
        tables.append(TableMeta(name=tname, columns=columns))

    # primary keys by name + uniqueness
    for t in tables:
        lowered = {c.name.lower(): c.name for c in t.columns}
        for cand in _pk_candidates(t.name.lower()):
            if cand not in lowered:
                continue
            cname = lowered[cand]
            values = raw_tables[t.name][cname]
            nonnull = [v for v in values if not _is_null(v)]
            if len(nonnull) == len(list(values)) and len(set(map(str, nonnull))) == len(nonnull):
                t.primary_key = cname
                t.column(cname).stype = SemanticType.IDENTIFIER
                break

    # links by name equality + value containment
    links: list[LinkMeta] = []
    for t in tables:
        for c in t.columns:
            if c.name == t.primary_key:
                continue
            for dst in tables:
                if dst.name == t.name or dst.primary_key is None:
                    continue
                if c.name.lower() != dst.primary_key.lower():
                    continue
                src_vals = {str(v) for v in raw_tables[t.name][c.name] if not _is_null(v)}
                dst_vals = {str(v) for v in raw_tables[dst.name][dst.primary_key]
                            if not _is_null(v)}
                if src_vals <= dst_vals:
                    links.append(LinkMeta(t.name, c.name, dst.name))
                    c.stype = SemanticType.IDENTIFIER
                    break

    # time columns: first timestamp column, "time"/"date" names first
    for t in tables:
        ts_cols = [c.name for c in t.columns if c.stype == SemanticType.TIMESTAMP]
        preferred = [n for n in ts_cols if "time" in n.lower() or "date" in n.lower()]
        chosen = (preferred or ts_cols)
        t.time_column = chosen[0] if chosen else None

    schema = Schema(tables=tables, links=links)
    schema.validate()
    return schema


# ---------------------------------------------------------------------------
# overrides


@dataclass
class SetPrimaryKey:
    table: str
    column: str


@dataclass
class SetSemanticType:
    table: str
    column: str
    stype: SemanticType


@dataclass
class AddLink:
    src_table: str
    fkey_column: str
    dst_table: str


@dataclass
class AddDerivedColumn:
    table: str
    name: str
    expr: str


def override_schema(schema: Schema, edits) -> Schema:
    """Apply edits to a copy of the schema and revalidate."""
    out = deepcopy(schema)
    for edit in edits:
        if isinstance(edit, SetPrimaryKey):
            t = out.table(edit.table)
            t.column(edit.column).stype = SemanticType.IDENTIFIER
            t.primary_key = edit.column
        elif isinstance(edit, SetSemanticType):
            t = out.table(edit.table)
            col = t.column(edit.column)
            col.stype = SemanticType(edit.stype)
            if t.primary_key == edit.column and col.stype != SemanticType.IDENTIFIER:
                t.primary_key = None
        elif isinstance(edit, AddLink):
            src = out.table(edit.src_table)
            src.column(edit.fkey_column)
            dst = out.table(edit.dst_table)
            if dst.primary_key is None:
                raise SchemaError(
                    f"cannot link {edit.src_table}.{edit.fkey_column} to "
                    f"{edit.dst_table}: no primary key on {edit.dst_table!r}")
            src.column(edit.fkey_column).stype = SemanticType.IDENTIFIER
            out.links.append(LinkMeta(edit.src_table, edit.fkey_column, edit.dst_table))
        elif isinstance(edit, AddDerivedColumn):
            t = out.table(edit.table)
            if t.has_column(edit.name):
                raise SchemaError(f"table {t.name!r} already has a column {edit.name!r}")
            for ref in expr_columns(edit.expr):
                col = t.column(ref)
                if col.stype != SemanticType.NUMERICAL:
                    raise SchemaError(
                        f"type mismatch in derived expression {t.name}.{edit.name}: "
                        f"{ref!r} is {col.stype.value}, not numerical")
            t.columns.append(Column(edit.name, SemanticType.NUMERICAL))
            t.derived_columns.append(DerivedColumn(edit.name, edit.expr))
        else:
            raise SchemaError(f"unknown schema edit {edit!r}")
    out.validate()
    return out


def build_graph(schema: Schema, data):
    """Materialize a temporal graph over a column store; see relic.store."""
    from . import store
    return store.build_graph(schema, data)
