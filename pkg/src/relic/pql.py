"""Predictive query language: lexer, recursive-descent parser, printer, compiler.

Grammar (one-token lookahead, keywords case-insensitive):

    query   := PREDICT expr FOR EACH table '.' column
    expr    := agg [cmp literal] | table '.' column
    agg     := FN '(' table '.' (column | '*') ',' int ',' int ',' unit
               [',' WHERE cond (AND cond)*] ')'
    FN      := COUNT | SUM | AVG | MIN | MAX
    unit    := days | hours
    cond    := column cmp literal
    cmp     := '=' | '!=' | '<' | '>' | '<=' | '>='
    literal := number | 'string' | "string" | TRUE | FALSE

Windows are half-open relative to the anchor: (t + start, t + end].
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .schema import Schema, SemanticType
from .times import MS_PER_DAY, MS_PER_HOUR


class PqlError(ValueError):
    def __init__(self, message: str, pos: int | None = None):
        self.pos = pos
        if pos is not None:
            message = f"{message} (at column {pos + 1})"
        super().__init__(message)


KEYWORDS = {"PREDICT", "FOR", "EACH", "WHERE", "AND", "TRUE", "FALSE",
            "COUNT", "SUM", "AVG", "MIN", "MAX", "DAYS", "HOURS"}
AGG_FNS = ("COUNT", "SUM", "AVG", "MIN", "MAX")
CMP_OPS = ("=", "!=", "<", ">", "<=", ">=")
UNITS = {"days": MS_PER_DAY, "hours": MS_PER_HOUR}


@dataclass
class Token:
    kind: str      # KW | IDENT | NUMBER | STRING | PUNCT | EOF
    value: str
    pos: int

    @property
    def span(self) -> tuple[int, int]:
        return (self.pos, self.pos + len(self.value))


_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<number>-?\d+(?:\.\d+)?)
  | (?P<ident>[A-Za-z_]\w*)
  | (?P<string>'[^']*'|"[^"]*")
  | (?P<punct><=|>=|!=|[=<>(),.*])
""", re.VERBOSE)


def tokenize(text: str) -> list[Token]:
    """Keywords case-insensitive; identifiers, numbers, punctuation with spans."""
    out: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise PqlError(f"illegal character {text[pos]!r}", pos)
        if m.lastgroup == "ws":
            pos = m.end()
            continue
        value = m.group()
        if m.lastgroup == "ident":
            upper = value.upper()
            if upper in KEYWORDS:
                out.append(Token("KW", upper, pos))
            else:
                out.append(Token("IDENT", value, pos))
        elif m.lastgroup == "number":
            out.append(Token("NUMBER", value, pos))
        elif m.lastgroup == "string":
            out.append(Token("STRING", value, pos))
        else:
            out.append(Token("PUNCT", value, pos))
        pos = m.end()
    out.append(Token("EOF", "", len(text)))
    return out


# ---------------------------------------------------------------------------
# AST


@dataclass
class Window:
    start: int
    end: int
    unit: str  # days | hours

    @property
    def start_ms(self) -> int:
        return self.start * UNITS[self.unit]

    @property
    def end_ms(self) -> int:
        return self.end * UNITS[self.unit]


@dataclass
class Condition:
    column: str
    op: str
    literal: object  # float | str | bool


@dataclass
class ColumnRef:
    table: str
    column: str


@dataclass
class AggExpr:
    fn: str
    table: str
    column: str | None  # None means ".*"
    window: Window
    where: list[Condition] = field(default_factory=list)


@dataclass
class QueryAst:
    target: AggExpr | ColumnRef
    comparison: tuple[str, object] | None
    entity: ColumnRef


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def cur(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        tok = self.cur
        self.i += 1
        return tok

    def expect(self, kind: str, value: str | None = None) -> Token:
        tok = self.cur
        if tok.kind != kind or (value is not None and tok.value != value):
            want = value if value is not None else kind
            raise PqlError(f"expected {want}, found {tok.value or 'end of input'!r}", tok.pos)
        return self.advance()

    def parse_query(self) -> QueryAst:
        self.expect("KW", "PREDICT")
        target = self.parse_expr()
        comparison = None
        if self.cur.kind == "PUNCT" and self.cur.value in CMP_OPS:
            op = self.advance().value
            comparison = (op, self.parse_literal())
        self.expect("KW", "FOR")
        self.expect("KW", "EACH")
        table = self.expect("IDENT").value
        self.expect("PUNCT", ".")
        column = self.expect("IDENT").value
        self.expect("EOF")
        return QueryAst(target=target, comparison=comparison,
                        entity=ColumnRef(table, column))

    def parse_expr(self):
        tok = self.cur
        if tok.kind == "KW" and tok.value in AGG_FNS:
            return self.parse_agg()
        if tok.kind == "IDENT":
            table = self.advance().value
            self.expect("PUNCT", ".")
            column = self.expect("IDENT").value
            return ColumnRef(table, column)
        raise PqlError(
            f"expected an aggregation ({', '.join(AGG_FNS)}) or table.column, "
            f"found {tok.value or 'end of input'!r}", tok.pos)

    def parse_agg(self) -> AggExpr:
        fn = self.advance().value
        self.expect("PUNCT", "(")
        table = self.expect("IDENT").value
        self.expect("PUNCT", ".")
        if self.cur.kind == "PUNCT" and self.cur.value == "*":
            self.advance()
            column = None
        else:
            column = self.expect("IDENT").value
        self.expect("PUNCT", ",")
        start = self.parse_int()
        self.expect("PUNCT", ",")
        end = self.parse_int()
        self.expect("PUNCT", ",")
        unit_tok = self.expect("KW")
        if unit_tok.value not in ("DAYS", "HOURS"):
            raise PqlError(f"expected days or hours, found {unit_tok.value!r}", unit_tok.pos)
        where: list[Condition] = []
        if self.cur.kind == "PUNCT" and self.cur.value == ",":
            self.advance()
            self.expect("KW", "WHERE")
            where.append(self.parse_condition())
            while self.cur.kind == "KW" and self.cur.value == "AND":
                self.advance()
                where.append(self.parse_condition())
        self.expect("PUNCT", ")")
        return AggExpr(fn=fn, table=table, column=column,
                       window=Window(start, end, unit_tok.value.lower()), where=where)

    def parse_condition(self) -> Condition:
        column = self.expect("IDENT").value
        op_tok = self.cur
        if op_tok.kind != "PUNCT" or op_tok.value not in CMP_OPS:
            raise PqlError(f"expected a comparison operator, found {op_tok.value!r}",
                           op_tok.pos)
        self.advance()
        return Condition(column, op_tok.value, self.parse_literal())

    def parse_int(self) -> int:
        tok = self.expect("NUMBER")
        if "." in tok.value:
            raise PqlError(f"expected an integer, found {tok.value!r}", tok.pos)
        return int(tok.value)

    def parse_literal(self):
        tok = self.cur
        if tok.kind == "NUMBER":
            self.advance()
            return float(tok.value)
        if tok.kind == "STRING":
            self.advance()
            return tok.value[1:-1]
        if tok.kind == "KW" and tok.value in ("TRUE", "FALSE"):
            self.advance()
            return tok.value == "TRUE"
        raise PqlError(f"expected a literal, found {tok.value or 'end of input'!r}", tok.pos)


def parse(text_or_tokens) -> QueryAst:
    tokens = (tokenize(text_or_tokens) if isinstance(text_or_tokens, str)
              else list(text_or_tokens))
    return _Parser(tokens).parse_query()


# ---------------------------------------------------------------------------
# printer (canonical single-line form; parse(pretty_print(ast)) == ast)


def _print_literal(v) -> str:
    if isinstance(v, bool):
        return "TRUE" if v else "FALSE"
    if isinstance(v, float):
        return repr(int(v)) if v.is_integer() else repr(v)
    return "'" + str(v) + "'"


def pretty_print(ast: QueryAst) -> str:
    if isinstance(ast.target, AggExpr):
        a = ast.target
        path = f"{a.table}.{a.column if a.column is not None else '*'}"
        parts = f"{a.fn}({path}, {a.window.start}, {a.window.end}, {a.window.unit}"
        if a.where:
            conds = " AND ".join(f"{c.column} {c.op} {_print_literal(c.literal)}"
                                 for c in a.where)
            parts += f", WHERE {conds}"
        target = parts + ")"
    else:
        target = f"{ast.target.table}.{ast.target.column}"
    cmp_part = ""
    if ast.comparison is not None:
        op, lit = ast.comparison
        cmp_part = f" {op} {_print_literal(lit)}"
    return f"PREDICT {target}{cmp_part} FOR EACH {ast.entity.table}.{ast.entity.column}"


# ---------------------------------------------------------------------------
# compiler


@dataclass
class TaskPlan:
    task_type: str              # binary | multiclass | regression
    temporal: bool
    entity_table: str
    entity_column: str
    # temporal label spec
    agg_fn: str | None = None
    agg_table: str | None = None
    agg_column: str | None = None
    window_start_ms: int | None = None
    window_end_ms: int | None = None
    where: list[Condition] = field(default_factory=list)
    comparison: tuple[str, object] | None = None
    # static label spec
    target_column: str | None = None
    # multiclass dictionary (observed values; "__other__" appended at eval)
    classes: list[str] | None = None
    edge_to_agg: str | None = None   # edge type from entity table to agg table

    def to_json(self) -> str:
        doc = {
            "task_type": self.task_type,
            "temporal": self.temporal,
            "entity": {"table": self.entity_table, "column": self.entity_column},
        }
        if self.temporal:
            doc["aggregation"] = {
                "fn": self.agg_fn, "table": self.agg_table, "column": self.agg_column,
                "window_ms": [self.window_start_ms, self.window_end_ms],
                "where": [{"column": c.column, "op": c.op, "literal": c.literal}
                          for c in self.where],
                "edge_type": self.edge_to_agg,
            }
        else:
            doc["target_column"] = self.target_column
        if self.comparison is not None:
            doc["comparison"] = {"op": self.comparison[0], "literal": self.comparison[1]}
        if self.classes is not None:
            doc["classes"] = self.classes
        return json.dumps(doc, sort_keys=True, indent=2)


_BOOL_SETS = ({"0", "1"}, {"true", "false"})


def _is_boolean_column(chunkless_values: list[str]) -> bool:
    lowered = {v.lower() for v in chunkless_values}
    return any(lowered <= s for s in _BOOL_SETS)


def compile_query(ast: QueryAst, schema: Schema, graph=None) -> TaskPlan:
    """Type-check the query against the schema and build a task plan.

    `graph` is needed to freeze the class dictionary of a multiclass plan and
    to distinguish boolean from general categorical static targets.
    """
    entity_table = schema.table(ast.entity.table)
    if entity_table.primary_key is None:
        raise PqlError(f"entity table {ast.entity.table!r} has no primary key")
    if ast.entity.column != entity_table.primary_key:
        raise PqlError(
            f"FOR EACH column must be the primary key {entity_table.primary_key!r} "
            f"of {ast.entity.table!r}, got {ast.entity.column!r}")

    if isinstance(ast.target, AggExpr):
        agg = ast.target
        agg_table = schema.table(agg.table)
        if agg.window.start < 0:
            raise PqlError("window start must be >= 0 (label events precede nothing)")
        if not agg.window.start < agg.window.end:
            raise PqlError(
                f"window start must be < end, got ({agg.window.start}, {agg.window.end})")
        if agg.fn == "COUNT":
            if agg.column is not None:
                raise PqlError("COUNT aggregates rows; use COUNT(table.*)")
        else:
            if agg.column is None:
                raise PqlError(f"{agg.fn} requires a column, not '*'")
            col = agg_table.column(agg.column)
            if col.stype != SemanticType.NUMERICAL:
                raise PqlError(
                    f"{agg.fn} needs a numerical column; {agg.table}.{agg.column} "
                    f"is {col.stype.value}")
        for cond in agg.where:
            ccol = agg_table.column(cond.column)
            if ccol.stype == SemanticType.NUMERICAL:
                if not isinstance(cond.literal, (int, float)) or isinstance(cond.literal, bool):
                    raise PqlError(
                        f"filter on numerical column {cond.column!r} needs a number")
            elif ccol.stype in (SemanticType.CATEGORICAL, SemanticType.TEXT,
                                SemanticType.IDENTIFIER):
                if cond.op not in ("=", "!="):
                    raise PqlError(
                        f"filter on {ccol.stype.value} column {cond.column!r} "
                        f"supports only = and !=")
            else:
                raise PqlError(f"cannot filter on {ccol.stype.value} column {cond.column!r}")

        # one hop from the entity table via a link, either orientation
        edge = None
        for link in schema.links:
            if link.src_table == agg.table and link.dst_table == ast.entity.table:
                from .store import pkey_edge_name
                edge = pkey_edge_name(link)
                break
            if link.src_table == ast.entity.table and link.dst_table == agg.table:
                from .store import fkey_edge_name
                edge = fkey_edge_name(link)
                break
        if edge is None:
            raise PqlError(
                f"no link connects entity table {ast.entity.table!r} to "
                f"aggregation table {agg.table!r}")
        if agg_table.time_column is None:
            raise PqlError(
                f"temporal aggregation over {agg.table!r} needs a time column")

        task_type = "binary" if ast.comparison is not None else "regression"
        return TaskPlan(
            task_type=task_type, temporal=True,
            entity_table=ast.entity.table, entity_column=ast.entity.column,
            agg_fn=agg.fn, agg_table=agg.table, agg_column=agg.column,
            window_start_ms=agg.window.start_ms, window_end_ms=agg.window.end_ms,
            where=list(agg.where), comparison=ast.comparison, edge_to_agg=edge)

    # static column read
    ref = ast.target
    if ref.table != ast.entity.table:
        raise PqlError(
            f"static target {ref.table}.{ref.column} must live on the entity table "
            f"{ast.entity.table!r}")
    col = schema.table(ref.table).column(ref.column)
    if ast.comparison is not None:
        raise PqlError("comparisons apply to aggregations, not static columns")
    if col.stype == SemanticType.NUMERICAL:
        return TaskPlan(task_type="regression", temporal=False,
                        entity_table=ast.entity.table, entity_column=ast.entity.column,
                        target_column=ref.column)
    if col.stype == SemanticType.IDENTIFIER:
        raise PqlError(f"cannot predict identifier column {ref.table}.{ref.column}")
    if col.stype == SemanticType.TIMESTAMP:
        raise PqlError(f"cannot predict timestamp column {ref.table}.{ref.column}")
    # categorical / text: boolean column -> binary, otherwise multiclass with a
    # class dictionary frozen from the stored column
    if graph is None:
        raise PqlError("compiling a static categorical target needs the graph "
                       "(class dictionary is frozen from the column)")
    chunk = graph.table(ref.table).chunks[ref.column]
    observed = list(chunk.dictionary or [])
    if _is_boolean_column(observed):
        return TaskPlan(task_type="binary", temporal=False,
                        entity_table=ast.entity.table, entity_column=ast.entity.column,
                        target_column=ref.column)
    return TaskPlan(task_type="multiclass", temporal=False,
                    entity_table=ast.entity.table, entity_column=ast.entity.column,
                    target_column=ref.column, classes=observed)
