"""Shared fixtures: a small shop database, randomized two-table graphs, and a
random query-AST generator for parser round-trip properties."""

import numpy as np

from relic import pql
from relic import schema as sc
from relic import store as st
from relic.times import MS_PER_DAY


def shop_schema() -> sc.Schema:
    schema = sc.infer_schema({
        "users": {
            "user_id": ["u1", "u2", "u3"],
            "age": [31, 45, 27],
        },
        "orders": {
            "order_id": ["o1", "o2", "o3", "o4"],
            "user_id": ["u1", "u1", "u2", "u3"],
            "item_id": ["i2", "i1", "i1", "i2"],
            "price": [5.0, 2.5, 9.9, 1.0],
            "quantity": [1, 3, 2, 4],
            "order_time": ["1970-01-02", "1970-01-03", "1970-01-05", "1970-01-07"],
        },
        "items": {
            "item_id": ["i1", "i2"],
            "category": ["tools", "toys"],
        },
    })
    return sc.override_schema(schema, [sc.AddDerivedColumn("orders", "total",
                                                           "price * quantity")])


def shop_data() -> dict:
    return {
        "users": {
            "user_id": ["u1", "u2", "u3"],
            "age": [31, 45, 27],
        },
        "orders": {
            "order_id": ["o1", "o2", "o3", "o4"],
            "user_id": ["u1", "u1", "u2", "u3"],
            "item_id": ["i2", "i1", "i1", "i2"],
            "price": [5.0, 2.5, 9.9, 1.0],
            "quantity": [1, 3, 2, 4],
            "order_time": ["1970-01-02", "1970-01-03", "1970-01-05", "1970-01-07"],
        },
        "items": {
            "item_id": ["i1", "i2"],
            "category": ["tools", "toys"],
        },
    }


def build_shop_graph() -> st.TemporalGraph:
    return st.build_graph(shop_schema(), shop_data())


def random_two_table_graph(seed: int, n_parents: int = 12, n_children: int = 60):
    """parents / children with random FK assignment, some dangling and some
    dimension-like (null-time) children; adjacency prebuilt.

    Returns (graph, fk_row_indices) where fk_row_indices[c] is the parent row
    of child c, or -1 when dangling/null.
    """
    rng = np.random.default_rng(seed)
    parent_ids = [f"p{i}" for i in range(n_parents)]
    fk_choice = rng.integers(-2, n_parents, size=n_children)  # -2 null, -1 dangling
    fk_values = []
    fk_rows = []
    for c in fk_choice:
        if c == -2:
            fk_values.append(None)
            fk_rows.append(-1)
        elif c == -1:
            fk_values.append("pX")
            fk_rows.append(-1)
        else:
            fk_values.append(parent_ids[c])
            fk_rows.append(int(c))
    day_of = rng.integers(0, 40, size=n_children)
    times = [None if rng.random() < 0.1 else int(d) * MS_PER_DAY for d in day_of]
    # null child times parse to the +inf sentinel: never visible
    schema = sc.Schema(tables=[
        sc.TableMeta("parents", [sc.Column("parent_id", sc.SemanticType.IDENTIFIER),
                                 sc.Column("score", sc.SemanticType.NUMERICAL)],
                     primary_key="parent_id"),
        sc.TableMeta("children", [sc.Column("child_id", sc.SemanticType.IDENTIFIER),
                                  sc.Column("parent_id", sc.SemanticType.IDENTIFIER),
                                  sc.Column("value", sc.SemanticType.NUMERICAL),
                                  sc.Column("at", sc.SemanticType.TIMESTAMP)],
                     primary_key="child_id", time_column="at"),
    ], links=[sc.LinkMeta("children", "parent_id", "parents")])
    data = {
        "parents": {"parent_id": parent_ids,
                    "score": rng.normal(size=n_parents).tolist()},
        "children": {"child_id": [f"c{i}" for i in range(n_children)],
                     "parent_id": fk_values,
                     "value": rng.normal(size=n_children).tolist(),
                     "at": times},
    }
    graph = st.build_graph(schema, data)
    st.build_adjacency(graph)
    # children with unknown time keep their edge but carry the +inf sentinel,
    # so any time-filtered oracle excludes them naturally
    return graph, fk_rows


_WORDS = ["users", "orders", "items", "events", "price", "total", "qty",
          "visits", "level", "kind", "amount", "user_id", "item_id"]


def _rand_literal(rng):
    roll = rng.integers(0, 4)
    if roll == 0:
        return float(int(rng.integers(-50, 50)))
    if roll == 1:
        return round(float(rng.uniform(-5, 5)), 3)
    if roll == 2:
        return str(rng.choice(["a", "b2", "red", "x_y"]))
    return bool(rng.integers(0, 2))


def random_query_ast(rng) -> pql.QueryAst:
    entity = pql.ColumnRef(str(rng.choice(_WORDS[:4])), str(rng.choice(_WORDS[-2:])))
    if rng.random() < 0.3:
        target = pql.ColumnRef(str(rng.choice(_WORDS[:4])), str(rng.choice(_WORDS[4:])))
        return pql.QueryAst(target=target, comparison=None, entity=entity)
    start = int(rng.integers(0, 10))
    end = start + 1 + int(rng.integers(0, 30))
    fn = str(rng.choice(pql.AGG_FNS))
    where = [pql.Condition(str(rng.choice(_WORDS[4:])), str(rng.choice(pql.CMP_OPS)),
                           _rand_literal(rng))
             for _ in range(int(rng.integers(0, 3)))]
    target = pql.AggExpr(
        fn=fn, table=str(rng.choice(_WORDS[:4])),
        column=None if fn == "COUNT" else str(rng.choice(_WORDS[4:])),
        window=pql.Window(start, end, str(rng.choice(["days", "hours"]))),
        where=where)
    comparison = None
    if rng.random() < 0.5:
        comparison = (str(rng.choice(pql.CMP_OPS)), _rand_literal(rng))
    return pql.QueryAst(target=target, comparison=comparison, entity=entity)
