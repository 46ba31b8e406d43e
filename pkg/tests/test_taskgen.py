import numpy as np
import pytest

from relic import pql
from relic import store as st
from relic import taskgen as tg
from relic.times import MS_PER_DAY

from .helpers import build_shop_graph, random_two_table_graph


def day(n):
    return n * MS_PER_DAY


def make_plan(graph, text):
    return pql.compile_query(pql.parse(text), graph.schema, graph)


def single_user_graph(order_days):
    from relic import schema as sc
    schema = sc.Schema(tables=[
        sc.TableMeta("users", [sc.Column("user_id", sc.SemanticType.IDENTIFIER)],
                     primary_key="user_id"),
        sc.TableMeta("orders", [sc.Column("order_id", sc.SemanticType.IDENTIFIER),
                                sc.Column("user_id", sc.SemanticType.IDENTIFIER),
                                sc.Column("price", sc.SemanticType.NUMERICAL),
                                sc.Column("at", sc.SemanticType.TIMESTAMP)],
                     primary_key="order_id", time_column="at"),
    ], links=[sc.LinkMeta("orders", "user_id", "users")])
    n = len(order_days)
    data = {
        "users": {"user_id": ["u1"]},
        "orders": {"order_id": [f"o{i}" for i in range(n)],
                   "user_id": ["u1"] * n,
                   "price": list(np.arange(1.0, n + 1.0)),
                   "at": [d * MS_PER_DAY for d in order_days]},
    }
    graph = st.build_graph(schema, data)
    st.build_adjacency(graph)
    return graph


def test_compute_label_spec_example_windows():
    graph = single_user_graph([5, 40])
    plan = make_plan(graph, "PREDICT COUNT(orders.*, 0, 30, days)=0 FOR EACH users.user_id")
    assert tg.compute_label(plan, graph, 0, day(0)) is False   # order at day 5
    assert tg.compute_label(plan, graph, 0, day(35)) is False  # order at day 40
    assert tg.compute_label(plan, graph, 0, day(60)) is True   # nothing after day 60


def test_count_over_empty_set_is_zero_then_compared():
    graph = single_user_graph([])
    plan = make_plan(graph, "PREDICT COUNT(orders.*, 0, 30, days)=0 FOR EACH users.user_id")
    assert tg.compute_label(plan, graph, 0, day(0)) is True


def test_static_label_reads_stored_value():
    graph = build_shop_graph()
    st.build_adjacency(graph)
    plan = make_plan(graph, "PREDICT users.age FOR EACH users.user_id")
    assert tg.compute_label(plan, graph, 1, day(0)) == 45.0


def test_avg_over_empty_window_is_null():
    graph = single_user_graph([50])
    plan = make_plan(graph, "PREDICT AVG(orders.price, 0, 7, days) FOR EACH users.user_id")
    assert tg.compute_label(plan, graph, 0, day(0)) is None


def brute_label(plan, rows_days, prices, anchor_days):
    lo = anchor_days * MS_PER_DAY + plan.window_start_ms
    hi = anchor_days * MS_PER_DAY + plan.window_end_ms
    vals = [p for d, p in zip(rows_days, prices) if lo < d * MS_PER_DAY <= hi]
    if plan.agg_fn == "COUNT":
        value = float(len(vals))
    elif plan.agg_fn == "SUM":
        value = float(sum(vals))
    elif not vals:
        return None
    elif plan.agg_fn == "AVG":
        value = sum(vals) / len(vals)
    elif plan.agg_fn == "MIN":
        value = min(vals)
    else:
        value = max(vals)
    if plan.comparison is not None:
        op, lit = plan.comparison
        import operator
        ops = {"=": operator.eq, "!=": operator.ne, "<": operator.lt,
               ">": operator.gt, "<=": operator.le, ">=": operator.ge}
        return ops[op](value, float(lit))
    return value


@pytest.mark.parametrize("fn", ["COUNT", "SUM", "AVG", "MIN", "MAX"])
@pytest.mark.parametrize("cmp", [None, "=", ">", "<=", "!="])
def test_compute_label_matches_bruteforce(fn, cmp):
    rng = np.random.default_rng(hash((fn, cmp)) % 2**32)
    for trial in range(8):
        n = int(rng.integers(0, 12))
        days = sorted(rng.integers(0, 60, size=n).tolist())
        graph = single_user_graph(days)
        prices = list(np.arange(1.0, n + 1.0))
        path = "orders.*" if fn == "COUNT" else "orders.price"
        text = f"PREDICT {fn}({path}, 0, 14, days)"
        if cmp is not None:
            text += f" {cmp} 3"
        text += " FOR EACH users.user_id"
        plan = make_plan(graph, text)
        for anchor in [0, 10, 20, 55]:
            got = tg.compute_label(plan, graph, 0, day(anchor))
            want = brute_label(plan, days, prices, anchor)
            if want is None:
                assert got is None
            elif isinstance(want, bool):
                assert got == want
            else:
                assert got == pytest.approx(want, abs=1e-12)


def test_where_filter_applies():
    graph = single_user_graph([1, 2, 3])
    plan = make_plan(graph, "PREDICT COUNT(orders.*, 0, 30, days, WHERE price > 1.5) "
                            "FOR EACH users.user_id")
    assert tg.compute_label(plan, graph, 0, day(0)) == 2.0


def count_plan_graph(seed=0, n_parents=40, n_children=400):
    graph, _ = random_two_table_graph(seed, n_parents=n_parents, n_children=n_children)
    plan = pql.compile_query(
        pql.parse("PREDICT COUNT(children.*, 0, 7, days) FOR EACH parents.parent_id"),
        graph.schema, graph)
    return graph, plan


def test_generate_context_respects_budget_and_no_leakage_windows():
    graph, plan = count_plan_graph()
    config = tg.ContextConfig(budget=30, local_fraction=0.25, lag_timesteps=3, seed=1)
    tt = tg.generate_context(plan, graph, day(40), config,
                             pred_entities=np.arange(10))
    assert tt.n_context <= 30
    assert tt.n_pred == 10
    # every context label window closes at or before the prediction anchor
    assert np.all(tt.ctx_anchors + plan.window_end_ms <= day(40))
    # context pairs distinct from prediction pairs
    assert not (tt.context_pairs() &
                set(zip(tt.pred_entities.tolist(), tt.pred_anchors.tolist())))
    assert tt.ctx_lags.shape == (tt.n_context, 3)
    assert tt.pred_lags.shape == (10, 3)


def test_generate_context_deterministic_under_seed():
    graph, plan = count_plan_graph()
    config = tg.ContextConfig(budget=25, seed=7)
    a = tg.generate_context(plan, graph, day(40), config, pred_entities=np.arange(5))
    b = tg.generate_context(plan, graph, day(40), config, pred_entities=np.arange(5))
    assert np.array_equal(a.ctx_entities, b.ctx_entities)
    assert np.array_equal(a.ctx_anchors, b.ctx_anchors)
    assert np.array_equal(a.ctx_labels, b.ctx_labels)


def test_generate_context_labels_match_compute_label():
    graph, plan = count_plan_graph(3)
    tt = tg.generate_context(plan, graph, day(40), tg.ContextConfig(budget=20, seed=0),
                             pred_entities=np.arange(4))
    for e, a, y in zip(tt.ctx_entities, tt.ctx_anchors, tt.ctx_labels):
        assert y == tg.compute_label(plan, graph, int(e), int(a))


def test_generate_context_insufficient_history():
    graph = single_user_graph([5])
    plan = make_plan(graph, "PREDICT COUNT(orders.*, 0, 30, days) FOR EACH users.user_id")
    with pytest.raises(tg.TaskGenError, match="insufficient history"):
        tg.generate_context(plan, graph, day(1), tg.ContextConfig(budget=5))


def test_lagged_windows_never_cross_the_anchor():
    graph, plan = count_plan_graph(5)
    rec = st.AccessRecorder()
    graph.recorder = rec
    tt = tg.generate_context(plan, graph, day(40),
                             tg.ContextConfig(budget=16, lag_timesteps=4, seed=2),
                             pred_entities=np.arange(6))
    graph.recorder = None
    assert rec.input_violations == 0
    assert rec.label_violations == 0
    assert tt.ctx_lags is not None


def test_holdout_split_sizes_and_temporal_order():
    graph, plan = count_plan_graph(2, n_parents=50, n_children=600)
    tt = tg.generate_context(plan, graph, day(40),
                             tg.ContextConfig(budget=100, seed=3),
                             pred_entities=np.arange(8))
    ctx, ev = tg.holdout_split(tt, 0.2, seed=0)
    assert ctx.n_context + ev.n_context == tt.n_context
    assert ctx.ctx_anchors.max() < ev.ctx_anchors.min()
    again_ctx, again_ev = tg.holdout_split(tt, 0.2, seed=0)
    assert np.array_equal(again_ev.ctx_entities, ev.ctx_entities)


def test_holdout_split_static_fractions():
    rng = np.random.default_rng(0)
    tt = tg.TaskTable(task_type="regression", entity_table="users",
                      ctx_entities=np.arange(100), ctx_anchors=np.zeros(100, np.int64),
                      ctx_labels=rng.normal(size=100),
                      pred_entities=np.arange(5), pred_anchors=np.zeros(5, np.int64))
    ctx, ev = tg.holdout_split(tt, 0.2, seed=1, temporal=False)
    assert ctx.n_context == 80 and ev.n_context == 20
    assert not (set(ctx.ctx_entities.tolist()) & set(ev.ctx_entities.tolist()))


def test_task_table_csv_round_trip(tmp_path):
    graph, plan = count_plan_graph(1)
    tt = tg.generate_context(plan, graph, day(40), tg.ContextConfig(budget=12, seed=0),
                             pred_entities=np.arange(4))
    tg.export_task_table(tt, graph, tmp_path / "ctx.csv", tmp_path / "pred.csv",
                         entity_column="parent_id", target_column="target")
    back = tg.import_task_table(graph, "parents", tt.task_type,
                                tmp_path / "ctx.csv", tmp_path / "pred.csv",
                                entity_column="parent_id", target_column="target")
    assert np.array_equal(back.ctx_entities, tt.ctx_entities)
    assert np.array_equal(back.ctx_anchors, tt.ctx_anchors)
    np.testing.assert_allclose(back.ctx_labels.astype(float),
                               tt.ctx_labels.astype(float))
    assert np.array_equal(back.pred_entities, tt.pred_entities)
