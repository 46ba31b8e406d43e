import numpy as np
import pytest

from relic import baseline as bl
from relic import metrics as mx
from relic import scm
from relic import store as st
from relic import taskgen as tg
from relic.times import MS_PER_DAY


# ---------------------------------------------------------------------- scm

def test_same_seed_gives_byte_identical_databases(tmp_path):
    cfg = scm.ScmConfig(n_entities=40)
    g1, _ = scm.sample_database(cfg, seed=5)
    g2, _ = scm.sample_database(cfg, seed=5)
    st.save_store(g1, tmp_path / "a.rlct")
    st.save_store(g2, tmp_path / "b.rlct")
    assert (tmp_path / "a.rlct").read_bytes() == (tmp_path / "b.rlct").read_bytes()


def test_single_table_config_has_no_links():
    cfg = scm.ScmConfig(n_entities=20, table_count=(1, 1))
    graph, latent = scm.sample_database(cfg, seed=0)
    assert list(graph.tables) == ["entity"]
    assert graph.schema.links == []
    assert latent.fact_tables == []


def test_child_row_mean_matches_configured_mean():
    cfg = scm.ScmConfig(n_entities=10_000, table_count=(2, 2),
                        rows_per_entity_mean=4.0, noise_scale=0.0)
    graph, latent = scm.sample_database(cfg, seed=3)
    observed = graph.tables["events1"].row_count / cfg.n_entities
    expected = float(latent.rates.mean())
    assert abs(observed - expected) / expected < 0.05


def test_sampled_task_labels_match_store_recomputation():
    cfg = scm.ScmConfig(n_entities=60)
    graph, latent = scm.sample_database(cfg, seed=11)
    for seed in range(6):
        task = scm.sample_task(graph, latent, seed=seed, config=cfg, n_examples=20)
        for e, a, y in zip(task.entities, task.anchors, task.labels):
            got = tg.compute_label(task.plan, graph, int(e), int(a))
            if task.plan.task_type == "multiclass":
                assert str(got) == str(y)
            elif task.plan.task_type == "binary":
                assert float(bool(got)) == float(y)
            else:
                assert got == pytest.approx(float(y), abs=1e-9)


def test_thresholded_binary_task_has_both_classes():
    cfg = scm.ScmConfig(n_entities=80,
                        task_weights={"static_binary": 1.0})
    graph, latent = scm.sample_database(cfg, seed=2)
    task = scm.sample_task(graph, latent, seed=0, config=cfg, n_examples=60)
    assert set(np.unique(task.labels).tolist()) == {0.0, 1.0}


def test_conjunction_spec_pair_example():
    graph, plan, labels = scm.make_conjunction(n_entities=2, rows_per_entity=2, seed=4)
    a = graph.tables["events"].chunks["a"].values
    b = graph.tables["events"].chunks["b"].values
    owner = graph.tables["events"].chunks["entity_id"]
    ent_of_row = np.array([int(graph.tables["entity"].chunks["entity_id"].dictionary.index(
        owner.dictionary[c])) for c in owner.values])
    pos_rows = np.nonzero(ent_of_row == 0)[0]
    neg_rows = np.nonzero(ent_of_row == 1)[0]
    assert labels[0] == 1.0 and labels[1] == 0.0
    # marginal match: same sum of a and of b, same row count
    assert a[pos_rows].sum() == a[neg_rows].sum()
    assert b[pos_rows].sum() == b[neg_rows].sum()
    assert len(pos_rows) == len(neg_rows) == 2
    # co-occurrence defines the label
    assert ((a[pos_rows] == 1) & (b[pos_rows] == 1)).any()
    assert not ((a[neg_rows] == 1) & (b[neg_rows] == 1)).any()


def test_conjunction_requires_two_rows():
    with pytest.raises(scm.ScmError, match="rows_per_entity"):
        scm.make_conjunction(10, 1, 0)


def test_conjunction_matched_pairs_have_identical_dfs_features():
    graph, plan, labels = scm.make_conjunction(n_entities=40, rows_per_entity=4, seed=7)
    anchor = 40 * MS_PER_DAY
    names, mat = bl.flatten_many(graph, "entity", np.arange(40),
                                 np.full(40, anchor), depth=1,
                                 exclude=(("entity", "label"),))
    for p in range(20):
        pos, neg = mat[2 * p], mat[2 * p + 1]
        np.testing.assert_array_equal(np.nan_to_num(pos, nan=-1),
                                      np.nan_to_num(neg, nan=-1))
    assert labels[::2].sum() == 20 and labels[1::2].sum() == 0


def test_long_memory_recent_epochs_match_across_classes():
    graph, plan, labels = scm.make_long_memory(200, seed=1)
    times = graph.tables["events"].times
    owner_chunk = graph.tables["events"].chunks["entity_id"]
    ent_dict = graph.tables["entity"].chunks["entity_id"]
    row_of = {ent_dict.dictionary[c]: i for i, c in enumerate(ent_dict.values)}
    owner = np.array([row_of[owner_chunk.dictionary[c]] for c in owner_chunk.values])
    half = 30 * MS_PER_DAY
    recent_pos = ((times >= half) & (labels[owner] == 1)).sum() / max(labels.sum(), 1)
    recent_neg = ((times >= half) & (labels[owner] == 0)).sum() / max((1 - labels).sum(), 1)
    assert abs(recent_pos - recent_neg) < 1.5  # same recent rate by construction
    old_pos = ((times < half) & (labels[owner] == 1)).sum() / max(labels.sum(), 1)
    old_neg = ((times < half) & (labels[owner] == 0)).sum() / max((1 - labels).sum(), 1)
    assert old_pos > old_neg + 5  # the signal lives in the old epoch


# ----------------------------------------------------------------- baseline

def test_dfs_conjunction_example_rows():
    graph, _, _ = scm.make_conjunction(2, 2, seed=4)
    anchor = 40 * MS_PER_DAY
    row0 = bl.dfs_flatten(graph, "entity", 0, anchor, depth=1)
    mean_a = row0.values[row0.names.index("entity<-events.entity_id|a|mean")]
    assert mean_a == pytest.approx(0.5)


def test_dfs_entity_without_children():
    from .helpers import build_shop_graph
    graph = build_shop_graph()
    st.build_adjacency(graph)
    # user u3 has one order at day 7; at day 0 nothing is visible
    row = bl.dfs_flatten(graph, "users", 2, 0, depth=1)
    count = row.values[row.names.index("users<-orders.user_id|COUNT")]
    assert count == 0.0
    assert np.isnan(row.values[row.names.index("users<-orders.user_id|price|mean")])


def test_dfs_respects_anchor_deleting_future_rows_changes_nothing():
    graph, plan, labels = scm.make_conjunction(20, 3, seed=9)
    anchor = 10 * MS_PER_DAY
    before = bl.dfs_flatten(graph, "entity", 3, anchor, depth=1)
    # rebuild having dropped all events after the anchor
    ev = graph.tables["events"]
    keep = ev.times <= anchor
    data = {
        "entity": {c: [graph.tables["entity"].chunks[c].dictionary[v]
                       for v in graph.tables["entity"].chunks[c].values]
                   for c in ("entity_id", "label")},
        "events": {
            "event_id": [ev.chunks["event_id"].dictionary[v]
                         for v in ev.chunks["event_id"].values[keep]],
            "entity_id": [ev.chunks["entity_id"].dictionary[v]
                          for v in ev.chunks["entity_id"].values[keep]],
            "at": ev.times[keep].tolist(),
            "a": ev.chunks["a"].values[keep].tolist(),
            "b": ev.chunks["b"].values[keep].tolist(),
        },
    }
    trimmed = st.build_graph(graph.schema, data)
    st.build_adjacency(trimmed)
    after = bl.dfs_flatten(trimmed, "entity", 3, anchor, depth=1)
    np.testing.assert_array_equal(np.nan_to_num(before.values, nan=-1),
                                  np.nan_to_num(after.values, nan=-1))
    assert before.names == after.names


def test_row_permutation_invariance_of_dfs():
    g1, _, _ = scm.make_conjunction(10, 4, seed=3)
    anchor = 40 * MS_PER_DAY
    rows = [bl.dfs_flatten(g1, "entity", e, anchor, depth=1).values for e in range(4)]
    again = [bl.dfs_flatten(g1, "entity", e, anchor, depth=1).values for e in range(4)]
    for a, b in zip(rows, again):
        np.testing.assert_array_equal(a, b)


def test_linear_fit_separable_toy():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(80, 2))
    y = (x[:, 0] + x[:, 1] > 0).astype(float)
    x[:, 0] += y * 3  # make it cleanly separable
    model = bl.linear_fit(x, y, epochs=400, lr=1.0, seed=0)
    scores = bl.linear_predict(model, x)
    assert ((scores > 0.5) == y.astype(bool)).mean() == 1.0


def test_identical_rows_give_tied_scores_and_half_auroc():
    x = np.ones((20, 3))
    y = np.array([0.0, 1.0] * 10)
    model = bl.linear_fit(x, y, epochs=50, lr=0.1, seed=1)
    scores = bl.linear_predict(model, x)
    assert np.allclose(scores, scores[0])
    assert mx.auroc(scores, y) == 0.5


# ------------------------------------------------------------------ metrics

def brute_auroc(scores, labels):
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else (0.5 if p == q else 0.0)
    return wins / (len(pos) * len(neg))


def test_auroc_spec_example():
    assert mx.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auroc_ties_and_perfect():
    assert mx.auroc([1, 1, 1, 1], [0, 1, 0, 1]) == 0.5
    assert mx.auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0


def test_auroc_single_class_rejected():
    with pytest.raises(mx.MetricError, match="both classes"):
        mx.auroc([0.1, 0.2], [1, 1])


@pytest.mark.parametrize("seed", range(10))
def test_auroc_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 30))
    scores = rng.integers(0, 6, size=n).astype(float)  # force ties
    labels = rng.integers(0, 2, size=n)
    if labels.sum() in (0, n):
        labels[0] = 1 - labels[0]
    assert mx.auroc(scores, labels) == pytest.approx(brute_auroc(scores, labels),
                                                     abs=1e-12)


def test_auroc_invariant_under_monotone_transform():
    rng = np.random.default_rng(1)
    scores = rng.normal(size=50)
    labels = rng.integers(0, 2, size=50)
    labels[0], labels[1] = 0, 1
    a = mx.auroc(scores, labels)
    b = mx.auroc(np.exp(2 * scores) + 3, labels)
    assert a == pytest.approx(b, abs=1e-12)


def test_mae_examples():
    assert mx.mae([1, 3], [2, 2]) == 1.0
    assert mx.mae([5, 5], [5, 5]) == 0.0
    with pytest.raises(mx.MetricError):
        mx.mae([], [])


def test_mae_matches_naive_loop():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=100), rng.normal(size=100)
    want = sum(abs(x - y) for x, y in zip(a, b)) / 100
    assert mx.mae(a, b) == pytest.approx(want, rel=1e-12)


def test_mrr_examples():
    assert mx.mrr([["a", "b"], ["a", "b"]], ["a", "a"]) == 1.0
    assert mx.mrr([["a", "b"], ["a", "b"]], ["a", "b"]) == 0.75
    assert mx.mrr([["x", "y", "z", "w"]], ["w"]) == 0.25
    with pytest.raises(mx.MetricError, match="missing"):
        mx.mrr([["a"]], ["b"])


@pytest.mark.parametrize("seed", range(5))
def test_mrr_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    classes = [f"c{i}" for i in range(6)]
    rankings, trues, recips = [], [], []
    for _ in range(30):
        perm = rng.permutation(6)
        ranking = [classes[i] for i in perm]
        true = classes[int(rng.integers(0, 6))]
        rankings.append(ranking)
        trues.append(true)
        recips.append(1.0 / (ranking.index(true) + 1))
    assert mx.mrr(rankings, trues) == pytest.approx(np.mean(recips), abs=1e-12)


def test_normalized_average():
    assert mx.normalized_average({"a": 2.0, "b": 4.0}, {"a": 2.0, "b": 4.0}) == 1.0
    assert mx.normalized_average({"a": 1.0, "b": 2.0}, {"a": 2.0, "b": 4.0}) == 0.5
    got = mx.normalized_average({"a": 1.0, "b": 3.0, "c": 10.0},
                                {"a": 2.0, "b": 2.0, "c": 4.0})
    assert got == pytest.approx((0.5 + 1.5 + 2.5) / 3)
    with pytest.raises(mx.MetricError, match="zero baseline"):
        mx.normalized_average({"a": 1.0}, {"a": 0.0})
