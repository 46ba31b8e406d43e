"""Seeded synthetic relational databases and tasks via structural causal models.

Every value is generated by a mechanism over DAG parents: entity-level latent
variables feed visible entity features, label columns, per-entity event rates,
and child-row features (cross-table parents routed through the foreign key).
Everything is a pure function of the seed.

Two special generators back the robustness and expressivity protocols:
`make_long_memory` hides the class signal in an older activity epoch, and
`make_conjunction` builds the row-level co-occurrence task whose column-wise
marginals are matched across classes, so any fixed per-column aggregate is
uninformative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import pql
from . import schema as sc
from . import store as st
from .times import MS_PER_DAY


class ScmError(ValueError):
    pass


@dataclass
class ScmConfig:
    n_entities: int = 200
    table_count: tuple[int, int] = (2, 3)          # entity table + 1..k fact tables
    rows_per_entity_mean: float = 5.0
    features_per_table: tuple[int, int] = (2, 4)
    mechanism_depth: int = 3
    nonlinearities: tuple[str, ...] = ("identity", "tanh", "step")
    noise_scale: float = 0.3
    time_span_days: int = 64
    chain_probability: float = 0.3                 # fact table attaches to previous fact
    task_weights: dict = field(default_factory=lambda: {
        "static_binary": 1.0, "static_multiclass": 1.0, "static_regression": 1.0,
        "temporal_binary": 1.0, "temporal_regression": 1.0,
    })

    def __post_init__(self):
        if self.n_entities < 1 or self.mechanism_depth < 1:
            raise ScmError("counts must be >= 1")
        if self.noise_scale < 0:
            raise ScmError("noise scale must be >= 0")
        if self.table_count[0] < 1:
            raise ScmError("need at least the entity table")


@dataclass
class Mechanism:
    parents: list[str]
    weights: np.ndarray
    bias: float
    nonlinearity: str           # identity | tanh | step
    noise_scale: float

    def apply(self, parent_values: np.ndarray, noise: np.ndarray) -> np.ndarray:
        if parent_values.ndim == 1:
            parent_values = parent_values[:, None]
        raw = parent_values @ self.weights + self.bias
        if self.nonlinearity == "tanh":
            raw = np.tanh(raw)
        elif self.nonlinearity == "step":
            raw = (raw > 0).astype(np.float64)
        elif self.nonlinearity != "identity":
            raise ScmError(f"unknown nonlinearity {self.nonlinearity!r}")
        return raw + self.noise_scale * noise


@dataclass
class LatentRecord:
    """Everything needed to recompute labels without touching the store."""
    latents: np.ndarray                     # (n_entities, depth)
    rates: np.ndarray                       # (n_entities,) events/day for table 1
    mechanisms: dict[str, Mechanism]
    event_times: dict[str, np.ndarray]      # fact table -> event epoch ms
    event_entity: dict[str, np.ndarray]     # fact table -> owning entity row
    label_values: dict[str, np.ndarray]     # label column -> per-entity values
    fact_tables: list[str] = field(default_factory=list)


LABEL_COLUMNS = ("label_bin", "label_cat", "label_num")

_MASKED = tuple(("entity", c) for c in LABEL_COLUMNS)


def _pick_nonlin(rng, options) -> str:
    return str(options[rng.integers(0, len(options))])


def sample_database(config: ScmConfig, seed: int) -> tuple[st.TemporalGraph, LatentRecord]:
    """A star-or-chain database, fully deterministic per seed."""
    rng = np.random.default_rng(seed)
    n = config.n_entities
    depth = config.mechanism_depth

    # entity latents: z_k depends on all earlier z
    z = np.empty((n, depth))
    mechanisms: dict[str, Mechanism] = {}
    z[:, 0] = rng.normal(size=n)
    for k in range(1, depth):
        mech = Mechanism(parents=[f"z{j}" for j in range(k)],
                         weights=rng.normal(size=k) / np.sqrt(k),
                         bias=float(rng.normal() * 0.2),
                         nonlinearity=_pick_nonlin(rng, config.nonlinearities),
                         noise_scale=config.noise_scale)
        mechanisms[f"z{k}"] = mech
        z[:, k] = mech.apply(z[:, :k], rng.normal(size=n))

    tables: dict[str, dict] = {}
    metas: list[sc.TableMeta] = []
    links: list[sc.LinkMeta] = []

    # entity features + label columns
    n_feat = int(rng.integers(config.features_per_table[0],
                              config.features_per_table[1] + 1))
    entity_cols: dict[str, list] = {"entity_id": [f"e{i}" for i in range(n)]}
    columns = [sc.Column("entity_id", sc.SemanticType.IDENTIFIER)]
    for j in range(n_feat):
        mech = Mechanism(parents=[f"z{j2}" for j2 in range(depth)],
                         weights=rng.normal(size=depth) / np.sqrt(depth),
                         bias=0.0, nonlinearity=_pick_nonlin(rng, config.nonlinearities),
                         noise_scale=config.noise_scale)
        mechanisms[f"entity.x{j}"] = mech
        vals = mech.apply(z, rng.normal(size=n))
        if rng.random() < 0.35:
            edges = np.quantile(vals, np.linspace(0, 1, 4)[1:-1])
            codes = np.digitize(vals, edges)
            entity_cols[f"x{j}"] = [f"l{c}" for c in codes]
            columns.append(sc.Column(f"x{j}", sc.SemanticType.CATEGORICAL))
        else:
            entity_cols[f"x{j}"] = vals.tolist()
            columns.append(sc.Column(f"x{j}", sc.SemanticType.NUMERICAL))

    w_bin = rng.normal(size=depth) / np.sqrt(depth)
    score_bin = z @ w_bin
    label_bin = (score_bin > np.median(score_bin)).astype(int)
    w_cat = rng.normal(size=depth) / np.sqrt(depth)
    score_cat = z @ w_cat
    n_classes = int(rng.integers(3, 7))
    edges = np.quantile(score_cat, np.linspace(0, 1, n_classes + 1)[1:-1])
    label_cat = np.digitize(score_cat, edges)
    w_num = rng.normal(size=depth) / np.sqrt(depth)
    label_num = z @ w_num + 0.1 * config.noise_scale * rng.normal(size=n)

    entity_cols["label_bin"] = [str(v) for v in label_bin]
    entity_cols["label_cat"] = [f"c{v}" for v in label_cat]
    entity_cols["label_num"] = label_num.tolist()
    columns += [sc.Column("label_bin", sc.SemanticType.CATEGORICAL),
                sc.Column("label_cat", sc.SemanticType.CATEGORICAL),
                sc.Column("label_num", sc.SemanticType.NUMERICAL)]
    metas.append(sc.TableMeta("entity", columns, primary_key="entity_id"))
    tables["entity"] = entity_cols

    # fact tables; the first one's rate is driven by a latent
    n_tables = int(rng.integers(config.table_count[0], config.table_count[1] + 1))
    rate_mech = Mechanism(parents=["z0"], weights=np.array([0.5]), bias=0.0,
                          nonlinearity="identity", noise_scale=0.0)
    mechanisms["rate"] = rate_mech
    rates = config.rows_per_entity_mean * np.exp(
        np.clip(rate_mech.apply(z[:, :1], np.zeros(n)), -1.5, 1.5))
    event_times: dict[str, np.ndarray] = {}
    event_entity: dict[str, np.ndarray] = {}
    fact_tables: list[str] = []
    span_ms = config.time_span_days * MS_PER_DAY

    prev_table = "entity"
    prev_owner = np.arange(n)  # entity row owning each row of prev_table
    for t_idx in range(1, n_tables):
        tname = f"events{t_idx}"
        fact_tables.append(tname)
        chain = t_idx > 1 and rng.random() < config.chain_probability
        parent_table = prev_table if chain else "entity"
        if parent_table == "entity":
            parent_rows = np.arange(n)
            lam = rates if t_idx == 1 else np.full(n, config.rows_per_entity_mean)
        else:
            parent_rows = np.arange(len(prev_owner))
            lam = np.full(len(prev_owner), 1.5)
        counts = rng.poisson(lam)
        owner_parent = np.repeat(parent_rows, counts)
        owner_entity = (owner_parent if parent_table == "entity"
                        else prev_owner[owner_parent])
        m = len(owner_parent)
        ts = np.sort(rng.uniform(0, span_ms, size=m)).astype(np.int64)
        order = rng.permutation(m)  # row order must not encode time or entity
        owner_parent, owner_entity, ts = owner_parent[order], owner_entity[order], ts[order]

        cols: dict[str, list] = {
            f"{tname}_id": [f"{tname[0]}{t_idx}_{i}" for i in range(m)],
            "parent_id": ([f"e{i}" for i in owner_parent] if parent_table == "entity"
                          else [tables[parent_table][f"{parent_table}_id"][i]
                                for i in owner_parent]),
            "at": ts.tolist(),
        }
        columns = [sc.Column(f"{tname}_id", sc.SemanticType.IDENTIFIER),
                   sc.Column("parent_id", sc.SemanticType.IDENTIFIER),
                   sc.Column("at", sc.SemanticType.TIMESTAMP)]
        n_feat = int(rng.integers(config.features_per_table[0],
                                  config.features_per_table[1] + 1))
        zp = z[owner_entity] if m else np.empty((0, depth))
        for j in range(n_feat):
            mech = Mechanism(parents=[f"z{j2}" for j2 in range(depth)],
                             weights=rng.normal(size=depth) / np.sqrt(depth),
                             bias=0.0,
                             nonlinearity=_pick_nonlin(rng, config.nonlinearities),
                             noise_scale=config.noise_scale)
            mechanisms[f"{tname}.v{j}"] = mech
            vals = mech.apply(zp, rng.normal(size=m)) if m else np.empty(0)
            if rng.random() < 0.3 and m:
                edges = np.quantile(vals, [1 / 3, 2 / 3])
                cols[f"v{j}"] = [f"l{c}" for c in np.digitize(vals, edges)]
                columns.append(sc.Column(f"v{j}", sc.SemanticType.CATEGORICAL))
            else:
                cols[f"v{j}"] = vals.tolist()
                columns.append(sc.Column(f"v{j}", sc.SemanticType.NUMERICAL))
        metas.append(sc.TableMeta(tname, columns, primary_key=f"{tname}_id",
                                  time_column="at"))
        links.append(sc.LinkMeta(tname, "parent_id", parent_table))
        tables[tname] = cols
        event_times[tname] = ts
        event_entity[tname] = owner_entity
        prev_table = tname
        prev_owner = owner_entity

    schema = sc.Schema(tables=metas, links=links)
    graph = st.build_graph(schema, tables)
    st.build_adjacency(graph)
    latent = LatentRecord(latents=z, rates=rates, mechanisms=mechanisms,
                          event_times=event_times, event_entity=event_entity,
                          label_values={"label_bin": label_bin,
                                        "label_cat": label_cat,
                                        "label_num": label_num},
                          fact_tables=fact_tables)
    return graph, latent


# ---------------------------------------------------------------------------
# tasks


@dataclass
class ScmTask:
    family: str
    query: str
    plan: pql.TaskPlan
    entities: np.ndarray
    anchors: np.ndarray
    labels: np.ndarray        # float64 for binary/regression, object for multiclass
    mask_columns: tuple = _MASKED


def _recount(latent: LatentRecord, table: str, entities, lo, hi) -> np.ndarray:
    """Event counts per entity within (lo, hi], straight from the latent record."""
    ts = latent.event_times[table]
    own = latent.event_entity[table]
    out = np.zeros(len(entities), dtype=np.float64)
    for i, e in enumerate(entities):
        mask = (own == e) & (ts > lo) & (ts <= hi)
        out[i] = mask.sum()
    return out


def sample_task(graph: st.TemporalGraph, latent: LatentRecord, seed: int,
                config: ScmConfig | None = None, n_examples: int = 64) -> ScmTask:
    """A predictive task whose label is a function of a latent variable, with
    ground-truth labels computed from the latent record (not the store)."""
    config = config or ScmConfig()
    rng = np.random.default_rng(seed)
    families = [f for f, w in config.task_weights.items() if w > 0]
    if not latent.fact_tables:
        families = [f for f in families if f.startswith("static")]
    weights = np.array([config.task_weights[f] for f in families])
    family = families[rng.choice(len(families), p=weights / weights.sum())]
    n = latent.latents.shape[0]
    entities = rng.choice(n, size=min(n_examples, n), replace=False)
    span_ms = int(graph.max_event_time()) if latent.fact_tables else 0

    if family.startswith("static"):
        col = {"static_binary": "label_bin", "static_multiclass": "label_cat",
               "static_regression": "label_num"}[family]
        query = f"PREDICT entity.{col} FOR EACH entity.entity_id"
        plan = pql.compile_query(pql.parse(query), graph.schema, graph)
        anchor = span_ms if span_ms else MS_PER_DAY
        anchors = np.full(len(entities), anchor, dtype=np.int64)
        raw = latent.label_values[col][entities]
        if family == "static_multiclass":
            labels = np.array([f"c{v}" for v in raw], dtype=object)
        else:
            labels = raw.astype(np.float64)
        return ScmTask(family, query, plan, entities.astype(np.int64), anchors, labels)

    table = latent.fact_tables[0]
    w_days = int(rng.choice([7, 14]))
    anchor_candidates = np.array([int(span_ms * f) for f in (0.5, 0.6, 0.7)])
    anchors = anchor_candidates[rng.integers(0, len(anchor_candidates),
                                             size=len(entities))].astype(np.int64)
    counts = np.array([
        _recount(latent, table, [e], a, a + w_days * MS_PER_DAY)[0]
        for e, a in zip(entities, anchors)])
    if family == "temporal_binary":
        thresh = float(np.median(counts))
        query = (f"PREDICT COUNT({table}.*, 0, {w_days}, days) > {thresh:.1f} "
                 f"FOR EACH entity.entity_id")
        plan = pql.compile_query(pql.parse(query), graph.schema, graph)
        labels = (counts > thresh).astype(np.float64)
    else:
        query = (f"PREDICT COUNT({table}.*, 0, {w_days}, days) "
                 f"FOR EACH entity.entity_id")
        plan = pql.compile_query(pql.parse(query), graph.schema, graph)
        labels = counts.astype(np.float64)
    return ScmTask(family, query, plan, entities.astype(np.int64), anchors, labels)


# ---------------------------------------------------------------------------
# the row-conjunction counterexample


def make_conjunction(n_entities: int, rows_per_entity: int, seed: int
                     ) -> tuple[st.TemporalGraph, pql.TaskPlan, np.ndarray]:
    """Balanced entities where y=1 iff some child row has a=1 and b=1; matched
    negative twins carry the same per-entity counts of a=1 and b=1 without
    co-occurrence, so every column-wise aggregate agrees across the pair."""
    if rows_per_entity < 2:
        raise ScmError("rows_per_entity must be >= 2 for marginal matching")
    rng = np.random.default_rng(seed)
    n_pairs = n_entities // 2
    n = n_pairs * 2
    r = rows_per_entity
    rows_a, rows_b, owner = [], [], []
    labels = np.zeros(n, dtype=np.float64)
    for p in range(n_pairs):
        na = int(rng.integers(1, r // 2 + 1))
        nb = int(rng.integers(1, r // 2 + 1))
        overlap = int(rng.integers(1, min(na, nb) + 1))
        pos, neg = 2 * p, 2 * p + 1
        labels[pos] = 1.0
        pos_rows = ([(1, 1)] * overlap + [(1, 0)] * (na - overlap)
                    + [(0, 1)] * (nb - overlap))
        pos_rows += [(0, 0)] * (r - len(pos_rows))
        neg_rows = [(1, 0)] * na + [(0, 1)] * nb + [(0, 0)] * (r - na - nb)
        for ent, rows in ((pos, pos_rows), (neg, neg_rows)):
            perm = rng.permutation(r)
            for i in perm:
                rows_a.append(float(rows[i][0]))
                rows_b.append(float(rows[i][1]))
                owner.append(ent)
    m = len(owner)
    ts = rng.integers(0, 30 * MS_PER_DAY, size=m).astype(np.int64)

    schema = sc.Schema(tables=[
        sc.TableMeta("entity", [sc.Column("entity_id", sc.SemanticType.IDENTIFIER),
                                sc.Column("label", sc.SemanticType.CATEGORICAL)],
                     primary_key="entity_id"),
        sc.TableMeta("events", [sc.Column("event_id", sc.SemanticType.IDENTIFIER),
                                sc.Column("entity_id", sc.SemanticType.IDENTIFIER),
                                sc.Column("at", sc.SemanticType.TIMESTAMP),
                                sc.Column("a", sc.SemanticType.NUMERICAL),
                                sc.Column("b", sc.SemanticType.NUMERICAL)],
                     primary_key="event_id", time_column="at"),
    ], links=[sc.LinkMeta("events", "entity_id", "entity")])
    data = {
        "entity": {"entity_id": [f"e{i}" for i in range(n)],
                   "label": [str(int(v)) for v in labels]},
        "events": {"event_id": [f"v{i}" for i in range(m)],
                   "entity_id": [f"e{e}" for e in owner],
                   "at": ts.tolist(),
                   "a": rows_a, "b": rows_b},
    }
    graph = st.build_graph(schema, data)
    st.build_adjacency(graph)
    plan = pql.compile_query(
        pql.parse("PREDICT entity.label FOR EACH entity.entity_id"), graph.schema, graph)
    return graph, plan, labels


# ---------------------------------------------------------------------------
# long-memory family for the fanout sweep


def make_long_memory(n_entities: int, seed: int, recent_events: int = 6,
                     old_events: int = 24, span_days: int = 60
                     ) -> tuple[st.TemporalGraph, pql.TaskPlan, np.ndarray]:
    """Binary entities whose recent activity is identical across classes; only
    the older half of the history differs, so small per-hop fanouts (which keep
    the most recent events) cannot separate the classes."""
    rng = np.random.default_rng(seed)
    n = (n_entities // 2) * 2
    labels = np.zeros(n, dtype=np.float64)
    labels[:n // 2] = 1.0
    labels = labels[rng.permutation(n)]
    half = span_days // 2
    owner, ts = [], []
    for e in range(n):
        k_recent = rng.poisson(recent_events)
        t_recent = rng.uniform(half, span_days, size=k_recent)
        k_old = rng.poisson(old_events if labels[e] > 0 else recent_events // 3)
        t_old = rng.uniform(0, half, size=k_old)
        for t in np.concatenate([t_recent, t_old]):
            owner.append(e)
            ts.append(int(t * MS_PER_DAY))
    m = len(owner)
    order = rng.permutation(m)
    owner = [owner[i] for i in order]
    ts = [ts[i] for i in order]

    schema = sc.Schema(tables=[
        sc.TableMeta("entity", [sc.Column("entity_id", sc.SemanticType.IDENTIFIER),
                                sc.Column("label", sc.SemanticType.CATEGORICAL)],
                     primary_key="entity_id"),
        sc.TableMeta("events", [sc.Column("event_id", sc.SemanticType.IDENTIFIER),
                                sc.Column("entity_id", sc.SemanticType.IDENTIFIER),
                                sc.Column("at", sc.SemanticType.TIMESTAMP)],
                     primary_key="event_id", time_column="at"),
    ], links=[sc.LinkMeta("events", "entity_id", "entity")])
    data = {
        "entity": {"entity_id": [f"e{i}" for i in range(n)],
                   "label": [str(int(v)) for v in labels]},
        "events": {"event_id": [f"v{i}" for i in range(m)],
                   "entity_id": [f"e{e}" for e in owner],
                   "at": ts},
    }
    graph = st.build_graph(schema, data)
    st.build_adjacency(graph)
    plan = pql.compile_query(
        pql.parse("PREDICT entity.label FOR EACH entity.entity_id"), graph.schema, graph)
    return graph, plan, labels
