"""Assemble numpy feature arrays from sampled subgraphs and a task table.

Each sampled node occurrence becomes a row instance (the same store row can
appear in several examples with different relative times and target tokens).
Per table we emit dense per-column feature arrays over all row instances; the
graph stage gets padded node-index, structure, and attention-mask arrays.

Everything here is plain numpy: embedding indices and float features, no
autodiff. Hash buckets come from stable value hashes, never from store
dictionary codes, so outputs are unchanged when unrelated rows are deleted
and class permutations act exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from ..schema import SemanticType
from ..store import TemporalGraph
from ..taskgen import TaskTable
from ..times import MS_PER_DAY, MS_PER_HOUR, POS_INF
from .config import ModelConfig, bucket

_WEEK_MS = 7 * MS_PER_DAY
_TOKEN_RE = re.compile(r"[A-Za-z0-9]+")


def _slog(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.log1p(np.abs(x))


def numeric_triple(values: np.ndarray) -> np.ndarray:
    """(sign, log-magnitude, clipped raw) encoding of a numeric feature."""
    v = np.where(np.isfinite(values), values, 0.0)
    return np.stack([np.sign(v), np.log1p(np.abs(v)), np.clip(v, -100, 100) / 100.0],
                    axis=-1)


def time_features(values_ms: np.ndarray, anchors_ms: np.ndarray) -> np.ndarray:
    """Relative log-scale offsets plus daily/weekly phase encodings."""
    delta = anchors_ms.astype(np.float64) - values_ms.astype(np.float64)
    t = values_ms.astype(np.float64)
    day_phase = 2 * np.pi * ((t % MS_PER_DAY) / MS_PER_DAY)
    week_phase = 2 * np.pi * ((t % _WEEK_MS) / _WEEK_MS)
    return np.stack([
        _slog(delta / MS_PER_HOUR), _slog(delta / MS_PER_DAY),
        np.sin(day_phase), np.cos(day_phase),
        np.sin(week_phase), np.cos(week_phase),
    ], axis=-1)


def delta_features(delta_ms: np.ndarray) -> np.ndarray:
    """Node relative-time encoding; dimension rows carry a flag instead."""
    is_dim = delta_ms == POS_INF
    d = np.where(is_dim, 0, delta_ms).astype(np.float64)
    return np.stack([
        np.where(is_dim, 0.0, _slog(d / MS_PER_HOUR)),
        np.where(is_dim, 0.0, _slog(d / MS_PER_DAY)),
        is_dim.astype(np.float64),
    ], axis=-1)


def class_bucket(label: str, config: ModelConfig) -> int:
    return bucket(f"class:{label}", config.class_buckets)


def text_buckets(text: str, config: ModelConfig) -> list[int]:
    toks = _TOKEN_RE.findall(text.lower())[:config.max_text_tokens]
    return [bucket(f"tok:{t}", config.value_buckets) for t in toks]


TKIND_CLASS, TKIND_REG, TKIND_MASK = 0, 1, 2


@dataclass
class ColumnFeat:
    name: str
    kind: str                        # num | cat | time | text
    null: np.ndarray                 # (R,) bool
    num: np.ndarray | None = None    # (R, 3)
    cat: np.ndarray | None = None    # (R,) value-hash buckets
    time: np.ndarray | None = None   # (R, 6)
    text_idx: np.ndarray | None = None     # (R, Tmax)
    text_w: np.ndarray | None = None       # (R, Tmax)
    name_bucket: int = 0


@dataclass
class TableFeatures:
    table: str
    n_rows: int
    example_idx: np.ndarray
    columns: list[ColumnFeat]
    # target token
    tkind: np.ndarray                # (R,)
    tclass: np.ndarray               # (R,) class buckets (0 when unused)
    treg: np.ndarray                 # (R, 3)
    # structure (graph stage)
    delta_feats: np.ndarray          # (R, 3)
    hop: np.ndarray                  # (R,)
    edge_bucket: np.ndarray          # (R,)


@dataclass
class GraphStage:
    node_flat: np.ndarray            # (B, N) index into concatenated rows, -1 pad
    valid: np.ndarray                # (B, N) bool
    allow: np.ndarray                # (B, N+1, N+1) attention mask incl. global
    root_pos: np.ndarray             # (B,)
    n_slots: int


@dataclass
class FeatureBatch:
    config: ModelConfig
    tables: list[TableFeatures]
    graph_stage: GraphStage
    n_context: int
    n_pred: int
    ctx_is_class: bool
    ctx_class: np.ndarray | None = None   # (n_ctx,) class buckets
    ctx_reg: np.ndarray | None = None     # (n_ctx, 3) normalized target triples
    reg_stats: tuple[float, float] | None = None
    table_offsets: dict[str, int] = field(default_factory=dict)

    @property
    def n_examples(self) -> int:
        return self.n_context + self.n_pred


def robust_stats(targets: np.ndarray) -> tuple[float, float]:
    """Median and IQR under the inverted-CDF quantile (duplication-invariant)."""
    med = float(np.percentile(targets, 50, method="inverted_cdf"))
    q25 = float(np.percentile(targets, 25, method="inverted_cdf"))
    q75 = float(np.percentile(targets, 75, method="inverted_cdf"))
    return med, q75 - q25


def normalize_targets(targets: np.ndarray, med: float, iqr: float) -> np.ndarray:
    scale = iqr if iqr > 0 else 1.0
    return (targets - med) / scale


def build_features(graph: TemporalGraph, plan, task_table: TaskTable, subgraphs,
                   config: ModelConfig, mask_columns=(), column_seed: int | None = None,
                   reg_stats: tuple[float, float] | None = None) -> FeatureBatch:
    """subgraphs: context subgraphs followed by prediction subgraphs, aligned
    with task_table rows."""
    n_ctx = task_table.n_context
    n_pred = task_table.n_pred
    assert len(subgraphs) == n_ctx + n_pred
    anchors = np.concatenate([task_table.ctx_anchors, task_table.pred_anchors])
    is_class = task_table.task_type in ("binary", "multiclass")

    stats = None
    if is_class:
        if task_table.task_type == "binary":
            ctx_class = np.array([class_bucket(str(int(v)), config)
                                  for v in task_table.ctx_labels], dtype=np.int64)
        else:
            ctx_class = np.array([class_bucket(str(v), config)
                                  for v in task_table.ctx_labels], dtype=np.int64)
        ctx_reg = np.zeros((n_ctx, 3))
    else:
        med, iqr = reg_stats if reg_stats is not None else robust_stats(
            task_table.ctx_labels.astype(np.float64))
        stats = (med, iqr)
        norm = normalize_targets(task_table.ctx_labels.astype(np.float64), med, iqr)
        ctx_class = np.zeros(n_ctx, dtype=np.int64)
        ctx_reg = numeric_triple(norm)

    masked = set(mask_columns)
    if not plan.temporal and plan.target_column is not None:
        masked.add((plan.entity_table, plan.target_column))

    lags = 0
    lag_mat = None
    if task_table.ctx_lags is not None:
        lags = task_table.ctx_lags.shape[1]
        lag_mat = np.concatenate([task_table.ctx_lags, task_table.pred_lags], axis=0) \
            if n_ctx else task_table.pred_lags

    # ---- collect row instances per table
    order_tables = [tm.name for tm in graph.schema.tables]
    inst_gid: dict[str, list] = {t: [] for t in order_tables}
    inst_ex: dict[str, list] = {t: [] for t in order_tables}
    inst_delta: dict[str, list] = {t: [] for t in order_tables}
    inst_hop: dict[str, list] = {t: [] for t in order_tables}
    inst_edge: dict[str, list] = {t: [] for t in order_tables}
    inst_isroot: dict[str, list] = {t: [] for t in order_tables}
    pos_of: list[dict[tuple[str, int], int]] = []   # per example: (table, local) -> slot
    example_counts = np.zeros(len(subgraphs), dtype=np.int64)

    for b, sub in enumerate(subgraphs):
        slots: dict[tuple[str, int], int] = {}
        slot = 0
        for t in order_tables:
            if t not in sub.nodes:
                continue
            ids = sub.nodes[t]
            for local in range(len(ids)):
                slots[(t, local)] = slot
                slot += 1
                inst_gid[t].append(int(ids[local]))
                inst_ex[t].append(b)
                inst_delta[t].append(int(sub.deltas[t][local]))
                inst_hop[t].append(int(sub.hops[t][local]))
                inst_edge[t].append(int(sub.in_edge[t][local]))
                inst_isroot[t].append(t == sub.root_table and local == 0)
        pos_of.append(slots)
        example_counts[b] = slot

    # ---- flat ordering and graph-stage arrays
    table_offsets: dict[str, int] = {}
    offset = 0
    for t in order_tables:
        table_offsets[t] = offset
        offset += len(inst_gid[t])
    # per-(example, table, local) flat index follows insertion order per table
    flat_of: list[dict[tuple[str, int], int]] = [dict() for _ in subgraphs]
    counters = {t: 0 for t in order_tables}
    for b, sub in enumerate(subgraphs):
        for t in order_tables:
            if t not in sub.nodes:
                continue
            for local in range(len(sub.nodes[t])):
                flat_of[b][(t, local)] = table_offsets[t] + counters[t]
                counters[t] += 1

    n_slots = int(example_counts.max(initial=1))
    B = len(subgraphs)
    node_flat = np.full((B, n_slots), -1, dtype=np.int64)
    valid = np.zeros((B, n_slots), dtype=bool)
    root_pos = np.zeros(B, dtype=np.int64)
    allow = np.zeros((B, n_slots + 1, n_slots + 1), dtype=bool)
    g = n_slots  # the global token occupies the fixed last slot
    for b, sub in enumerate(subgraphs):
        slots = pos_of[b]
        for key, s in slots.items():
            node_flat[b, s] = flat_of[b][key]
            valid[b, s] = True
        root_pos[b] = slots[(sub.root_table, 0)]
        idx = np.arange(example_counts[b])
        allow[b, idx, idx] = True
        allow[b, g, g] = True
        has_edge = np.zeros(n_slots + 1, dtype=bool)
        for et_name, src_local, dst_local, _hop in sub.edges:
            et = graph.adjacency.edge(et_name).etype
            for s_l, d_l in zip(src_local.tolist(), dst_local.tolist()):
                ps = slots[(et.src_table, s_l)]
                pd = slots[(et.dst_table, d_l)]
                allow[b, ps, pd] = True
                allow[b, pd, ps] = True
                has_edge[ps] = True
                has_edge[pd] = True
        # the global token links the root and every non-isolated node
        rp = root_pos[b]
        allow[b, g, rp] = True
        allow[b, rp, g] = True
        connected = np.nonzero(has_edge)[0]
        allow[b, g, connected] = True
        allow[b, connected, g] = True

    graph_stage = GraphStage(node_flat=node_flat, valid=valid, allow=allow,
                             root_pos=root_pos, n_slots=n_slots)

    # ---- per-table column features
    col_rng = None
    if column_seed is not None:
        col_rng = np.random.default_rng(column_seed)

    tables: list[TableFeatures] = []
    for t in order_tables:
        gids = np.asarray(inst_gid[t], dtype=np.int64)
        R = len(gids)
        if R == 0:
            continue
        ex = np.asarray(inst_ex[t], dtype=np.int64)
        td = graph.table(t)
        row_anchor = anchors[ex]
        cols: list[ColumnFeat] = []
        for col in td.meta.columns:
            if col.stype == SemanticType.IDENTIFIER or (t, col.name) in masked:
                continue
            chunk = td.chunks[col.name]
            nulls = chunk.nulls[gids]
            nb = bucket(f"col:{t}.{col.name}", config.name_buckets)
            if col.stype == SemanticType.NUMERICAL:
                vals = chunk.values[gids].astype(np.float64)
                cols.append(ColumnFeat(col.name, "num", nulls | ~np.isfinite(vals),
                                       num=numeric_triple(vals), name_bucket=nb))
            elif col.stype == SemanticType.TIMESTAMP:
                vals = chunk.values[gids]
                feats = time_features(np.where(nulls, row_anchor, vals), row_anchor)
                cols.append(ColumnFeat(col.name, "time", nulls, time=feats,
                                       name_bucket=nb))
            elif col.stype == SemanticType.CATEGORICAL:
                dict_buckets = np.array(
                    [bucket(f"val:{v}", config.value_buckets)
                     for v in (chunk.dictionary or [])] or [0], dtype=np.int64)
                codes = np.where(nulls, 0, np.maximum(chunk.values[gids], 0))
                cols.append(ColumnFeat(col.name, "cat", nulls,
                                       cat=dict_buckets[codes], name_bucket=nb))
            else:  # text
                per_value = [text_buckets(v, config) for v in (chunk.dictionary or [])]
                Tm = config.max_text_tokens
                idx = np.zeros((R, Tm), dtype=np.int64)
                w = np.zeros((R, Tm))
                codes = np.where(nulls, 0, np.maximum(chunk.values[gids], 0))
                for i, c in enumerate(codes.tolist()):
                    toks = per_value[c] if per_value else []
                    if nulls[i] or not toks:
                        continue
                    k = len(toks)
                    idx[i, :k] = toks
                    w[i, :k] = 1.0 / k
                empty = w.sum(axis=1) == 0
                cols.append(ColumnFeat(col.name, "text", nulls | empty,
                                       text_idx=idx, text_w=w, name_bucket=nb))

        if t == plan.entity_table and lags:
            isroot = np.asarray(inst_isroot[t], dtype=bool)
            for li in range(lags):
                vals = np.where(isroot, lag_mat[ex, li], np.nan)
                nulls = ~np.isfinite(vals)
                cols.append(ColumnFeat(
                    f"__lag{li}__", "num", nulls, num=numeric_triple(vals),
                    name_bucket=bucket(f"col:__lag{li}__", config.name_buckets)))

        if col_rng is not None and len(cols) > 1:
            perm = col_rng.permutation(len(cols))
            cols = [cols[i] for i in perm]

        tkind = np.full(R, TKIND_MASK, dtype=np.int64)
        tclass = np.zeros(R, dtype=np.int64)
        treg = np.zeros((R, 3))
        is_ctx = ex < n_ctx
        if is_class:
            tkind[is_ctx] = TKIND_CLASS
            tclass[is_ctx] = ctx_class[ex[is_ctx]]
        else:
            tkind[is_ctx] = TKIND_REG
            treg[is_ctx] = ctx_reg[ex[is_ctx]]

        tables.append(TableFeatures(
            table=t, n_rows=R, example_idx=ex, columns=cols,
            tkind=tkind, tclass=tclass, treg=treg,
            delta_feats=delta_features(np.asarray(inst_delta[t], dtype=np.int64)),
            hop=np.minimum(np.asarray(inst_hop[t], dtype=np.int64), config.max_hops),
            edge_bucket=np.asarray(
                [config.edge_buckets if e < 0 else
                 bucket(f"edge:{subgraphs[0].edge_type_names[e]}", config.edge_buckets)
                 for e in inst_edge[t]], dtype=np.int64)))

    return FeatureBatch(config=config, tables=tables, graph_stage=graph_stage,
                        n_context=n_ctx, n_pred=n_pred, ctx_is_class=is_class,
                        table_offsets=table_offsets)
