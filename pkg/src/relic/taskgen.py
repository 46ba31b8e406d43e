"""Automatic context generation by replaying historical database states.

Temporal labels aggregate exactly the linked rows inside (anchor + start,
anchor + end]; context anchors stride backward from the prediction anchor in
whole window lengths, so every context label window closes at or before the
prediction anchor and label computation never touches later data. Context
mixes local rows (the prediction entities at earlier anchors) with global
rows (seeded uniform entities at the most recent valid anchors), and every
row carries lagged targets from strictly older windows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .pql import TaskPlan
from .store import StoreError, TemporalGraph
from .times import NEG_INF, POS_INF, format_timestamp, parse_timestamp
from .schema import SemanticType


class TaskGenError(ValueError):
    pass


@dataclass
class ContextConfig:
    budget: int = 10_000
    local_fraction: float = 0.25
    lag_timesteps: int = 0
    seed: int = 0
    max_local_anchors: int = 64

    def __post_init__(self):
        if not 0.0 <= self.local_fraction <= 1.0:
            raise TaskGenError("local_fraction must be in [0, 1]")
        if self.lag_timesteps < 0:
            raise TaskGenError("lag_timesteps must be >= 0")
        if self.budget < 1:
            raise TaskGenError("budget must be >= 1")


@dataclass
class TaskTable:
    task_type: str
    entity_table: str
    ctx_entities: np.ndarray            # int64 node ids
    ctx_anchors: np.ndarray             # int64 epoch ms
    ctx_labels: np.ndarray              # float64 (binary 0/1, regression) or object (classes)
    pred_entities: np.ndarray
    pred_anchors: np.ndarray
    ctx_lags: np.ndarray | None = None  # (n_ctx, L) float64 with NaN padding
    pred_lags: np.ndarray | None = None

    @property
    def n_context(self) -> int:
        return len(self.ctx_entities)

    @property
    def n_pred(self) -> int:
        return len(self.pred_entities)

    def context_pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.ctx_entities.tolist(), self.ctx_anchors.tolist()))


# ---------------------------------------------------------------------------
# label computation


_CMP = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
}


def _apply_where(graph: TemporalGraph, plan: TaskPlan, rows: np.ndarray) -> np.ndarray:
    if not plan.where or not len(rows):
        return rows
    td = graph.table(plan.agg_table)
    keep = np.ones(len(rows), dtype=bool)
    for cond in plan.where:
        chunk = td.chunks[cond.column]
        if chunk.stype == SemanticType.NUMERICAL:
            vals = chunk.values[rows]
            ok = _CMP[cond.op](vals, float(cond.literal))
            ok &= ~chunk.nulls[rows]
        else:
            lit = str(cond.literal).lower() if isinstance(cond.literal, bool) \
                else str(cond.literal)
            if isinstance(cond.literal, bool):
                lit = "1" if cond.literal else "0"
            code = chunk.dictionary.index(lit) if lit in chunk.dictionary else -2
            vals = chunk.values[rows]
            ok = _CMP[cond.op](vals, code)
            ok &= ~chunk.nulls[rows]
        keep &= ok
    return rows[keep]


def compute_label(plan: TaskPlan, graph: TemporalGraph, entity: int, anchor_t: int,
                  input_anchor: int | None = None):
    """Label of (entity, anchor): windowed aggregate for temporal plans, stored
    value for static plans. Returns None when the label is undefined (empty
    AVG/MIN/MAX or a null static cell).

    When the value serves as an input feature (lagged targets), pass the anchor
    of the row consuming it as `input_anchor`: access recording then treats the
    scanned events as inputs of that row instead of label events.
    """
    etable = graph.table(plan.entity_table)
    if not (0 <= entity < etable.row_count):
        raise TaskGenError(f"entity {entity} not found in {plan.entity_table!r}")

    if plan.temporal:
        lo = anchor_t + plan.window_start_ms
        hi = anchor_t + plan.window_end_ms
        rows = graph.window_neighbors(plan.edge_to_agg, entity, lo, hi)
        if graph.recorder is not None and len(rows):
            ts = graph.table(plan.agg_table).times[rows]
            if input_anchor is not None:
                graph.recorder.check_inputs(ts, input_anchor)
            else:
                graph.recorder.check_label_events(ts, anchor_t)
        rows = _apply_where(graph, plan, rows)
        if plan.agg_fn == "COUNT":
            value = float(len(rows))
        else:
            chunk = graph.table(plan.agg_table).chunks[plan.agg_column]
            vals = chunk.values[rows]
            vals = vals[~chunk.nulls[rows]]
            if plan.agg_fn == "SUM":
                value = float(vals.sum()) if len(vals) else 0.0
            elif len(vals) == 0:
                return None
            elif plan.agg_fn == "AVG":
                value = float(vals.mean())
            elif plan.agg_fn == "MIN":
                value = float(vals.min())
            else:
                value = float(vals.max())
        if plan.comparison is not None:
            op, lit = plan.comparison
            return bool(_CMP[op](value, float(lit)))
        return value

    chunk = etable.chunks[plan.target_column]
    if chunk.nulls[entity]:
        return None
    if chunk.stype == SemanticType.NUMERICAL:
        value = float(chunk.values[entity])
        return value
    raw = chunk.dictionary[int(chunk.values[entity])]
    if plan.task_type == "binary":
        return raw.lower() in ("1", "true")
    return raw


def _label_to_float(label, task_type: str) -> float:
    if label is None:
        return np.nan
    if task_type == "binary":
        return 1.0 if label else 0.0
    if task_type == "regression":
        return float(label)
    return np.nan  # multiclass lags are not numeric; unused


def _lag_anchors(anchor: int, plan: TaskPlan, lags: int) -> list[int]:
    stride = plan.window_end_ms - plan.window_start_ms
    return [anchor - plan.window_end_ms - ell * stride for ell in range(lags)]


def _lag_vector(plan: TaskPlan, graph: TemporalGraph, entity: int, anchor: int,
                lags: int, min_ts: int) -> np.ndarray:
    out = np.full(lags, np.nan)
    if not plan.temporal or lags == 0:
        return out
    for ell, a in enumerate(_lag_anchors(anchor, plan, lags)):
        if a + plan.window_end_ms < min_ts:
            continue  # window predates all data: null-padded
        label = compute_label(plan, graph, entity, a, input_anchor=anchor)
        out[ell] = _label_to_float(label, plan.task_type)
    return out


# ---------------------------------------------------------------------------
# context generation


def _entities_with_history(graph: TemporalGraph, plan: TaskPlan, entities: np.ndarray,
                           anchor: int) -> np.ndarray:
    if not len(entities):
        return entities
    _, counts = graph.neighbors_before_many(plan.edge_to_agg, entities,
                                            np.full(len(entities), anchor), 1)
    return entities[counts > 0]


def generate_context(plan: TaskPlan, graph: TemporalGraph, anchor_t: int,
                     config: ContextConfig, pred_entities=None) -> TaskTable:
    """Assemble a task table: prediction rows at anchor_t plus a leakage-safe
    labeled context."""
    etable = graph.table(plan.entity_table)
    if etable.row_count == 0:
        raise TaskGenError(f"entity table {plan.entity_table!r} is empty")
    visible = etable.times <= anchor_t
    all_entities = np.nonzero(visible)[0].astype(np.int64)
    if pred_entities is None:
        pred_ents = all_entities
    else:
        pred_ents = np.asarray(pred_entities, dtype=np.int64)
    pred_anchors = np.full(len(pred_ents), anchor_t, dtype=np.int64)
    pred_pairs = set(zip(pred_ents.tolist(), pred_anchors.tolist()))
    rng = np.random.default_rng(config.seed)

    ctx_e: list[int] = []
    ctx_a: list[int] = []
    ctx_y: list = []
    seen: set[tuple[int, int]] = set()

    if plan.temporal:
        stride = plan.window_end_ms - plan.window_start_ms
        min_ts = graph.min_event_time()
        if min_ts == POS_INF:
            raise TaskGenError("no timestamped events; temporal plan has no history")
        anchors = []
        a = anchor_t - plan.window_end_ms
        while a >= min_ts and len(anchors) < config.max_local_anchors:
            anchors.append(a)
            a -= stride
        if not anchors:
            raise TaskGenError(
                "insufficient history: the prediction anchor does not leave one "
                "full label window")

        local_budget = int(round(config.budget * config.local_fraction))
        def try_add(entity: int, anchor: int) -> None:
            key = (entity, anchor)
            if key in seen or key in pred_pairs:
                return
            if not len(graph.neighbors_before(plan.edge_to_agg, entity, anchor, 1)):
                return  # no history at this anchor: not usable as context
            label = compute_label(plan, graph, entity, anchor)
            if label is None:
                return
            seen.add(key)
            ctx_e.append(entity)
            ctx_a.append(anchor)
            ctx_y.append(label)

        # local rows: the prediction entities themselves at earlier anchors
        for a in anchors:
            if len(ctx_e) >= local_budget:
                break
            for e in pred_ents.tolist():
                if len(ctx_e) >= local_budget:
                    break
                try_add(e, a)

        # global rows: uniform over entities with history at the newest anchors
        for a in anchors:
            if len(ctx_e) >= config.budget:
                break
            eligible = _entities_with_history(graph, plan, all_entities, a)
            eligible = np.array([e for e in eligible.tolist() if (e, a) not in seen],
                                dtype=np.int64)
            if not len(eligible):
                continue
            room = config.budget - len(ctx_e)
            pick = rng.permutation(eligible)[:room]
            for e in pick.tolist():
                try_add(int(e), a)
    else:
        chunk = etable.chunks[plan.target_column]
        known = all_entities[~chunk.nulls[all_entities]]
        pred_set = set(pred_ents.tolist())
        known = np.array([e for e in known.tolist() if e not in pred_set], dtype=np.int64)
        pick = rng.permutation(known)[:config.budget]
        for e in np.sort(pick).tolist():
            label = compute_label(plan, graph, int(e), anchor_t)
            if label is None:
                continue
            ctx_e.append(int(e))
            ctx_a.append(anchor_t)
            ctx_y.append(label)

    if plan.task_type == "multiclass":
        labels = np.array([str(v) for v in ctx_y], dtype=object)
    else:
        labels = np.array([_label_to_float(v, plan.task_type) for v in ctx_y])

    # canonical order: (anchor, entity)
    if len(ctx_e):
        order = np.lexsort((np.asarray(ctx_e), np.asarray(ctx_a)))
        ctx_entities = np.asarray(ctx_e, dtype=np.int64)[order]
        ctx_anchors = np.asarray(ctx_a, dtype=np.int64)[order]
        labels = labels[order]
    else:
        ctx_entities = np.empty(0, dtype=np.int64)
        ctx_anchors = np.empty(0, dtype=np.int64)

    lags = config.lag_timesteps if plan.temporal else 0
    ctx_lags = pred_lags = None
    if lags:
        min_ts = graph.min_event_time()
        ctx_lags = np.stack([_lag_vector(plan, graph, int(e), int(a), lags, min_ts)
                             for e, a in zip(ctx_entities, ctx_anchors)]) \
            if len(ctx_entities) else np.empty((0, lags))
        pred_lags = np.stack([_lag_vector(plan, graph, int(e), int(a), lags, min_ts)
                              for e, a in zip(pred_ents, pred_anchors)]) \
            if len(pred_ents) else np.empty((0, lags))

    return TaskTable(task_type=plan.task_type, entity_table=plan.entity_table,
                     ctx_entities=ctx_entities, ctx_anchors=ctx_anchors,
                     ctx_labels=labels, pred_entities=pred_ents,
                     pred_anchors=pred_anchors, ctx_lags=ctx_lags, pred_lags=pred_lags)


def holdout_split(task_table: TaskTable, fraction: float, seed: int = 0,
                  temporal: bool | None = None) -> tuple[TaskTable, TaskTable]:
    """Split labeled rows into (context part, eval part); temporal tables split
    by anchor time with the latest anchors becoming the eval part."""
    if not 0.0 < fraction < 1.0:
        raise TaskGenError("fraction must be in (0, 1)")
    n = task_table.n_context
    want_eval = int(round(n * fraction))
    if n < 2 or want_eval == 0 or want_eval == n:
        raise TaskGenError(f"degenerate split: {n} rows at fraction {fraction}")
    anchors = task_table.ctx_anchors
    if temporal is None:
        temporal = len(np.unique(anchors)) > 1
    if temporal:
        distinct = np.unique(anchors)[::-1]  # latest first
        take = np.zeros(n, dtype=bool)
        for a in distinct:
            take |= anchors == a
            if take.sum() >= want_eval:
                break
        if take.all():
            take = anchors == distinct[0]
        if take.all() or not take.any():
            raise TaskGenError("degenerate temporal split: all rows share one anchor")
        eval_idx = np.nonzero(take)[0]
        ctx_idx = np.nonzero(~take)[0]
    else:
        perm = np.random.default_rng(seed).permutation(n)
        eval_idx = np.sort(perm[:want_eval])
        ctx_idx = np.sort(perm[want_eval:])

    def subset(idx):
        return TaskTable(
            task_type=task_table.task_type, entity_table=task_table.entity_table,
            ctx_entities=task_table.ctx_entities[idx],
            ctx_anchors=task_table.ctx_anchors[idx],
            ctx_labels=task_table.ctx_labels[idx],
            pred_entities=task_table.ctx_entities[idx],
            pred_anchors=task_table.ctx_anchors[idx],
            ctx_lags=None if task_table.ctx_lags is None else task_table.ctx_lags[idx],
            pred_lags=None if task_table.ctx_lags is None else task_table.ctx_lags[idx])

    ctx_part = subset(ctx_idx)
    ctx_part.pred_entities = task_table.pred_entities
    ctx_part.pred_anchors = task_table.pred_anchors
    ctx_part.pred_lags = task_table.pred_lags
    return ctx_part, subset(eval_idx)


# ---------------------------------------------------------------------------
# CSV import/export with declared column names


def export_task_table(task_table: TaskTable, graph: TemporalGraph, ctx_path, pred_path,
                      entity_column: str = "entity", time_column: str = "time",
                      target_column: str = "target") -> None:
    etable = graph.table(task_table.entity_table)
    pk = etable.chunks[etable.meta.primary_key]

    def entity_name(e: int) -> str:
        return pk.dictionary[int(pk.values[e])]

    with open(ctx_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow([entity_column, time_column, target_column])
        for e, a, y in zip(task_table.ctx_entities, task_table.ctx_anchors,
                           task_table.ctx_labels):
            w.writerow([entity_name(e), format_timestamp(int(a)), y])
    with open(pred_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow([entity_column, time_column])
        for e, a in zip(task_table.pred_entities, task_table.pred_anchors):
            w.writerow([entity_name(e), format_timestamp(int(a))])


def import_task_table(graph: TemporalGraph, entity_table: str, task_type: str,
                      ctx_path, pred_path, entity_column: str = "entity",
                      time_column: str = "time", target_column: str = "target"
                      ) -> TaskTable:
    etable = graph.table(entity_table)
    pk = etable.chunks[etable.meta.primary_key]
    row_of = {pk.dictionary[int(code)]: row for row, code in enumerate(pk.values)}

    def read(path, with_target):
        ents, anchors, targets = [], [], []
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            for rec in reader:
                name = rec[entity_column]
                if name not in row_of:
                    raise TaskGenError(f"unknown entity {name!r} in {path}")
                ents.append(row_of[name])
                anchors.append(parse_timestamp(rec[time_column]))
                if with_target:
                    targets.append(rec[target_column])
        return (np.asarray(ents, dtype=np.int64), np.asarray(anchors, dtype=np.int64),
                targets)

    ce, ca, targets = read(ctx_path, True)
    pe, pa, _ = read(pred_path, False)
    if task_type == "multiclass":
        labels = np.array([str(t) for t in targets], dtype=object)
    elif task_type == "binary":
        labels = np.array([1.0 if str(t).strip().lower() in ("1", "true", "1.0") else 0.0
                           for t in targets])
    else:
        labels = np.array([float(t) for t in targets])
    return TaskTable(task_type=task_type, entity_table=entity_table,
                     ctx_entities=ce, ctx_anchors=ca, ctx_labels=labels,
                     pred_entities=pe, pred_anchors=pa)
