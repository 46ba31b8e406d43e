"""Deep-feature-synthesis flattening plus a logistic-regression probe.

The flattener applies the canonical fixed per-column aggregates over linked
rows (COUNT; sum/mean/min/max for numericals; distinct count and mode
frequency for categoricals) restricted to timestamp <= anchor. It is a pure
function of the time-filtered multiset of related rows, which is exactly the
limitation the conjunction benchmark exposes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schema import SemanticType
from .store import TemporalGraph
from .times import NEG_INF


class BaselineError(ValueError):
    pass


@dataclass
class FlatRow:
    entity: int
    anchor: int
    names: list[str]
    values: np.ndarray  # float64 with NaN for null aggregates


def _filtered_neighbors(graph: TemporalGraph, edge_type: str, node: int,
                        anchor: int) -> np.ndarray:
    e = graph.adjacency.edge(edge_type)
    lo, hi = int(e.offsets[node]), int(e.offsets[node + 1])
    return graph.neighbors_before(edge_type, node, anchor, hi - lo)


def _path_features(graph: TemporalGraph, table: str, rows: np.ndarray, prefix: str,
                   names: list[str], values: list[float], excluded=frozenset()) -> None:
    names.append(f"{prefix}|COUNT")
    values.append(float(len(rows)))
    td = graph.table(table)
    for col in td.meta.columns:
        if (table, col.name) in excluded:
            continue
        chunk = td.chunks[col.name]
        if col.stype == SemanticType.NUMERICAL:
            vals = chunk.values[rows] if len(rows) else np.empty(0)
            vals = vals[~chunk.nulls[rows]] if len(rows) else vals
            for agg in ("sum", "mean", "min", "max"):
                names.append(f"{prefix}|{col.name}|{agg}")
                if len(vals) == 0:
                    values.append(np.nan)
                else:
                    values.append(float(getattr(np, agg)(vals)))
        elif col.stype == SemanticType.CATEGORICAL:
            codes = chunk.values[rows] if len(rows) else np.empty(0, dtype=np.int32)
            codes = codes[~chunk.nulls[rows]] if len(rows) else codes
            names.append(f"{prefix}|{col.name}|nunique")
            names.append(f"{prefix}|{col.name}|modefreq")
            if len(codes) == 0:
                values.extend([np.nan, np.nan])
            else:
                counts = np.bincount(codes)
                values.append(float((counts > 0).sum()))
                values.append(float(counts.max() / len(codes)))


def dfs_flatten(graph: TemporalGraph, entity_table: str, entity: int, anchor_t: int,
                depth: int = 2, exclude: tuple = ()) -> FlatRow:
    """Root columns passed through, plus fixed aggregates along every link path
    up to `depth`, all restricted to timestamp <= anchor.

    `exclude` lists (table, column) pairs to drop, normally the task's target
    column.
    """
    if depth not in (1, 2):
        raise BaselineError("depth must be 1 or 2")
    td = graph.table(entity_table)
    if not (0 <= entity < td.row_count):
        raise BaselineError(f"unknown entity {entity} in {entity_table!r}")
    excluded = set(exclude)

    names: list[str] = []
    values: list[float] = []
    for col in td.meta.columns:
        if (entity_table, col.name) in excluded:
            continue
        chunk = td.chunks[col.name]
        if col.stype == SemanticType.NUMERICAL:
            names.append(f"root|{col.name}")
            values.append(np.nan if chunk.nulls[entity] else float(chunk.values[entity]))
        elif col.stype == SemanticType.CATEGORICAL:
            names.append(f"root|{col.name}|code")
            values.append(np.nan if chunk.nulls[entity] else float(chunk.values[entity]))

    for et1 in graph.edge_types_from(entity_table):
        rows1 = _filtered_neighbors(graph, et1.name, entity, anchor_t)
        prefix1 = et1.name
        _path_features(graph, et1.dst_table, rows1, prefix1, names, values, excluded)
        if depth == 2:
            for et2 in graph.edge_types_from(et1.dst_table):
                if et2.name == et1.reverse_name:
                    continue  # no immediate backtracking
                gathered = [ _filtered_neighbors(graph, et2.name, int(r), anchor_t)
                             for r in rows1 ]
                rows2 = (np.concatenate(gathered) if gathered
                         else np.empty(0, dtype=np.int64))
                _path_features(graph, et2.dst_table, rows2,
                               f"{prefix1}>{et2.name}", names, values, excluded)
    return FlatRow(entity=entity, anchor=anchor_t, names=names,
                   values=np.asarray(values, dtype=np.float64))


def flatten_many(graph: TemporalGraph, entity_table: str, entities, anchors,
                 depth: int = 2, exclude: tuple = ()) -> tuple[list[str], np.ndarray]:
    rows = [dfs_flatten(graph, entity_table, int(e), int(a), depth, exclude)
            for e, a in zip(entities, anchors)]
    names = rows[0].names
    mat = np.stack([r.values for r in rows])
    return names, mat


def export_flat_csv(path, names, matrix, entities) -> None:
    import csv
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["entity"] + names)
        for e, row in zip(entities, matrix):
            w.writerow([e] + [("" if np.isnan(v) else repr(float(v))) for v in row])


# ---------------------------------------------------------------------------
# logistic probe


@dataclass
class LinearModel:
    weights: np.ndarray
    mu: np.ndarray
    sd: np.ndarray


def _design(matrix: np.ndarray, mu: np.ndarray, sd: np.ndarray) -> np.ndarray:
    """Nulls imputed to 0 with presence indicators appended, plus a bias column."""
    present = ~np.isnan(matrix)
    x = np.where(present, matrix, 0.0)
    x = (x - mu) / sd
    return np.concatenate([x, present.astype(np.float64),
                           np.ones((len(matrix), 1))], axis=1)


def linear_fit(matrix: np.ndarray, labels, epochs: int = 200, lr: float = 0.5,
               seed: int = 0) -> LinearModel:
    """Full-batch gradient descent on logistic loss; deterministic per seed."""
    labels = np.asarray(labels, dtype=np.float64)
    if len(matrix) != len(labels):
        raise BaselineError(f"{len(matrix)} rows vs {len(labels)} labels")
    filled = np.where(np.isnan(matrix), 0.0, matrix)
    mu = filled.mean(axis=0)
    sd = filled.std(axis=0)
    sd[sd == 0] = 1.0
    x = _design(matrix, mu, sd)
    rng = np.random.default_rng(seed)
    w = rng.normal(scale=0.01, size=x.shape[1])
    n = len(x)
    for _ in range(epochs):
        p = 1.0 / (1.0 + np.exp(-(x @ w)))
        w -= lr * (x.T @ (p - labels)) / n
    return LinearModel(weights=w, mu=mu, sd=sd)


def linear_predict(model: LinearModel, matrix: np.ndarray) -> np.ndarray:
    x = _design(matrix, model.mu, model.sd)
    return 1.0 / (1.0 + np.exp(-(x @ model.weights)))
