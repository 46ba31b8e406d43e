"""Deterministic, leakage-safe temporal subgraph sampling around an entity.

Breadth-first over every edge type; at hop h each frontier node contributes
its fanouts[h] most recent neighbors with timestamp <= anchor. The default
policy is most-recent-first truncation, so the seed changes nothing; a
uniform-random policy (seeded) is available for ablations. Revisited nodes
keep their first hop index; edges between already-sampled nodes are kept.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .store import StoreError, TemporalGraph
from .times import NEG_INF, POS_INF


class SamplerError(ValueError):
    pass


@dataclass
class SampledSubgraph:
    anchor: int
    root_table: str
    nodes: dict[str, np.ndarray]          # table -> global node ids (local = index)
    hops: dict[str, np.ndarray]           # table -> hop index per local node
    deltas: dict[str, np.ndarray]         # table -> anchor - ts; POS_INF for dim rows
    in_edge: dict[str, np.ndarray]        # table -> edge-type index of first reach (-1 root)
    edges: list[tuple[str, np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)
    # edges: (edge_type_name, src_local, dst_local, hop) with src in the edge's
    # src_table and dst in its dst_table
    edge_type_names: list[str] = field(default_factory=list)

    @property
    def total_nodes(self) -> int:
        return sum(len(v) for v in self.nodes.values())

    def node_set(self) -> set[tuple[str, int]]:
        return {(t, int(g)) for t, ids in self.nodes.items() for g in ids}

    def to_json(self) -> str:
        doc = {
            "anchor": self.anchor,
            "root_table": self.root_table,
            "nodes": {t: ids.tolist() for t, ids in self.nodes.items()},
            "hops": {t: h.tolist() for t, h in self.hops.items()},
            "deltas": {t: d.tolist() for t, d in self.deltas.items()},
            "edges": [
                {"edge_type": et, "src": s.tolist(), "dst": d.tolist(), "hop": h.tolist()}
                for et, s, d, h in self.edges
            ],
        }
        return json.dumps(doc, sort_keys=True)


def sample_subgraph(graph: TemporalGraph, root_table: str, root: int, anchor_t: int,
                    fanouts, seed: int = 0, policy: str = "recent",
                    edge_drop: float = 0.0) -> SampledSubgraph:
    if graph.adjacency is None:
        raise SamplerError("adjacency not built")
    td = graph.table(root_table)
    if not (0 <= root < td.row_count):
        raise SamplerError(f"unknown root {root} in table {root_table!r}")
    if anchor_t in (NEG_INF, POS_INF):
        raise SamplerError("anchor time must be finite")
    root_ts = int(td.times[root])
    if root_ts != NEG_INF and root_ts > anchor_t:
        raise SamplerError(
            f"root {root_table}[{root}] is not visible at anchor {anchor_t}")
    if graph.recorder is not None:
        graph.recorder.check_inputs(np.array([max(root_ts, NEG_INF + 1) if root_ts != NEG_INF
                                              else anchor_t]), anchor_t)

    etype_names = [e.etype.name for e in graph.adjacency.edges.values()]
    etype_index = {n: i for i, n in enumerate(etype_names)}
    rng = None
    if policy == "uniform" or edge_drop > 0.0:
        rng = np.random.default_rng((seed, root, anchor_t % (2**32)))

    nodes: dict[str, list[int]] = {root_table: [root]}
    hops: dict[str, list[int]] = {root_table: [0]}
    in_edge: dict[str, list[int]] = {root_table: [-1]}
    local_of: dict[tuple[str, int], int] = {(root_table, root): 0}
    edges: list[tuple[str, list, list, list]] = []
    edge_acc: dict[str, tuple[list, list, list]] = {}

    frontier: list[tuple[str, int]] = [(root_table, root)]
    for h, k in enumerate(fanouts):
        if k < 0:
            raise SamplerError("fanouts must be non-negative")
        nxt: list[tuple[str, int]] = []
        for tbl, gid in frontier:
            for et in graph.edge_types_from(tbl):
                if policy == "recent":
                    nbrs = graph.neighbors_before(et.name, gid, anchor_t, k)
                elif policy == "uniform":
                    e = graph.adjacency.edge(et.name)
                    lo, hi = int(e.offsets[gid]), int(e.offsets[gid + 1])
                    eligible = graph.neighbors_before(et.name, gid, anchor_t, hi - lo)
                    if len(eligible) > k:
                        pick = rng.choice(len(eligible), size=k, replace=False)
                        nbrs = eligible[np.sort(pick)]
                    else:
                        nbrs = eligible
                else:
                    raise SamplerError(f"unknown sampling policy {policy!r}")
                if edge_drop > 0.0 and len(nbrs):
                    nbrs = nbrs[rng.random(len(nbrs)) >= edge_drop]
                if not len(nbrs):
                    continue
                dst_tbl = et.dst_table
                src_local = local_of[(tbl, gid)]
                acc = edge_acc.get(et.name)
                if acc is None:
                    acc = edge_acc[et.name] = ([], [], [])
                for nbr in nbrs.tolist():
                    key = (dst_tbl, nbr)
                    loc = local_of.get(key)
                    if loc is None:
                        loc = len(nodes.setdefault(dst_tbl, []))
                        nodes[dst_tbl].append(nbr)
                        hops.setdefault(dst_tbl, []).append(h + 1)
                        in_edge.setdefault(dst_tbl, []).append(etype_index[et.name])
                        local_of[key] = loc
                        nxt.append(key)
                    acc[0].append(src_local)
                    acc[1].append(loc)
                    acc[2].append(h)
        frontier = nxt

    out_nodes = {}
    out_hops = {}
    out_deltas = {}
    out_in_edge = {}
    for tbl, ids in nodes.items():
        ids_arr = np.asarray(ids, dtype=np.int64)
        ts = graph.table(tbl).times[ids_arr]
        dim = ts == NEG_INF
        delta = np.empty(len(ids_arr), dtype=np.int64)
        delta[dim] = POS_INF
        delta[~dim] = anchor_t - ts[~dim]
        out_nodes[tbl] = ids_arr
        out_hops[tbl] = np.asarray(hops[tbl], dtype=np.int64)
        out_deltas[tbl] = delta
        out_in_edge[tbl] = np.asarray(in_edge[tbl], dtype=np.int64)
    edge_list = [(name, np.asarray(s, dtype=np.int64), np.asarray(d, dtype=np.int64),
                  np.asarray(hh, dtype=np.int64))
                 for name, (s, d, hh) in edge_acc.items()]
    return SampledSubgraph(anchor=anchor_t, root_table=root_table, nodes=out_nodes,
                           hops=out_hops, deltas=out_deltas, in_edge=out_in_edge,
                           edges=edge_list, edge_type_names=etype_names)


def sample_batch(graph: TemporalGraph, roots_and_anchors, fanouts, seed: int = 0,
                 policy: str = "recent", edge_drop: float = 0.0,
                 root_table: str | None = None) -> list[SampledSubgraph]:
    """Order-preserving batch sampling; identical to per-example calls."""
    out = []
    for i, item in enumerate(roots_and_anchors):
        if root_table is None:
            tbl, root, anchor = item
        else:
            tbl = root_table
            root, anchor = item
        try:
            out.append(sample_subgraph(graph, tbl, int(root), int(anchor), fanouts,
                                       seed=seed, policy=policy, edge_drop=edge_drop))
        except (SamplerError, StoreError) as exc:
            raise SamplerError(f"example {i} (root {root}): {exc}") from exc
    return out
