"""Columnar storage, time-indexed adjacency, snapshots, and the binary format.

Values live in dense per-column arrays: numericals as float64, timestamps as
int64 epoch-milliseconds, and categorical/text/identifier columns as int32
dictionary codes (first-occurrence order) next to the dictionary itself.
Adjacency is CSR per directed edge type with each neighbor list sorted
ascending by neighbor timestamp (ties by node id), so both "k most recent
before t" and window scans are binary searches.

The on-disk format is little-endian: magic "RLCT", a fixed header, 64-byte
aligned sections, and a trailing offset table, so loading maps arrays
directly out of the file instead of parsing it.
"""

from __future__ import annotations

import csv
import json
import mmap
import struct
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .schema import Schema, SemanticType, SchemaError, TableMeta, eval_expression
from .times import NEG_INF, POS_INF, parse_timestamp


class StoreError(ValueError):
    pass


def canon_id(value) -> str:
    """Canonical string form of an identifier value (42 == 42.0 == "42")."""
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


# ---------------------------------------------------------------------------
# column chunks


@dataclass
class ColumnChunk:
    stype: SemanticType
    values: np.ndarray          # float64 | int64 | int32 codes
    nulls: np.ndarray           # bool per row
    dictionary: list[str] | None = None

    def __post_init__(self):
        if len(self.values) != len(self.nulls):
            raise StoreError(
                f"chunk length mismatch: {len(self.values)} values, {len(self.nulls)} null bits")
        if self.dictionary is not None and len(self.values):
            if int(self.values.max(initial=-1)) >= len(self.dictionary):
                raise StoreError("dictionary code out of range")

    def __len__(self):
        return len(self.values)


_NUMERIC_STYPES = (SemanticType.NUMERICAL,)
_DICT_STYPES = (SemanticType.CATEGORICAL, SemanticType.TEXT, SemanticType.IDENTIFIER)


def chunk_from_values(values, stype: SemanticType) -> tuple[ColumnChunk, int]:
    """Parse raw cell values into a chunk; returns (chunk, malformed_count)."""
    stype = SemanticType(stype)
    n = len(values)
    warnings = 0
    if stype in _NUMERIC_STYPES:
        out = np.empty(n, dtype=np.float64)
        nulls = np.zeros(n, dtype=bool)
        for i, v in enumerate(values):
            if v is None or (isinstance(v, str) and v.strip() == ""):
                out[i], nulls[i] = np.nan, True
                continue
            try:
                out[i] = float(v)
            except (TypeError, ValueError):
                out[i], nulls[i] = np.nan, True
                warnings += 1
        nulls |= np.isnan(out)
        out[nulls] = np.nan
        return ColumnChunk(stype, out, nulls), warnings
    if stype == SemanticType.TIMESTAMP:
        out = np.empty(n, dtype=np.int64)
        nulls = np.zeros(n, dtype=bool)
        for i, v in enumerate(values):
            if v is None or (isinstance(v, str) and v.strip() == ""):
                out[i], nulls[i] = POS_INF, True
                continue
            try:
                out[i] = parse_timestamp(v)
            except (TypeError, ValueError):
                out[i], nulls[i] = POS_INF, True
                warnings += 1
        return ColumnChunk(stype, out, nulls), warnings
    if stype in _DICT_STYPES:
        codes = np.empty(n, dtype=np.int32)
        nulls = np.zeros(n, dtype=bool)
        mapping: dict[str, int] = {}
        dictionary: list[str] = []
        canon = canon_id if stype == SemanticType.IDENTIFIER else str
        for i, v in enumerate(values):
            if v is None or (isinstance(v, str) and v.strip() == ""):
                codes[i], nulls[i] = -1, True
                continue
            s = canon(v)
            code = mapping.get(s)
            if code is None:
                code = mapping[s] = len(dictionary)
                dictionary.append(s)
            codes[i] = code
        return ColumnChunk(stype, codes, nulls, dictionary), warnings
    raise StoreError(f"unsupported semantic type {stype}")


# ---------------------------------------------------------------------------
# tables and graph


@dataclass
class TableData:
    meta: TableMeta
    chunks: dict[str, ColumnChunk]
    times: np.ndarray           # int64 node timestamps (NEG_INF for dimension rows)
    time_order: np.ndarray      # argsort of (times, id)
    sorted_times: np.ndarray    # times[time_order]

    @property
    def row_count(self) -> int:
        return len(self.times)


@dataclass
class EdgeType:
    """One direction of a PK-FK link."""
    name: str
    src_table: str              # table whose nodes the lists are indexed by
    dst_table: str              # table the neighbors belong to
    link_name: str
    reverse_name: str


@dataclass
class EdgeData:
    etype: EdgeType
    offsets: np.ndarray         # int64, len n_src + 1
    nbr: np.ndarray             # int32 neighbor node ids
    nbr_times: np.ndarray       # int64, ascending within each list
    inf_end: np.ndarray         # int64 per src: offset past the NEG_INF run


@dataclass
class AdjacencyIndex:
    edges: dict[str, EdgeData]
    dangling: dict[str, int]    # per link name

    def edge(self, name: str) -> EdgeData:
        if name not in self.edges:
            raise StoreError(f"unknown edge type {name!r}; known: {sorted(self.edges)}")
        return self.edges[name]


class AccessRecorder:
    """Counts store reads that would violate anchor-time discipline."""

    def __init__(self):
        self.input_reads = 0
        self.input_violations = 0
        self.label_events = 0
        self.label_violations = 0

    def check_inputs(self, ts, anchor: int) -> None:
        ts = np.asarray(ts)
        self.input_reads += ts.size
        self.input_violations += int((ts > anchor).sum())

    def check_label_events(self, ts, anchor: int) -> None:
        ts = np.asarray(ts)
        self.label_events += ts.size
        self.label_violations += int((ts <= anchor).sum())


def fkey_edge_name(link) -> str:
    return f"{link.src_table}.{link.fkey_column}->{link.dst_table}"


def pkey_edge_name(link) -> str:
    return f"{link.dst_table}<-{link.src_table}.{link.fkey_column}"


class TemporalGraph:
    """Immutable record-per-node view over the column store."""

    def __init__(self, schema: Schema, tables: dict[str, TableData]):
        self.schema = schema
        self.tables = tables
        self.adjacency: AdjacencyIndex | None = None
        self.recorder: AccessRecorder | None = None

    def table(self, name: str) -> TableData:
        if name not in self.tables:
            raise StoreError(f"unknown table {name!r}")
        return self.tables[name]

    def num_nodes(self) -> int:
        return sum(t.row_count for t in self.tables.values())

    def node_time(self, table: str, node: int) -> int:
        return int(self.table(table).times[node])

    def min_event_time(self) -> int:
        lo = POS_INF
        for t in self.tables.values():
            finite = t.sorted_times[(t.sorted_times != NEG_INF) & (t.sorted_times != POS_INF)]
            if len(finite):
                lo = min(lo, int(finite[0]))
        return lo

    def max_event_time(self) -> int:
        hi = NEG_INF
        for t in self.tables.values():
            finite = t.sorted_times[(t.sorted_times != NEG_INF) & (t.sorted_times != POS_INF)]
            if len(finite):
                hi = max(hi, int(finite[-1]))
        return hi

    # -- edges ------------------------------------------------------------

    def edge_types_from(self, table: str) -> list[EdgeType]:
        if self.adjacency is None:
            raise StoreError("adjacency not built; call build_adjacency first")
        return [e.etype for e in self.adjacency.edges.values() if e.etype.src_table == table]

    def neighbors_before(self, edge_type: str, node: int, t: int, k: int):
        """The k most recent neighbors with timestamp <= t, most recent first.

        Dimension neighbors (timestamp -inf) are always eligible and follow the
        timestamped ones, ascending by node id.
        """
        if k < 0:
            raise StoreError("k must be >= 0")
        e = self.adjacency.edge(edge_type)
        lo = int(e.offsets[node])
        hi = int(e.offsets[node + 1])
        ie = int(e.inf_end[node])
        if k == 0 or lo == hi:
            return np.empty(0, dtype=np.int64)
        pos = lo + int(np.searchsorted(e.nbr_times[lo:hi], t, side="right"))
        pos = max(pos, ie)
        n_time = min(k, pos - ie)
        n_dim = min(k - n_time, ie - lo)
        timed = e.nbr[pos - n_time:pos][::-1]
        dims = e.nbr[lo:lo + n_dim]
        out = np.concatenate([timed, dims]).astype(np.int64)
        if self.recorder is not None and len(out):
            self.recorder.check_inputs(e.nbr_times[pos - n_time:pos], t)
        return out

    def neighbors_before_many(self, edge_type: str, nodes, ts, k: int):
        """Vectorized `neighbors_before` over query arrays.

        Returns (ids, counts): ids is (q, k) int64 padded with -1, counts (q,).
        """
        e = self.adjacency.edge(edge_type)
        nodes = np.asarray(nodes, dtype=np.int64)
        ts = np.asarray(ts, dtype=np.int64)
        q = len(nodes)
        if k == 0 or q == 0:
            return np.full((q, k), -1, dtype=np.int64), np.zeros(q, dtype=np.int64)
        lo = e.offsets[nodes]
        hi = e.offsets[nodes + 1]
        ie = e.inf_end[nodes]
        # branchless binary search for "first index with time > t" in [ie, hi)
        lo2 = ie.copy()
        hi2 = hi.copy()
        times = e.nbr_times
        while True:
            active = lo2 < hi2
            if not active.any():
                break
            mid = (lo2 + hi2) >> 1
            probe = np.where(active, mid, 0)
            le = times[probe] <= ts
            lo2 = np.where(active & le, mid + 1, lo2)
            hi2 = np.where(active & ~le, mid, hi2)
        pos = lo2
        n_time = np.minimum(k, pos - ie)
        n_dim = np.minimum(k - n_time, ie - lo)
        counts = n_time + n_dim
        jj = np.arange(k, dtype=np.int64)[None, :]
        is_time = jj < n_time[:, None]
        is_dim = (jj >= n_time[:, None]) & (jj < counts[:, None])
        gidx = np.where(is_time, pos[:, None] - 1 - jj,
                        np.where(is_dim, lo[:, None] + (jj - n_time[:, None]), 0))
        ids = np.where(is_time | is_dim, e.nbr[gidx].astype(np.int64), -1)
        if self.recorder is not None:
            tmat = times[np.where(is_time, gidx, 0)]
            self.recorder.input_reads += int(is_time.sum())
            self.recorder.input_violations += int((is_time & (tmat > ts[:, None])).sum())
        return ids, counts

    def window_neighbors(self, edge_type: str, node: int, lo_t: int, hi_t: int):
        """Neighbor node ids with timestamp in (lo_t, hi_t], time-ascending."""
        e = self.adjacency.edge(edge_type)
        lo = int(e.offsets[node])
        hi = int(e.offsets[node + 1])
        start = lo + int(np.searchsorted(e.nbr_times[lo:hi], lo_t, side="right"))
        end = lo + int(np.searchsorted(e.nbr_times[lo:hi], hi_t, side="right"))
        return e.nbr[start:end].astype(np.int64)

    def snapshot(self, t: int) -> "SnapshotView":
        return SnapshotView(self, t)


@dataclass
class SnapshotView:
    """The graph restricted to nodes with timestamp <= cutoff."""
    graph: TemporalGraph
    cutoff: int

    def is_visible(self, table: str, node) -> np.ndarray | bool:
        ts = self.graph.table(table).times[node]
        return ts <= self.cutoff

    def visible_count(self, table: str) -> int:
        td = self.graph.table(table)
        return int(np.searchsorted(td.sorted_times, self.cutoff, side="right"))

    def visible_nodes(self, table: str) -> np.ndarray:
        td = self.graph.table(table)
        n = self.visible_count(table)
        return np.sort(td.time_order[:n])


# ---------------------------------------------------------------------------
# ingestion and construction


@dataclass
class IngestReport:
    tables: dict[str, dict] = field(default_factory=dict)
    dangling: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"tables": self.tables, "dangling_fkeys": self.dangling},
                          indent=2, sort_keys=True)


def ingest_csv(path, table_meta: TableMeta, max_ts_failure_ratio: float = 0.5
               ) -> tuple[dict[str, ColumnChunk], dict]:
    """Read an RFC-4180 CSV into column chunks for the declared base columns.

    Malformed cells become nulls and are counted; a timestamp column whose
    failure ratio exceeds the limit is an error.
    """
    derived = {d.name for d in table_meta.derived_columns}
    declared = [c for c in table_meta.columns if c.name not in derived]
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise StoreError(f"{path}: empty file") from None
        missing = [c.name for c in declared if c.name not in header]
        if missing:
            raise StoreError(f"{path}: missing declared columns {missing}")
        col_pos = {name: header.index(name) for name in (c.name for c in declared)}
        raw: dict[str, list] = {c.name: [] for c in declared}
        for row in reader:
            for name, pos in col_pos.items():
                raw[name].append(row[pos] if pos < len(row) else "")

    chunks: dict[str, ColumnChunk] = {}
    nulls: dict[str, int] = {}
    warnings: dict[str, int] = {}
    n_rows = None
    for c in declared:
        chunk, warned = chunk_from_values(raw[c.name], c.stype)
        n_rows = len(chunk)
        if c.stype == SemanticType.TIMESTAMP and n_rows:
            if warned / n_rows > max_ts_failure_ratio:
                raise StoreError(
                    f"{path}: timestamp column {c.name!r} failed to parse on "
                    f"{warned}/{n_rows} rows (limit {max_ts_failure_ratio:.0%})")
        chunks[c.name] = chunk
        nulls[c.name] = int(chunk.nulls.sum())
        if warned:
            warnings[c.name] = warned
    report = {"rows": n_rows or 0, "null_counts": nulls, "malformed_cells": warnings}
    return chunks, report


def build_graph(schema: Schema, data) -> TemporalGraph:
    """Materialize the temporal graph: one node per record, derived columns
    computed, node timestamps assigned (or -inf for dimension tables)."""
    schema.validate()
    tables: dict[str, TableData] = {}
    for tm in schema.tables:
        if tm.name not in data:
            raise StoreError(f"no data provided for table {tm.name!r}")
        provided = data[tm.name]
        derived_names = {d.name for d in tm.derived_columns}
        chunks: dict[str, ColumnChunk] = {}
        n_rows = None
        for col in tm.columns:
            if col.name in derived_names:
                continue
            if col.name not in provided:
                raise StoreError(f"table {tm.name!r}: missing column {col.name!r}")
            v = provided[col.name]
            chunk = v if isinstance(v, ColumnChunk) else chunk_from_values(list(v), col.stype)[0]
            if chunk.stype != col.stype:
                raise StoreError(
                    f"table {tm.name!r} column {col.name!r}: chunk type "
                    f"{chunk.stype.value} != declared {col.stype.value}")
            if n_rows is None:
                n_rows = len(chunk)
            elif len(chunk) != n_rows:
                raise StoreError(
                    f"row count mismatch in table {tm.name!r}: column {col.name!r} "
                    f"has {len(chunk)} rows, expected {n_rows}")
            chunks[col.name] = chunk
        n_rows = n_rows or 0

        for d in tm.derived_columns:
            cols = {}
            for name, chunk in chunks.items():
                if chunk.stype == SemanticType.NUMERICAL:
                    arr = chunk.values.astype(np.float64).copy()
                    arr[chunk.nulls] = np.nan
                    cols[name] = arr
            values = eval_expression(d.expr, cols)
            if len(values) != n_rows and n_rows:
                values = np.broadcast_to(values, (n_rows,)).astype(np.float64)
            nulls = np.isnan(values)
            chunks[d.name] = ColumnChunk(SemanticType.NUMERICAL, values, nulls)

        if tm.primary_key is not None:
            pk = chunks[tm.primary_key]
            if pk.nulls.any():
                raise StoreError(f"primary key {tm.name}.{tm.primary_key} has null values")
            if len(np.unique(pk.values)) != n_rows:
                raise StoreError(f"primary key {tm.name}.{tm.primary_key} is not unique")

        if tm.time_column is not None:
            tc = chunks[tm.time_column]
            times = tc.values.astype(np.int64).copy()
            times[tc.nulls] = POS_INF
        else:
            times = np.full(n_rows, NEG_INF, dtype=np.int64)

        ids = np.arange(n_rows, dtype=np.int64)
        order = np.lexsort((ids, times))
        tables[tm.name] = TableData(meta=tm, chunks=chunks, times=times,
                                    time_order=order, sorted_times=times[order])
    graph = TemporalGraph(schema, tables)
    return graph


def build_adjacency(graph: TemporalGraph) -> AdjacencyIndex:
    """CSR adjacency per directed edge type; dangling FK values are counted
    and skipped."""
    edges: dict[str, EdgeData] = {}
    dangling: dict[str, int] = {}
    for link in graph.schema.links:
        src = graph.table(link.src_table)
        dst = graph.table(link.dst_table)
        fk = src.chunks[link.fkey_column]
        pk = dst.chunks[dst.meta.primary_key]
        if fk.dictionary is None or pk.dictionary is None:
            raise StoreError(
                f"link {link.name}: key columns must have identifier type "
                f"(set_stype before building)")
        # dictionary-code translation: fk code -> dst row index
        pk_value_to_row = {}
        for row, code in enumerate(pk.values):
            pk_value_to_row[pk.dictionary[code]] = row
        code_map = np.full(max(len(fk.dictionary), 1), -1, dtype=np.int64)
        for code, value in enumerate(fk.dictionary):
            code_map[code] = pk_value_to_row.get(value, -1)
        parent = np.where(fk.nulls, -1, code_map[np.maximum(fk.values, 0)])
        n_dangle = int(((parent == -1) & ~fk.nulls).sum())
        dangling[link.name] = n_dangle

        n_src, n_dst = src.row_count, dst.row_count
        has = parent >= 0
        child_ids = np.nonzero(has)[0].astype(np.int64)
        parents = parent[has]

        # child -> parent (one neighbor per linked row)
        fwd_counts = np.zeros(n_src, dtype=np.int64)
        fwd_counts[child_ids] = 1
        fwd_off = np.concatenate([[0], np.cumsum(fwd_counts)])
        fwd_nbr = parents.astype(np.int32)
        fwd_times = dst.times[parents]
        fname = fkey_edge_name(link)
        rname = pkey_edge_name(link)
        fwd_inf = fwd_off[:-1].copy()
        if len(child_ids):
            is_inf = np.zeros(n_src, dtype=np.int64)
            is_inf[child_ids] = (dst.times[parents] == NEG_INF).astype(np.int64)
            fwd_inf = fwd_off[:-1] + is_inf
        edges[fname] = EdgeData(
            EdgeType(fname, link.src_table, link.dst_table, link.name, rname),
            fwd_off, fwd_nbr, fwd_times, inf_end=fwd_inf)

        # parent -> children, sorted by (time, id) within each parent
        child_times = src.times[child_ids]
        order = np.lexsort((child_ids, child_times, parents))
        sorted_parents = parents[order]
        rev_counts = np.bincount(sorted_parents, minlength=n_dst).astype(np.int64)
        rev_off = np.concatenate([[0], np.cumsum(rev_counts)])
        rev_nbr = child_ids[order].astype(np.int32)
        rev_times = child_times[order]
        inf_counts = np.bincount(sorted_parents[rev_times == NEG_INF],
                                 minlength=n_dst).astype(np.int64)
        edges[rname] = EdgeData(
            EdgeType(rname, link.dst_table, link.src_table, link.name, fname),
            rev_off, rev_nbr, rev_times, inf_end=rev_off[:-1] + inf_counts)
    index = AdjacencyIndex(edges=edges, dangling=dangling)
    graph.adjacency = index
    return index


# ---------------------------------------------------------------------------
# binary store format

MAGIC = b"RLCT"
VERSION = 1
_ALIGN = 64
_HEADER = struct.Struct("<4sIIQQ")  # magic, version, flags, toc_offset, toc_length


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def save_store(graph: TemporalGraph, path) -> None:
    if graph.adjacency is None:
        build_adjacency(graph)
    sections: list[tuple[str, bytes, str, list[int]]] = []

    def add_bytes(name: str, raw: bytes):
        sections.append((name, raw, "bytes", [len(raw)]))

    def add_array(name: str, arr: np.ndarray):
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        sections.append((name, arr.tobytes(), arr.dtype.str, list(arr.shape)))

    add_bytes("schema", graph.schema.to_json().encode())
    meta = {
        "row_counts": {t: graph.tables[t].row_count for t in graph.tables},
        "dangling_fkeys": graph.adjacency.dangling,
        "edge_types": sorted(graph.adjacency.edges),
    }
    add_bytes("meta", _canonical_json(meta))

    for tm in graph.schema.tables:
        td = graph.tables[tm.name]
        add_array(f"tbl/{tm.name}/times", td.times)
        add_array(f"tbl/{tm.name}/order", td.time_order)
        for cname in tm.column_names:
            chunk = td.chunks[cname]
            base = f"tbl/{tm.name}/col/{cname}"
            add_array(f"{base}/values", chunk.values)
            add_array(f"{base}/nulls", np.packbits(chunk.nulls.astype(np.uint8)))
            if chunk.dictionary is not None:
                add_bytes(f"{base}/dict", _canonical_json(chunk.dictionary))

    for ename in sorted(graph.adjacency.edges):
        e = graph.adjacency.edges[ename]
        add_array(f"adj/{ename}/offsets", e.offsets)
        add_array(f"adj/{ename}/nbr", e.nbr)
        add_array(f"adj/{ename}/times", e.nbr_times)
        add_array(f"adj/{ename}/infend", e.inf_end)

    toc = []
    offset = _HEADER.size
    payload = []
    for name, raw, kind, shape in sections:
        pad = (-offset) % _ALIGN
        offset += pad
        payload.append((pad, raw))
        toc.append({"name": name, "offset": offset, "length": len(raw),
                    "kind": kind, "shape": shape})
        offset += len(raw)
    toc_bytes = _canonical_json(toc)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, 0, offset, len(toc_bytes)))
        for pad, raw in payload:
            f.write(b"\0" * pad)
            f.write(raw)
        f.write(toc_bytes)


def load_store(path) -> TemporalGraph:
    """Map the file and reconstruct the graph without a full parse: the header
    locates the offset table, arrays are views into the mapping."""
    f = open(path, "rb")
    mm = mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ)
    size = len(mm)
    if size < _HEADER.size:
        raise StoreError(f"{path}: file too small for header")
    magic, version, _, toc_offset, toc_length = _HEADER.unpack(mm[:_HEADER.size])
    if magic != MAGIC:
        raise StoreError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise StoreError(f"{path}: unsupported version {version}, expected {VERSION}")
    if toc_offset + toc_length > size:
        raise StoreError(f"{path}: truncated offset table")
    toc = json.loads(mm[toc_offset:toc_offset + toc_length].decode())

    views: dict[str, np.ndarray] = {}
    blobs: dict[str, bytes] = {}
    for entry in toc:
        start, length = entry["offset"], entry["length"]
        if start + length > size:
            raise StoreError(f"{path}: truncated section {entry['name']!r}")
        if entry["kind"] == "bytes":
            blobs[entry["name"]] = mm[start:start + length]
        else:
            arr = np.frombuffer(mm, dtype=np.dtype(entry["kind"]),
                                count=int(np.prod(entry["shape"], dtype=np.int64)),
                                offset=start).reshape(entry["shape"])
            views[entry["name"]] = arr

    schema = Schema.from_json(blobs["schema"].decode())
    meta = json.loads(blobs["meta"].decode())
    tables: dict[str, TableData] = {}
    for tm in schema.tables:
        times = views[f"tbl/{tm.name}/times"]
        order = views[f"tbl/{tm.name}/order"]
        chunks = {}
        for cname in tm.column_names:
            base = f"tbl/{tm.name}/col/{cname}"
            values = views[f"{base}/values"]
            packed = views[f"{base}/nulls"]
            nulls = np.unpackbits(packed, count=len(values)).astype(bool)
            dictionary = None
            if f"{base}/dict" in blobs:
                dictionary = json.loads(blobs[f"{base}/dict"].decode())
            stype = tm.column(cname).stype
            chunks[cname] = ColumnChunk(stype, values, nulls, dictionary)
        tables[tm.name] = TableData(meta=tm, chunks=chunks, times=times,
                                    time_order=order, sorted_times=times[order])
    graph = TemporalGraph(schema, tables)
    edges = {}
    for ename in meta["edge_types"]:
        # edge names encode link and direction; rebuild the descriptors
        if "<-" in ename:
            dst_part, rest = ename.split("<-")
            src_tbl = dst_part
            nbr_tbl, fkey = rest.split(".")[0], rest.split(".")[1]
            link_name = f"{rest}->{dst_part}"
            reverse = f"{rest}->{dst_part}"
        else:
            left, dst_tbl = ename.split("->")
            src_tbl = left.split(".")[0]
            nbr_tbl = dst_tbl
            link_name = ename
            reverse = f"{dst_tbl}<-{left}"
        edges[ename] = EdgeData(
            EdgeType(ename, src_tbl, nbr_tbl, link_name, reverse),
            views[f"adj/{ename}/offsets"], views[f"adj/{ename}/nbr"],
            views[f"adj/{ename}/times"], views[f"adj/{ename}/infend"])
    graph.adjacency = AdjacencyIndex(edges=edges, dangling=meta["dangling_fkeys"])
    graph._mmap = mm  # keep the mapping alive
    return graph


# ---------------------------------------------------------------------------
# throughput smoke benchmark


def bench_lookups(graph: TemporalGraph, edge_type: str, n_queries: int, k: int = 8,
                  seed: int = 0) -> dict:
    """Measure scalar calls/sec and batched lookups/sec on one edge type."""
    e = graph.adjacency.edge(edge_type)
    n_src = len(e.offsets) - 1
    rng = np.random.default_rng(seed)
    nodes = rng.integers(0, n_src, size=n_queries)
    lo, hi = graph.min_event_time(), graph.max_event_time()
    ts = rng.integers(lo, hi + 1, size=n_queries)

    n_scalar = min(n_queries, 20_000)
    t0 = _time.perf_counter()
    for i in range(n_scalar):
        graph.neighbors_before(edge_type, int(nodes[i]), int(ts[i]), k)
    scalar_rate = n_scalar / (_time.perf_counter() - t0)

    t0 = _time.perf_counter()
    graph.neighbors_before_many(edge_type, nodes, ts, k)
    batch_rate = n_queries / (_time.perf_counter() - t0)
    return {"edge_type": edge_type, "queries": n_queries, "k": k,
            "scalar_calls_per_sec": scalar_rate, "batched_lookups_per_sec": batch_rate}
