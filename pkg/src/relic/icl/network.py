"""Hierarchical-attention in-context network over relational subgraphs.

Three stages share one embedding space: a table encoder (column attention
alternating with induced-set row attention, task targets injected as an extra
token per row), graph attention restricted to sampled edges plus a global
token (structure embeddings added to keys and values), and cross-sample
attention where prediction rows attend over labeled context rows. Heads are
permutation-equivariant by construction: class logits are dot products with
hashed class-value embeddings, and regression is read out in robust-normalized
target space.
"""

from __future__ import annotations

import zlib

import numpy as np

from .. import autodiff as ad
from .config import ModelConfig, bucket
from .features import (FeatureBatch, TKIND_CLASS, TKIND_MASK, TKIND_REG)

TARGET_NAME_BUCKET = "col:__target__"


def _init_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


class RelationalICL:
    """Parameters plus the forward pass; training lives in icl.training."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        dtype = np.float64 if config.dtype == "f8" else np.float32
        self.params = ad.ParamStore(dtype=dtype)
        self._init_params()

    # ------------------------------------------------------------- params

    def _w(self, name: str, shape, scale: float = 0.02):
        rng = _init_rng(self.seed, name)
        return self.params.param(name, rng.normal(scale=scale, size=shape))

    def _zeros(self, name: str, shape):
        return self.params.param(name, np.zeros(shape))

    def _ones(self, name: str, shape):
        return self.params.param(name, np.ones(shape))

    def _attn_params(self, prefix: str):
        d = self.config.d
        for nm in ("wq", "wk", "wv", "wo"):
            self._w(f"{prefix}/{nm}", (d, d))

    def _ffn_params(self, prefix: str):
        d, f = self.config.d, self.config.d * self.config.ffn_mult
        self._w(f"{prefix}/w1", (d, f))
        self._zeros(f"{prefix}/b1", (f,))
        self._w(f"{prefix}/w2", (f, d))
        self._zeros(f"{prefix}/b2", (d,))

    def _ln_params(self, prefix: str):
        self._ones(f"{prefix}/g", (self.config.d,))
        self._zeros(f"{prefix}/b", (self.config.d,))

    def _init_params(self):
        c = self.config
        d = c.d
        self._w("emb/value", (c.value_buckets, d))
        self._w("emb/class", (c.class_buckets, d))
        self._w("emb/name", (c.name_buckets, d))
        self._w("emb/edge", (c.edge_buckets + 2, d))   # +root, +global slots
        self._w("emb/hop", (c.max_hops + 2, d))        # +global slot
        self._w("emb/null", (1, d))
        self._w("emb/mask", (1, d))
        self._w("graph/global", (1, d))
        for nm, k in (("num", 3), ("time", 6), ("tgt", 3), ("relt", 3)):
            self._w(f"enc/{nm}/w", (k, d), scale=0.2)
            self._zeros(f"enc/{nm}/b", (d,))
        for i in range(c.table_blocks):
            self._attn_params(f"tab{i}/col")
            self._w(f"tab{i}/ind", (c.inducing_points, d), scale=0.5)
            self._attn_params(f"tab{i}/row1")
            self._attn_params(f"tab{i}/row2")
            self._ffn_params(f"tab{i}/ffn")
            for ln in ("ln1", "ln2", "ln3"):
                self._ln_params(f"tab{i}/{ln}")
        self._w("pool/q", (1, d), scale=0.5)
        self._attn_params("pool")
        self._ln_params("pool/ln")
        for j in range(c.graph_blocks):
            self._attn_params(f"gph{j}/attn")
            self._ffn_params(f"gph{j}/ffn")
            self._ln_params(f"gph{j}/ln1")
            self._ln_params(f"gph{j}/ln2")
        self._ln_params("gent/ln")
        for k2 in range(c.cross_blocks):
            self._attn_params(f"crs{k2}/attn")
            self._ffn_params(f"crs{k2}/ffn")
            self._ln_params(f"crs{k2}/ln1")
            self._ln_params(f"crs{k2}/lnc")
            self._ln_params(f"crs{k2}/ln2")
        self._ln_params("final/ln")
        self._w("head/wout", (d, d))
        self._w("head/reg/w", (d, 1))
        self._zeros("head/reg/b", (1,))

    # ------------------------------------------------------------ helpers

    def _ln(self, prefix: str, x: ad.Tensor) -> ad.Tensor:
        return ad.layer_norm(x, self.params[f"{prefix}/g"], self.params[f"{prefix}/b"])

    def _ffn(self, prefix: str, x: ad.Tensor) -> ad.Tensor:
        p = self.params
        h = ad.gelu(ad.add(ad.matmul(x, p[f"{prefix}/w1"]), p[f"{prefix}/b1"]))
        return ad.add(ad.matmul(h, p[f"{prefix}/w2"]), p[f"{prefix}/b2"])

    def _mha(self, prefix: str, q_in: ad.Tensor, kv_in: ad.Tensor, mask=None,
             kv_add: ad.Tensor | None = None) -> ad.Tensor:
        """Multi-head attention over 3-axis (groups, positions, d) tensors."""
        p = self.params
        heads = self.config.heads
        d = self.config.d
        dh = d // heads
        kv = kv_in if kv_add is None else ad.add(kv_in, kv_add)
        q = ad.matmul(q_in, p[f"{prefix}/wq"])
        k = ad.matmul(kv, p[f"{prefix}/wk"])
        v = ad.matmul(kv, p[f"{prefix}/wv"])
        G, nq = q.shape[0], q.shape[1]
        nk = k.shape[1]
        q = ad.swapaxes(ad.reshape(q, (G, nq, heads, dh)), 1, 2)
        k = ad.swapaxes(ad.reshape(k, (G, nk, heads, dh)), 1, 2)
        v = ad.swapaxes(ad.reshape(v, (G, nk, heads, dh)), 1, 2)
        scores = ad.scale(ad.matmul(q, ad.swapaxes(k, 2, 3)), dh ** -0.5)
        if mask is not None:
            allow = np.broadcast_to(np.asarray(mask, dtype=bool)[:, None, :, :],
                                    scores.shape)
            scores = ad.masked_fill(scores, ~allow, -1e30)
        w = ad.softmax(scores, axis=-1)
        out = ad.matmul(w, v)
        out = ad.reshape(ad.swapaxes(out, 1, 2), (G, nq, d))
        return ad.matmul(out, p[f"{prefix}/wo"])

    def _select(self, mask: np.ndarray, a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
        """Rowwise select: mask (R,) -> mask*a + (1-mask)*b over (R, d)."""
        m = ad.expand(ad.Tensor(mask.astype(a.dtype)[:, None]), a.shape)
        return ad.add(ad.mul(m, a), ad.mul(ad.shift(ad.scale(m, -1.0), 1.0), b))

    # ----------------------------------------------------------- encoding

    def _affine(self, prefix: str, feats: np.ndarray) -> ad.Tensor:
        p = self.params
        x = ad.Tensor(feats.astype(self.params.dtype))
        return ad.add(ad.matmul(x, p[f"{prefix}/w"]), p[f"{prefix}/b"])

    def _column_token(self, col, R: int) -> ad.Tensor:
        p = self.params
        if col.kind == "num":
            base = self._affine("enc/num", col.num)
        elif col.kind == "time":
            base = self._affine("enc/time", col.time)
        elif col.kind == "cat":
            base = ad.embedding_lookup(p["emb/value"], col.cat)
        else:  # text: weighted mean of token-bucket embeddings
            emb = ad.embedding_lookup(p["emb/value"], col.text_idx)      # (R, Tm, d)
            w = ad.expand(ad.Tensor(col.text_w[:, :, None].astype(self.params.dtype)),
                          emb.shape)
            base = ad.sum_(ad.mul(emb, w), axis=1)                       # (R, d)
        name = ad.embedding_lookup(p["emb/name"],
                                   np.full(R, col.name_bucket, dtype=np.int64))
        null_tok = ad.add(ad.embedding_lookup(p["emb/null"], np.zeros(R, dtype=np.int64)),
                          name)
        tok = ad.add(base, name)
        if col.null.any():
            tok = self._select(col.null, null_tok, tok)
        return tok

    def _target_token(self, tf) -> ad.Tensor:
        p = self.params
        R = tf.n_rows
        cls = ad.embedding_lookup(p["emb/class"], tf.tclass)
        reg = self._affine("enc/tgt", tf.treg)
        msk = ad.embedding_lookup(p["emb/mask"], np.zeros(R, dtype=np.int64))
        tok = self._select(tf.tkind == TKIND_CLASS, cls,
                           self._select(tf.tkind == TKIND_REG, reg, msk))
        name = ad.embedding_lookup(
            p["emb/name"], np.full(R, bucket(TARGET_NAME_BUCKET,
                                             self.config.name_buckets), dtype=np.int64))
        return ad.add(tok, name)

    def encode_tables(self, batch: FeatureBatch) -> ad.Tensor:
        """Row embeddings for every row instance, concatenated over tables in
        schema order: (R_total, d)."""
        outputs = []
        for tf in batch.tables:
            R = tf.n_rows
            toks = [ad.reshape(self._column_token(c, R), (R, 1, self.config.d))
                    for c in tf.columns]
            toks.append(ad.reshape(self._target_token(tf), (R, 1, self.config.d)))
            x = ad.concat(toks, axis=1) if len(toks) > 1 else toks[0]
            for i in range(self.config.table_blocks):
                ln = self._ln(f"tab{i}/ln1", x)
                x = ad.add(x, self._mha(f"tab{i}/col", ln, ln))
                xt = ad.swapaxes(x, 0, 1)                     # (C+1, R, d)
                lnt = self._ln(f"tab{i}/ln2", xt)
                ind = ad.expand(self.params[f"tab{i}/ind"],
                                (xt.shape[0],) + self.params[f"tab{i}/ind"].shape)
                summary = self._mha(f"tab{i}/row1", ind, lnt)  # (C+1, m, d)
                upd = self._mha(f"tab{i}/row2", lnt, summary)  # (C+1, R, d)
                x = ad.add(x, ad.swapaxes(upd, 0, 1))
                x = ad.add(x, self._ffn(f"tab{i}/ffn", self._ln(f"tab{i}/ln3", x)))
            q = ad.expand(self.params["pool/q"], (R, 1, self.config.d))
            pooled = self._mha("pool", q, self._ln("pool/ln", x))
            outputs.append(ad.reshape(pooled, (R, self.config.d)))
        return ad.concat(outputs, axis=0) if len(outputs) > 1 else outputs[0]

    def _struct_arrays(self, batch: FeatureBatch):
        hop = np.concatenate([tf.hop for tf in batch.tables])
        edge = np.concatenate([tf.edge_bucket for tf in batch.tables])
        delta = np.concatenate([tf.delta_feats for tf in batch.tables], axis=0)
        # replace the sampler's -1 root marker slot with the dedicated index
        return hop, edge, delta

    def encode_graphs(self, rows: ad.Tensor, batch: FeatureBatch,
                      chunk_size: int = 256) -> ad.Tensor:
        """Per-example entity states: graph attention over sampled edges plus a
        global token; returns (B, d) root states after the final block."""
        gs = batch.graph_stage
        c = self.config
        B = batch.n_examples
        N = gs.n_slots
        hop_c, edge_c, delta_c = self._struct_arrays(batch)
        pad_row = ad.Tensor(np.zeros((1, c.d), dtype=self.params.dtype))
        rows_pad = ad.concat([pad_row, rows], axis=0)
        hop_pad = np.concatenate([[0], hop_c])
        edge_pad = np.concatenate([[0], edge_c])
        delta_pad = np.concatenate([np.zeros((1, 3)), delta_c], axis=0)

        outs = []
        for b0 in range(0, B, chunk_size):
            b1 = min(B, b0 + chunk_size)
            nf = gs.node_flat[b0:b1] + 1
            bc = b1 - b0
            x = ad.gather0(rows_pad, nf)                         # (bc, N, d)
            g = ad.expand(self.params["graph/global"], (bc, 1, c.d))
            x = ad.concat([x, g], axis=1)                        # (bc, N+1, d)

            hop_idx = np.concatenate(
                [hop_pad[nf], np.full((bc, 1), c.max_hops + 1)], axis=1).astype(np.int64)
            edge_idx = np.concatenate(
                [edge_pad[nf], np.full((bc, 1), c.edge_buckets + 1)], axis=1
            ).astype(np.int64)
            dfeat = np.concatenate([delta_pad[nf], np.zeros((bc, 1, 3))], axis=1)
            struct = ad.add(ad.add(ad.embedding_lookup(self.params["emb/hop"], hop_idx),
                                   ad.embedding_lookup(self.params["emb/edge"], edge_idx)),
                            self._affine("enc/relt", dfeat))
            mask = gs.allow[b0:b1]
            for j in range(c.graph_blocks):
                ln = self._ln(f"gph{j}/ln1", x)
                x = ad.add(x, self._mha(f"gph{j}/attn", ln, ln, mask=mask,
                                        kv_add=struct))
                x = ad.add(x, self._ffn(f"gph{j}/ffn", self._ln(f"gph{j}/ln2", x)))
            flat = ad.reshape(x, (bc * (N + 1), c.d))
            idx = np.arange(bc) * (N + 1) + gs.root_pos[b0:b1]
            outs.append(ad.gather0(flat, idx.astype(np.int64)))
        states = ad.concat(outs, axis=0) if len(outs) > 1 else outs[0]
        return self._ln("gent/ln", states)

    def cross_attend(self, states: ad.Tensor, batch: FeatureBatch,
                     ctx_target: ad.Tensor) -> ad.Tensor:
        """Prediction rows attend over target-adorned context rows; context
        tokens are never updated and never see prediction rows."""
        if batch.n_context == 0:
            raise ValueError("cross-sample attention needs at least one context example")
        c = self.config
        nc = batch.n_context
        idx_ctx = np.arange(nc, dtype=np.int64)
        idx_pred = np.arange(nc, batch.n_examples, dtype=np.int64)
        ctx = ad.gather0(states, idx_ctx)
        pred = ad.gather0(states, idx_pred)
        ctx_tok = ad.reshape(ad.add(ctx, ctx_target), (1, nc, c.d))
        x = ad.reshape(pred, (1, len(idx_pred), c.d))
        for k2 in range(c.cross_blocks):
            x = ad.add(x, self._mha(f"crs{k2}/attn", self._ln(f"crs{k2}/ln1", x),
                                    self._ln(f"crs{k2}/lnc", ctx_tok)))
            x = ad.add(x, self._ffn(f"crs{k2}/ffn", self._ln(f"crs{k2}/ln2", x)))
        x = ad.reshape(x, (len(idx_pred), c.d))
        return self._ln("final/ln", x)

    def context_target_embeddings(self, batch: FeatureBatch, ctx_class: np.ndarray,
                                  ctx_reg: np.ndarray) -> ad.Tensor:
        if batch.ctx_is_class:
            return ad.embedding_lookup(self.params["emb/class"], ctx_class)
        return self._affine("enc/tgt", ctx_reg)

    # -------------------------------------------------------------- heads

    def class_logits(self, z: ad.Tensor, class_buckets: np.ndarray) -> ad.Tensor:
        u = ad.matmul(z, self.params["head/wout"])
        e = ad.embedding_lookup(self.params["emb/class"],
                                class_buckets.astype(np.int64))
        return ad.scale(ad.matmul(u, ad.swapaxes(e, 0, 1)), self.config.d ** -0.5)

    def regression_output(self, z: ad.Tensor) -> ad.Tensor:
        out = ad.add(ad.matmul(z, self.params["head/reg/w"]), self.params["head/reg/b"])
        return ad.reshape(out, (z.shape[0],))

    # ------------------------------------------------------------ forward

    def forward(self, batch: FeatureBatch, ctx_class: np.ndarray | None = None,
                ctx_reg: np.ndarray | None = None,
                class_buckets: np.ndarray | None = None,
                graph_chunk: int = 256) -> dict:
        rows = self.encode_tables(batch)
        states = self.encode_graphs(rows, batch, chunk_size=graph_chunk)
        tgt = self.context_target_embeddings(batch, ctx_class, ctx_reg)
        z = self.cross_attend(states, batch, tgt)
        out = {"embeddings": z}
        if batch.ctx_is_class:
            out["logits"] = self.class_logits(z, class_buckets)
        else:
            out["reg_norm"] = self.regression_output(z)
        return out


# ---------------------------------------------------------------------------
# hierarchical classification head


def gather_columns(x: ad.Tensor, idx: np.ndarray) -> ad.Tensor:
    return ad.swapaxes(ad.gather0(ad.swapaxes(x, 0, 1), idx.astype(np.int64)), 0, 1)


def bucket_classes(classes: list[str], freq: np.ndarray) -> list[np.ndarray]:
    """Frequency-descending buckets of ~sqrt(K) groups; ties break on the class
    value so bucketing is stable under dictionary permutations."""
    K = len(classes)
    order = sorted(range(K), key=lambda ci: (-float(freq[ci]), str(classes[ci])))
    n_buckets = int(np.ceil(np.sqrt(K)))
    size = int(np.ceil(K / n_buckets))
    return [np.asarray(order[i:i + size], dtype=np.int64)
            for i in range(0, K, size)]


def hierarchical_log_probs(model: RelationalICL, z: ad.Tensor, classes: list[str],
                           class_buckets: np.ndarray, freq: np.ndarray,
                           force: bool = False) -> ad.Tensor:
    """Two-stage bucket-then-class log distribution; collapses to the flat head
    when the class count is at or below the threshold (unless forced)."""
    logits = model.class_logits(z, class_buckets)
    K = len(classes)
    if K <= model.config.flat_class_threshold and not force:
        return ad.log_softmax(logits, axis=-1)
    buckets = bucket_classes(classes, freq)
    e = ad.embedding_lookup(model.params["emb/class"], class_buckets.astype(np.int64))
    assign = np.zeros((K, len(buckets)))
    for bi, members in enumerate(buckets):
        assign[members, bi] = 1.0 / len(members)
    eb = ad.matmul(ad.Tensor(assign.T.astype(model.params.dtype)), e)   # (B, d)
    u = ad.matmul(z, model.params["head/wout"])
    logits1 = ad.scale(ad.matmul(u, ad.swapaxes(eb, 0, 1)), model.config.d ** -0.5)
    logp1 = ad.log_softmax(logits1, axis=-1)                            # (P, B)

    parts = []
    col_order = []
    bucket_col = []
    for bi, members in enumerate(buckets):
        sub = gather_columns(logits, members)
        parts.append(ad.log_softmax(sub, axis=-1))
        col_order.extend(members.tolist())
        bucket_col.extend([bi] * len(members))
    logp2 = ad.concat(parts, axis=1)                                    # permuted cols
    logp1_cols = gather_columns(logp1, np.asarray(bucket_col))
    combined = ad.add(logp2, logp1_cols)
    inverse = np.empty(K, dtype=np.int64)
    inverse[np.asarray(col_order)] = np.arange(K)
    return gather_columns(combined, inverse)
