"""Model configuration and the run_mode presets."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, asdict


def bucket(text: str, n: int) -> int:
    """Stable hash bucket (crc32); identical across processes and runs."""
    return zlib.crc32(text.encode()) % n


@dataclass
class ModelConfig:
    d: int = 64
    heads: int = 4
    table_blocks: int = 2
    graph_blocks: int = 2
    cross_blocks: int = 2
    inducing_points: int = 4
    value_buckets: int = 1024
    class_buckets: int = 4096
    name_buckets: int = 512
    edge_buckets: int = 64
    max_hops: int = 8
    max_text_tokens: int = 8
    flat_class_threshold: int = 128
    context_budget: int = 1000
    dtype: str = "f8"             # f8 for tests/gradchecks, f4 for fast training
    ffn_mult: int = 2

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"embed dim {self.d} not divisible by {self.heads} heads")
        if min(self.table_blocks, self.graph_blocks, self.cross_blocks) < 1:
            raise ValueError("block counts must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)


RUN_MODES = {
    "fast": dict(d=64, table_blocks=2, graph_blocks=2, cross_blocks=2,
                 context_budget=1000),
    "normal": dict(d=128, table_blocks=3, graph_blocks=3, cross_blocks=3,
                   context_budget=4000),
    "best": dict(d=128, table_blocks=4, graph_blocks=4, cross_blocks=4,
                 context_budget=10000),
}


def config_for_run_mode(mode: str, **overrides) -> ModelConfig:
    if mode not in RUN_MODES:
        raise ValueError(f"unknown run_mode {mode!r}; choose from {sorted(RUN_MODES)}")
    kw = dict(RUN_MODES[mode])
    kw.update(overrides)
    return ModelConfig(**kw)
