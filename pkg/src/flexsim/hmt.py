"""Segmented long-context processing with a recurrent memory queue.

Instead of attending over an entire long prompt, the input splits into
fixed-size segments processed one at a time.  Each segment first produces a
summarization embedding from its leading half plus a probe token; that
embedding queries a bounded queue of past segment memories (scaled dot
product, softmax-weighted blend) to retrieve a single context vector.  The
segment is then re-processed with the retrieved vector and a short slice of
the previous segment prepended, and the resulting final hidden state is
pushed into the queue, evicting the oldest entry once the queue is full.

Every forward pass runs against a fresh KV cache, so attention cost is
bounded by the augmented segment length regardless of total input length;
all long-range information flows through the memory queue.  The companion
cost helper prices one segment on the analytical stage laws: the two prompt
passes at their respective lengths plus the memory-attention plug-in term.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .config import HmtConfig, ModelSpec, PrefillConfig, validate_hmt_config
from .kernels import AttnStats, ToyModel, softmax_row
from .perf import LatencyEstimate, memory_attention_cycles, prefill_stage_latency

__all__ = [
    "HmtConfig",
    "MemoryQueue",
    "SegmentRecord",
    "HmtResult",
    "split_segments",
    "summary_probe",
    "summarize_segment",
    "retrieve_memory",
    "process_segment",
    "run_pipeline",
    "hmt_segment_cost",
]


class MemoryQueue:
    """Bounded FIFO of memory embeddings; pushing past capacity evicts the oldest."""

    def __init__(self, maxlen: int, d_h: int):
        if maxlen < 1 or d_h < 1:
            raise ValueError("maxlen and d_h must be >= 1")
        self.d_h = d_h
        self._q: deque[np.ndarray] = deque(maxlen=maxlen)

    @property
    def maxlen(self) -> int:
        return self._q.maxlen or 0

    def __len__(self) -> int:
        return len(self._q)

    def push(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.d_h,):
            raise ValueError(f"memory must have shape ({self.d_h},), got {vec.shape}")
        self._q.append(vec.copy())

    def as_matrix(self) -> np.ndarray:
        """Oldest-first [len, d_h] snapshot (empty -> [0, d_h])."""
        if not self._q:
            return np.zeros((0, self.d_h))
        return np.stack(list(self._q))


def split_segments(token_ids: list[int], segment_len: int) -> list[list[int]]:
    """Fixed-size chunks in order; the final chunk may be shorter."""
    if segment_len < 1:
        raise ValueError(f"segment_len must be >= 1, got {segment_len}")
    if not token_ids:
        raise ValueError("token_ids must be non-empty")
    return [list(token_ids[i : i + segment_len]) for i in range(0, len(token_ids), segment_len)]


def summary_probe(toy: ToyModel) -> np.ndarray:
    """Deterministic probe embedding appended to every summarization prompt."""
    return toy.embedding.mean(axis=0)


def summarize_segment(
    toy: ToyModel,
    segment_ids: list[int],
    summary_half: int,
    stats: AttnStats | None = None,
) -> np.ndarray:
    """Summarization embedding: leading tokens plus the probe, last hidden state."""
    if summary_half < 0:
        raise ValueError("summary_half must be >= 0")
    head = segment_ids[: summary_half or 1]
    embs = np.concatenate([
        toy.embedding[np.asarray(head, dtype=np.int64)],
        summary_probe(toy)[None, :],
    ])
    hidden = toy.forward_embeddings(embs, cache=toy.new_cache(embs.shape[0]), stats=stats)
    return hidden[-1]


def retrieve_memory(query: np.ndarray, queue: MemoryQueue) -> np.ndarray:
    """Softmax-weighted blend of queued memories; zero vector when empty."""
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (queue.d_h,):
        raise ValueError(f"query must have shape ({queue.d_h},), got {query.shape}")
    mem = queue.as_matrix()
    if mem.shape[0] == 0:
        return np.zeros(queue.d_h)
    scores = mem @ query / np.sqrt(queue.d_h)
    weights = softmax_row(scores, scores.shape[-1])
    return weights @ mem


def process_segment(
    toy: ToyModel,
    segment_ids: list[int],
    retrieved: np.ndarray,
    prev_slice_ids: list[int],
    stats: AttnStats | None = None,
) -> np.ndarray:
    """Run the augmented prompt [retrieved | previous slice | segment]; last hidden."""
    rows = [np.asarray(retrieved, dtype=np.float64)[None, :]]
    if prev_slice_ids:
        rows.append(toy.embedding[np.asarray(prev_slice_ids, dtype=np.int64)])
    rows.append(toy.embedding[np.asarray(segment_ids, dtype=np.int64)])
    embs = np.concatenate(rows)
    hidden = toy.forward_embeddings(embs, cache=toy.new_cache(embs.shape[0]), stats=stats)
    return hidden[-1]


@dataclass(frozen=True)
class SegmentRecord:
    index: int
    segment_len: int
    augmented_len: int
    queue_len_before: int
    retrieved_norm: float
    memory: np.ndarray


@dataclass(frozen=True)
class HmtResult:
    segments: tuple[SegmentRecord, ...]
    queue: MemoryQueue
    stats: AttnStats

    @property
    def max_attended_len(self) -> int:
        return self.stats.max_cache_len


def run_pipeline(toy: ToyModel, token_ids: list[int], cfg: HmtConfig) -> HmtResult:
    """Process a long input segment by segment through the memory recurrence.

    The attention statistics in the result demonstrate that no forward pass
    ever attends beyond one augmented segment, which is the property that
    keeps per-segment cost flat while the input grows.
    """
    validate_hmt_config(cfg)
    queue = MemoryQueue(cfg.memory_queue_len, toy.model.d_h)
    stats = AttnStats()
    records: list[SegmentRecord] = []
    history: list[int] = []  # short-term slice may span several past segments
    for idx, segment in enumerate(split_segments(token_ids, cfg.segment_len)):
        query = summarize_segment(toy, segment, cfg.summary_half, stats=stats)
        queue_len_before = len(queue)
        retrieved = retrieve_memory(query, queue)
        prev_slice = history[-cfg.short_term_len :] if cfg.short_term_len else []
        memory = process_segment(toy, segment, retrieved, prev_slice, stats=stats)
        queue.push(memory)
        records.append(
            SegmentRecord(
                index=idx,
                segment_len=len(segment),
                augmented_len=1 + len(prev_slice) + len(segment),
                queue_len_before=queue_len_before,
                retrieved_norm=float(np.linalg.norm(retrieved)),
                memory=memory,
            )
        )
        history.extend(segment)
    return HmtResult(segments=tuple(records), queue=queue, stats=stats)


def hmt_segment_cost(
    model: ModelSpec,
    prefill_cfg: PrefillConfig,
    cfg: HmtConfig,
    freq_hz: int | None = None,
    queue_len: int | None = None,
) -> LatencyEstimate:
    """Analytical cost of one steady-state segment.

    Breakdown components: the summarization prompt pass (leading half plus
    probe token), the augmented prompt pass (retrieved vector, short-term
    slice, segment), and the memory-attention plug-in over the queue.
    """
    validate_hmt_config(cfg)
    q_len = cfg.memory_queue_len if queue_len is None else queue_len
    if q_len < 0:
        raise ValueError("queue_len must be >= 0")
    summary_len = (cfg.summary_half or 1) + 1
    augmented_len = 1 + cfg.short_term_len + cfg.segment_len
    summary = prefill_stage_latency(model, prefill_cfg, summary_len).cycles
    augmented = prefill_stage_latency(model, prefill_cfg, augmented_len).cycles
    memory = memory_attention_cycles(model.d_h, q_len, cfg.wp_mem_attn)
    return LatencyEstimate(
        cycles=summary + augmented + memory,
        freq_hz=freq_hz,
        breakdown={
            "summary_prompt": summary,
            "augmented_prompt": augmented,
            "memory_attention": memory,
        },
        binding_terms=(),
    )
