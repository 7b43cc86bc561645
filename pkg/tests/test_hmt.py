"""Memory-augmented long-context tests: retrieval, pipeline records, plug-in cost."""

from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from flexsim.config import ConfigValidationError, HmtConfig
from flexsim.hmt import (
    MemoryQueue,
    hmt_segment_cost,
    process_segment,
    retrieve_memory,
    run_pipeline,
    split_segments,
    summarize_segment,
    summary_probe,
)
from flexsim.kernels import AttnStats
from flexsim.perf import memory_attention_cycles

F = Fraction


def _toy_cfg(**overrides) -> HmtConfig:
    base = dict(segment_len=8, memory_queue_len=4, summary_half=3,
                short_term_len=4, bp=1, wp_mem_attn=4)
    base.update(overrides)
    return HmtConfig(**base)


# --- memory queue -------------------------------------------------------------

def test_queue_starts_empty():
    q = MemoryQueue(3, 5)
    assert len(q) == 0
    assert q.as_matrix().shape == (0, 5)


def test_queue_evicts_oldest_first():
    q = MemoryQueue(2, 2)
    for i in range(4):
        q.push(np.full(2, float(i)))
    mat = q.as_matrix()
    assert mat.shape == (2, 2)
    assert mat[0, 0] == 2.0 and mat[1, 0] == 3.0  # oldest survivor first


def test_queue_snapshot_is_a_copy():
    q = MemoryQueue(2, 2)
    v = np.ones(2)
    q.push(v)
    v[:] = 99.0
    assert q.as_matrix()[0, 0] == 1.0


def test_queue_shape_checks():
    q = MemoryQueue(2, 3)
    with pytest.raises(ValueError):
        q.push(np.ones(4))
    with pytest.raises(ValueError):
        MemoryQueue(0, 3)


# --- retrieval ----------------------------------------------------------------

def test_retrieve_empty_queue_is_zero():
    q = MemoryQueue(4, 6)
    out = retrieve_memory(np.ones(6), q)
    assert np.array_equal(out, np.zeros(6))


def test_retrieve_singleton_returns_that_memory():
    q = MemoryQueue(4, 3)
    mem = np.array([2.0, -1.0, 0.5])
    q.push(mem)
    out = retrieve_memory(np.array([10.0, 0.0, -3.0]), q)
    assert np.allclose(out, mem)


def test_retrieve_identical_memories_returns_them():
    q = MemoryQueue(4, 3)
    mem = np.array([1.0, 2.0, 3.0])
    for _ in range(3):
        q.push(mem)
    assert np.allclose(retrieve_memory(np.array([0.4, -2.0, 1.0]), q), mem)


def test_retrieve_matches_dense_softmax_oracle():
    rng = np.random.default_rng(80)
    q = MemoryQueue(8, 5)
    mems = rng.normal(size=(3, 5))
    for m in mems:
        q.push(m)
    query = rng.normal(size=5)
    scores = mems @ query / np.sqrt(5)
    w = np.exp(scores - scores.max())
    w /= w.sum()
    assert np.allclose(retrieve_memory(query, q), w @ mems, rtol=1e-12)


def test_retrieve_favors_aligned_memory():
    q = MemoryQueue(4, 4)
    aligned = np.array([10.0, 0.0, 0.0, 0.0])
    other = np.array([0.0, 0.1, 0.0, 0.0])
    q.push(aligned)
    q.push(other)
    out = retrieve_memory(np.array([5.0, 0.0, 0.0, 0.0]), q)
    assert np.linalg.norm(out - aligned) < np.linalg.norm(out - other)


def test_retrieve_query_shape_check():
    with pytest.raises(ValueError):
        retrieve_memory(np.ones(2), MemoryQueue(2, 3))


# --- segmentation ----------------------------------------------------------------

def test_split_segments_counts():
    assert [len(s) for s in split_segments(list(range(2048)), 1024)] == [1024, 1024]
    assert [len(s) for s in split_segments(list(range(1000)), 1024)] == [1000]
    segs = split_segments(list(range(65536)), 1024)
    assert len(segs) == 64 and all(len(s) == 1024 for s in segs)
    assert split_segments([1, 2, 3], 2) == [[1, 2], [3]]
    with pytest.raises(ValueError):
        split_segments([], 4)
    with pytest.raises(ValueError):
        split_segments([1], 0)


# --- summarization ------------------------------------------------------------------

def test_summary_probe_is_embedding_mean(toy):
    assert np.allclose(summary_probe(toy), toy.embedding.mean(axis=0))


def test_summarize_segment_deterministic_and_shaped(toy):
    seg = [3, 1, 4, 1, 5, 9, 2, 6]
    a = summarize_segment(toy, seg, 3)
    b = summarize_segment(toy, seg, 3)
    assert np.array_equal(a, b)
    assert a.shape == (toy.model.d_h,)


def test_summarize_segment_matches_forward_oracle(toy):
    seg = [7, 8, 9, 10]
    summary_half = 2
    embs = np.concatenate([toy.embedding[np.array(seg[:summary_half])],
                           toy.embedding.mean(axis=0)[None, :]])
    hidden = toy.forward_embeddings(embs, cache=toy.new_cache(3))
    assert np.array_equal(summarize_segment(toy, seg, summary_half), hidden[-1])


def test_summarize_attends_only_to_prompt_head(toy):
    stats = AttnStats()
    summarize_segment(toy, list(range(40)), 5, stats=stats)
    assert stats.max_cache_len == 6  # 5 head tokens + probe


# --- the pipeline ----------------------------------------------------------------

def test_pipeline_first_segment_has_no_memory(toy):
    res = run_pipeline(toy, list(range(20)), _toy_cfg())
    first = res.segments[0]
    assert first.queue_len_before == 0
    assert first.retrieved_norm == 0.0
    assert first.augmented_len == 1 + len(res.segments[0].memory) * 0 + 8


def test_pipeline_records_and_queue_bound(toy):
    cfg = _toy_cfg(memory_queue_len=3)
    tokens = [i % 50 for i in range(12 * 8)]
    res = run_pipeline(toy, tokens, cfg)
    assert len(res.segments) == 12
    for rec in res.segments[1:]:
        assert rec.queue_len_before <= cfg.memory_queue_len
        assert rec.retrieved_norm > 0.0
        assert rec.augmented_len == 1 + cfg.short_term_len + rec.segment_len
    assert len(res.queue) == cfg.memory_queue_len
    assert res.segments[-1].queue_len_before == cfg.memory_queue_len


def test_pipeline_never_attends_past_one_augmented_segment(toy):
    cfg = _toy_cfg()
    res = run_pipeline(toy, [i % 50 for i in range(30 * cfg.segment_len)], cfg)
    assert res.max_attended_len == 1 + cfg.short_term_len + cfg.segment_len
    assert res.max_attended_len < 30 * cfg.segment_len


def test_pipeline_short_term_slice_spans_segments(toy):
    # short_term_len > one segment's worth of history must reach further back
    cfg = _toy_cfg(segment_len=4, short_term_len=4, summary_half=2)
    tokens = list(range(12))
    res = run_pipeline(toy, tokens, cfg)
    # third segment: history [0..7], slice is the last 4 of it
    third = res.segments[2]
    assert third.augmented_len == 1 + 4 + 4
    retrieved = retrieve_memory(
        summarize_segment(toy, tokens[8:], cfg.summary_half),
        res_queue_before_third(toy, tokens, cfg),
    )
    want = process_segment(toy, tokens[8:], retrieved, tokens[4:8])
    assert np.array_equal(third.memory, want)


def res_queue_before_third(toy, tokens, cfg):
    """Rebuild the queue state the pipeline saw before its third segment."""
    queue = MemoryQueue(cfg.memory_queue_len, toy.model.d_h)
    history: list[int] = []
    for seg_start in (0, 4):
        seg = tokens[seg_start : seg_start + 4]
        query = summarize_segment(toy, seg, cfg.summary_half)
        retrieved = retrieve_memory(query, queue)
        prev = history[-cfg.short_term_len:] if cfg.short_term_len else []
        queue.push(process_segment(toy, seg, retrieved, prev))
        history.extend(seg)
    return queue


def test_pipeline_partial_final_segment(toy):
    cfg = _toy_cfg()
    res = run_pipeline(toy, list(range(8 + 3)), cfg)
    assert res.segments[-1].segment_len == 3
    assert res.segments[-1].augmented_len == 1 + cfg.short_term_len + 3


def test_pipeline_rejects_invalid_config(toy):
    with pytest.raises(ConfigValidationError):
        run_pipeline(toy, list(range(16)), _toy_cfg(short_term_len=9))  # > segment_len


def test_pipeline_is_deterministic(toy):
    cfg = _toy_cfg()
    a = run_pipeline(toy, list(range(40)), cfg)
    b = run_pipeline(toy, list(range(40)), cfg)
    for ra, rb in zip(a.segments, b.segments):
        assert np.array_equal(ra.memory, rb.memory)


# --- analytical per-segment cost ----------------------------------------------------

def test_segment_cost_frozen_reference(llama, u280_prefill, u280_hmt):
    est = hmt_segment_cost(llama, u280_prefill, u280_hmt, freq_hz=290_000_000)
    secs = {k: float(v) / 290e6 for k, v in est.breakdown.items()}
    assert secs["summary_prompt"] == pytest.approx(0.772873, abs=5e-6)
    assert secs["augmented_prompt"] == pytest.approx(2.548523, abs=5e-6)
    assert secs["memory_attention"] == pytest.approx(0.000226, abs=5e-7)
    assert est.cycles == sum(est.breakdown.values())


def test_memory_attention_plugin_cost(llama, u280_hmt):
    cycles = memory_attention_cycles(llama.d_h, 64, u280_hmt.wp_mem_attn)
    assert cycles == F(2 * 64 * 2048, 4) == 65_536
    # 0.226 ms at 290 MHz, far under the published 8.44 ms measurement
    assert float(cycles) / 290e6 < 8.44e-3
    assert memory_attention_cycles(llama.d_h, 0, 4) == 0
    assert memory_attention_cycles(llama.d_h, 64, 8) == cycles / 2


def test_segment_cost_queue_override(llama, u280_prefill, u280_hmt):
    empty = hmt_segment_cost(llama, u280_prefill, u280_hmt, queue_len=0)
    full = hmt_segment_cost(llama, u280_prefill, u280_hmt)
    assert empty.breakdown["memory_attention"] == 0
    assert full.cycles - empty.cycles == 65_536
    with pytest.raises(ValueError):
        hmt_segment_cost(llama, u280_prefill, u280_hmt, queue_len=-1)


def test_segment_cost_zero_summary_half_still_probes(llama, u280_prefill):
    cfg = HmtConfig(segment_len=1024, memory_queue_len=64, summary_half=0,
                    short_term_len=512, bp=4, wp_mem_attn=4)
    est = hmt_segment_cost(llama, u280_prefill, cfg)
    # a single leading token stands in when the half-length is zero
    two_token = hmt_segment_cost(
        llama, u280_prefill,
        HmtConfig(segment_len=1024, memory_queue_len=64, summary_half=1,
                  short_term_len=512, bp=4, wp_mem_attn=4))
    assert est.breakdown["summary_prompt"] == two_token.breakdown["summary_prompt"]
