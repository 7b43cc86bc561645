"""Acceptance gate: one test and one printed pass/fail line per shipped criterion.

Each criterion re-derives its expected values from an oracle coded inside this
file (or from published measurements quoted as plain numbers), then checks the
library at the stated tolerance.  Nothing here reuses the implementation's own
internals beyond its public API.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg

from flexsim.archgraph import build_decode_graph, build_prefill_graph, estimate_graph_latency
from flexsim.config import (
    DecodeConfig,
    ModelSpec,
    PrefillConfig,
    QuantSpec,
    default_resource_cost_model,
    validate_stage_config,
)
from flexsim.dse import (
    EmptySearchSpaceError,
    InfeasibleSearchError,
    RESOURCE_HEADROOM,
    SearchSpace,
    load_search_space,
    optimize_decode,
    optimize_prefill,
)
from flexsim.hmt import run_pipeline
from flexsim.kernels import QuantizedWeight, ToyModel, linear_forward
from flexsim.perf import (
    WorkloadShape,
    decode_bandwidth,
    decode_stage_latency,
    long_context_prefill_model,
    prefill_bandwidth,
    prefill_stage_latency,
    stage_resource_usage,
)
from flexsim.quant import compute_quant_params, dequantize, fht, fused_int_matmul, quantize

F = Fraction

import random

from flexsim.config import HmtConfig


def _line(request, cid: str, title: str, ok: bool, detail: str = "") -> None:
    text = f"ACCEPTANCE {cid} {title}: {'PASS' if ok else 'FAIL'}"
    if detail:
        text += f" [{detail}]"
    tr = request.config.pluginmanager.get_plugin("terminalreporter")
    if tr is not None:
        tr.write_line(text)
    else:
        print(text)


# --- criterion 1: reference-platform latencies lower-bound the measurements --------

def _oracle_prefill_cycles(m: ModelSpec, c: PrefillConfig, l_p: int) -> Fraction:
    slice_cost = F(m.d_h * m.d_kv, c.wp_kqvo) + max(
        F(m.d_h * m.d_h, c.wp_kqvo),
        F(m.d_h * l_p, c.wp_mha),
        F(m.d_h * m.d_ffn, c.wp_ffn),
    )
    return F(m.n_layers * l_p, c.tp) * slice_cost


def _oracle_decode_cycles(m: ModelSpec, c: DecodeConfig, l_p: int, l_d: int) -> Fraction:
    serial = F(
        m.n_layers * (2 * m.d_h * m.d_kv + m.d_h * m.d_h + 3 * m.d_h * m.d_ffn)
        + m.d_h * m.d_lm_head,
        c.wp_int4,
    )
    overlap = max(
        F(m.n_layers * m.d_h * m.d_h, c.wp_int4),
        F(m.n_layers * m.d_h * (2 * l_p + l_d), 2 * c.wp_mha),
    )
    return l_d * (serial + overlap)


def test_criterion_1_reference_latencies(request, llama, u280_prefill, u280_decode,
                                         v80_prefill, v80_decode):
    t0 = time.perf_counter()
    cases = [
        ("u280-prefill", _oracle_prefill_cycles(llama, u280_prefill, 1024),
         prefill_stage_latency(llama, u280_prefill, 1024, 304_000_000), 1.65),
        ("u280-decode", _oracle_decode_cycles(llama, u280_decode, 1024, 1024),
         decode_stage_latency(llama, u280_decode, 1024, 1024, 292_000_000), 6.94),
        ("v80-prefill", _oracle_prefill_cycles(llama, v80_prefill, 1024),
         prefill_stage_latency(llama, v80_prefill, 1024, 300_000_000), 0.61),
        ("v80-decode", _oracle_decode_cycles(llama, v80_decode, 1024, 1024),
         decode_stage_latency(llama, v80_decode, 1024, 1024, 300_000_000), 1.68),
    ]
    details = []
    ok = True
    for name, oracle_cycles, est, measured_s in cases:
        exact = est.cycles == oracle_cycles  # full precision, no tolerance
        modeled_s = float(est.seconds_exact)
        ratio = modeled_s / measured_s
        bound = modeled_s <= measured_s and 0.60 <= ratio <= 1.00
        ok = ok and exact and bound
        details.append(f"{name} {modeled_s:.4f}s/{measured_s}s={ratio:.3f}")
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 1.0
    _line(request, "C1", "stage latencies lower-bound the board measurements", ok,
          "; ".join(details) + f"; {elapsed * 1e3:.0f}ms")
    assert ok, details


# --- criterion 2: streaming bandwidth demand, exact ----------------------------------

def test_criterion_2_bandwidth_exact(request, u280, v80, u280_prefill, u280_decode,
                                     v80_decode):
    pre = prefill_bandwidth(u280_prefill, 304_000_000)
    dec = decode_bandwidth(u280_decode, 292_000_000)
    v80_dec = decode_bandwidth(v80_decode, 300_000_000)
    checks = [
        pre.total_bytes_per_s == 60_800_000_000,  # zero tolerance
        dec.total_bytes_per_s == 299_008_000_000,
        v80_dec.total_bytes_per_s == 1_228_800_000_000,
        not pre.check_against(u280).over_subscribed,
        not dec.check_against(u280).over_subscribed,
        v80_dec.check_against(v80).over_subscribed,  # 1228.8 GB/s > 820 GB/s
    ]
    ok = all(checks)
    _line(request, "C2", "weight-stream bandwidth demands match exactly", ok,
          f"60.8e9/299.008e9 within 460e9; v80 decode {float(v80_dec.total_bytes_per_s):.4g} flagged")
    assert ok, checks


# --- criterion 3: search optimality and reference recovery ---------------------------

def _brute_force(model, device, space, l_p, l_d, cost_model):
    best = None
    candidates = 0
    if space.stage == "prefill":
        sets = (space.tp, space.wp_kqvo, space.wp_mha, space.wp_ffn)
        make = lambda t: PrefillConfig(*t)
        lat = lambda c: prefill_stage_latency(model, c, l_p).cycles
        bw = lambda c: prefill_bandwidth(c, device.freq_hz).total_bytes_per_s
    else:
        sets = (space.bp, space.wp_int4, space.wp_mha)
        make = lambda t: DecodeConfig(*t)
        lat = lambda c: decode_stage_latency(model, c, l_p, l_d).cycles
        bw = lambda c: decode_bandwidth(c, device.freq_hz).total_bytes_per_s
    for combo in itertools.product(*sets):
        candidates += 1
        cfg = make(combo)
        if not validate_stage_config(cfg, model).ok:
            continue
        if bw(cfg) > device.peak_bw_bytes_per_s:
            continue
        usage = stage_resource_usage(cfg, cost_model)
        if any(used > RESOURCE_HEADROOM * device.resource_budget[k]
               for k, used in usage.items()):
            continue
        key = (lat(cfg), combo)
        if best is None or key < best:
            best = key
    return best, candidates


def _random_space(rng: random.Random, stage: str) -> SearchSpace:
    def pick(values, k):
        return tuple(sorted(rng.sample(values, k)))

    if stage == "prefill":
        return SearchSpace(
            stage="prefill",
            tp=pick([1, 2, 4, 8, 16, 32], rng.randint(1, 3)),
            wp_kqvo=pick([1, 2, 4, 8, 16, 24, 32, 64], rng.randint(1, 3)),
            wp_mha=pick([1, 2, 4, 8, 16, 32, 64], rng.randint(1, 3)),
            wp_ffn=pick([1, 2, 4, 8, 16, 32, 48, 64, 96, 128], rng.randint(1, 3)),
        )
    return SearchSpace(
        stage="decode",
        bp=pick([1, 2, 4, 8, 16, 32], rng.randint(1, 3)),
        wp_int4=pick([8, 16, 64, 128, 256, 512, 1024, 2048, 4096], rng.randint(1, 3)),
        wp_mha=pick([8, 16, 32, 64, 128, 256, 512, 1024], rng.randint(1, 3)),
    )


def test_criterion_3_search_optimality(request, llama, u280, v80, config_dir):
    t0 = time.perf_counter()
    cost_model = default_resource_cost_model()
    rng = random.Random(777)
    mismatches = 0
    for i in range(100):
        stage = "prefill" if i % 2 == 0 else "decode"
        space = _random_space(rng, stage)
        opt = optimize_prefill if stage == "prefill" else optimize_decode
        want, candidates = _brute_force(llama, u280, space, 1024, 1024, cost_model)
        assert candidates <= 10_000
        try:
            res = opt(llama, u280, space=space, cost_model=cost_model)
        except (InfeasibleSearchError, EmptySearchSpaceError):
            if want is not None:
                mismatches += 1
            continue
        if want is None or (res.latency.cycles, res.best_config.as_tuple()) != want:
            mismatches += 1

    # reference-point recovery from the shipped crafted spaces
    rec_ok = True
    pre = optimize_prefill(llama, u280,
                           space=load_search_space(config_dir / "space_u280_prefill.json",
                                                   "prefill"),
                           l_p=1024, cost_model=cost_model).best_config
    rec_ok &= (pre.tp, pre.wp_kqvo, pre.wp_mha, pre.wp_ffn) == (8, 24, 16, 96)
    dec = optimize_decode(llama, u280,
                          space=load_search_space(config_dir / "space_u280_decode.json",
                                                  "decode"),
                          l_p=1024, l_d=1024, cost_model=cost_model).best_config
    rec_ok &= (dec.bp, dec.wp_int4, dec.wp_mha) == (16, 1024, 256)
    pre = optimize_prefill(llama, v80,
                           space=load_search_space(config_dir / "space_v80_prefill.json",
                                                   "prefill"),
                           l_p=1024, cost_model=cost_model).best_config
    rec_ok &= (pre.tp, pre.wp_kqvo, pre.wp_mha, pre.wp_ffn) == (16, 32, 32, 128)
    # the published decode point oversubscribes the real V80 link (criterion 2),
    # so its recovery runs against a lifted bandwidth cap
    v80_uncapped = dataclasses.replace(v80, peak_bw_bytes_per_s=1_300_000_000_000)
    dec = optimize_decode(llama, v80_uncapped,
                          space=load_search_space(config_dir / "space_v80_decode.json",
                                                  "decode"),
                          l_p=1024, l_d=1024, cost_model=cost_model).best_config
    rec_ok &= (dec.bp, dec.wp_int4, dec.wp_mha) == (64, 4096, 1024)

    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and rec_ok and elapsed < 60.0
    _line(request, "C3", "search equals brute force and recovers the reference configs",
          ok, f"100 spaces, {mismatches} mismatches; recovery {'ok' if rec_ok else 'FAILED'}; "
              f"{elapsed:.1f}s")
    assert ok


# --- criterion 4: quantization round-trip, fused GEMM, transform ----------------------

def _fused_oracle(act, w):
    s_x = np.atleast_1d(np.asarray(act.params.scale))
    b_x = np.atleast_1d(np.asarray(act.params.zero))
    s_w = np.atleast_1d(np.asarray(w.params.scale))
    tokens, inner = act.q.shape
    outs = w.q.shape[1]
    x = [[F(s_x[t]) * int(act.q[t, k]) + F(b_x[t]) for k in range(inner)]
         for t in range(tokens)]
    wm = [[F(s_w[o]) * int(w.q[k, o]) for o in range(outs)] for k in range(inner)]
    return [[sum((x[t][k] * wm[k][o] for k in range(inner)), F(0)) for o in range(outs)]
            for t in range(tokens)]


def test_criterion_4_quantization(request):
    rng = np.random.default_rng(2718)
    combos = list(itertools.product([4, 8], ["symmetric", "asymmetric"],
                                    ["per_tensor", "per_token", "per_channel"]))
    worst = 0.0
    count = 0
    round_trip_ok = True
    while count < 10_000:
        bits, sym, gran = combos[count % len(combos)]
        x = rng.normal(size=(4, 6)) * rng.uniform(0.05, 8.0)
        params = compute_quant_params(x, QuantSpec(bits, sym, gran, "dynamic"))
        back = dequantize(quantize(x, params, bits))
        scale = np.asarray(params.scale, dtype=np.float64)
        if gran == "per_token":
            bound = scale[:, None] / 2
        elif gran == "per_channel":
            bound = scale[None, :] / 2
        else:
            bound = np.full_like(x, float(scale) / 2)
        err = np.abs(back - x)
        round_trip_ok &= bool((err <= bound + 1e-12).all())
        worst = max(worst, float((err - bound).max()))
        count += 1

    fused_ok = True
    for _ in range(1000):
        xa = rng.normal(size=(3, 5))
        wa = rng.normal(size=(5, 4))
        act = quantize(xa, compute_quant_params(
            xa, QuantSpec(4, "asymmetric", "per_token", "dynamic")), 4)
        qw = QuantizedWeight.prepare(wa)
        oracle = _fused_oracle(act, qw.qt)
        exact = fused_int_matmul(act, qw.qt, qw.sidecar, return_exact=True)
        fused_ok &= all(exact[t][o] == oracle[t][o]
                        for t in range(3) for o in range(4))
        rounded = fused_int_matmul(act, qw.qt, qw.sidecar)
        fused_ok &= all(rounded[t, o] == float(oracle[t][o])
                        for t in range(3) for o in range(4))

    fht_ok = True
    for n in (2, 4, 8, 16, 32, 64):
        h = scipy.linalg.hadamard(n).astype(np.float64)
        x = rng.normal(size=n)
        fht_ok &= bool(np.max(np.abs(fht(x) - h @ x)) < 1e-12)
        ortho = fht(x, normalize="orthonormal")
        fht_ok &= bool(np.max(np.abs(h @ x / math.sqrt(n) - ortho)) < 1e-12)
        fht_ok &= bool(np.max(np.abs(fht(ortho, normalize="orthonormal") - x)) < 1e-12)

    ok = round_trip_ok and fused_ok and fht_ok
    _line(request, "C4", "quantization round-trip, fused GEMM, and transform", ok,
          f"10000 tensors worst slack {worst:.2e}; 1000 fused bit-exact; fht n=2..64")
    assert ok, (round_trip_ok, fused_ok, fht_ok)


# --- criterion 5: functional equivalence of the execution paths ----------------------

def _acceptance_toy() -> ToyModel:
    spec = ModelSpec(name="acceptance-toy", n_layers=2, d_h=64, d_kv=32, d_ffn=128,
                     d_lm_head=96, n_q_heads=4, n_kv_heads=2, rope_theta=10000.0)
    return ToyModel.random(spec, seed=99, max_seq_len=64)


def test_criterion_5_execution_paths(request):
    toy = _acceptance_toy()
    prompt = [(7 * i + 3) % 96 for i in range(16)]

    batch, _ = toy.prefill(prompt)
    cache = toy.new_cache()
    steps = np.vstack([toy.decode_step(t, cache) for t in prompt])
    denom = np.maximum(np.abs(batch), 1.0)
    rel = float(np.max(np.abs(steps - batch) / denom))
    schedule_ok = rel < 1e-6

    # quantized linears against reconstruct-then-float, exact in rational mode
    rng = np.random.default_rng(424)
    quant_ok = True
    for name, qw in toy.quantized_weights()[0].items():
        x = rng.normal(size=(4, qw.qt.q.shape[0]))
        act = quantize(x, compute_quant_params(
            x, QuantSpec(4, "asymmetric", "per_token", "dynamic")), 4)
        oracle = _fused_oracle(act, qw.qt)
        got = linear_forward(x, qw, "quantized")
        quant_ok &= all(got[t, o] == float(oracle[t][o])
                        for t in range(4) for o in range(len(oracle[0])))

    q_batch, _ = toy.prefill(prompt, path="quantized")
    q_fresh, _ = toy.prefill(prompt, path="quantized")
    quant_ok &= bool(np.array_equal(q_batch, q_fresh))

    ok = schedule_ok and quant_ok
    _line(request, "C5", "prefill equals token-by-token decode; quantized path exact",
          ok, f"16-token rel err {rel:.2e}; 7 linears reconstruct-exact")
    assert ok, (rel, quant_ok)


# --- criterion 6: graphs reproduce the closed forms ----------------------------------

def test_criterion_6_graph_equivalence(request, llama):
    rng = random.Random(31337)
    mismatches = 0
    for _ in range(100):
        cfg = PrefillConfig(tp=rng.choice([1, 2, 4, 8, 16]),
                            wp_kqvo=rng.choice([8, 16, 24, 32, 64]),
                            wp_mha=rng.choice([8, 16, 32, 64]),
                            wp_ffn=rng.choice([8, 16, 48, 96, 128]))
        l_p = rng.randint(1, 8192)
        got = estimate_graph_latency(build_prefill_graph(cfg), llama,
                                     WorkloadShape(l_p=l_p, l_d=0)).cycles
        if got != prefill_stage_latency(llama, cfg, l_p).cycles:
            mismatches += 1
    for _ in range(100):
        wp_int4 = rng.choice([64, 128, 256, 512, 1024, 2048, 4096])
        cfg = DecodeConfig(bp=rng.choice([b for b in (1, 2, 4, 8, 16, 32, 64)
                                          if wp_int4 % b == 0]),
                           wp_int4=wp_int4,
                           wp_mha=rng.choice([8, 16, 64, 256, 512, 1024]))
        l_p, l_d = rng.randint(1, 8192), rng.randint(1, 4096)
        got = estimate_graph_latency(build_decode_graph(cfg), llama,
                                     WorkloadShape(l_p=l_p, l_d=l_d)).cycles
        if got != decode_stage_latency(llama, cfg, l_p, l_d).cycles:
            mismatches += 1
    ok = mismatches == 0
    _line(request, "C6", "graphs reproduce the stage laws bit-identically", ok,
          f"200 random configs, {mismatches} mismatches")
    assert ok


# --- criterion 7: long-context memory pipeline ---------------------------------------

def test_criterion_7_long_context(request, llama, u280_prefill, u280_hmt):
    comp = long_context_prefill_model(llama, u280_prefill, u280_hmt,
                                      total_len=65536, freq_hz=290_000_000)
    modeled_ok = comp.n_segments == 64 and comp.speedup >= 20.0

    toy = ToyModel.random(
        ModelSpec(name="hmt-toy", n_layers=2, d_h=32, d_kv=16, d_ffn=64,
                  d_lm_head=50, n_q_heads=4, n_kv_heads=2, rope_theta=10000.0),
        seed=5, max_seq_len=128)
    cfg = HmtConfig(segment_len=64, memory_queue_len=64, summary_half=16,
                    short_term_len=32, bp=4, wp_mem_attn=4)
    tokens = [i % 50 for i in range(64 * cfg.segment_len)]
    res = run_pipeline(toy, tokens, cfg)
    queue_ok = (len(res.segments) == 64
                and all(r.queue_len_before <= cfg.memory_queue_len for r in res.segments)
                and len(res.queue) <= cfg.memory_queue_len)
    attended_cap = 1 + cfg.short_term_len + cfg.segment_len
    attention_ok = (res.max_attended_len == attended_cap
                    and res.max_attended_len < len(tokens)
                    and res.stats.max_score_elements
                    <= toy.model.n_q_heads * attended_cap * attended_cap)

    ok = modeled_ok and queue_ok and attention_ok
    _line(request, "C7", "segmented long-context speedup and bounded attention", ok,
          f"modeled {comp.speedup:.2f}x at 65536; 64 segments, attended <= {attended_cap}")
    assert ok, (comp.speedup, queue_ok, attention_ok)


# --- criterion 8: published accuracy/power context stays documentation-only ----------

def test_criterion_8_documented_not_asserted(request):
    readme = Path(__file__).resolve().parent.parent / "README.md"
    text = readme.read_text(encoding="utf-8")
    documented = "12.68" in text
    ok = documented  # the number appears in prose; no test computes or asserts it
    _line(request, "C8", "accuracy and on-board power stay documentation-only", ok,
          "perplexity 12.68 and power figures quoted in README only")
    assert ok
