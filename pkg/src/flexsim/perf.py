"""Analytical latency and bandwidth models for the two inference stages.

Every formula is evaluated in exact rational arithmetic (``fractions``):
cycle counts are reported both as the exact rational bound and as the integer
ceiling, so equal-latency ties and binding-term ties are decided exactly, not
within a float tolerance.

Prefill engines process ``tp`` tokens in parallel while streaming ``wp``
weight channels per cycle; a dense projection therefore takes
``l_p * d_in * d_out / (tp * wp)`` cycles.  Decode is single-token and purely
weight-bound: ``l_d * d_in * d_out / wp``.  The stage-level models compose
these per-engine laws: serialized work adds, concurrently streamed stages
bottleneck on their maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping

from .config import (
    DecodeConfig,
    DeviceSpec,
    HmtConfig,
    ModelSpec,
    PrefillConfig,
    ResourceCostModel,
    ensure_valid_stage_config,
)

# Bytes streamed per weight element at each storage precision.
BYTES_PER_WEIGHT: Mapping[str, Fraction] = {
    "int4": Fraction(1, 2),
    "int8": Fraction(1),
    "fp16": Fraction(2),
    "fp32": Fraction(4),
}

_ALLOWED_WEIGHT_BYTES = (Fraction(1, 2), Fraction(1), Fraction(2), Fraction(4))


def _exact(value: int | float | Fraction, name: str) -> Fraction:
    try:
        return Fraction(value)
    except (TypeError, ValueError) as e:
        raise ValueError(f"{name} must be a real number, got {value!r}") from e


def _pos_int(value: int, name: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ValueError(f"{name} must be an integer >= 1, got {value!r}")
    return value


@dataclass(frozen=True)
class WorkloadShape:
    """Prompt length and generated-token count for one request."""

    l_p: int
    l_d: int

    def __post_init__(self) -> None:
        for name, v in (("l_p", self.l_p), ("l_d", self.l_d)):
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ValueError(f"{name} must be an integer >= 0, got {v!r}")
        if self.l_p == 0 and self.l_d == 0:
            raise ValueError("l_p and l_d cannot both be zero")

    @property
    def total_tokens(self) -> int:
        return self.l_p + self.l_d


@dataclass(frozen=True)
class LatencyEstimate:
    """Exact cycle bound with an additive/max breakdown.

    ``breakdown`` holds total cycles attributed to each named term;
    ``binding_terms`` names every max-candidate that achieves the maximum
    (ties are preserved).  ``freq_hz`` may be absent for per-engine estimates
    that are not tied to a clock.
    """

    cycles: Fraction
    freq_hz: int | None = None
    breakdown: Mapping[str, Fraction] = field(default_factory=dict)
    binding_terms: tuple[str, ...] = ()

    @property
    def cycles_ceil(self) -> int:
        return math.ceil(self.cycles)

    @property
    def seconds_exact(self) -> Fraction:
        if self.freq_hz is None:
            raise ValueError("no clock attached to this estimate")
        return self.cycles / self.freq_hz

    @property
    def seconds(self) -> float:
        return float(self.seconds_exact)

    def to_json_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "cycles": self.cycles_ceil,
            "cycles_exact": _frac_str(self.cycles),
            "breakdown": {k: float(v) for k, v in sorted(self.breakdown.items())},
            "breakdown_exact": {k: _frac_str(v) for k, v in sorted(self.breakdown.items())},
            "binding_terms": list(self.binding_terms),
        }
        if self.freq_hz is not None:
            out["freq_hz"] = self.freq_hz
            out["seconds"] = self.seconds
            out["seconds_exact"] = _frac_str(self.seconds_exact)
        return out


@dataclass(frozen=True)
class BandwidthEstimate:
    """Sustained HBM weight-streaming demand, split per engine group."""

    contributions: Mapping[str, Fraction]

    @property
    def total_bytes_per_s(self) -> Fraction:
        return sum(self.contributions.values(), Fraction(0))

    @property
    def gigabytes_per_s(self) -> float:
        return float(self.total_bytes_per_s) / 1e9

    def check_against(self, device: DeviceSpec) -> "BandwidthCheck":
        peak = Fraction(device.peak_bw_bytes_per_s)
        demand = self.total_bytes_per_s
        return BandwidthCheck(
            demand_bytes_per_s=demand,
            peak_bytes_per_s=peak,
            over_subscribed=demand > peak,
        )

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "total_bytes_per_s": float(self.total_bytes_per_s),
            "total_bytes_per_s_exact": _frac_str(self.total_bytes_per_s),
            "contributions": {k: float(v) for k, v in sorted(self.contributions.items())},
        }


@dataclass(frozen=True)
class BandwidthCheck:
    demand_bytes_per_s: Fraction
    peak_bytes_per_s: Fraction
    over_subscribed: bool

    @property
    def utilization(self) -> float:
        return float(self.demand_bytes_per_s / self.peak_bytes_per_s)

    @property
    def slack_bytes_per_s(self) -> Fraction:
        return self.peak_bytes_per_s - self.demand_bytes_per_s

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "demand_bytes_per_s": float(self.demand_bytes_per_s),
            "peak_bytes_per_s": float(self.peak_bytes_per_s),
            "utilization": self.utilization,
            "over_subscribed": self.over_subscribed,
        }


def _frac_str(f: Fraction) -> str:
    return f"{f.numerator}/{f.denominator}" if f.denominator != 1 else str(f.numerator)


# ---------------------------------------------------------------------------
# Per-engine laws
# ---------------------------------------------------------------------------


def prefill_linear_latency(l_p: int, d_in: int, d_out: int, tp: int, wp: int) -> LatencyEstimate:
    """Cycles for one dense projection with token and weight parallelism."""
    for name, v in (("l_p", l_p), ("d_in", d_in), ("d_out", d_out), ("tp", tp), ("wp", wp)):
        _pos_int(v, name)
    cycles = Fraction(l_p * d_in * d_out, tp * wp)
    return LatencyEstimate(cycles=cycles, breakdown={"linear": cycles})


def decode_linear_latency(l_d: int, d_in: int, d_out: int, wp: int) -> LatencyEstimate:
    """Cycles for a weight-bound single-token projection repeated l_d times."""
    for name, v in (("l_d", l_d), ("d_in", d_in), ("d_out", d_out), ("wp", wp)):
        _pos_int(v, name)
    cycles = Fraction(l_d * d_in * d_out, wp)
    return LatencyEstimate(cycles=cycles, breakdown={"linear": cycles})


def linear_bandwidth(
    bytes_per_weight: float | Fraction, wp: int, freq_hz: int
) -> BandwidthEstimate:
    """Streaming demand of one engine: bytes/element * lanes * clock."""
    bpw = _exact(bytes_per_weight, "bytes_per_weight")
    if bpw not in _ALLOWED_WEIGHT_BYTES:
        raise ValueError(
            f"bytes_per_weight must be one of {[str(b) for b in _ALLOWED_WEIGHT_BYTES]}, got {bytes_per_weight!r}"
        )
    if wp < 0:
        raise ValueError(f"wp must be >= 0, got {wp}")
    _pos_int(freq_hz, "freq_hz")
    return BandwidthEstimate(contributions={"linear": bpw * wp * freq_hz})


# ---------------------------------------------------------------------------
# Stage-level models
# ---------------------------------------------------------------------------


def prefill_stage_latency(
    model: ModelSpec, cfg: PrefillConfig, l_p: int, freq_hz: int | None = None
) -> LatencyEstimate:
    """End-to-end prefill cycle bound for one prompt.

    Per layer, the key/value projections run first (their outputs land in
    HBM), then the remaining projections, attention, and FFN stream as one
    dataflow pipeline whose latency is set by the slowest engine:

        cycles = (n_layers * l_p / tp)
                 * (d_h*d_kv/wp_kqvo
                    + max(d_h^2/wp_kqvo, d_h*l_p/wp_mha, d_h*d_ffn/wp_ffn))
    """
    ensure_valid_stage_config(cfg, model)
    if not isinstance(l_p, int) or isinstance(l_p, bool) or l_p < 0:
        raise ValueError(f"l_p must be an integer >= 0, got {l_p!r}")
    if l_p == 0:
        return LatencyEstimate(cycles=Fraction(0), freq_hz=freq_hz)

    per_layer_tokens = Fraction(model.n_layers * l_p, cfg.tp)
    kv = Fraction(model.d_h * model.d_kv, cfg.wp_kqvo)
    candidates = {
        "kqvo": Fraction(model.d_h * model.d_h, cfg.wp_kqvo),
        "mha": Fraction(model.d_h * l_p, cfg.wp_mha),
        "ffn": Fraction(model.d_h * model.d_ffn, cfg.wp_ffn),
    }
    bottleneck = max(candidates.values())
    binding = tuple(name for name, v in candidates.items() if v == bottleneck)
    cycles = per_layer_tokens * (kv + bottleneck)
    breakdown = {"kv_proj": per_layer_tokens * kv}
    breakdown.update({name: per_layer_tokens * v for name, v in candidates.items()})
    return LatencyEstimate(
        cycles=cycles, freq_hz=freq_hz, breakdown=breakdown, binding_terms=binding
    )


def decode_stage_latency(
    model: ModelSpec, cfg: DecodeConfig, l_p: int, l_d: int, freq_hz: int | None = None
) -> LatencyEstimate:
    """End-to-end decode cycle bound for ``l_d`` generated tokens.

    One shared INT4 engine serially streams the K/V/Q projections, the FFN,
    and the LM head for every layer; the output projection overlaps with the
    attention reads, whose cache length averages ``l_p + l_d/2``:

        cycles = l_d * ((n_layers*(2*d_h*d_kv + d_h^2 + 3*d_h*d_ffn)
                         + d_h*d_lm_head) / wp_int4
                        + max(n_layers*d_h^2/wp_int4,
                              n_layers*d_h*(l_p + l_d/2)/wp_mha))
    """
    ensure_valid_stage_config(cfg, model)
    if not isinstance(l_p, int) or isinstance(l_p, bool) or l_p < 0:
        raise ValueError(f"l_p must be an integer >= 0, got {l_p!r}")
    _pos_int(l_d, "l_d")

    n, d_h = model.n_layers, model.d_h
    serial = Fraction(
        n * (2 * d_h * model.d_kv + d_h * d_h + 3 * d_h * model.d_ffn) + d_h * model.d_lm_head,
        cfg.wp_int4,
    )
    candidates = {
        "proj_overlap": Fraction(n * d_h * d_h, cfg.wp_int4),
        "mha": Fraction(n * d_h * (2 * l_p + l_d), 2 * cfg.wp_mha),
    }
    bottleneck = max(candidates.values())
    binding = tuple(name for name, v in candidates.items() if v == bottleneck)
    cycles = l_d * (serial + bottleneck)
    breakdown = {"linear_serial": l_d * serial}
    breakdown.update({name: l_d * v for name, v in candidates.items()})
    return LatencyEstimate(
        cycles=cycles, freq_hz=freq_hz, breakdown=breakdown, binding_terms=binding
    )


def prefill_bandwidth(cfg: PrefillConfig, freq_hz: int) -> BandwidthEstimate:
    """Peak concurrent streaming demand of the prefill dataflow.

    Two shared INT4 projection engines, three INT4 FFN engines, and two INT8
    attention operand streams are live at once.  Purely additive in the
    engine set; zero-lane engines contribute zero.
    """
    _pos_int(freq_hz, "freq_hz")
    b4, b8 = BYTES_PER_WEIGHT["int4"], BYTES_PER_WEIGHT["int8"]
    return BandwidthEstimate(
        contributions={
            "kqvo": b4 * 2 * cfg.wp_kqvo * freq_hz,
            "ffn": b4 * 3 * cfg.wp_ffn * freq_hz,
            "mha": b8 * 2 * cfg.wp_mha * freq_hz,
        }
    )


def decode_bandwidth(cfg: DecodeConfig, freq_hz: int) -> BandwidthEstimate:
    """Peak streaming demand of the decode stage.

    The shared INT4 engine streams weights at ``wp_int4`` lanes while the two
    attention matmuls pull INT8 keys and values.  The result is reported
    literally even when it exceeds a card's peak; pair with
    ``BandwidthEstimate.check_against`` to flag over-subscription.
    """
    _pos_int(freq_hz, "freq_hz")
    b4, b8 = BYTES_PER_WEIGHT["int4"], BYTES_PER_WEIGHT["int8"]
    return BandwidthEstimate(
        contributions={
            "int4_linear": b4 * cfg.wp_int4 * freq_hz,
            "mha": b8 * 2 * cfg.wp_mha * freq_hz,
        }
    )


def tokens_per_joule(
    workload: WorkloadShape, latency_seconds: float | Fraction, device: DeviceSpec
) -> float:
    """Energy efficiency: total tokens over (latency * average board power)."""
    seconds = _exact(latency_seconds, "latency_seconds")
    if seconds <= 0:
        raise ValueError(f"latency_seconds must be > 0, got {latency_seconds!r}")
    power = _exact(device.avg_power_w, "avg_power_w")
    if power <= 0:
        raise ValueError(f"avg_power_w must be > 0, got {device.avg_power_w!r}")
    return float(Fraction(workload.total_tokens) / (seconds * power))


# ---------------------------------------------------------------------------
# Long-context comparison
# ---------------------------------------------------------------------------


def memory_attention_cycles(d_h: int, queue_len: int, wp_mem_attn: int) -> Fraction:
    """Per-segment retrieval cost: score and blend over ``queue_len`` memories.

    Both passes touch ``queue_len * d_h`` elements through ``wp_mem_attn``
    lanes; an empty queue needs no retrieval pass at all.
    """
    _pos_int(d_h, "d_h")
    _pos_int(wp_mem_attn, "wp_mem_attn")
    if queue_len < 0:
        raise ValueError(f"queue_len must be >= 0, got {queue_len}")
    if queue_len == 0:
        return Fraction(0)
    return Fraction(2 * queue_len * d_h, wp_mem_attn)


@dataclass(frozen=True)
class LongContextComparison:
    """Vanilla full-prompt prefill vs segmented memory-augmented prefill."""

    vanilla: LatencyEstimate
    segmented: LatencyEstimate
    n_segments: int
    augmented_len: int
    plugin_cycles_per_segment: Fraction

    @property
    def speedup_exact(self) -> Fraction:
        return self.vanilla.cycles / self.segmented.cycles

    @property
    def speedup(self) -> float:
        return float(self.speedup_exact)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "vanilla": self.vanilla.to_json_dict(),
            "segmented": self.segmented.to_json_dict(),
            "n_segments": self.n_segments,
            "augmented_len": self.augmented_len,
            "plugin_cycles_per_segment": float(self.plugin_cycles_per_segment),
            "speedup": self.speedup,
        }


def long_context_prefill_model(
    model: ModelSpec,
    prefill_cfg: PrefillConfig,
    hmt_cfg: HmtConfig,
    total_len: int,
    freq_hz: int,
    plugin_seconds_per_segment: float | None = None,
) -> LongContextComparison:
    """Compare prefilling ``total_len`` tokens at once against segment-by-segment.

    The segmented branch prefills one augmented prompt per segment (one
    retrieved-memory slot, the previous short-term slice, and the segment
    itself) and pays a per-segment plug-in cost on top.  The plug-in cost
    defaults to the modeled retrieval term; pass a measured
    ``plugin_seconds_per_segment`` to use board numbers instead.  The backbone
    summary pass is part of the plug-in budget, not modeled separately here.
    """
    _pos_int(total_len, "total_len")
    _pos_int(freq_hz, "freq_hz")
    if total_len < hmt_cfg.segment_len:
        raise ValueError(
            f"total_len={total_len} shorter than segment_len={hmt_cfg.segment_len}"
        )

    vanilla = prefill_stage_latency(model, prefill_cfg, total_len, freq_hz)

    n_segments = math.ceil(total_len / hmt_cfg.segment_len)
    augmented_len = 1 + hmt_cfg.short_term_len + hmt_cfg.segment_len
    per_segment = prefill_stage_latency(model, prefill_cfg, augmented_len, freq_hz)
    if plugin_seconds_per_segment is None:
        plugin = memory_attention_cycles(model.d_h, hmt_cfg.memory_queue_len, hmt_cfg.wp_mem_attn)
    else:
        if plugin_seconds_per_segment < 0:
            raise ValueError(
                f"plugin_seconds_per_segment must be >= 0, got {plugin_seconds_per_segment!r}"
            )
        plugin = Fraction(plugin_seconds_per_segment) * freq_hz

    segmented_cycles = n_segments * (per_segment.cycles + plugin)
    segmented = LatencyEstimate(
        cycles=segmented_cycles,
        freq_hz=freq_hz,
        breakdown={
            "segment_prefill": n_segments * per_segment.cycles,
            "plugin": n_segments * plugin,
        },
    )
    return LongContextComparison(
        vanilla=vanilla,
        segmented=segmented,
        n_segments=n_segments,
        augmented_len=augmented_len,
        plugin_cycles_per_segment=plugin,
    )


# ---------------------------------------------------------------------------
# Engine sets and resource usage (shared by the optimizer and graph checker)
# ---------------------------------------------------------------------------


def prefill_engine_set(cfg: PrefillConfig) -> tuple[tuple[str, str, str, int], ...]:
    """Engines instantiated by the prefill dataflow: (name, kind, precision, PEs)."""
    return (
        ("kqvo_a", "linear", "int4", cfg.tp * cfg.wp_kqvo),
        ("kqvo_b", "linear", "int4", cfg.tp * cfg.wp_kqvo),
        ("mha_score", "attention", "int8", cfg.tp * cfg.wp_mha),
        ("mha_ctx", "attention", "int8", cfg.tp * cfg.wp_mha),
        ("ffn_gate", "linear", "int4", cfg.tp * cfg.wp_ffn),
        ("ffn_up", "linear", "int4", cfg.tp * cfg.wp_ffn),
        ("ffn_down", "linear", "int4", cfg.tp * cfg.wp_ffn),
    )


def decode_engine_set(cfg: DecodeConfig) -> tuple[tuple[str, str, str, int], ...]:
    """Engines instantiated by the decode dataflow: (name, kind, precision, PEs)."""
    return (
        ("int4_linear", "linear", "int4", cfg.wp_int4),
        ("mha_score", "attention", "int8", cfg.wp_mha),
        ("mha_ctx", "attention", "int8", cfg.wp_mha),
    )


def stage_resource_usage(
    cfg: PrefillConfig | DecodeConfig, cost_model: ResourceCostModel
) -> dict[str, float]:
    """Total fabric usage of a stage config under a cost model."""
    engines = prefill_engine_set(cfg) if isinstance(cfg, PrefillConfig) else decode_engine_set(cfg)
    usage: dict[str, float] = {}
    for _, kind, precision, pes in engines:
        for res, amount in cost_model.engine_cost(kind, precision, pes).items():
            usage[res] = usage.get(res, 0.0) + amount
    return usage
