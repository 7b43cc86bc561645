"""Interval propagation for the quantized execution path.

Propagates elementwise [lo, hi] envelopes through the same computation the
quantized toy-model path performs, widening at each activation-quantization
point by the worst-case rounding error that step can introduce.  The result
is a sound enclosure of the quantized output around which a per-element error
bound against the float path follows directly:

    bound = max(hi - float_out, float_out - lo)

Endpoint arithmetic runs in round-to-nearest float64 rather than outward
rounding, so enclosures are exact only up to accumulated representation
error; membership asserts should allow a relative slack on the order of
1e-9 to absorb it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelSpec
from .kernels import AttnQuantScales, BlockWeights, KvCache, ToyModel, rope_angles

# Location of the silu minimum: the unique root of d/dx [x * sigmoid(x)].
_SILU_ARGMIN = -1.2784645427610738
_SILU_MIN = _SILU_ARGMIN / (1.0 + np.exp(-_SILU_ARGMIN))


@dataclass(frozen=True)
class Interval:
    """Elementwise closed interval [lo, hi] over a float64 array."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape:
            raise ValueError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("interval bounds must be finite")
        if (lo > hi).any():
            raise ValueError("lower bound exceeds upper bound")

    @classmethod
    def exact(cls, x: np.ndarray) -> "Interval":
        x = np.asarray(x, dtype=np.float64)
        return cls(x.copy(), x.copy())

    @property
    def shape(self) -> tuple[int, ...]:
        return self.lo.shape

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, x: np.ndarray, slack: float = 0.0) -> bool:
        """Whether x lies inside, allowing ``slack * max(1, |bound|)`` per side."""
        pad_lo = slack * np.maximum(1.0, np.abs(self.lo))
        pad_hi = slack * np.maximum(1.0, np.abs(self.hi))
        return bool(((x >= self.lo - pad_lo) & (x <= self.hi + pad_hi)).all())

    def reshape(self, *shape: int) -> "Interval":
        return Interval(self.lo.reshape(*shape), self.hi.reshape(*shape))

    def __getitem__(self, idx) -> "Interval":
        return Interval(self.lo[idx], self.hi[idx])

    # -- arithmetic ---------------------------------------------------------

    def add(self, other: "Interval") -> "Interval":
        return Interval(self.lo + other.lo, self.hi + other.hi)

    def widen(self, margin: np.ndarray | float) -> "Interval":
        margin = np.asarray(margin, dtype=np.float64)
        if (margin < 0).any():
            raise ValueError("widening margin must be >= 0")
        return Interval(self.lo - margin, self.hi + margin)

    def scale(self, c: np.ndarray | float) -> "Interval":
        """Multiply by known constants (sign-aware, broadcastable)."""
        a, b = self.lo * c, self.hi * c
        return Interval(np.minimum(a, b), np.maximum(a, b))

    def mul(self, other: "Interval") -> "Interval":
        """Elementwise interval product (4-way product extremes)."""
        p = np.stack([self.lo * other.lo, self.lo * other.hi,
                      self.hi * other.lo, self.hi * other.hi])
        return Interval(p.min(axis=0), p.max(axis=0))

    def matmul_exact(self, w: np.ndarray) -> "Interval":
        """Right-multiply by a known matrix, split by coefficient sign."""
        w = np.asarray(w, dtype=np.float64)
        w_pos = np.maximum(w, 0.0)
        w_neg = np.minimum(w, 0.0)
        return Interval(self.lo @ w_pos + self.hi @ w_neg,
                        self.hi @ w_pos + self.lo @ w_neg)

    def matmul(self, other: "Interval") -> "Interval":
        """Interval-by-interval matmul in mid-rad form."""
        mid = self.mid @ other.mid
        rad = (np.abs(self.mid) @ other.rad
               + self.rad @ np.abs(other.mid)
               + self.rad @ other.rad)
        return Interval(mid - rad, mid + rad)

    def square(self) -> "Interval":
        lo2, hi2 = np.square(self.lo), np.square(self.hi)
        upper = np.maximum(lo2, hi2)
        lower = np.where((self.lo <= 0) & (self.hi >= 0), 0.0, np.minimum(lo2, hi2))
        return Interval(lower, upper)


# ---------------------------------------------------------------------------
# Kernel-shaped interval transformers
# ---------------------------------------------------------------------------


def interval_rmsnorm(x: Interval, gamma: np.ndarray, eps: float = 1e-6) -> Interval:
    """Sound rmsnorm enclosure: 4-way division by the positive denominator range.

    The mean-square range combines the elementwise square bounds with norm
    bounds from the triangle inequality, ||mid|| -/+ ||rad||, which stay
    informative when individual element intervals straddle zero.
    """
    d = x.shape[-1]
    sq = x.square()
    mid_norm = np.linalg.norm(x.mid, axis=-1, keepdims=True)
    rad_norm = np.linalg.norm(x.rad, axis=-1, keepdims=True)
    m_lo = np.maximum(sq.lo.mean(axis=-1, keepdims=True),
                      np.square(np.maximum(mid_norm - rad_norm, 0.0)) / d)
    m_hi = np.minimum(sq.hi.mean(axis=-1, keepdims=True),
                      np.square(mid_norm + rad_norm) / d)
    # The two summation orders can disagree by ulps on degenerate intervals.
    m_lo = np.minimum(m_lo, m_hi)
    inv = Interval(1.0 / np.sqrt(m_hi + eps), 1.0 / np.sqrt(m_lo + eps))
    scaled = x.mul(Interval(np.broadcast_to(inv.lo, x.shape).copy(),
                            np.broadcast_to(inv.hi, x.shape).copy()))
    return scaled.scale(np.asarray(gamma, dtype=np.float64))


def interval_rope(x: Interval, positions: np.ndarray, theta: float = 10000.0) -> Interval:
    """Rotary embedding with known angles: a signed linear map per pair."""
    head_dim = x.shape[-1]
    cos, sin = rope_angles(positions, head_dim, theta)
    cos = cos[:, None, :]
    sin = sin[:, None, :]
    even, odd = x[..., 0::2], x[..., 1::2]
    out_even = even.scale(cos).add(odd.scale(-sin))
    out_odd = even.scale(sin).add(odd.scale(cos))
    lo = np.empty(x.shape)
    hi = np.empty(x.shape)
    lo[..., 0::2], hi[..., 0::2] = out_even.lo, out_even.hi
    lo[..., 1::2], hi[..., 1::2] = out_odd.lo, out_odd.hi
    return Interval(lo, hi)


def interval_softmax_row(x: Interval, prefix_len: int) -> Interval:
    """Per-entry softmax bounds over the live prefix; tail entries are exactly 0.

    For entry i the extremes put x_i at its own bound and every rival at the
    opposite one, so with shifted exponentials e_lo/e_hi:

        p_i >= e_lo[i] / (e_lo[i] + sum_{j != i} e_hi[j])
        p_i <= e_hi[i] / (e_hi[i] + sum_{j != i} e_lo[j])
    """
    n = x.shape[-1]
    if not 1 <= prefix_len <= n:
        raise ValueError(f"prefix_len must be in [1, {n}], got {prefix_len}")
    lo_live = x.lo[..., :prefix_len]
    hi_live = x.hi[..., :prefix_len]
    shift = hi_live.max(axis=-1, keepdims=True)
    e_lo = np.exp(lo_live - shift)
    e_hi = np.exp(hi_live - shift)
    sum_lo = e_lo.sum(axis=-1, keepdims=True)
    sum_hi = e_hi.sum(axis=-1, keepdims=True)
    rivals_hi = np.maximum(sum_hi - e_hi, 0.0)
    rivals_lo = np.maximum(sum_lo - e_lo, 0.0)
    den_lo = e_lo + rivals_hi
    den_hi = e_hi + rivals_lo
    # A vanished denominator means everything underflowed; fall back to the
    # trivially sound probability bound on that side.
    p_lo = np.where(den_lo > 0, e_lo / np.where(den_lo > 0, den_lo, 1.0), 0.0)
    p_hi = np.where(den_hi > 0, e_hi / np.where(den_hi > 0, den_hi, 1.0), 1.0)
    out_lo = np.zeros(x.shape)
    out_hi = np.zeros(x.shape)
    out_lo[..., :prefix_len] = np.clip(p_lo, 0.0, 1.0)
    out_hi[..., :prefix_len] = np.clip(p_hi, 0.0, 1.0)
    return Interval(out_lo, out_hi)


def _silu(x: np.ndarray) -> np.ndarray:
    # Branch on sign so neither exp can overflow.
    pos = x >= 0
    safe_neg = np.where(pos, 0.0, x)
    e = np.exp(safe_neg)
    return np.where(pos, x / (1.0 + np.exp(-np.where(pos, x, 0.0))), x * e / (1.0 + e))


def interval_silu(x: Interval) -> Interval:
    """silu is unimodal with a single minimum; extremes sit at endpoints or there."""
    f_lo, f_hi = _silu(x.lo), _silu(x.hi)
    upper = np.maximum(f_lo, f_hi)
    lower = np.minimum(f_lo, f_hi)
    covers_min = (x.lo <= _SILU_ARGMIN) & (x.hi >= _SILU_ARGMIN)
    lower = np.where(covers_min, _SILU_MIN, lower)
    return Interval(lower, upper)


def interval_swiglu(gate: Interval, up: Interval) -> Interval:
    return interval_silu(gate).mul(up)


def quant_widen_per_token(x: Interval, bits: int) -> Interval:
    """Envelope after dynamic per-token asymmetric quantization.

    The realized scale is span/(2^bits - 1) for the row's realized span,
    which cannot exceed the interval's worst-case span, and the rounding
    error is at most half a step.
    """
    if bits < 2:
        raise ValueError(f"bits must be >= 2, got {bits}")
    span = x.hi.max(axis=-1, keepdims=True) - x.lo.min(axis=-1, keepdims=True)
    margin = span / (2**bits - 1) / 2.0
    return x.widen(np.broadcast_to(margin, x.shape))


def quant_widen_static_symmetric(x: Interval, scale: float) -> Interval:
    """Envelope after static symmetric INT8 quantization under a fixed scale.

    The quantizer is a nondecreasing step function of its input, so mapping
    the endpoints through it gives a tight, sound enclosure (this also covers
    saturation, where the error can exceed half a step).
    """
    if scale <= 0:
        raise ValueError("scale must be > 0")

    def q(v: np.ndarray) -> np.ndarray:
        return np.clip(np.round(v / scale), -127, 127) * scale

    return Interval(q(x.lo), q(x.hi))


# ---------------------------------------------------------------------------
# Whole-path propagation
# ---------------------------------------------------------------------------


class _IntervalCache:
    """Interval keys/values per layer, mirroring KvCache append order."""

    def __init__(self, n_layers: int):
        self._k: list[list[Interval]] = [[] for _ in range(n_layers)]
        self._v: list[list[Interval]] = [[] for _ in range(n_layers)]

    def append(self, layer: int, k: Interval, v: Interval) -> None:
        self._k[layer].append(k)
        self._v[layer].append(v)

    def view(self, layer: int) -> tuple[Interval, Interval]:
        ks = self._k[layer]
        vs = self._v[layer]
        k = Interval(np.concatenate([i.lo for i in ks]), np.concatenate([i.hi for i in ks]))
        v = Interval(np.concatenate([i.lo for i in vs]), np.concatenate([i.hi for i in vs]))
        return k, v


def _interval_linear(x: Interval, w_hat: np.ndarray, act_bits: int) -> Interval:
    """Quantized-path linear: widen for activation quantization, then exact matmul."""
    return quant_widen_per_token(x, act_bits).matmul_exact(w_hat)


def _interval_attention(
    q: Interval,
    k: Interval,
    v: Interval,
    start: int,
    n_q_heads: int,
    scales: AttnQuantScales | None,
) -> Interval:
    """GQA attention enclosure; q is [t, n_q_heads, head_dim], k/v [n_kv, len, hd]."""
    t, _, head_dim = q.shape
    n_kv_heads, cache_len, _ = k.shape
    group = n_q_heads // n_kv_heads
    inv_sqrt = 1.0 / np.sqrt(head_dim)

    if scales is not None:
        q = quant_widen_static_symmetric(q, scales.q_scale)
        k = quant_widen_static_symmetric(k, scales.k_scale)
        v = quant_widen_static_symmetric(v, scales.v_scale)

    out_lo = np.empty((t, n_q_heads, head_dim))
    out_hi = np.empty((t, n_q_heads, head_dim))
    for h in range(n_q_heads):
        kv = h // group
        k_t = Interval(k.lo[kv].T, k.hi[kv].T)  # [head_dim, cache_len]
        scores = q[:, h, :].matmul(k_t).scale(inv_sqrt)  # [t, cache_len]
        probs_lo = np.zeros((t, cache_len))
        probs_hi = np.zeros((t, cache_len))
        for i in range(t):
            p = interval_softmax_row(scores[i], start + i + 1)
            probs_lo[i], probs_hi[i] = p.lo, p.hi
        probs = Interval(probs_lo, probs_hi)
        if scales is not None:
            probs = quant_widen_static_symmetric(probs, scales.p_scale)
        ctx = probs.matmul(v[kv])
        out_lo[:, h, :], out_hi[:, h, :] = ctx.lo, ctx.hi
    return Interval(out_lo, out_hi)


def _interval_block(
    x: Interval,
    weights: BlockWeights,
    w_hat: dict[str, np.ndarray],
    model: ModelSpec,
    cache: _IntervalCache,
    layer: int,
    start: int,
    act_bits: int,
    attn_scales: AttnQuantScales | None,
) -> Interval:
    t = x.shape[0]
    head_dim = model.head_dim
    positions = np.arange(start, start + t)

    xn = interval_rmsnorm(x, weights.norm_attn)
    q = _interval_linear(xn, w_hat["wq"], act_bits).reshape(t, model.n_q_heads, head_dim)
    k = _interval_linear(xn, w_hat["wk"], act_bits).reshape(t, model.n_kv_heads, head_dim)
    v = _interval_linear(xn, w_hat["wv"], act_bits).reshape(t, model.n_kv_heads, head_dim)
    q = interval_rope(q, positions, model.rope_theta)
    k = interval_rope(k, positions, model.rope_theta)

    # Store as [n_kv_heads, t, head_dim] to match the value cache layout.
    cache.append(layer,
                 Interval(np.transpose(k.lo, (1, 0, 2)), np.transpose(k.hi, (1, 0, 2))).reshape(
                     model.n_kv_heads, t, head_dim),
                 Interval(np.transpose(v.lo, (1, 0, 2)), np.transpose(v.hi, (1, 0, 2))).reshape(
                     model.n_kv_heads, t, head_dim))
    k_all, v_all = cache.view(layer)
    ctx = _interval_attention(q, k_all, v_all, start, model.n_q_heads, attn_scales)
    h = x.add(_interval_linear(ctx.reshape(t, model.n_q_heads * head_dim), w_hat["wo"], act_bits))

    hn = interval_rmsnorm(h, weights.norm_ffn)
    act = interval_swiglu(_interval_linear(hn, w_hat["w_gate"], act_bits),
                          _interval_linear(hn, w_hat["w_up"], act_bits))
    return h.add(_interval_linear(act, w_hat["w_down"], act_bits))


def quantized_logits_interval(
    toy: ToyModel,
    token_ids: list[int],
    act_bits: int = 4,
    return_trace: bool = False,
) -> Interval | tuple[Interval, list[Interval]]:
    """Enclosure of the quantized-path prefill logits for a prompt.

    Mirrors the quantized execution path step for step: exact embeddings,
    per-linear activation-quantization widening, exact dequantized weights,
    interval attention (with the static INT8 stage when the model carries
    calibrated scales), and the final normalized LM head projection.

    Enclosures stay tight for shallow stacks but, like all elementwise
    interval arithmetic, widen rapidly with depth (normalization divisions
    and attention products compound); they remain sound throughout.  With
    ``return_trace`` the per-layer hidden-state enclosures come back too.
    """
    if not token_ids:
        raise ValueError("prompt must contain at least one token")
    model = toy.model
    w_hats = [
        {name: qw.dequantized() for name, qw in layer_q.items()}
        for layer_q in toy.quantized_weights()
    ]
    cache = _IntervalCache(model.n_layers)
    x = Interval.exact(toy.embedding[np.asarray(token_ids, dtype=np.int64)])
    trace: list[Interval] = []
    for layer, block in enumerate(toy.blocks):
        scales = toy.attn_scales[layer] if toy.attn_scales else None
        x = _interval_block(x, block, w_hats[layer], model, cache, layer, 0,
                            act_bits, scales)
        trace.append(x)
    xn = interval_rmsnorm(x, toy.final_norm)
    logits = _interval_linear(xn, toy.quantized_lm_head().dequantized(), act_bits)
    return (logits, trace) if return_trace else logits


def error_bound(interval: Interval, float_out: np.ndarray) -> np.ndarray:
    """Per-element bound on |quantized - float| implied by the enclosure."""
    float_out = np.asarray(float_out, dtype=np.float64)
    return np.maximum(interval.hi - float_out, float_out - interval.lo)
