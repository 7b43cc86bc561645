"""Desk-scale decoder kernels used to validate dataflows functionally.

Everything runs in float64 numpy for oracle stability (a float32 mode exists
for realism).  The quantized execution path mirrors the integer engines: all
dense projections run through the fused integer matmul with per-token
asymmetric INT4 activations and per-channel symmetric INT4 weights, and the
two attention matmuls optionally run with static symmetric INT8 operands.
Quantized linears are computed exactly (integer dots, rational scale
combination), so a dequantize-then-multiply oracle reproduces them bit for
bit and the surrounding float ops stay identical between path and oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .config import ModelSpec, QuantSpec
from .quant import (
    QuantizedTensor,
    WeightSidecar,
    compute_quant_params,
    dequantize,
    fused_int_matmul,
    quantize,
)

Path = Literal["float", "quantized"]

ACT_QUANT_SPEC = QuantSpec(bits=4, symmetry="asymmetric", granularity="per_token", mode="dynamic")
WEIGHT_QUANT_SPEC = QuantSpec(bits=4, symmetry="symmetric", granularity="per_channel", mode="static")


@dataclass
class AttnStats:
    """Instrumentation for attention allocations (used by memory-bound checks)."""

    calls: int = 0
    max_score_elements: int = 0
    max_cache_len: int = 0

    def record(self, score_elements: int, cache_len: int) -> None:
        self.calls += 1
        self.max_score_elements = max(self.max_score_elements, score_elements)
        self.max_cache_len = max(self.max_cache_len, cache_len)


@dataclass(frozen=True)
class AttnQuantScales:
    """Static symmetric per-tensor INT8 scales for the two attention matmuls."""

    q_scale: float
    k_scale: float
    p_scale: float
    v_scale: float

    def __post_init__(self) -> None:
        for name in ("q_scale", "k_scale", "p_scale", "v_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


# ---------------------------------------------------------------------------
# Elementwise / normalization kernels
# ---------------------------------------------------------------------------


def rmsnorm(x: np.ndarray, gamma: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Root-mean-square normalization: ``x / sqrt(mean(x^2) + eps) * gamma``."""
    x = np.asarray(x, dtype=np.float64)
    denom = np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + eps)
    return x / denom * gamma


def layernorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Mean-and-variance normalization, provided alongside the RMS variant."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.mean(np.square(x - mu), axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def swiglu(gate: np.ndarray, up: np.ndarray) -> np.ndarray:
    """Gated activation ``silu(gate) * up``."""
    gate = np.asarray(gate, dtype=np.float64)
    return gate / (1.0 + np.exp(-gate)) * np.asarray(up, dtype=np.float64)


def softmax_row(x: np.ndarray, prefix_len: int) -> np.ndarray:
    """Max-subtracted softmax over the first ``prefix_len`` entries; rest are 0."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if not 1 <= prefix_len <= n:
        raise ValueError(f"prefix_len must be in [1, {n}], got {prefix_len}")
    live = x[..., :prefix_len]
    e = np.exp(live - live.max(axis=-1, keepdims=True))
    out = np.zeros_like(x)
    out[..., :prefix_len] = e / e.sum(axis=-1, keepdims=True)
    return out


def rope_angles(positions: np.ndarray, head_dim: int, theta: float = 10000.0
                ) -> tuple[np.ndarray, np.ndarray]:
    """(cos, sin) rotation tables, [tokens, head_dim/2], for the rotary embedding."""
    positions = np.asarray(positions, dtype=np.float64)
    freqs = theta ** (-2.0 * np.arange(head_dim // 2) / head_dim)
    angles = positions[:, None] * freqs[None, :]
    return np.cos(angles), np.sin(angles)


def rope(x: np.ndarray, positions: np.ndarray, theta: float = 10000.0) -> np.ndarray:
    """Rotary position embedding over interleaved (even, odd) pairs.

    Pair ``i`` of a head rotates by ``pos * theta**(-2i/head_dim)``; each
    rotation preserves the pair's norm.  ``x`` is [tokens, heads, head_dim]
    with an even head_dim.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[-1] % 2:
        raise ValueError(f"expected [tokens, heads, even head_dim], got shape {x.shape}")
    head_dim = x.shape[-1]
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape != (x.shape[0],):
        raise ValueError(f"positions must have shape ({x.shape[0]},), got {positions.shape}")
    cos, sin = rope_angles(positions, head_dim, theta)
    cos = cos[:, None, :]
    sin = sin[:, None, :]
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def greedy_sample(logits: np.ndarray) -> int:
    """Index of the maximum logit; ties resolve to the lowest index."""
    logits = np.asarray(logits)
    if logits.ndim != 1 or logits.size == 0:
        raise ValueError(f"expected a non-empty 1-D logit vector, got shape {logits.shape}")
    return int(np.argmax(logits))


# ---------------------------------------------------------------------------
# Linear layers
# ---------------------------------------------------------------------------


@dataclass
class QuantizedWeight:
    """A weight matrix prepared for the fused integer path."""

    qt: QuantizedTensor
    sidecar: WeightSidecar

    @classmethod
    def prepare(cls, w: np.ndarray) -> "QuantizedWeight":
        spec = QuantSpec(4, "symmetric", "per_channel", "dynamic")
        params = compute_quant_params(w, spec, role="weight")
        qt = quantize(w, params, 4)
        return cls(qt=qt, sidecar=WeightSidecar.from_quantized(qt))

    def dequantized(self) -> np.ndarray:
        return dequantize(self.qt)


def linear_forward(
    x: np.ndarray,
    w: np.ndarray | QuantizedWeight,
    path: Path = "float",
) -> np.ndarray:
    """Dense projection on either execution path.

    The quantized path dynamically quantizes activations per token
    (asymmetric INT4) and runs the fused integer matmul against per-channel
    symmetric INT4 weights; raw float weights are prepared on the fly.
    """
    x = np.asarray(x, dtype=np.float64)
    if path == "float":
        wf = w.dequantized() if isinstance(w, QuantizedWeight) else np.asarray(w, dtype=np.float64)
        return x @ wf
    if path != "quantized":
        raise ValueError(f"path must be 'float' or 'quantized', got {path!r}")
    qw = w if isinstance(w, QuantizedWeight) else QuantizedWeight.prepare(np.asarray(w))
    act_params = compute_quant_params(x, ACT_QUANT_SPEC, role="activation")
    act = quantize(x, act_params, ACT_QUANT_SPEC.bits)
    return fused_int_matmul(act, qw.qt, qw.sidecar)


# ---------------------------------------------------------------------------
# KV cache and attention
# ---------------------------------------------------------------------------


class KvCache:
    """Per-layer key/value stores shaped [n_kv_heads, max_seq_len, head_dim]."""

    def __init__(self, n_layers: int, n_kv_heads: int, max_seq_len: int, head_dim: int):
        if min(n_layers, n_kv_heads, max_seq_len, head_dim) < 1:
            raise ValueError("all cache dimensions must be >= 1")
        self.n_layers = n_layers
        self.n_kv_heads = n_kv_heads
        self.max_seq_len = max_seq_len
        self.head_dim = head_dim
        self._k = [np.zeros((n_kv_heads, max_seq_len, head_dim)) for _ in range(n_layers)]
        self._v = [np.zeros((n_kv_heads, max_seq_len, head_dim)) for _ in range(n_layers)]
        self._len = [0] * n_layers

    def length(self, layer: int) -> int:
        return self._len[layer]

    def append(self, layer: int, k_new: np.ndarray, v_new: np.ndarray) -> None:
        """Append [tokens, n_kv_heads, head_dim] keys/values for one layer."""
        t = k_new.shape[0]
        if k_new.shape != (t, self.n_kv_heads, self.head_dim) or v_new.shape != k_new.shape:
            raise ValueError(
                f"expected [t, {self.n_kv_heads}, {self.head_dim}] tensors, "
                f"got k {k_new.shape}, v {v_new.shape}"
            )
        start = self._len[layer]
        if start + t > self.max_seq_len:
            raise ValueError(
                f"cache overflow on layer {layer}: {start} + {t} > {self.max_seq_len}"
            )
        self._k[layer][:, start : start + t] = np.transpose(k_new, (1, 0, 2))
        self._v[layer][:, start : start + t] = np.transpose(v_new, (1, 0, 2))
        self._len[layer] = start + t

    def view(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        """Live (keys, values) for one layer: [n_kv_heads, len, head_dim]."""
        n = self._len[layer]
        return self._k[layer][:, :n], self._v[layer][:, :n]


def _static_int8(x: np.ndarray, scale: float) -> np.ndarray:
    """Symmetric per-tensor INT8 codes under a fixed scale."""
    return np.clip(np.round(x / scale), -127, 127)


def gqa_attention(
    q: np.ndarray,
    cache: KvCache,
    layer: int,
    new_kv: tuple[np.ndarray, np.ndarray],
    scales: AttnQuantScales | None = None,
    stats: AttnStats | None = None,
) -> np.ndarray:
    """Grouped-query causal attention against the growing cache.

    ``q`` is [tokens, n_q_heads, head_dim]; ``new_kv`` holds this step's
    [tokens, n_kv_heads, head_dim] keys/values, appended before scoring.
    Query heads map onto cache heads by the group ratio.  With ``scales``
    set, both attention matmuls run on static symmetric INT8 operands.
    """
    t, n_q_heads, head_dim = q.shape
    cache.append(layer, *new_kv)
    keys, values = cache.view(layer)
    n_kv_heads, cache_len, _ = keys.shape
    if n_q_heads % n_kv_heads:
        raise ValueError(f"n_q_heads={n_q_heads} not a multiple of n_kv_heads={n_kv_heads}")
    group = n_q_heads // n_kv_heads
    start = cache_len - t  # absolute position of the first new token

    if scales is not None:
        q_eff = _static_int8(q, scales.q_scale) * scales.q_scale
        k_eff = _static_int8(keys, scales.k_scale) * scales.k_scale
        v_eff = _static_int8(values, scales.v_scale) * scales.v_scale
    else:
        q_eff, k_eff, v_eff = q, keys, values

    if stats is not None:
        stats.record(score_elements=n_q_heads * t * cache_len, cache_len=cache_len)

    out = np.empty_like(q)
    inv_sqrt = 1.0 / np.sqrt(head_dim)
    for h in range(n_q_heads):
        kv = h // group
        scores = (q_eff[:, h, :] @ k_eff[kv].T) * inv_sqrt  # [t, cache_len]
        probs = np.zeros_like(scores)
        for i in range(t):
            probs[i] = softmax_row(scores[i], start + i + 1)
        if scales is not None:
            probs = _static_int8(probs, scales.p_scale) * scales.p_scale
        out[:, h, :] = probs @ v_eff[kv]
    return out


# ---------------------------------------------------------------------------
# Decoder blocks and the toy model
# ---------------------------------------------------------------------------


@dataclass
class BlockWeights:
    """One pre-norm decoder block's parameters."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w_gate: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray
    norm_attn: np.ndarray
    norm_ffn: np.ndarray

    _LINEARS = ("wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down")


def decoder_block_forward(
    x: np.ndarray,
    weights: BlockWeights,
    model: ModelSpec,
    cache: KvCache,
    layer: int,
    path: Path = "float",
    quant_weights: dict[str, QuantizedWeight] | None = None,
    attn_scales: AttnQuantScales | None = None,
    stats: AttnStats | None = None,
) -> np.ndarray:
    """Pre-norm residual block: attention sublayer then gated FFN sublayer."""
    t = x.shape[0]
    head_dim = model.head_dim

    def lin(name: str, inp: np.ndarray) -> np.ndarray:
        if path == "quantized" and quant_weights is not None:
            return linear_forward(inp, quant_weights[name], "quantized")
        return linear_forward(inp, getattr(weights, name), path)

    positions = np.arange(cache.length(layer), cache.length(layer) + t)
    xn = rmsnorm(x, weights.norm_attn)
    q = lin("wq", xn).reshape(t, model.n_q_heads, head_dim)
    k = lin("wk", xn).reshape(t, model.n_kv_heads, head_dim)
    v = lin("wv", xn).reshape(t, model.n_kv_heads, head_dim)
    q = rope(q, positions, model.rope_theta)
    k = rope(k, positions, model.rope_theta)
    ctx = gqa_attention(q, cache, layer, (k, v), scales=attn_scales, stats=stats)
    h = x + lin("wo", ctx.reshape(t, model.n_q_heads * head_dim))

    hn = rmsnorm(h, weights.norm_ffn)
    act = swiglu(lin("w_gate", hn), lin("w_up", hn))
    return h + lin("w_down", act)


class ToyModel:
    """A small decoder-only model over the shared ModelSpec shape.

    Holds float64 parameters; the quantized execution path is derived from
    them on demand and cached.  ``vocab_size`` equals the LM head width.
    """

    def __init__(self, model: ModelSpec, blocks: list[BlockWeights],
                 embedding: np.ndarray, final_norm: np.ndarray, lm_head: np.ndarray,
                 max_seq_len: int = 4096):
        if len(blocks) != model.n_layers:
            raise ValueError(f"expected {model.n_layers} blocks, got {len(blocks)}")
        if embedding.shape != (model.d_lm_head, model.d_h):
            raise ValueError(f"embedding must be [{model.d_lm_head}, {model.d_h}]")
        if lm_head.shape != (model.d_h, model.d_lm_head):
            raise ValueError(f"lm_head must be [{model.d_h}, {model.d_lm_head}]")
        self.model = model
        self.blocks = blocks
        self.embedding = embedding
        self.final_norm = final_norm
        self.lm_head = lm_head
        self.max_seq_len = max_seq_len
        self.attn_scales: list[AttnQuantScales] | None = None
        self._quant_cache: list[dict[str, QuantizedWeight]] | None = None
        self._quant_lm_head: QuantizedWeight | None = None

    # -- construction -------------------------------------------------------

    @classmethod
    def random(cls, model: ModelSpec, seed: int = 0, max_seq_len: int = 4096) -> "ToyModel":
        rng = np.random.default_rng(seed)

        def mat(d_in: int, d_out: int) -> np.ndarray:
            return rng.normal(scale=1.0 / np.sqrt(d_in), size=(d_in, d_out))

        blocks = [
            BlockWeights(
                wq=mat(model.d_h, model.d_h),
                wk=mat(model.d_h, model.d_kv),
                wv=mat(model.d_h, model.d_kv),
                wo=mat(model.d_h, model.d_h),
                w_gate=mat(model.d_h, model.d_ffn),
                w_up=mat(model.d_h, model.d_ffn),
                w_down=mat(model.d_ffn, model.d_h),
                norm_attn=np.ones(model.d_h),
                norm_ffn=np.ones(model.d_h),
            )
            for _ in range(model.n_layers)
        ]
        return cls(
            model=model,
            blocks=blocks,
            embedding=rng.normal(scale=1.0, size=(model.d_lm_head, model.d_h)),
            final_norm=np.ones(model.d_h),
            lm_head=mat(model.d_h, model.d_lm_head),
            max_seq_len=max_seq_len,
        )

    # -- quantized-path preparation ------------------------------------------

    def quantized_weights(self) -> list[dict[str, QuantizedWeight]]:
        if self._quant_cache is None:
            self._quant_cache = [
                {name: QuantizedWeight.prepare(getattr(b, name)) for name in BlockWeights._LINEARS}
                for b in self.blocks
            ]
        return self._quant_cache

    def quantized_lm_head(self) -> QuantizedWeight:
        if self._quant_lm_head is None:
            self._quant_lm_head = QuantizedWeight.prepare(self.lm_head)
        return self._quant_lm_head

    def calibrate_attention_scales(self, token_ids: list[int]) -> list[AttnQuantScales]:
        """Derive static INT8 attention scales from a float pass over a prompt."""
        model = self.model
        cache = self.new_cache()
        x = self.embedding[np.asarray(token_ids, dtype=np.int64)]
        scales: list[AttnQuantScales] = []
        for layer, block in enumerate(self.blocks):
            xn = rmsnorm(x, block.norm_attn)
            t = x.shape[0]
            positions = np.arange(t)
            q = rope((xn @ block.wq).reshape(t, model.n_q_heads, model.head_dim), positions,
                     model.rope_theta)
            k = rope((xn @ block.wk).reshape(t, model.n_kv_heads, model.head_dim), positions,
                     model.rope_theta)
            v = (xn @ block.wv).reshape(t, model.n_kv_heads, model.head_dim)
            scales.append(
                AttnQuantScales(
                    q_scale=max(np.abs(q).max(), 1e-12) / 127.0,
                    k_scale=max(np.abs(k).max(), 1e-12) / 127.0,
                    p_scale=1.0 / 127.0,  # probabilities lie in [0, 1]
                    v_scale=max(np.abs(v).max(), 1e-12) / 127.0,
                )
            )
            x = decoder_block_forward(x, block, model, cache, layer, "float")
        self.attn_scales = scales
        return scales

    # -- forward passes -------------------------------------------------------

    def new_cache(self, max_seq_len: int | None = None) -> KvCache:
        return KvCache(
            self.model.n_layers,
            self.model.n_kv_heads,
            max_seq_len or self.max_seq_len,
            self.model.head_dim,
        )

    def forward_embeddings(
        self,
        embs: np.ndarray,
        cache: KvCache | None = None,
        path: Path = "float",
        stats: AttnStats | None = None,
    ) -> np.ndarray:
        """Run the block stack over raw input embeddings; returns final hidden states."""
        cache = cache if cache is not None else self.new_cache(max(embs.shape[0], 1))
        x = np.asarray(embs, dtype=np.float64)
        quants = self.quantized_weights() if path == "quantized" else None
        for layer, block in enumerate(self.blocks):
            x = decoder_block_forward(
                x, block, self.model, cache, layer, path,
                quant_weights=quants[layer] if quants else None,
                attn_scales=self.attn_scales[layer] if self.attn_scales and path == "quantized" else None,
                stats=stats,
            )
        return x

    def layer_states(
        self,
        token_ids: list[int],
        path: Path = "float",
        stats: AttnStats | None = None,
    ) -> list[np.ndarray]:
        """Embedding plus the hidden states after each block, over a fresh cache."""
        if not token_ids:
            raise ValueError("prompt must contain at least one token")
        cache = self.new_cache()
        x = self.embedding[np.asarray(token_ids, dtype=np.int64)]
        states = [x]
        quants = self.quantized_weights() if path == "quantized" else None
        for layer, block in enumerate(self.blocks):
            x = decoder_block_forward(
                x, block, self.model, cache, layer, path,
                quant_weights=quants[layer] if quants else None,
                attn_scales=self.attn_scales[layer] if self.attn_scales and path == "quantized" else None,
                stats=stats,
            )
            states.append(x)
        return states

    def logits(self, hidden: np.ndarray, path: Path = "float") -> np.ndarray:
        normed = rmsnorm(hidden, self.final_norm)
        if path == "quantized":
            return linear_forward(normed, self.quantized_lm_head(), "quantized")
        return normed @ self.lm_head

    def prefill(
        self,
        token_ids: list[int],
        cache: KvCache | None = None,
        path: Path = "float",
        stats: AttnStats | None = None,
    ) -> tuple[np.ndarray, KvCache]:
        """Process a whole prompt; returns logits for every position and the cache."""
        if not token_ids:
            raise ValueError("prompt must contain at least one token")
        cache = cache if cache is not None else self.new_cache()
        hidden = self.forward_embeddings(
            self.embedding[np.asarray(token_ids, dtype=np.int64)], cache, path, stats
        )
        return self.logits(hidden, path), cache

    def decode_step(
        self,
        token_id: int,
        cache: KvCache,
        path: Path = "float",
        stats: AttnStats | None = None,
    ) -> np.ndarray:
        """Process one token against the cache; returns its logit row."""
        hidden = self.forward_embeddings(
            self.embedding[np.asarray([token_id], dtype=np.int64)], cache, path, stats
        )
        return self.logits(hidden, path)[0]

    def generate(
        self,
        prompt_ids: list[int],
        n_tokens: int,
        path: Path = "float",
        stats: AttnStats | None = None,
    ) -> list[int]:
        """Greedy continuation of a prompt."""
        logits, cache = self.prefill(prompt_ids, path=path, stats=stats)
        out = [greedy_sample(logits[-1])]
        for _ in range(n_tokens - 1):
            out.append(greedy_sample(self.decode_step(out[-1], cache, path, stats)))
        return out
