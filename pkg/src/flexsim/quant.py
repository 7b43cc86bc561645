"""Uniform integer quantization primitives and the fast Hadamard transform.

Quantization follows the affine model ``x ~ s * q + b`` with round-half-even
and saturating clamp.  Symmetric mode uses the signed range
``[-(2^(N-1)-1), 2^(N-1)-1]`` with ``b = 0``; asymmetric mode uses the
unsigned range ``[0, 2^N - 1]`` with ``b = min(x)``.  Degenerate groups
(all-zero symmetric, constant asymmetric) would make the scale ill-defined;
they take the sentinel ``s = 1`` so that ``q = 0`` reconstructs the constant
exactly.

The fused integer matmul reconstructs a per-token-asymmetric activation times
per-channel-symmetric weight product from integer dot products and column
sums alone; intermediate arithmetic is exact (int64 dots, rational scale
combination), so it matches a dequantize-then-multiply oracle bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Literal

import numpy as np

from .config import QuantSpec, validate_quant_spec

Symmetry = Literal["symmetric", "asymmetric"]
Granularity = Literal["per_tensor", "per_token", "per_channel"]

_GRANULARITY_AXIS = {"per_tensor": None, "per_token": 0, "per_channel": 1}


@dataclass
class QuantParams:
    """Scale/offset arrays for one tensor at a given grouping.

    Shapes: scalar for per_tensor, one entry per row (token) for per_token,
    one per column (output channel) for per_channel.
    """

    scale: np.ndarray
    zero: np.ndarray
    symmetry: str
    granularity: str

    @property
    def axis(self) -> int | None:
        return _GRANULARITY_AXIS[self.granularity]

    def broadcast_to(self, shape: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
        """Scale/zero expanded for elementwise use against a tensor of ``shape``."""
        if self.granularity == "per_tensor":
            return self.scale, self.zero
        if self.granularity == "per_token":
            extra = (1,) * (len(shape) - 1)
            return self.scale.reshape((-1,) + extra), self.zero.reshape((-1,) + extra)
        return self.scale.reshape((1, -1)), self.zero.reshape((1, -1))


@dataclass
class QuantizedTensor:
    """Integer codes plus the parameters needed to reconstruct them."""

    q: np.ndarray
    bits: int
    params: QuantParams

    def __post_init__(self) -> None:
        lo, hi = quant_range(self.bits, self.params.symmetry)
        if self.q.size and (self.q.min() < lo or self.q.max() > hi):
            raise ValueError(
                f"quantized values out of range [{lo}, {hi}] for bits={self.bits}, "
                f"symmetry={self.params.symmetry}"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.q.shape


@dataclass
class WeightSidecar:
    """Per-output-channel metadata a fused matmul needs: scales and column sums."""

    scales: np.ndarray
    col_sums: np.ndarray

    @classmethod
    def from_quantized(cls, w: QuantizedTensor) -> "WeightSidecar":
        if w.params.granularity != "per_channel" or w.params.symmetry != "symmetric":
            raise ValueError(
                "weight sidecar requires per_channel symmetric quantization, got "
                f"{w.params.granularity}/{w.params.symmetry}"
            )
        return cls(scales=w.params.scale.copy(), col_sums=w.q.astype(np.int64).sum(axis=0))

    def verify(self, w: QuantizedTensor) -> None:
        """Raise if this sidecar does not describe ``w``."""
        if not np.array_equal(self.scales, w.params.scale):
            raise ValueError("sidecar scales do not match the quantized weight's scales")
        recomputed = w.q.astype(np.int64).sum(axis=0)
        if not np.array_equal(self.col_sums, recomputed):
            raise ValueError("sidecar column sums do not match the quantized weight")


def quant_range(bits: int, symmetry: str) -> tuple[int, int]:
    """Saturating clamp range for a bit width and symmetry mode."""
    if bits not in (4, 8):
        raise ValueError(f"bits must be 4 or 8, got {bits}")
    if symmetry == "symmetric":
        m = 2 ** (bits - 1) - 1
        return -m, m
    if symmetry == "asymmetric":
        return 0, 2**bits - 1
    raise ValueError(f"symmetry must be 'symmetric' or 'asymmetric', got {symmetry!r}")


def _check_finite(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot quantize an empty tensor")
    if not np.isfinite(x).all():
        raise ValueError("tensor contains NaN or infinity")
    return x


def compute_quant_params(x: np.ndarray, spec: QuantSpec, role: str | None = None) -> QuantParams:
    """Derive scale/offset groups for ``x`` under ``spec``.

    per_token groups rows (2-D activations), per_channel groups columns (2-D
    weights).  Degenerate groups take the ``s = 1`` sentinel described in the
    module docstring instead of failing.
    """
    validate_quant_spec(spec, role=role)
    x = _check_finite(x)
    axis = _GRANULARITY_AXIS[spec.granularity]
    if axis is not None and x.ndim != 2:
        raise ValueError(
            f"{spec.granularity} grouping needs a 2-D tensor, got shape {x.shape}"
        )

    reduce_axis = None if axis is None else (1 - axis)
    if spec.symmetry == "symmetric":
        absmax = np.max(np.abs(x), axis=reduce_axis)
        qmax = 2 ** (spec.bits - 1) - 1
        scale = absmax / qmax
        scale = np.where(absmax == 0.0, 1.0, scale)
        zero = np.zeros_like(scale)
    else:
        x_min = np.min(x, axis=reduce_axis)
        x_max = np.max(x, axis=reduce_axis)
        span = x_max - x_min
        scale = span / (2**spec.bits - 1)
        scale = np.where(span == 0.0, 1.0, scale)
        zero = x_min
    return QuantParams(
        scale=np.asarray(scale, dtype=np.float64),
        zero=np.asarray(zero, dtype=np.float64),
        symmetry=spec.symmetry,
        granularity=spec.granularity,
    )


def quantize(x: np.ndarray, params: QuantParams, bits: int) -> QuantizedTensor:
    """Round ``(x - b) / s`` half-even and clamp into the integer range."""
    x = _check_finite(x)
    scale, zero = params.broadcast_to(x.shape)
    if np.any(scale <= 0):
        raise ValueError("scale entries must be > 0")
    lo, hi = quant_range(bits, params.symmetry)
    q = np.clip(np.round((x - zero) / scale), lo, hi).astype(np.int32)
    return QuantizedTensor(q=q, bits=bits, params=params)


def dequantize(qt: QuantizedTensor) -> np.ndarray:
    """Reconstruct ``s * q + b`` in float64."""
    scale, zero = qt.params.broadcast_to(qt.q.shape)
    return qt.q.astype(np.float64) * scale + zero


def quantize_tensor(
    x: np.ndarray, spec: QuantSpec, params: QuantParams | None = None, role: str | None = None
) -> QuantizedTensor:
    """One-call quantization honoring the spec's static/dynamic mode.

    Static mode refuses to derive parameters from the data: they must come
    precomputed (from a calibration pass or a params file).
    """
    if spec.mode == "static":
        if params is None:
            raise ValueError("static quantization requires precomputed params")
    elif params is None:
        params = compute_quant_params(x, spec, role=role)
    return quantize(x, params, spec.bits)


def fused_int_matmul(
    act: QuantizedTensor,
    w: QuantizedTensor,
    sidecar: WeightSidecar,
    return_exact: bool = False,
) -> np.ndarray:
    """Integer-domain GEMM over quantized operands.

    For per-token-asymmetric activations (scale ``s_x``, offset ``b_x``) and
    per-channel-symmetric weights (scale ``s_w``):

        Y[t, o] = s_x[t] * s_w[o] * sum_k qx[t, k] * qw[k, o]
                  + b_x[t] * s_w[o] * col_sum_w[o]

    Dot products run in int64 and scales combine as exact rationals, so the
    float64 result is the correctly rounded value of the exact product.  With
    ``return_exact=True`` the raw Fractions come back instead.
    """
    if act.params.granularity != "per_token" or act.params.symmetry != "asymmetric":
        raise ValueError(
            "fused matmul expects per_token asymmetric activations, got "
            f"{act.params.granularity}/{act.params.symmetry}"
        )
    if w.params.granularity != "per_channel" or w.params.symmetry != "symmetric":
        raise ValueError(
            "fused matmul expects per_channel symmetric weights, got "
            f"{w.params.granularity}/{w.params.symmetry}"
        )
    if act.q.ndim != 2 or w.q.ndim != 2 or act.q.shape[1] != w.q.shape[0]:
        raise ValueError(f"shape mismatch: act {act.q.shape} @ w {w.q.shape}")
    sidecar.verify(w)

    dots = act.q.astype(np.int64) @ w.q.astype(np.int64)
    t_count, o_count = dots.shape
    s_x = [Fraction(v) for v in act.params.scale.tolist()]
    b_x = [Fraction(v) for v in act.params.zero.tolist()]
    s_w = [Fraction(v) for v in sidecar.scales.tolist()]
    col = [int(v) for v in sidecar.col_sums.tolist()]

    exact = [
        [s_x[t] * s_w[o] * int(dots[t, o]) + b_x[t] * s_w[o] * col[o] for o in range(o_count)]
        for t in range(t_count)
    ]
    if return_exact:
        out = np.empty((t_count, o_count), dtype=object)
        for t in range(t_count):
            for o in range(o_count):
                out[t, o] = exact[t][o]
        return out
    return np.array([[float(v) for v in row] for row in exact], dtype=np.float64)


# ---------------------------------------------------------------------------
# Fast Hadamard transform
# ---------------------------------------------------------------------------


def fht(x: np.ndarray, normalize: Literal["none", "orthonormal"] = "none") -> np.ndarray:
    """In-place-style radix-2 Walsh-Hadamard butterfly over the last axis.

    Natural (Sylvester) ordering: applying the transform twice returns
    ``n * x``.  Orthonormal mode scales by ``1/sqrt(n)`` so the transform is
    an isometry.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError(f"transform length must be a power of two, got {n}")
    out = x.copy()
    flat = out.reshape(-1, n)
    h = 1
    while h < n:
        blocks = flat.reshape(flat.shape[0], n // (2 * h), 2, h)
        top = blocks[:, :, 0, :] + blocks[:, :, 1, :]
        bot = blocks[:, :, 0, :] - blocks[:, :, 1, :]
        flat = np.concatenate([top[:, :, None, :], bot[:, :, None, :]], axis=2).reshape(-1, n)
        h *= 2
    result = flat.reshape(x.shape)
    if normalize == "orthonormal":
        result = result / np.sqrt(n)
    elif normalize != "none":
        raise ValueError(f"normalize must be 'none' or 'orthonormal', got {normalize!r}")
    return result
