"""Shared configuration types: devices, models, stage parallelism, quantization.

All specs load from plain JSON, validate eagerly with field-level error
messages, and round-trip through ``to_json_dict`` without loss.  Dataclass
construction itself performs no validation so that hypothetical values can be
fed to the arithmetic models in tests; ``validate_*`` / ``load_*`` are the
gatekeepers.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

CONFIG_DIR_ENV = "FLEXSIM_CONFIG_DIR"

RESOURCE_KINDS = ("CLB", "DSP", "LUT", "FF", "BRAM", "URAM")

QUANT_BITS = (4, 8)
QUANT_SYMMETRIES = ("symmetric", "asymmetric")
QUANT_GRANULARITIES = ("per_tensor", "per_token", "per_channel")
QUANT_MODES = ("static", "dynamic")


class ConfigError(Exception):
    """Base class for configuration problems."""


class ConfigParseError(ConfigError):
    """File missing, unreadable, or not valid JSON."""


class ConfigValidationError(ConfigError):
    """Structurally valid JSON with an out-of-contract value.

    ``field_name`` names the offending field so callers and tests can pin
    failures precisely.
    """

    def __init__(self, field_name: str, message: str):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


def resolve_config_path(path: str | Path) -> Path:
    """Resolve a config path, honoring the FLEXSIM_CONFIG_DIR environment var.

    Absolute paths and paths that exist as given win; otherwise a relative
    path is tried under the configured directory.
    """
    p = Path(path)
    if p.is_absolute() or p.exists():
        return p
    base = os.environ.get(CONFIG_DIR_ENV)
    if base:
        candidate = Path(base) / p
        if candidate.exists():
            return candidate
    return p


def _read_json(path: str | Path) -> dict[str, Any]:
    p = resolve_config_path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigParseError(f"cannot read config file {p}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(f"invalid JSON in {p}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigParseError(f"top-level JSON value in {p} must be an object")
    return data


def _require(data: Mapping[str, Any], key: str, ctx: str) -> Any:
    if key not in data:
        raise ConfigValidationError(f"{ctx}.{key}" if ctx else key, "missing required field")
    return data[key]


def _as_pos_int(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigValidationError(name, f"expected a positive integer, got {value!r}")
    if isinstance(value, float):
        if not value.is_integer():
            raise ConfigValidationError(name, f"expected an integer, got {value!r}")
        value = int(value)
    if value <= 0:
        raise ConfigValidationError(name, f"must be >= 1, got {value}")
    return value


def _as_pos_number(value: Any, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigValidationError(name, f"expected a positive number, got {value!r}")
    if value <= 0:
        raise ConfigValidationError(name, f"must be > 0, got {value}")
    return float(value)


# ---------------------------------------------------------------------------
# Device
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeviceSpec:
    """An accelerator card: clock class, HBM bandwidth/capacity, power, fabric."""

    name: str
    freq_hz: int
    peak_bw_bytes_per_s: int
    hbm_capacity_bytes: int
    avg_power_w: float
    resource_budget: Mapping[str, float] = field(default_factory=dict)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "freq_hz": self.freq_hz,
            "peak_bw_bytes_per_s": self.peak_bw_bytes_per_s,
            "hbm_capacity_bytes": self.hbm_capacity_bytes,
            "avg_power_w": self.avg_power_w,
            "resource_budget": dict(self.resource_budget),
        }


def validate_device_spec(spec: DeviceSpec) -> DeviceSpec:
    if not spec.name:
        raise ConfigValidationError("name", "must be a non-empty string")
    _as_pos_int(spec.freq_hz, "freq_hz")
    _as_pos_int(spec.peak_bw_bytes_per_s, "peak_bw_bytes_per_s")
    _as_pos_int(spec.hbm_capacity_bytes, "hbm_capacity_bytes")
    _as_pos_number(spec.avg_power_w, "avg_power_w")
    for kind, amount in spec.resource_budget.items():
        if kind not in RESOURCE_KINDS:
            raise ConfigValidationError(
                "resource_budget", f"unknown resource kind {kind!r}; expected one of {RESOURCE_KINDS}"
            )
        _as_pos_number(amount, f"resource_budget.{kind}")
    return spec


def load_device_spec(path: str | Path) -> DeviceSpec:
    data = _read_json(path)
    spec = DeviceSpec(
        name=str(_require(data, "name", "")),
        freq_hz=_as_pos_int(_require(data, "freq_hz", ""), "freq_hz"),
        peak_bw_bytes_per_s=_as_pos_int(
            _require(data, "peak_bw_bytes_per_s", ""), "peak_bw_bytes_per_s"
        ),
        hbm_capacity_bytes=_as_pos_int(
            _require(data, "hbm_capacity_bytes", ""), "hbm_capacity_bytes"
        ),
        avg_power_w=_as_pos_number(_require(data, "avg_power_w", ""), "avg_power_w"),
        resource_budget=dict(data.get("resource_budget", {})),
    )
    return validate_device_spec(spec)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """Decoder-only transformer shape shared by every latency model and kernel."""

    name: str
    n_layers: int
    d_h: int
    d_kv: int
    d_ffn: int
    d_lm_head: int
    n_q_heads: int
    n_kv_heads: int
    rope_theta: float = 10000.0

    @property
    def head_dim(self) -> int:
        return self.d_h // self.n_q_heads

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "n_layers": self.n_layers,
            "d_h": self.d_h,
            "d_kv": self.d_kv,
            "d_ffn": self.d_ffn,
            "d_lm_head": self.d_lm_head,
            "n_q_heads": self.n_q_heads,
            "n_kv_heads": self.n_kv_heads,
            "rope_theta": self.rope_theta,
        }


def validate_model_spec(spec: ModelSpec) -> ModelSpec:
    for name in ("n_layers", "d_h", "d_kv", "d_ffn", "d_lm_head", "n_q_heads", "n_kv_heads"):
        _as_pos_int(getattr(spec, name), name)
    _as_pos_number(spec.rope_theta, "rope_theta")
    if spec.n_q_heads % spec.n_kv_heads != 0:
        raise ConfigValidationError(
            "n_kv_heads",
            f"n_q_heads={spec.n_q_heads} must be a multiple of n_kv_heads={spec.n_kv_heads}",
        )
    if spec.d_h % spec.n_q_heads != 0:
        raise ConfigValidationError(
            "n_q_heads", f"d_h={spec.d_h} must be divisible by n_q_heads={spec.n_q_heads}"
        )
    head_dim = spec.d_h // spec.n_q_heads
    if spec.n_kv_heads * head_dim != spec.d_kv:
        raise ConfigValidationError(
            "d_kv",
            f"d_kv={spec.d_kv} must equal n_kv_heads*head_dim={spec.n_kv_heads}*{head_dim}"
            f"={spec.n_kv_heads * head_dim}",
        )
    return spec


def load_model_spec(path: str | Path) -> ModelSpec:
    data = _read_json(path)
    kwargs: dict[str, Any] = {"name": str(_require(data, "name", ""))}
    for name in ("n_layers", "d_h", "d_kv", "d_ffn", "d_lm_head", "n_q_heads", "n_kv_heads"):
        kwargs[name] = _as_pos_int(_require(data, name, ""), name)
    if "rope_theta" in data:
        kwargs["rope_theta"] = _as_pos_number(data["rope_theta"], "rope_theta")
    if "head_dim" in data:
        declared = _as_pos_int(data["head_dim"], "head_dim")
        derived = kwargs["d_h"] // kwargs["n_q_heads"]
        if declared != derived:
            raise ConfigValidationError(
                "head_dim", f"declared {declared} but d_h/n_q_heads = {derived}"
            )
    return validate_model_spec(ModelSpec(**kwargs))


# ---------------------------------------------------------------------------
# Stage parallelism configs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrefillConfig:
    """Compute-bound stage knobs: token parallelism plus per-engine weight parallelism."""

    tp: int
    wp_kqvo: int
    wp_mha: int
    wp_ffn: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.tp, self.wp_kqvo, self.wp_mha, self.wp_ffn)

    def to_json_dict(self) -> dict[str, Any]:
        return {"tp": self.tp, "wp_kqvo": self.wp_kqvo, "wp_mha": self.wp_mha, "wp_ffn": self.wp_ffn}


@dataclass(frozen=True)
class DecodeConfig:
    """Bandwidth-bound stage knobs: block parallelism plus shared-engine weight parallelism."""

    bp: int
    wp_int4: int
    wp_mha: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.bp, self.wp_int4, self.wp_mha)

    def to_json_dict(self) -> dict[str, Any]:
        return {"bp": self.bp, "wp_int4": self.wp_int4, "wp_mha": self.wp_mha}


@dataclass(frozen=True)
class HmtConfig:
    """Long-context memory plug-in shape: segmentation and retrieval knobs."""

    segment_len: int
    memory_queue_len: int
    summary_half: int
    short_term_len: int
    bp: int
    wp_mem_attn: int

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "segment_len": self.segment_len,
            "memory_queue_len": self.memory_queue_len,
            "summary_half": self.summary_half,
            "short_term_len": self.short_term_len,
            "bp": self.bp,
            "wp_mem_attn": self.wp_mem_attn,
        }


def tile_compatible(wp: int, dim: int) -> bool:
    """Whether a weight-parallelism degree streams evenly against a dimension.

    Exact divisors always tile evenly.  Multiples of 8 are accepted for any
    dimension: weight streams are burst-aligned in 8-element groups, so the
    engine keeps all lanes busy even when the final tile wraps a column
    boundary (the latency models charge the fractional cycle exactly and
    report the ceiling).
    """
    return wp % 8 == 0 or dim % wp == 0


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of every invariant checked for one stage config."""

    checks: tuple[CheckResult, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> tuple[CheckResult, ...]:
        return tuple(c for c in self.checks if not c.passed)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "checks": [
                {"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks
            ],
        }


def validate_stage_config(
    cfg: PrefillConfig | DecodeConfig, model: ModelSpec
) -> ValidationReport:
    """Check a stage config against a model shape; report every invariant."""
    checks: list[CheckResult] = []

    def check(name: str, passed: bool, detail: str) -> None:
        checks.append(CheckResult(name, bool(passed), detail))

    if isinstance(cfg, PrefillConfig):
        for fname in ("tp", "wp_kqvo", "wp_mha", "wp_ffn"):
            v = getattr(cfg, fname)
            check(f"positive:{fname}", isinstance(v, int) and v >= 1, f"{fname}={v}")
        if all(c.passed for c in checks):
            check(
                "tile:wp_kqvo",
                tile_compatible(cfg.wp_kqvo, model.d_h) and tile_compatible(cfg.wp_kqvo, model.d_kv),
                f"wp_kqvo={cfg.wp_kqvo} vs d_h={model.d_h}, d_kv={model.d_kv}",
            )
            check(
                "tile:wp_mha",
                tile_compatible(cfg.wp_mha, model.head_dim * model.n_kv_heads),
                f"wp_mha={cfg.wp_mha} vs head_dim*n_kv_heads={model.head_dim * model.n_kv_heads}",
            )
            check(
                "tile:wp_ffn",
                tile_compatible(cfg.wp_ffn, model.d_ffn),
                f"wp_ffn={cfg.wp_ffn} vs d_ffn={model.d_ffn}",
            )
    elif isinstance(cfg, DecodeConfig):
        for fname in ("bp", "wp_int4", "wp_mha"):
            v = getattr(cfg, fname)
            check(f"positive:{fname}", isinstance(v, int) and v >= 1, f"{fname}={v}")
        if all(c.passed for c in checks):
            check(
                "divisibility:bp",
                cfg.wp_int4 % cfg.bp == 0,
                f"bp={cfg.bp} must divide wp_int4={cfg.wp_int4}",
            )
            check(
                "tile:wp_int4",
                tile_compatible(cfg.wp_int4, model.d_h),
                f"wp_int4={cfg.wp_int4} vs d_h={model.d_h}",
            )
            check(
                "tile:wp_mha",
                tile_compatible(cfg.wp_mha, model.d_kv),
                f"wp_mha={cfg.wp_mha} vs d_kv={model.d_kv}",
            )
    else:
        raise TypeError(f"unsupported stage config type: {type(cfg).__name__}")

    return ValidationReport(tuple(checks))


def ensure_valid_stage_config(cfg: PrefillConfig | DecodeConfig, model: ModelSpec) -> None:
    report = validate_stage_config(cfg, model)
    if not report.ok:
        first = report.failures[0]
        raise ConfigValidationError(first.name.split(":")[-1], first.detail)


def validate_hmt_config(cfg: HmtConfig) -> HmtConfig:
    for name in ("segment_len", "memory_queue_len", "bp", "wp_mem_attn"):
        _as_pos_int(getattr(cfg, name), name)
    for name in ("summary_half", "short_term_len"):
        v = getattr(cfg, name)
        if not isinstance(v, int) or v < 0:
            raise ConfigValidationError(name, f"must be a non-negative integer, got {v!r}")
    if cfg.summary_half > cfg.segment_len:
        raise ConfigValidationError(
            "summary_half", f"summary_half={cfg.summary_half} exceeds segment_len={cfg.segment_len}"
        )
    if cfg.short_term_len > cfg.segment_len:
        raise ConfigValidationError(
            "short_term_len",
            f"short_term_len={cfg.short_term_len} exceeds segment_len={cfg.segment_len}",
        )
    return cfg


def _parse_hmt(data: Mapping[str, Any], ctx: str) -> HmtConfig:
    segment_len = _as_pos_int(_require(data, "segment_len", ctx), f"{ctx}.segment_len")
    cfg = HmtConfig(
        segment_len=segment_len,
        memory_queue_len=_as_pos_int(
            _require(data, "memory_queue_len", ctx), f"{ctx}.memory_queue_len"
        ),
        summary_half=int(data.get("summary_half", segment_len // 2)),
        short_term_len=int(data.get("short_term_len", segment_len // 2)),
        bp=_as_pos_int(_require(data, "bp", ctx), f"{ctx}.bp"),
        wp_mem_attn=_as_pos_int(_require(data, "wp_mem_attn", ctx), f"{ctx}.wp_mem_attn"),
    )
    return validate_hmt_config(cfg)


@dataclass(frozen=True)
class ArchConfig:
    """Per-stage parallelism configs plus the achieved clock for each stage.

    Any subset of stages may be present; absent stages are ``None``.
    ``decode_submodules`` is carried as opaque floorplanning metadata and has
    no effect on the latency models.
    """

    prefill: PrefillConfig | None = None
    prefill_freq_hz: int | None = None
    decode: DecodeConfig | None = None
    decode_freq_hz: int | None = None
    decode_submodules: int | None = None
    hmt: HmtConfig | None = None
    hmt_freq_hz: int | None = None

    def to_json_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        if self.prefill is not None:
            out["prefill"] = self.prefill.to_json_dict()
            if self.prefill_freq_hz is not None:
                out["prefill"]["freq_hz"] = self.prefill_freq_hz
        if self.decode is not None:
            out["decode"] = self.decode.to_json_dict()
            if self.decode_freq_hz is not None:
                out["decode"]["freq_hz"] = self.decode_freq_hz
            if self.decode_submodules is not None:
                out["decode"]["submodules"] = self.decode_submodules
        if self.hmt is not None:
            out["hmt"] = self.hmt.to_json_dict()
            if self.hmt_freq_hz is not None:
                out["hmt"]["freq_hz"] = self.hmt_freq_hz
        return out


def load_arch_config(path: str | Path, model: ModelSpec | None = None) -> ArchConfig:
    """Load stage configs; validates against ``model`` when one is given."""
    data = _read_json(path)
    prefill = prefill_freq = None
    decode = decode_freq = submodules = None
    hmt = hmt_freq = None

    if "prefill" in data:
        p = data["prefill"]
        prefill = PrefillConfig(
            tp=_as_pos_int(_require(p, "tp", "prefill"), "prefill.tp"),
            wp_kqvo=_as_pos_int(_require(p, "wp_kqvo", "prefill"), "prefill.wp_kqvo"),
            wp_mha=_as_pos_int(_require(p, "wp_mha", "prefill"), "prefill.wp_mha"),
            wp_ffn=_as_pos_int(_require(p, "wp_ffn", "prefill"), "prefill.wp_ffn"),
        )
        if "freq_hz" in p:
            prefill_freq = _as_pos_int(p["freq_hz"], "prefill.freq_hz")
    if "decode" in data:
        d = data["decode"]
        decode = DecodeConfig(
            bp=_as_pos_int(_require(d, "bp", "decode"), "decode.bp"),
            wp_int4=_as_pos_int(_require(d, "wp_int4", "decode"), "decode.wp_int4"),
            wp_mha=_as_pos_int(_require(d, "wp_mha", "decode"), "decode.wp_mha"),
        )
        if "freq_hz" in d:
            decode_freq = _as_pos_int(d["freq_hz"], "decode.freq_hz")
        if "submodules" in d:
            submodules = _as_pos_int(d["submodules"], "decode.submodules")
    if "hmt" in data:
        h = data["hmt"]
        hmt = _parse_hmt(h, "hmt")
        if "freq_hz" in h:
            hmt_freq = _as_pos_int(h["freq_hz"], "hmt.freq_hz")

    if prefill is None and decode is None and hmt is None:
        raise ConfigValidationError(
            "stages", "architecture config must define at least one of prefill/decode/hmt"
        )
    if model is not None:
        if prefill is not None:
            ensure_valid_stage_config(prefill, model)
        if decode is not None:
            ensure_valid_stage_config(decode, model)
    return ArchConfig(
        prefill=prefill,
        prefill_freq_hz=prefill_freq,
        decode=decode,
        decode_freq_hz=decode_freq,
        decode_submodules=submodules,
        hmt=hmt,
        hmt_freq_hz=hmt_freq,
    )


# ---------------------------------------------------------------------------
# Quantization spec
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuantSpec:
    """How one tensor class is quantized: width, symmetry, grouping, timing."""

    bits: int
    symmetry: str
    granularity: str
    mode: str = "dynamic"

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "bits": self.bits,
            "symmetry": self.symmetry,
            "granularity": self.granularity,
            "mode": self.mode,
        }


def validate_quant_spec(spec: QuantSpec, role: str | None = None) -> QuantSpec:
    """Validate a QuantSpec; ``role`` ('weight'/'activation') gates granularity."""
    if spec.bits not in QUANT_BITS:
        raise ConfigValidationError("bits", f"must be one of {QUANT_BITS}, got {spec.bits}")
    if spec.symmetry not in QUANT_SYMMETRIES:
        raise ConfigValidationError(
            "symmetry", f"must be one of {QUANT_SYMMETRIES}, got {spec.symmetry!r}"
        )
    if spec.granularity not in QUANT_GRANULARITIES:
        raise ConfigValidationError(
            "granularity", f"must be one of {QUANT_GRANULARITIES}, got {spec.granularity!r}"
        )
    if spec.mode not in QUANT_MODES:
        raise ConfigValidationError("mode", f"must be one of {QUANT_MODES}, got {spec.mode!r}")
    if role == "weight" and spec.granularity == "per_token":
        raise ConfigValidationError("granularity", "per_token grouping applies to activations only")
    if role == "activation" and spec.granularity == "per_channel":
        raise ConfigValidationError("granularity", "per_channel grouping applies to weights only")
    return spec


def load_quant_spec(path: str | Path, role: str | None = None) -> QuantSpec:
    data = _read_json(path)
    spec = QuantSpec(
        bits=int(_require(data, "bits", "")),
        symmetry=str(_require(data, "symmetry", "")),
        granularity=str(_require(data, "granularity", "")),
        mode=str(data.get("mode", "dynamic")),
    )
    return validate_quant_spec(spec, role=role)


# ---------------------------------------------------------------------------
# Resource cost model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResourceCostModel:
    """Fabric cost of instantiating engines.

    ``per_pe`` maps ``(engine_kind, precision)`` to a per-processing-element
    resource vector; ``fixed_per_module`` is charged once per instantiated
    module (control, buffering, stream plumbing).
    """

    per_pe: Mapping[tuple[str, str], Mapping[str, float]]
    fixed_per_module: Mapping[str, float]

    def engine_cost(self, kind: str, precision: str, pe_count: int) -> dict[str, float]:
        """Resource vector for one engine with ``pe_count`` processing elements."""
        if pe_count < 0:
            raise ValueError(f"pe_count must be >= 0, got {pe_count}")
        vec = dict(self.fixed_per_module)
        for res, per in self.per_pe.get((kind, precision), {}).items():
            vec[res] = vec.get(res, 0.0) + per * pe_count
        return vec

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "per_pe": {f"{k}:{p}": dict(v) for (k, p), v in self.per_pe.items()},
            "fixed_per_module": dict(self.fixed_per_module),
        }


def _validate_cost_vector(vec: Mapping[str, float], ctx: str) -> None:
    for res, amount in vec.items():
        if res not in RESOURCE_KINDS:
            raise ConfigValidationError(
                ctx, f"unknown resource kind {res!r}; expected one of {RESOURCE_KINDS}"
            )
        if not isinstance(amount, (int, float)) or isinstance(amount, bool) or amount < 0:
            raise ConfigValidationError(f"{ctx}.{res}", f"cost must be >= 0, got {amount!r}")


def validate_resource_cost_model(model: ResourceCostModel) -> ResourceCostModel:
    for (kind, precision), vec in model.per_pe.items():
        _validate_cost_vector(vec, f"per_pe.{kind}:{precision}")
    _validate_cost_vector(model.fixed_per_module, "fixed_per_module")
    return model


def load_resource_cost_model(path: str | Path) -> ResourceCostModel:
    data = _read_json(path)
    raw = _require(data, "per_pe", "")
    per_pe: dict[tuple[str, str], dict[str, float]] = {}
    for key, vec in raw.items():
        if ":" not in key:
            raise ConfigValidationError("per_pe", f"key {key!r} must look like 'kind:precision'")
        kind, precision = key.split(":", 1)
        per_pe[(kind, precision)] = {r: float(v) for r, v in vec.items()}
    fixed = {r: float(v) for r, v in data.get("fixed_per_module", {}).items()}
    return validate_resource_cost_model(ResourceCostModel(per_pe=per_pe, fixed_per_module=fixed))


def default_resource_cost_model() -> ResourceCostModel:
    """Conservative per-PE fabric costs.

    Calibrated so the shipped reference stage configs land within the
    utilization envelopes of the cards they were measured on; integer MACs
    pack into DSP slices (a packed INT4 MAC costs a quarter slice, INT8 a
    half) with LUT/FF for operand muxing and accumulation.
    """
    return ResourceCostModel(
        per_pe={
            ("linear", "int4"): {"DSP": 0.25, "LUT": 30, "FF": 45, "CLB": 4, "BRAM": 0.02, "URAM": 0.008},
            ("linear", "int8"): {"DSP": 0.5, "LUT": 45, "FF": 70, "CLB": 6, "BRAM": 0.03, "URAM": 0.012},
            ("attention", "int8"): {"DSP": 0.5, "LUT": 45, "FF": 70, "CLB": 6, "BRAM": 0.03, "URAM": 0.012},
        },
        fixed_per_module={"DSP": 16, "LUT": 8000, "FF": 12000, "CLB": 1000, "BRAM": 24, "URAM": 4},
    )


def check_resource_usage(
    usage: Mapping[str, float],
    budget: Mapping[str, float],
    headroom: float = 1.0,
) -> dict[str, float]:
    """Slack per resource kind under ``headroom * budget``; negative means over.

    Raises if the budget is missing a kind the usage references.
    """
    slack: dict[str, float] = {}
    for kind, used in usage.items():
        if kind not in budget:
            raise ConfigValidationError(
                f"resource_budget.{kind}", "budget does not define a kind referenced by the cost model"
            )
        slack[kind] = headroom * budget[kind] - used
    return slack
