"""Exhaustive design-space search over stage parallelism knobs.

The spaces at play are small enough (thousands of candidates) that exact
enumeration beats a solver: every candidate is scored with the same exact
rational latency model the estimator uses, so the returned optimum is the
true optimum, with deterministic lexicographic tie-breaking.  A monotone
bandwidth prune is available and provably never changes the result: demand
grows pointwise with every weight-parallelism knob.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .config import (
    ConfigValidationError,
    DecodeConfig,
    DeviceSpec,
    ModelSpec,
    PrefillConfig,
    ResourceCostModel,
    _read_json,
    check_resource_usage,
    default_resource_cost_model,
    validate_stage_config,
)
from .perf import (
    BandwidthEstimate,
    LatencyEstimate,
    decode_bandwidth,
    decode_stage_latency,
    prefill_bandwidth,
    prefill_stage_latency,
    stage_resource_usage,
)

# Fraction of the device budget a stage may occupy, leaving headroom for the
# host shell and routing.
RESOURCE_HEADROOM = 0.8


class SearchError(Exception):
    """Base class for search failures."""


class EmptySearchSpaceError(SearchError):
    """No candidate survived the compatibility filter."""


class InfeasibleSearchError(SearchError):
    """Every candidate violated at least one constraint."""

    def __init__(self, message: str, tightest_constraint: str, violation_counts: Mapping[str, int]):
        self.tightest_constraint = tightest_constraint
        self.violation_counts = dict(violation_counts)
        super().__init__(message)


@dataclass(frozen=True)
class SearchSpace:
    """Candidate value sets per knob; explicit sets override the defaults."""

    stage: str
    tp: tuple[int, ...] = ()
    wp_kqvo: tuple[int, ...] = ()
    wp_mha: tuple[int, ...] = ()
    wp_ffn: tuple[int, ...] = ()
    bp: tuple[int, ...] = ()
    wp_int4: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.stage not in ("prefill", "decode"):
            raise ValueError(f"stage must be 'prefill' or 'decode', got {self.stage!r}")

    def to_json_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"stage": self.stage}
        for name in ("tp", "wp_kqvo", "wp_mha", "wp_ffn", "bp", "wp_int4"):
            values = getattr(self, name)
            if values:
                out[name] = list(values)
        return out


def _sorted_unique(values: Iterable[int], name: str) -> tuple[int, ...]:
    out = sorted(set(int(v) for v in values))
    if any(v < 1 for v in out):
        raise ValueError(f"{name} candidates must be >= 1")
    return tuple(out)


def load_search_space(path: str | Path, stage: str) -> SearchSpace:
    data = _read_json(path)
    kwargs: dict[str, Any] = {"stage": stage}
    for name in ("tp", "wp_kqvo", "wp_mha", "wp_ffn", "bp", "wp_int4"):
        if name in data:
            kwargs[name] = _sorted_unique(data[name], name)
    return SearchSpace(**kwargs)


def _divisor_candidates(dim: int, limit: int = 4096) -> tuple[int, ...]:
    """Divisors of ``dim`` up to ``limit``, thinned to 8-aligned values above 8."""
    out = [d for d in range(1, min(dim, limit) + 1) if dim % d == 0 and (d <= 8 or d % 8 == 0)]
    return tuple(out)


def default_search_space(stage: str, model: ModelSpec) -> SearchSpace:
    """Reasonable candidate sets derived from the model dimensions."""
    token_par = (1, 2, 4, 8, 16, 32, 64)
    if stage == "prefill":
        return SearchSpace(
            stage="prefill",
            tp=token_par,
            wp_kqvo=_divisor_candidates(min(model.d_h, model.d_kv)),
            wp_mha=_divisor_candidates(model.head_dim * model.n_kv_heads),
            wp_ffn=_divisor_candidates(model.d_ffn),
        )
    if stage == "decode":
        return SearchSpace(
            stage="decode",
            bp=token_par + (128,),
            wp_int4=_divisor_candidates(model.d_h * model.d_kv),
            wp_mha=_divisor_candidates(model.d_h),
        )
    raise ValueError(f"stage must be 'prefill' or 'decode', got {stage!r}")


def enumerate_candidates(
    space: SearchSpace, model: ModelSpec
) -> Iterator[PrefillConfig | DecodeConfig]:
    """Yield the Cartesian product in lexicographic order, filtered for validity.

    Raises EmptySearchSpaceError at exhaustion if nothing survived the filter.
    """
    produced = False
    if space.stage == "prefill":
        sets = [_sorted_unique(getattr(space, n), n) for n in ("tp", "wp_kqvo", "wp_mha", "wp_ffn")]
        if any(not s for s in sets):
            raise EmptySearchSpaceError("prefill space needs tp, wp_kqvo, wp_mha, wp_ffn candidates")
        for tp in sets[0]:
            for wpk in sets[1]:
                for wpm in sets[2]:
                    for wpf in sets[3]:
                        cfg = PrefillConfig(tp, wpk, wpm, wpf)
                        if validate_stage_config(cfg, model).ok:
                            produced = True
                            yield cfg
    else:
        sets = [_sorted_unique(getattr(space, n), n) for n in ("bp", "wp_int4", "wp_mha")]
        if any(not s for s in sets):
            raise EmptySearchSpaceError("decode space needs bp, wp_int4, wp_mha candidates")
        for bp in sets[0]:
            for wp4 in sets[1]:
                for wpm in sets[2]:
                    cfg = DecodeConfig(bp, wp4, wpm)
                    if validate_stage_config(cfg, model).ok:
                        produced = True
                        yield cfg
    if not produced:
        raise EmptySearchSpaceError("no candidate passed the compatibility filter")


@dataclass(frozen=True)
class DseResult:
    """Optimal config with its exact score and search statistics."""

    stage: str
    best_config: PrefillConfig | DecodeConfig
    latency: LatencyEstimate
    bandwidth: BandwidthEstimate
    resources: Mapping[str, float]
    slack: Mapping[str, float]
    explored_count: int
    feasible_count: int
    feasible: tuple[tuple[tuple[int, ...], Fraction], ...] = field(repr=False, default=())

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "best_config": self.best_config.to_json_dict(),
            "latency": self.latency.to_json_dict(),
            "bandwidth": self.bandwidth.to_json_dict(),
            "resources": {k: v for k, v in sorted(self.resources.items())},
            "slack": {k: v for k, v in sorted(self.slack.items())},
            "explored_count": self.explored_count,
            "feasible_count": self.feasible_count,
        }


def _prefill_latency_pair(model: ModelSpec, cfg: PrefillConfig, l_p: int) -> tuple[int, int]:
    """(numerator, denominator) of the exact prefill cycle count."""
    d_h, d_kv, d_ffn = model.d_h, model.d_kv, model.d_ffn
    tp, wpk, wpm, wpf = cfg.tp, cfg.wp_kqvo, cfg.wp_mha, cfg.wp_ffn
    inner = d_h * d_kv * wpm * wpf + max(
        d_h * d_h * wpm * wpf, d_h * l_p * wpk * wpf, d_h * d_ffn * wpk * wpm
    )
    return model.n_layers * l_p * inner, tp * wpk * wpm * wpf


def _decode_latency_pair(model: ModelSpec, cfg: DecodeConfig, l_p: int, l_d: int) -> tuple[int, int]:
    """(numerator, denominator) of the exact decode cycle count."""
    n, d_h = model.n_layers, model.d_h
    wp4, wpm = cfg.wp_int4, cfg.wp_mha
    serial_num = n * (2 * d_h * model.d_kv + d_h * d_h + 3 * d_h * model.d_ffn) + d_h * model.d_lm_head
    inner = 2 * wpm * serial_num + max(2 * wpm * n * d_h * d_h, wp4 * n * d_h * (2 * l_p + l_d))
    return l_d * inner, 2 * wp4 * wpm


def _search(
    stage: str,
    model: ModelSpec,
    device: DeviceSpec,
    space: SearchSpace,
    l_p: int,
    l_d: int,
    cost_model: ResourceCostModel,
    prune: bool,
) -> DseResult:
    freq = device.freq_hz
    budget = device.resource_budget
    explored = 0
    feasible: list[tuple[tuple[int, ...], Fraction]] = []
    violations = {"bandwidth": 0}
    for kind in budget:
        violations[f"resource:{kind}"] = 0

    best_pair: tuple[int, int] | None = None
    best_cfg: PrefillConfig | DecodeConfig | None = None

    # The innermost knob is a weight-parallelism degree and streaming demand
    # grows monotonically with it, so after a bandwidth violation the rest of
    # that innermost row can be skipped without changing the optimum.
    pruned_row: tuple[int, ...] | None = None
    for cfg in enumerate_candidates(space, model):
        if prune and pruned_row is not None and cfg.as_tuple()[:-1] == pruned_row:
            continue
        pruned_row = None
        explored += 1

        bw = prefill_bandwidth(cfg, freq) if stage == "prefill" else decode_bandwidth(cfg, freq)
        if bw.total_bytes_per_s > device.peak_bw_bytes_per_s:
            violations["bandwidth"] += 1
            if prune:
                pruned_row = cfg.as_tuple()[:-1]
            continue

        usage = stage_resource_usage(cfg, cost_model)
        over = False
        for kind, used in usage.items():
            if kind not in budget:
                raise ConfigValidationError(
                    f"resource_budget.{kind}",
                    "device budget does not define a kind referenced by the cost model",
                )
            if used > RESOURCE_HEADROOM * budget[kind]:
                violations[f"resource:{kind}"] += 1
                over = True
        if over:
            continue

        pair = (
            _prefill_latency_pair(model, cfg, l_p)
            if stage == "prefill"
            else _decode_latency_pair(model, cfg, l_p, l_d)
        )
        feasible.append((cfg.as_tuple(), Fraction(*pair)))
        # Strict improvement keeps the lexicographically smallest config on ties,
        # because enumeration order is lexicographic ascending.
        if best_pair is None or pair[0] * best_pair[1] < best_pair[0] * pair[1]:
            best_pair, best_cfg = pair, cfg

    if best_cfg is None:
        tightest = max(violations, key=lambda k: (violations[k], k))
        raise InfeasibleSearchError(
            f"no feasible {stage} configuration in a space of {explored} candidates; "
            f"tightest constraint: {tightest} ({violations[tightest]} violations)",
            tightest_constraint=tightest,
            violation_counts=violations,
        )

    if stage == "prefill":
        latency = prefill_stage_latency(model, best_cfg, l_p, freq)
        bandwidth = prefill_bandwidth(best_cfg, freq)
    else:
        latency = decode_stage_latency(model, best_cfg, l_p, l_d, freq)
        bandwidth = decode_bandwidth(best_cfg, freq)
    resources = stage_resource_usage(best_cfg, cost_model)
    slack: dict[str, float] = {
        "bandwidth_bytes_per_s": float(
            Fraction(device.peak_bw_bytes_per_s) - bandwidth.total_bytes_per_s
        )
    }
    slack.update(check_resource_usage(resources, budget, headroom=RESOURCE_HEADROOM))
    return DseResult(
        stage=stage,
        best_config=best_cfg,
        latency=latency,
        bandwidth=bandwidth,
        resources=resources,
        slack=slack,
        explored_count=explored,
        feasible_count=len(feasible),
        feasible=tuple(feasible),
    )


def optimize_prefill(
    model: ModelSpec,
    device: DeviceSpec,
    space: SearchSpace | None = None,
    l_p: int = 1024,
    cost_model: ResourceCostModel | None = None,
    prune: bool = True,
) -> DseResult:
    """Minimize exact prefill latency subject to bandwidth and fabric budgets."""
    if space is None:
        space = default_search_space("prefill", model)
    if space.stage != "prefill":
        raise ValueError(f"space.stage must be 'prefill', got {space.stage!r}")
    if l_p < 1:
        raise ValueError(f"l_p must be >= 1, got {l_p}")
    return _search(
        "prefill", model, device, space, l_p, 0, cost_model or default_resource_cost_model(), prune
    )


def optimize_decode(
    model: ModelSpec,
    device: DeviceSpec,
    space: SearchSpace | None = None,
    l_p: int = 1024,
    l_d: int = 1024,
    cost_model: ResourceCostModel | None = None,
    prune: bool = True,
) -> DseResult:
    """Minimize exact decode latency subject to bandwidth and fabric budgets."""
    if space is None:
        space = default_search_space("decode", model)
    if space.stage != "decode":
        raise ValueError(f"space.stage must be 'decode', got {space.stage!r}")
    if l_p < 0 or l_d < 1:
        raise ValueError(f"need l_p >= 0 and l_d >= 1, got l_p={l_p}, l_d={l_d}")
    return _search(
        "decode", model, device, space, l_p, l_d, cost_model or default_resource_cost_model(), prune
    )


def merge_best(a: DseResult, b: DseResult) -> DseResult:
    """Combine results from disjoint grid slices; associative and commutative.

    Picks the lower exact latency, breaking ties toward the lexicographically
    smaller config, and pools the search statistics.
    """
    if a.stage != b.stage:
        raise ValueError(f"cannot merge results for stages {a.stage!r} and {b.stage!r}")
    if a.latency.cycles < b.latency.cycles:
        winner, loser = a, b
    elif b.latency.cycles < a.latency.cycles:
        winner, loser = b, a
    else:
        winner, loser = (a, b) if a.best_config.as_tuple() <= b.best_config.as_tuple() else (b, a)
    return DseResult(
        stage=winner.stage,
        best_config=winner.best_config,
        latency=winner.latency,
        bandwidth=winner.bandwidth,
        resources=winner.resources,
        slack=winner.slack,
        explored_count=a.explored_count + b.explored_count,
        feasible_count=a.feasible_count + b.feasible_count,
        feasible=a.feasible + b.feasible,
    )
