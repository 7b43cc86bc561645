"""Declarative architecture graphs over the analytical latency laws.

A graph names the module-engine instances of an accelerator stage and groups
their work into phases.  Each phase holds invocations (an engine plus a
symbolic work product), a repeat count, and optional streaming-dependency
edges.  Semantics:

* serial-lane invocations execute back to back: their latencies add;
* stream-lane invocations overlap: the phase pays the longest dependency
  path through them (with no edges, simply the maximum);
* a phase's cost is ``repeat * (serial sum + stream critical path)`` and the
  graph's cost is the sum over phases.

Per-invocation latency is ``prod(work) / (tp * wp)`` for costed engine kinds
(``linear``, ``attention``); helper kinds (normalization, softmax, rotary,
quantization, sampling, elementwise glue) are latency-hidden behind the
matmul engines they feed and cost zero cycles.  The block-parallel factor
``bp`` replicates token blocks over shared weights, so it affects neither
per-block latency nor weight bandwidth and is carried as metadata only.

Work terms are expressions over the shared shape symbols (``n_layers``,
``d_h``, ``d_kv``, ``d_ffn``, ``d_lm_head``, ``head_dim``, ``l_p``, ``l_d``)
evaluated in exact rational arithmetic, so graph estimates reproduce the
closed-form stage laws bit for bit.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from fractions import Fraction
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Mapping

from .config import (
    CheckResult,
    DecodeConfig,
    DeviceSpec,
    ModelSpec,
    PrefillConfig,
    ResourceCostModel,
    ValidationReport,
    _read_json,
    check_resource_usage,
    default_resource_cost_model,
)
from .dse import RESOURCE_HEADROOM
from .perf import BYTES_PER_WEIGHT, BandwidthEstimate, LatencyEstimate, WorkloadShape

COSTED_KINDS = ("linear", "attention")
HELPER_KINDS = ("norm", "softmax", "rope", "quant", "dequant", "elementwise", "sample", "memory")
LANES = ("serial", "stream")
STAGES = ("prefill", "decode")

STANDARD_SYMBOLS = ("n_layers", "d_h", "d_kv", "d_ffn", "d_lm_head", "head_dim", "l_p", "l_d")


class GraphError(ValueError):
    """A structural or evaluation problem in an architecture graph."""


# ---------------------------------------------------------------------------
# Symbolic work expressions
# ---------------------------------------------------------------------------

_ALLOWED_BINOPS = {ast.Add, ast.Sub, ast.Mult, ast.Div}


def _eval_node(node: ast.AST, bindings: Mapping[str, Fraction], expr: str) -> Fraction:
    if isinstance(node, ast.Expression):
        return _eval_node(node.body, bindings, expr)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise GraphError(f"non-numeric literal in expression {expr!r}")
        # str() keeps decimal literals exact (0.1 -> 1/10), not binary-rounded.
        return Fraction(node.value) if isinstance(node.value, int) else Fraction(str(node.value))
    if isinstance(node, ast.Name):
        if node.id not in bindings:
            raise GraphError(f"unknown symbol {node.id!r} in expression {expr!r}")
        return bindings[node.id]
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        val = _eval_node(node.operand, bindings, expr)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.BinOp) and type(node.op) in _ALLOWED_BINOPS:
        left = _eval_node(node.left, bindings, expr)
        right = _eval_node(node.right, bindings, expr)
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left - right
        if isinstance(node.op, ast.Mult):
            return left * right
        if right == 0:
            raise GraphError(f"division by zero in expression {expr!r}")
        return left / right
    raise GraphError(f"unsupported syntax in expression {expr!r}")


def eval_expr(expr: str, bindings: Mapping[str, Fraction]) -> Fraction:
    """Evaluate an arithmetic expression over named rationals, exactly."""
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise GraphError(f"cannot parse expression {expr!r}: {exc.msg}") from None
    return _eval_node(tree, bindings, expr)


def check_expr(expr: str) -> None:
    """Parse-time validation: syntax plus symbol names, without evaluating."""
    probe = {name: Fraction(1) for name in STANDARD_SYMBOLS}
    try:
        eval_expr(expr, probe)
    except GraphError as exc:
        if "unknown symbol" in str(exc):
            # Custom symbols are allowed; they just must be bound at eval time.
            return
        raise


def standard_bindings(model: ModelSpec, workload: WorkloadShape) -> dict[str, Fraction]:
    return {
        "n_layers": Fraction(model.n_layers),
        "d_h": Fraction(model.d_h),
        "d_kv": Fraction(model.d_kv),
        "d_ffn": Fraction(model.d_ffn),
        "d_lm_head": Fraction(model.d_lm_head),
        "head_dim": Fraction(model.head_dim),
        "l_p": Fraction(workload.l_p),
        "l_d": Fraction(workload.l_d),
    }


# ---------------------------------------------------------------------------
# Graph IR
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GraphNode:
    """One module-engine instance."""

    id: str
    kind: str
    precision: str
    wp: int
    tp: int = 1
    bp: int = 1

    @property
    def costed(self) -> bool:
        return self.kind in COSTED_KINDS

    @property
    def pe_count(self) -> int:
        return self.tp * self.wp

    def latency_divisor(self) -> int:
        return self.tp * self.wp


@dataclass(frozen=True)
class Invocation:
    """A unit of work placed on a node within a phase."""

    node: str
    lane: str
    work: tuple[str, ...]

    def work_product(self, bindings: Mapping[str, Fraction]) -> Fraction:
        total = Fraction(1)
        for term in self.work:
            total *= eval_expr(term, bindings)
        return total


@dataclass(frozen=True)
class Phase:
    """A repeated schedule step: serial invocations plus a streamed DAG.

    ``edges`` are (producer_index, consumer_index) pairs into ``invocations``
    and may only connect stream-lane invocations.
    """

    name: str
    repeat: str
    invocations: tuple[Invocation, ...]
    edges: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class ArchGraph:
    name: str
    stage: str
    nodes: tuple[GraphNode, ...]
    phases: tuple[Phase, ...]

    def node_map(self) -> dict[str, GraphNode]:
        return {n.id: n for n in self.nodes}


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _structural_checks(graph: ArchGraph) -> list[CheckResult]:
    checks: list[CheckResult] = []

    def check(name: str, ok: bool, message: str) -> None:
        checks.append(CheckResult(name=name, passed=ok, detail=message))

    check("stage", graph.stage in STAGES, f"stage {graph.stage!r} must be one of {STAGES}")
    ids = [n.id for n in graph.nodes]
    check("nodes:unique-ids", len(ids) == len(set(ids)), "node ids must be unique")
    check("nodes:nonempty", bool(graph.nodes), "graph must declare at least one node")
    for n in graph.nodes:
        known = n.kind in COSTED_KINDS or n.kind in HELPER_KINDS
        check(f"node:{n.id}:kind", known, f"unknown kind {n.kind!r}")
        check(
            f"node:{n.id}:precision",
            not n.costed or n.precision in BYTES_PER_WEIGHT,
            f"costed node needs a known precision, got {n.precision!r}",
        )
        check(
            f"node:{n.id}:parallel",
            n.wp >= 1 and n.tp >= 1 and n.bp >= 1,
            f"parallel factors must be >= 1, got wp={n.wp} tp={n.tp} bp={n.bp}",
        )

    node_ids = set(ids)
    phase_names = [p.name for p in graph.phases]
    check("phases:unique-names", len(phase_names) == len(set(phase_names)),
          "phase names must be unique")
    check("phases:nonempty", bool(graph.phases), "graph must declare at least one phase")

    for phase in graph.phases:
        prefix = f"phase:{phase.name}"
        try:
            check_expr(phase.repeat)
            check(f"{prefix}:repeat", True, "ok")
        except GraphError as exc:
            check(f"{prefix}:repeat", False, str(exc))
        for i, inv in enumerate(phase.invocations):
            check(f"{prefix}:inv{i}:node", inv.node in node_ids,
                  f"unknown node {inv.node!r}")
            check(f"{prefix}:inv{i}:lane", inv.lane in LANES,
                  f"lane must be one of {LANES}, got {inv.lane!r}")
            check(f"{prefix}:inv{i}:work", bool(inv.work), "work product must be non-empty")
            for term in inv.work:
                try:
                    check_expr(term)
                except GraphError as exc:
                    check(f"{prefix}:inv{i}:work", False, str(exc))
                    break

        n_inv = len(phase.invocations)
        edges_ok = True
        for a, b in phase.edges:
            if not (0 <= a < n_inv and 0 <= b < n_inv) or a == b:
                check(f"{prefix}:edges", False, f"edge ({a}, {b}) out of range")
                edges_ok = False
                break
            if phase.invocations[a].lane != "stream" or phase.invocations[b].lane != "stream":
                check(f"{prefix}:edges", False,
                      f"edge ({a}, {b}) may only connect stream-lane invocations")
                edges_ok = False
                break
        if edges_ok:
            check(f"{prefix}:edges", True, "ok")
            sorter: TopologicalSorter = TopologicalSorter()
            for i in range(n_inv):
                sorter.add(i)
            for a, b in phase.edges:
                sorter.add(b, a)
            try:
                order = list(sorter.static_order())
                check(f"{prefix}:acyclic", True, "ok")
            except CycleError as exc:
                check(f"{prefix}:acyclic", False, f"stream edges form a cycle: {exc.args[1]}")
                order = []

            # An engine may appear in several stream invocations of a phase
            # only if the schedule orders them (a dependency path exists);
            # otherwise it would have to run two streams concurrently.
            if order:
                reach: dict[int, set[int]] = {i: {i} for i in range(n_inv)}
                succ: dict[int, list[int]] = {i: [] for i in range(n_inv)}
                for a, b in phase.edges:
                    succ[a].append(b)
                for i in reversed(order):
                    for j in succ[i]:
                        reach[i] |= reach[j]
                by_node: dict[str, list[int]] = {}
                for i, inv in enumerate(phase.invocations):
                    if inv.lane == "stream":
                        by_node.setdefault(inv.node, []).append(i)
                reuse_ok = True
                for node_id, idxs in by_node.items():
                    for x in idxs:
                        for y in idxs:
                            if x < y and y not in reach[x] and x not in reach[y]:
                                check(f"{prefix}:reuse:{node_id}", False,
                                      f"stream invocations {x} and {y} reuse {node_id!r} "
                                      "without an ordering path")
                                reuse_ok = False
                if reuse_ok:
                    check(f"{prefix}:reuse", True, "ok")
    return checks


def validate_graph(
    graph: ArchGraph,
    device: DeviceSpec | None = None,
    cost_model: ResourceCostModel | None = None,
    freq_hz: int | None = None,
) -> ValidationReport:
    """Structural validation, plus bandwidth/resource feasibility if a device is given."""
    checks = _structural_checks(graph)
    structural_ok = all(c.passed for c in checks)
    if device is not None and structural_ok:
        freq = freq_hz if freq_hz is not None else device.freq_hz
        demand = peak_bandwidth(graph, freq)
        bw_check = demand.check_against(device)
        checks.append(CheckResult(
            name="bandwidth:peak",
            passed=not bw_check.over_subscribed,
            detail=(f"demand {float(demand.total_bytes_per_s):.6g} B/s vs "
                    f"peak {float(device.peak_bw_bytes_per_s):.6g} B/s"),
        ))
        usage = graph_resource_usage(graph, cost_model or default_resource_cost_model())
        try:
            slack = check_resource_usage(
                usage,
                {k: RESOURCE_HEADROOM * v for k, v in device.resource_budget.items()},
            )
            worst = min(slack, key=lambda k: slack[k])
            checks.append(CheckResult(
                name="resource:headroom",
                passed=all(v >= 0 for v in slack.values()),
                detail=f"tightest resource {worst} slack {slack[worst]:.6g}",
            ))
        except Exception as exc:  # budget missing a kind
            checks.append(CheckResult(name="resource:headroom", passed=False, detail=str(exc)))
    return ValidationReport(checks=tuple(checks))


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------


def _phase_latency(
    graph: ArchGraph,
    phase: Phase,
    bindings: Mapping[str, Fraction],
) -> tuple[Fraction, tuple[str, ...]]:
    """(cycles for one repetition, binding stream invocation labels)."""
    nodes = graph.node_map()
    serial_total = Fraction(0)
    stream_latency: dict[int, Fraction] = {}
    for i, inv in enumerate(phase.invocations):
        node = nodes[inv.node]
        if node.costed:
            lat = inv.work_product(bindings) / node.latency_divisor()
        else:
            lat = Fraction(0)
        if lat < 0:
            raise GraphError(f"negative work in phase {phase.name!r}, invocation {i}")
        if inv.lane == "serial":
            serial_total += lat
        else:
            stream_latency[i] = lat

    # Longest dependency path over the streamed DAG.
    preds: dict[int, list[int]] = {i: [] for i in stream_latency}
    sorter: TopologicalSorter = TopologicalSorter()
    for i in stream_latency:
        sorter.add(i)
    for a, b in phase.edges:
        preds[b].append(a)
        sorter.add(b, a)
    path_to: dict[int, Fraction] = {}
    for i in sorter.static_order():
        best_in = max((path_to[p] for p in preds[i]), default=Fraction(0))
        path_to[i] = best_in + stream_latency[i]
    critical = max(path_to.values(), default=Fraction(0))
    binding = tuple(
        f"{phase.name}:{phase.invocations[i].node}"
        for i in sorted(path_to)
        if path_to[i] == critical and critical > 0
    )
    return serial_total + critical, binding


def estimate_graph_latency(
    graph: ArchGraph,
    model: ModelSpec,
    workload: WorkloadShape,
    freq_hz: int | None = None,
    extra_bindings: Mapping[str, Fraction | int] | None = None,
) -> LatencyEstimate:
    """Exact cycle estimate; the breakdown has one entry per phase."""
    report = validate_graph(graph)
    if not report.ok:
        failed = report.failures[0]
        raise GraphError(f"invalid graph {graph.name!r}: {failed.name}: {failed.detail}")
    bindings = standard_bindings(model, workload)
    if extra_bindings:
        bindings.update({k: Fraction(v) for k, v in extra_bindings.items()})

    total = Fraction(0)
    breakdown: dict[str, Fraction] = {}
    binding_terms: list[str] = []
    for phase in graph.phases:
        repeat = eval_expr(phase.repeat, bindings)
        if repeat < 0:
            raise GraphError(f"negative repeat for phase {phase.name!r}")
        once, binding = _phase_latency(graph, phase, bindings)
        cycles = repeat * once
        breakdown[phase.name] = cycles
        binding_terms.extend(binding)
        total += cycles
    return LatencyEstimate(
        cycles=total,
        freq_hz=freq_hz,
        breakdown=breakdown,
        binding_terms=tuple(binding_terms),
    )


def phase_bandwidths(graph: ArchGraph, freq_hz: int) -> dict[str, BandwidthEstimate]:
    """Concurrent weight-stream demand per phase (distinct engines, once each)."""
    nodes = graph.node_map()
    out: dict[str, BandwidthEstimate] = {}
    for phase in graph.phases:
        seen: dict[str, Fraction] = {}
        for inv in phase.invocations:
            node = nodes[inv.node]
            if node.costed and node.id not in seen:
                seen[node.id] = BYTES_PER_WEIGHT[node.precision] * node.wp * freq_hz
        out[phase.name] = BandwidthEstimate(contributions=seen)
    return out


def peak_bandwidth(graph: ArchGraph, freq_hz: int) -> BandwidthEstimate:
    """The phase bandwidth with the highest total demand."""
    per_phase = phase_bandwidths(graph, freq_hz)
    if not per_phase:
        return BandwidthEstimate(contributions={})
    return max(per_phase.values(), key=lambda b: b.total_bytes_per_s)


def graph_resource_usage(
    graph: ArchGraph,
    cost_model: ResourceCostModel,
) -> dict[str, float]:
    """Sum of engine costs over the graph's distinct costed nodes."""
    usage: dict[str, float] = {}
    for node in graph.nodes:
        if not node.costed:
            continue
        cost = cost_model.engine_cost(node.kind, node.precision, node.pe_count)
        for res, amount in cost.items():
            usage[res] = usage.get(res, 0.0) + amount
    return usage


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------


def graph_to_json_dict(graph: ArchGraph) -> dict:
    return {
        "name": graph.name,
        "stage": graph.stage,
        "nodes": [
            {"id": n.id, "kind": n.kind, "precision": n.precision,
             "wp": n.wp, "tp": n.tp, "bp": n.bp}
            for n in graph.nodes
        ],
        "phases": [
            {
                "name": p.name,
                "repeat": p.repeat,
                "invocations": [
                    {"node": i.node, "lane": i.lane, "work": list(i.work)}
                    for i in p.invocations
                ],
                "edges": [list(e) for e in p.edges],
            }
            for p in graph.phases
        ],
    }


def graph_from_json_dict(data: dict) -> ArchGraph:
    try:
        nodes = tuple(
            GraphNode(
                id=str(n["id"]),
                kind=str(n["kind"]),
                precision=str(n.get("precision", "int4")),
                wp=int(n["wp"]),
                tp=int(n.get("tp", 1)),
                bp=int(n.get("bp", 1)),
            )
            for n in data["nodes"]
        )
        phases = tuple(
            Phase(
                name=str(p["name"]),
                repeat=str(p["repeat"]),
                invocations=tuple(
                    Invocation(
                        node=str(i["node"]),
                        lane=str(i.get("lane", "stream")),
                        work=tuple(str(t) for t in i["work"]),
                    )
                    for i in p["invocations"]
                ),
                edges=tuple((int(a), int(b)) for a, b in p.get("edges", ())),
            )
            for p in data["phases"]
        )
        return ArchGraph(
            name=str(data.get("name", "graph")),
            stage=str(data["stage"]),
            nodes=nodes,
            phases=phases,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphError(f"malformed graph JSON: {exc}") from None


def load_graph(path: str | Path) -> ArchGraph:
    return graph_from_json_dict(_read_json(path))


# ---------------------------------------------------------------------------
# Builtin stage graphs
# ---------------------------------------------------------------------------


def build_prefill_graph(cfg: PrefillConfig, name: str = "prefill-reference") -> ArchGraph:
    """The token-parallel prefill schedule behind the closed-form stage law.

    Per layer, the K/V projections stream first (the cache must exist before
    attention), then the remaining projections, both attention matmuls, and
    the three feed-forward projections all stream against each other.
    """
    tp = cfg.tp
    nodes = (
        GraphNode("kqvo_a", "linear", "int4", wp=cfg.wp_kqvo, tp=tp),
        GraphNode("kqvo_b", "linear", "int4", wp=cfg.wp_kqvo, tp=tp),
        GraphNode("mha_score", "attention", "int8", wp=cfg.wp_mha, tp=tp),
        GraphNode("mha_ctx", "attention", "int8", wp=cfg.wp_mha, tp=tp),
        GraphNode("ffn_gate", "linear", "int4", wp=cfg.wp_ffn, tp=tp),
        GraphNode("ffn_up", "linear", "int4", wp=cfg.wp_ffn, tp=tp),
        GraphNode("ffn_down", "linear", "int4", wp=cfg.wp_ffn, tp=tp),
        GraphNode("norm", "norm", "fp16", wp=1, tp=tp),
        GraphNode("rotary", "rope", "fp16", wp=1, tp=tp),
        GraphNode("act_quant", "quant", "int4", wp=1, tp=tp),
    )
    phases = (
        Phase(
            name="kv_store",
            repeat="n_layers",
            invocations=(
                Invocation("norm", "stream", ("l_p", "d_h")),
                Invocation("kqvo_a", "stream", ("l_p", "d_h", "d_kv")),
                Invocation("kqvo_b", "stream", ("l_p", "d_h", "d_kv")),
                Invocation("rotary", "stream", ("l_p", "d_kv")),
            ),
        ),
        Phase(
            name="block_stream",
            repeat="n_layers",
            invocations=(
                Invocation("kqvo_a", "stream", ("l_p", "d_h", "d_h")),
                Invocation("kqvo_b", "stream", ("l_p", "d_h", "d_h")),
                Invocation("mha_score", "stream", ("l_p", "d_h", "l_p")),
                Invocation("mha_ctx", "stream", ("l_p", "l_p", "d_h")),
                Invocation("ffn_gate", "stream", ("l_p", "d_h", "d_ffn")),
                Invocation("ffn_up", "stream", ("l_p", "d_h", "d_ffn")),
                Invocation("ffn_down", "stream", ("l_p", "d_ffn", "d_h")),
                Invocation("act_quant", "stream", ("l_p", "d_h")),
            ),
        ),
    )
    return ArchGraph(name=name, stage="prefill", nodes=nodes, phases=phases)


def build_decode_graph(cfg: DecodeConfig, name: str = "decode-reference") -> ArchGraph:
    """The weight-streaming decode schedule behind the closed-form stage law.

    One shared INT4 linear engine runs every projection serially per token
    (KV, Q, the feed-forward trio per layer, then the LM head) while the
    output projection overlaps with both attention matmuls, whose context
    length averages to ``l_p + l_d/2`` across the decoded tokens.
    """
    nodes = (
        GraphNode("int4_linear", "linear", "int4", wp=cfg.wp_int4, bp=cfg.bp),
        GraphNode("mha_score", "attention", "int8", wp=cfg.wp_mha, bp=cfg.bp),
        GraphNode("mha_ctx", "attention", "int8", wp=cfg.wp_mha, bp=cfg.bp),
        GraphNode("norm", "norm", "fp16", wp=1, bp=cfg.bp),
        GraphNode("sampler", "sample", "fp16", wp=1, bp=cfg.bp),
    )
    phases = (
        Phase(
            name="token_serial",
            repeat="l_d",
            invocations=(
                Invocation("int4_linear", "serial", ("n_layers", "d_h", "d_kv")),
                Invocation("int4_linear", "serial", ("n_layers", "d_h", "d_kv")),
                Invocation("int4_linear", "serial", ("n_layers", "d_h", "d_h")),
                Invocation("int4_linear", "serial", ("n_layers", "d_h", "d_ffn")),
                Invocation("int4_linear", "serial", ("n_layers", "d_h", "d_ffn")),
                Invocation("int4_linear", "serial", ("n_layers", "d_ffn", "d_h")),
                Invocation("int4_linear", "serial", ("d_h", "d_lm_head")),
                Invocation("norm", "serial", ("d_h",)),
                Invocation("sampler", "serial", ("d_lm_head",)),
            ),
        ),
        Phase(
            name="attn_overlap",
            repeat="l_d",
            invocations=(
                Invocation("int4_linear", "stream", ("n_layers", "d_h", "d_h")),
                Invocation("mha_score", "stream", ("n_layers", "d_h", "l_p + 0.5*l_d")),
                Invocation("mha_ctx", "stream", ("n_layers", "l_p + 0.5*l_d", "d_h")),
            ),
        ),
    )
    return ArchGraph(name=name, stage="decode", nodes=nodes, phases=phases)
