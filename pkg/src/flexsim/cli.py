"""Command-line interface.

Subcommands cover the analytical estimators (``estimate``, ``hmt``), the
design-space search (``dse``), architecture graphs (``graph``), tensor
quantization (``quantize``), the functional toy simulator (``simulate``),
and combined deterministic artifacts (``report``).

Exit codes: 0 success, 2 configuration or usage error, 3 infeasible search,
4 validation failure.  Errors print a machine-readable JSON record to
stderr.  Config paths are resolved against ``FLEXSIM_CONFIG_DIR`` when they
do not exist as given.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .archgraph import (
    GraphError,
    build_decode_graph,
    build_prefill_graph,
    estimate_graph_latency,
    graph_to_json_dict,
    load_graph,
    peak_bandwidth,
    phase_bandwidths,
    validate_graph,
)
from .config import (
    ArchConfig,
    ConfigError,
    ConfigValidationError,
    DeviceSpec,
    ModelSpec,
    QuantSpec,
    _read_json,
    default_resource_cost_model,
    load_arch_config,
    load_device_spec,
    load_model_spec,
    load_resource_cost_model,
    validate_quant_spec,
    validate_stage_config,
)
from .dse import InfeasibleSearchError, load_search_space, optimize_decode, optimize_prefill
from .hmt import hmt_segment_cost, run_pipeline
from .kernels import AttnStats, ToyModel
from .perf import (
    WorkloadShape,
    decode_bandwidth,
    decode_stage_latency,
    long_context_prefill_model,
    prefill_bandwidth,
    prefill_stage_latency,
    stage_resource_usage,
    tokens_per_joule,
)
from .quant import dequantize, quantize_tensor
from .report import STAGE_CSV_COLUMNS, dumps_json, make_report, write_csv, write_json
from .tensorio import TensorRecord, save_tensors

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_VALIDATION = 4


class ValidationFailure(Exception):
    """A requested validation did not pass."""


def _emit(data: Any, out_path: str | None = None) -> None:
    text = dumps_json(data)
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)


def _stage_freq(arch: ArchConfig, stage: str, device: DeviceSpec) -> int:
    explicit = getattr(arch, f"{stage}_freq_hz")
    return explicit if explicit is not None else device.freq_hz


def _stage_payload(
    stage: str,
    arch: ArchConfig,
    model: ModelSpec,
    device: DeviceSpec,
    workload: WorkloadShape,
    cost_model,
) -> dict[str, Any]:
    cfg = getattr(arch, stage)
    freq = _stage_freq(arch, stage, device)
    if stage == "prefill":
        latency = prefill_stage_latency(model, cfg, workload.l_p, freq)
        bandwidth = prefill_bandwidth(cfg, freq)
    else:
        latency = decode_stage_latency(model, cfg, workload.l_p, workload.l_d, freq)
        bandwidth = decode_bandwidth(cfg, freq)
    usage = stage_resource_usage(cfg, cost_model)
    check = bandwidth.check_against(device)
    return {
        "config": cfg.to_json_dict(),
        "freq_hz": freq,
        "latency": latency.to_json_dict(),
        "bandwidth": bandwidth.to_json_dict(),
        "bandwidth_check": check.to_json_dict(),
        "resources": {k: usage[k] for k in sorted(usage)},
        "validation": validate_stage_config(cfg, model).to_json_dict(),
    }


def _stage_csv_row(stage: str, payload: dict[str, Any]) -> dict[str, Any]:
    latency = payload["latency"]
    return {
        "stage": stage,
        "freq_hz": payload["freq_hz"],
        "cycles": latency["cycles"],
        "seconds": latency.get("seconds"),
        "bandwidth_bytes_per_s": payload["bandwidth_check"]["demand_bytes_per_s"],
        "bandwidth_utilization": payload["bandwidth_check"]["utilization"],
        "binding_terms": ";".join(latency.get("binding_terms", ())),
    }


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_estimate(args: argparse.Namespace) -> int:
    model = load_model_spec(args.model)
    device = load_device_spec(args.device)
    arch = load_arch_config(args.arch, model=model)
    cost_model = (
        load_resource_cost_model(args.cost_model)
        if args.cost_model
        else default_resource_cost_model()
    )
    workload = WorkloadShape(l_p=args.l_p, l_d=args.l_d)
    stages = [args.stage] if args.stage != "both" else ["prefill", "decode"]
    payload: dict[str, Any] = {
        "model": model.name,
        "device": device.name,
        "workload": {"l_p": workload.l_p, "l_d": workload.l_d},
        "stages": {},
    }
    seconds_total = Fraction(0)
    for stage in stages:
        if getattr(arch, stage) is None:
            raise ConfigValidationError(stage, "architecture config does not define this stage")
        stage_payload = _stage_payload(stage, arch, model, device, workload, cost_model)
        payload["stages"][stage] = stage_payload
        freq = stage_payload["freq_hz"]
        if stage == "prefill":
            seconds_total += prefill_stage_latency(model, arch.prefill, workload.l_p).cycles / freq
        else:
            seconds_total += (
                decode_stage_latency(model, arch.decode, workload.l_p, workload.l_d).cycles / freq
            )
    if seconds_total > 0 and workload.total_tokens > 0:
        payload["tokens_per_joule"] = tokens_per_joule(workload, seconds_total, device)
        payload["end_to_end_seconds"] = float(seconds_total)
    report = make_report(
        "estimate", payload,
        inputs={"model": args.model, "device": args.device, "arch": args.arch},
    )
    _emit(report, args.json)
    if args.csv:
        write_csv(args.csv, [_stage_csv_row(s, payload["stages"][s]) for s in stages],
                  STAGE_CSV_COLUMNS)
    return EXIT_OK


def _cmd_dse(args: argparse.Namespace) -> int:
    model = load_model_spec(args.model)
    device = load_device_spec(args.device)
    cost_model = (
        load_resource_cost_model(args.cost_model)
        if args.cost_model
        else default_resource_cost_model()
    )
    space = load_search_space(args.space, args.stage) if args.space else None
    if args.stage == "prefill":
        result = optimize_prefill(model, device, space=space, l_p=args.l_p,
                                  cost_model=cost_model)
    else:
        result = optimize_decode(model, device, space=space, l_p=args.l_p, l_d=args.l_d,
                                 cost_model=cost_model)
    report = make_report(
        "dse", result.to_json_dict(),
        inputs={"model": args.model, "device": args.device,
                **({"space": args.space} if args.space else {})},
    )
    _emit(report, args.json)
    return EXIT_OK


def _cmd_graph(args: argparse.Namespace) -> int:
    if args.graph_cmd == "template":
        arch = load_arch_config(args.arch)
        if args.stage == "prefill":
            if arch.prefill is None:
                raise ConfigValidationError("prefill", "architecture config lacks prefill stage")
            graph = build_prefill_graph(arch.prefill)
        else:
            if arch.decode is None:
                raise ConfigValidationError("decode", "architecture config lacks decode stage")
            graph = build_decode_graph(arch.decode)
        _emit(graph_to_json_dict(graph), args.out)
        return EXIT_OK

    graph = load_graph(args.graph)
    if args.graph_cmd == "validate":
        device = load_device_spec(args.device) if args.device else None
        cost_model = (
            load_resource_cost_model(args.cost_model) if args.cost_model else None
        )
        rep = validate_graph(graph, device=device, cost_model=cost_model, freq_hz=args.freq_hz)
        _emit({"graph": graph.name, "validation": rep.to_json_dict()}, args.json)
        if not rep.ok:
            raise ValidationFailure(
                f"graph {graph.name!r}: {len(rep.failures)} check(s) failed"
            )
        return EXIT_OK

    # graph estimate
    model = load_model_spec(args.model)
    workload = WorkloadShape(l_p=args.l_p, l_d=args.l_d)
    est = estimate_graph_latency(graph, model, workload, freq_hz=args.freq_hz)
    payload: dict[str, Any] = {
        "graph": graph.name,
        "stage": graph.stage,
        "workload": {"l_p": workload.l_p, "l_d": workload.l_d},
        "latency": est.to_json_dict(),
    }
    if args.freq_hz:
        payload["bandwidth_per_phase"] = {
            name: bw.to_json_dict() for name, bw in phase_bandwidths(graph, args.freq_hz).items()
        }
        payload["peak_bandwidth"] = peak_bandwidth(graph, args.freq_hz).to_json_dict()
    _emit(make_report("graph-estimate", payload,
                      inputs={"graph": args.graph, "model": args.model}), args.json)
    return EXIT_OK


def _cmd_quantize(args: argparse.Namespace) -> int:
    x = np.load(args.input)
    spec = QuantSpec(bits=args.bits, symmetry=args.symmetry,
                     granularity=args.granularity, mode="dynamic")
    validate_quant_spec(spec, role=args.role)
    qt = quantize_tensor(x, spec, role=args.role)
    recon = dequantize(qt)
    err = np.abs(recon - x)
    scale = np.asarray(qt.params.scale, dtype=np.float64)
    if args.bits == 4:
        record = TensorRecord(array=qt.q.astype(np.int8), params=qt.params)
        save_tensors(args.out, {args.name: record}, int4_names={args.name})
    else:
        dtype = np.int8 if spec.symmetry == "symmetric" else np.uint8
        record = TensorRecord(array=qt.q.astype(dtype), params=qt.params)
        save_tensors(args.out, {args.name: record})
    payload = {
        "input": str(args.input),
        "out": str(args.out),
        "name": args.name,
        "shape": list(x.shape),
        "spec": {"bits": spec.bits, "symmetry": spec.symmetry,
                 "granularity": spec.granularity},
        "scale_min": float(scale.min()),
        "scale_max": float(scale.max()),
        "max_abs_error": float(err.max()) if err.size else 0.0,
        "half_step_bound": float(scale.max()) / 2.0,
    }
    _emit(make_report("quantize", payload, inputs={"input": args.input}), args.json)
    return EXIT_OK


def _checksum(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x, dtype=np.float64).tobytes()).hexdigest()[:16]


def _parse_token_ids(text: str, field: str) -> list[int]:
    try:
        ids = [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigValidationError(field, f"not a token-id list: {text!r}")
    if not ids:
        raise ConfigValidationError(field, "must contain at least one token id")
    return ids


def _load_toy(path: str) -> tuple[ModelSpec, ToyModel, int]:
    raw = _read_json(path)
    model = load_model_spec(path)
    seed = int(raw.get("seed", 0))
    max_seq_len = int(raw.get("max_seq_len", 4096))
    return model, ToyModel.random(model, seed=seed, max_seq_len=max_seq_len), seed


def _cmd_simulate(args: argparse.Namespace) -> int:
    if (args.prompt is None) == (args.prompt_file is None):
        raise ConfigValidationError("prompt", "give exactly one of --prompt or --prompt-file")
    model, toy, seed = _load_toy(args.toy_spec)
    text = args.prompt if args.prompt is not None else Path(args.prompt_file).read_text()
    prompt = _parse_token_ids(text, "prompt")
    if max(prompt) >= model.d_lm_head or min(prompt) < 0:
        raise ConfigValidationError(
            "prompt", f"token ids must lie in [0, {model.d_lm_head - 1}]"
        )
    if args.calibrate:
        toy.calibrate_attention_scales(prompt)
    stats = AttnStats()
    generated = toy.generate(prompt, args.tokens, path=args.path, stats=stats)
    states = toy.layer_states(prompt + generated, path=args.path)
    payload = {
        "model": model.name,
        "seed": seed,
        "path": args.path,
        "prompt": prompt,
        "generated": generated,
        "layer_checksums": [_checksum(s) for s in states],
        "attn_stats": {
            "calls": stats.calls,
            "max_score_elements": stats.max_score_elements,
            "max_cache_len": stats.max_cache_len,
        },
    }
    _emit(make_report("simulate", payload, inputs={"toy_spec": args.toy_spec}), args.json)
    return EXIT_OK


def _cmd_hmt(args: argparse.Namespace) -> int:
    model = load_model_spec(args.model)
    device = load_device_spec(args.device)
    arch = load_arch_config(args.arch, model=model)
    if arch.prefill is None or arch.hmt is None:
        raise ConfigValidationError(
            "stages", "hmt comparison needs both prefill and hmt stage configs"
        )
    freq = arch.hmt_freq_hz or _stage_freq(arch, "prefill", device)
    plugin_seconds = args.measured_plugin_ms / 1000.0 if args.measured_plugin_ms else None
    comparison = long_context_prefill_model(
        model, arch.prefill, arch.hmt, total_len=args.total_len,
        freq_hz=freq, plugin_seconds_per_segment=plugin_seconds,
    )
    cost = hmt_segment_cost(model, arch.prefill, arch.hmt, freq_hz=freq)
    payload = {
        "model": model.name,
        "device": device.name,
        "freq_hz": freq,
        "total_len": args.total_len,
        "comparison": comparison.to_json_dict(),
        "segment_cost": cost.to_json_dict(),
    }
    if args.tokens_file:
        if not args.toy_spec:
            raise ConfigValidationError("toy_spec", "--tokens-file needs --toy-spec")
        toy_model, toy, _ = _load_toy(args.toy_spec)
        ids = _parse_token_ids(Path(args.tokens_file).read_text(), "tokens_file")
        if max(ids) >= toy_model.d_lm_head or min(ids) < 0:
            raise ConfigValidationError(
                "tokens_file", f"token ids must lie in [0, {toy_model.d_lm_head - 1}]"
            )
        result = run_pipeline(toy, ids, arch.hmt)
        payload["pipeline"] = {
            "n_segments": len(result.segments),
            "max_attended_len": result.max_attended_len,
            "final_queue_len": len(result.queue),
            "segments": [
                {
                    "index": rec.index,
                    "segment_len": rec.segment_len,
                    "augmented_len": rec.augmented_len,
                    "queue_len_before": rec.queue_len_before,
                    "memory_checksum": _checksum(rec.memory),
                }
                for rec in result.segments
            ],
        }
    _emit(make_report("hmt", payload,
                      inputs={"model": args.model, "device": args.device, "arch": args.arch}),
          args.json)
    return EXIT_OK


def _compare_reports(path_a: str, path_b: str) -> dict[str, Any]:
    def stage_seconds(doc: dict[str, Any]) -> dict[str, float]:
        stages = doc.get("payload", {}).get("stages", {})
        return {name: float(s["latency"]["seconds"]) for name, s in stages.items()}

    docs = []
    for path in (path_a, path_b):
        with open(path, encoding="utf-8") as fh:
            docs.append(json.load(fh))
    a, b = docs
    ratios: dict[str, float] = {}
    sec_a, sec_b = stage_seconds(a), stage_seconds(b)
    for stage in sorted(set(sec_a) & set(sec_b)):
        if sec_b[stage] > 0:
            ratios[f"{stage}_speedup"] = sec_a[stage] / sec_b[stage]
    e2e_a = a.get("payload", {}).get("end_to_end_seconds")
    e2e_b = b.get("payload", {}).get("end_to_end_seconds")
    if e2e_a and e2e_b:
        ratios["end_to_end_speedup"] = float(e2e_a) / float(e2e_b)
    if not ratios:
        raise ConfigValidationError("compare", "no comparable latency entries in the two reports")
    return {
        "a": str(path_a),
        "b": str(path_b),
        "seconds_a": {**sec_a, **({"end_to_end": float(e2e_a)} if e2e_a else {})},
        "seconds_b": {**sec_b, **({"end_to_end": float(e2e_b)} if e2e_b else {})},
        "speedup_a_over_b": ratios,
    }


def _cmd_report(args: argparse.Namespace) -> int:
    if args.compare:
        payload = _compare_reports(*args.compare)
        _emit(make_report("report-compare", payload,
                          inputs={"a": args.compare[0], "b": args.compare[1]}), args.out)
        return EXIT_OK
    if not (args.model and args.device and args.arch):
        raise ConfigValidationError("report", "--model, --device, and --arch are required")
    model = load_model_spec(args.model)
    device = load_device_spec(args.device)
    arch = load_arch_config(args.arch, model=model)
    cost_model = (
        load_resource_cost_model(args.cost_model)
        if args.cost_model
        else default_resource_cost_model()
    )
    workload = WorkloadShape(l_p=args.l_p, l_d=args.l_d)
    payload: dict[str, Any] = {
        "model": model.name,
        "device": device.name,
        "workload": {"l_p": workload.l_p, "l_d": workload.l_d},
        "stages": {},
    }
    rows = []
    seconds_total = Fraction(0)
    for stage in ("prefill", "decode"):
        if getattr(arch, stage) is None:
            continue
        stage_payload = _stage_payload(stage, arch, model, device, workload, cost_model)
        payload["stages"][stage] = stage_payload
        rows.append(_stage_csv_row(stage, stage_payload))
        freq = stage_payload["freq_hz"]
        cycles = Fraction(stage_payload["latency"]["cycles"])
        seconds_total += cycles / freq
    if seconds_total > 0 and workload.total_tokens > 0:
        payload["tokens_per_joule"] = tokens_per_joule(workload, seconds_total, device)
        payload["end_to_end_seconds"] = float(seconds_total)
    if arch.hmt is not None and arch.prefill is not None and args.total_len:
        freq = arch.hmt_freq_hz or _stage_freq(arch, "prefill", device)
        comparison = long_context_prefill_model(
            model, arch.prefill, arch.hmt, total_len=args.total_len, freq_hz=freq
        )
        payload["long_context"] = comparison.to_json_dict()
    report = make_report(
        "report", payload,
        inputs={"model": args.model, "device": args.device, "arch": args.arch},
    )
    _emit(report, args.out)
    if args.csv:
        write_csv(args.csv, rows, STAGE_CSV_COLUMNS)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flexsim",
        description="Analytical performance models for stage-customized LLM accelerators.",
    )
    parser.add_argument("--version", action="version", version=f"flexsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, *, device: bool = True) -> None:
        p.add_argument("--model", required=True, help="model shape config JSON")
        if device:
            p.add_argument("--device", required=True, help="device spec JSON")
        p.add_argument("--json", default=None, help="also write the JSON output here")

    p_est = sub.add_parser("estimate", help="latency/bandwidth/resource estimates for a stage")
    add_common(p_est)
    p_est.add_argument("--arch", required=True, help="architecture (stage configs) JSON")
    p_est.add_argument("--stage", choices=["prefill", "decode", "both"], default="both")
    p_est.add_argument("--l-p", type=int, default=1024, help="prefill length in tokens")
    p_est.add_argument("--l-d", type=int, default=1024, help="decode length in tokens")
    p_est.add_argument("--cost-model", default=None, help="resource cost model JSON")
    p_est.add_argument("--csv", default=None, help="write a per-stage CSV summary here")
    p_est.set_defaults(func=_cmd_estimate)

    p_dse = sub.add_parser("dse", help="exhaustive search for the latency-optimal config")
    add_common(p_dse)
    p_dse.add_argument("--stage", choices=["prefill", "decode"], required=True)
    p_dse.add_argument("--space", default=None, help="search space JSON (default: derived)")
    p_dse.add_argument("--l-p", type=int, default=1024)
    p_dse.add_argument("--l-d", type=int, default=1024)
    p_dse.add_argument("--cost-model", default=None)
    p_dse.set_defaults(func=_cmd_dse)

    p_graph = sub.add_parser("graph", help="architecture graph tools")
    gsub = p_graph.add_subparsers(dest="graph_cmd", required=True)

    g_val = gsub.add_parser("validate", help="structural and feasibility checks")
    g_val.add_argument("--graph", required=True)
    g_val.add_argument("--device", default=None)
    g_val.add_argument("--cost-model", default=None)
    g_val.add_argument("--freq-hz", type=int, default=None)
    g_val.add_argument("--json", default=None)
    g_val.set_defaults(func=_cmd_graph)

    g_est = gsub.add_parser("estimate", help="exact latency of a graph")
    g_est.add_argument("--graph", required=True)
    g_est.add_argument("--model", required=True)
    g_est.add_argument("--l-p", type=int, default=1024)
    g_est.add_argument("--l-d", type=int, default=0)
    g_est.add_argument("--freq-hz", type=int, default=None)
    g_est.add_argument("--json", default=None)
    g_est.set_defaults(func=_cmd_graph)

    g_tmp = gsub.add_parser("template", help="emit the builtin stage graph for an arch config")
    g_tmp.add_argument("--arch", required=True)
    g_tmp.add_argument("--stage", choices=["prefill", "decode"], required=True)
    g_tmp.add_argument("--out", default=None)
    g_tmp.set_defaults(func=_cmd_graph)

    p_q = sub.add_parser("quantize", help="quantize a .npy tensor into the container format")
    p_q.add_argument("--input", required=True, help=".npy tensor to quantize")
    p_q.add_argument("--out", required=True, help="output container path")
    p_q.add_argument("--name", default="tensor", help="record name inside the container")
    p_q.add_argument("--bits", type=int, choices=[4, 8], default=4)
    p_q.add_argument("--symmetry", choices=["symmetric", "asymmetric"], default="symmetric")
    p_q.add_argument("--granularity", choices=["per_tensor", "per_token", "per_channel"],
                     default="per_tensor")
    p_q.add_argument("--role", choices=["weight", "activation"], default=None)
    p_q.add_argument("--json", default=None)
    p_q.set_defaults(func=_cmd_quantize)

    p_sim = sub.add_parser("simulate", help="run the functional toy decoder")
    p_sim.add_argument("--toy-spec", required=True, help="toy model shape JSON")
    p_sim.add_argument("--prompt", default=None, help="comma-separated token ids")
    p_sim.add_argument("--prompt-file", default=None, help="file of whitespace-separated ids")
    p_sim.add_argument("--tokens", type=int, default=8, help="tokens to generate")
    p_sim.add_argument("--path", choices=["float", "quantized"], default="float")
    p_sim.add_argument("--calibrate", action="store_true",
                       help="calibrate static INT8 attention scales on the prompt first")
    p_sim.add_argument("--json", default=None)
    p_sim.set_defaults(func=_cmd_simulate)

    p_hmt = sub.add_parser("hmt", help="segmented long-context comparison")
    add_common(p_hmt)
    p_hmt.add_argument("--arch", required=True)
    p_hmt.add_argument("--total-len", type=int, required=True)
    p_hmt.add_argument("--measured-plugin-ms", type=float, default=None,
                       help="use a measured per-segment plug-in cost instead of the model")
    p_hmt.add_argument("--toy-spec", default=None,
                       help="toy model shape JSON for the functional pipeline")
    p_hmt.add_argument("--tokens-file", default=None,
                       help="run the functional pipeline over this token-id file")
    p_hmt.set_defaults(func=_cmd_hmt)

    p_rep = sub.add_parser("report", help="combined deterministic report")
    p_rep.add_argument("--model", default=None)
    p_rep.add_argument("--device", default=None)
    p_rep.add_argument("--arch", default=None)
    p_rep.add_argument("--compare", nargs=2, metavar=("A", "B"), default=None,
                       help="emit latency ratios A/B of two previously written reports")
    p_rep.add_argument("--l-p", type=int, default=1024)
    p_rep.add_argument("--l-d", type=int, default=1024)
    p_rep.add_argument("--total-len", type=int, default=None,
                       help="include the long-context comparison at this length")
    p_rep.add_argument("--cost-model", default=None)
    p_rep.add_argument("--out", default=None)
    p_rep.add_argument("--csv", default=None)
    p_rep.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleSearchError as exc:
        _print_error(exc)
        return EXIT_INFEASIBLE
    except ValidationFailure as exc:
        _print_error(exc)
        return EXIT_VALIDATION
    except GraphError as exc:
        _print_error(exc)
        return EXIT_VALIDATION
    except (ConfigError, ValueError, OSError) as exc:
        _print_error(exc)
        return EXIT_CONFIG


def _print_error(exc: Exception) -> None:
    record = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
