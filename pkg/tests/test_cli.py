"""End-to-end CLI tests: exit codes, JSON payload contracts, determinism."""

from __future__ import annotations

import json

import numpy as np
import pytest

from flexsim.cli import main
from flexsim.tensorio import load_tensors


def _cfg(config_dir, name: str) -> str:
    return str(config_dir / name)


def _run(capsys, argv: list[str]) -> tuple[int, dict]:
    code = main(argv)
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else {})


def _run_err(capsys, argv: list[str]) -> tuple[int, dict]:
    code = main(argv)
    captured = capsys.readouterr()
    return code, json.loads(captured.err)


# --- estimate ---------------------------------------------------------------------

def test_estimate_frozen_latencies(capsys, config_dir):
    code, doc = _run(capsys, [
        "estimate", "--model", _cfg(config_dir, "llama32_1b.json"),
        "--device", _cfg(config_dir, "u280.json"),
        "--arch", _cfg(config_dir, "arch_u280.json"),
        "--l-p", "1024", "--l-d", "1024",
    ])
    assert code == 0
    assert doc["kind"] == "estimate"
    stages = doc["payload"]["stages"]
    assert stages["prefill"]["latency"]["cycles"] == 447_392_427
    assert stages["prefill"]["latency"]["cycles_exact"] == "1342177280/3"
    assert stages["prefill"]["latency"]["seconds"] == pytest.approx(1.4717, abs=2e-4)
    assert stages["decode"]["latency"]["seconds"] == pytest.approx(4.6917, abs=2e-4)
    assert not stages["prefill"]["bandwidth_check"]["over_subscribed"]
    assert doc["payload"]["end_to_end_seconds"] == pytest.approx(6.1634, abs=5e-4)
    assert doc["payload"]["tokens_per_joule"] == pytest.approx(4.4306, abs=2e-3)


def test_estimate_flags_oversubscribed_decode(capsys, config_dir):
    code, doc = _run(capsys, [
        "estimate", "--model", _cfg(config_dir, "llama32_1b.json"),
        "--device", _cfg(config_dir, "v80.json"),
        "--arch", _cfg(config_dir, "arch_v80.json"),
        "--stage", "decode",
    ])
    assert code == 0
    check = doc["payload"]["stages"]["decode"]["bandwidth_check"]
    assert check["demand_bytes_per_s"] == pytest.approx(1228.8e9)
    assert check["over_subscribed"] is True


def test_estimate_missing_config_exits_2(capsys, config_dir, tmp_path):
    code, err = _run_err(capsys, [
        "estimate", "--model", str(tmp_path / "nope.json"),
        "--device", _cfg(config_dir, "u280.json"),
        "--arch", _cfg(config_dir, "arch_u280.json"),
    ])
    assert code == 2
    assert "error" in err and err["error"]["type"]


def test_estimate_writes_csv(capsys, config_dir, tmp_path):
    csv_path = tmp_path / "stages.csv"
    code, _ = _run(capsys, [
        "estimate", "--model", _cfg(config_dir, "llama32_1b.json"),
        "--device", _cfg(config_dir, "u280.json"),
        "--arch", _cfg(config_dir, "arch_u280.json"),
        "--csv", str(csv_path),
    ])
    assert code == 0
    lines = csv_path.read_text().strip().splitlines()
    assert len(lines) == 3  # header + prefill + decode
    assert lines[0].startswith("stage,")


# --- dse --------------------------------------------------------------------------

def test_dse_recovers_reference_prefill_config(capsys, config_dir):
    code, doc = _run(capsys, [
        "dse", "--model", _cfg(config_dir, "llama32_1b.json"),
        "--device", _cfg(config_dir, "u280.json"),
        "--stage", "prefill", "--space", _cfg(config_dir, "space_u280_prefill.json"),
        "--l-p", "1024",
    ])
    assert code == 0
    best = doc["payload"]["best_config"]
    assert (best["tp"], best["wp_kqvo"], best["wp_mha"], best["wp_ffn"]) == (8, 24, 16, 96)


def test_dse_infeasible_space_exits_3(capsys, config_dir, tmp_path):
    starved = dict(json.loads((config_dir / "u280.json").read_text()))
    starved["peak_bw_bytes_per_s"] = 1_000_000  # far below any candidate's demand
    dev = tmp_path / "starved.json"
    dev.write_text(json.dumps(starved))
    code, err = _run_err(capsys, [
        "dse", "--model", _cfg(config_dir, "llama32_1b.json"),
        "--device", str(dev), "--stage", "prefill",
        "--space", _cfg(config_dir, "space_u280_prefill.json"),
    ])
    assert code == 3
    assert "bandwidth" in err["error"]["message"]


# --- graph ------------------------------------------------------------------------

def test_graph_template_then_estimate(capsys, config_dir, tmp_path):
    graph_path = tmp_path / "prefill_graph.json"
    code, _ = _run(capsys, [
        "graph", "template", "--arch", _cfg(config_dir, "arch_u280.json"),
        "--stage", "prefill", "--out", str(graph_path),
    ])
    assert code == 0
    code, doc = _run(capsys, [
        "graph", "estimate", "--graph", str(graph_path),
        "--model", _cfg(config_dir, "llama32_1b.json"),
        "--l-p", "1024", "--freq-hz", "304000000",
    ])
    assert code == 0
    assert doc["payload"]["latency"]["cycles"] == 447_392_427
    assert doc["payload"]["peak_bandwidth"]["total_bytes_per_s"] == pytest.approx(60.8e9)


def test_graph_validate_failure_exits_4(capsys, tmp_path):
    bad = {
        "name": "cyclic", "stage": "prefill",
        "nodes": [{"id": "a", "kind": "linear", "precision": "int4", "wp": 1},
                  {"id": "b", "kind": "linear", "precision": "int4", "wp": 1}],
        "phases": [{"name": "p", "repeat": "1",
                    "invocations": [{"node": "a", "lane": "stream", "work": ["1"]},
                                    {"node": "b", "lane": "stream", "work": ["1"]}],
                    "edges": [[0, 1], [1, 0]]}],
    }
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    code = main(["graph", "validate", "--graph", str(path)])
    captured = __import__("sys")  # noqa: F841  (capsys below reads both streams)
    out = capsys.readouterr()
    assert code == 4
    doc = json.loads(out.out)
    assert any(not c["passed"] for c in doc["validation"]["checks"])
    assert json.loads(out.err)["error"]["type"] == "ValidationFailure"


def test_graph_validate_ok(capsys, config_dir, tmp_path):
    graph_path = tmp_path / "decode_graph.json"
    _run(capsys, ["graph", "template", "--arch", _cfg(config_dir, "arch_u280.json"),
                  "--stage", "decode", "--out", str(graph_path)])
    code, doc = _run(capsys, [
        "graph", "validate", "--graph", str(graph_path),
        "--device", _cfg(config_dir, "u280.json"), "--freq-hz", "292000000",
    ])
    assert code == 0
    assert all(c["passed"] for c in doc["validation"]["checks"])


# --- quantize ---------------------------------------------------------------------

def test_quantize_round_trip_bound(capsys, tmp_path):
    rng = np.random.default_rng(90)
    x = rng.normal(size=(16, 8))
    src = tmp_path / "w.npy"
    np.save(src, x)
    out = tmp_path / "w.flxt"
    code, doc = _run(capsys, [
        "quantize", "--input", str(src), "--out", str(out),
        "--name", "w", "--bits", "4", "--symmetry", "symmetric",
        "--granularity", "per_channel", "--role", "weight",
    ])
    assert code == 0
    payload = doc["payload"]
    assert payload["max_abs_error"] <= payload["half_step_bound"] + 1e-12
    stored = load_tensors(out)
    assert stored["w"].array.shape == (16, 8)
    scale = np.asarray(stored["w"].params.scale)
    recon = stored["w"].array.astype(np.float64) * scale
    assert np.max(np.abs(recon - x)) <= payload["half_step_bound"] + 1e-12


def test_quantize_rejects_bad_role_combo(capsys, tmp_path):
    src = tmp_path / "x.npy"
    np.save(src, np.ones((4, 4)))
    code, err = _run_err(capsys, [
        "quantize", "--input", str(src), "--out", str(tmp_path / "x.flxt"),
        "--granularity", "per_token", "--role", "weight",
    ])
    assert code == 2
    assert "per_token" in err["error"]["message"]


# --- simulate ---------------------------------------------------------------------

def test_simulate_prompt_inline(capsys, config_dir):
    code, doc = _run(capsys, [
        "simulate", "--toy-spec", _cfg(config_dir, "toy_model.json"),
        "--prompt", "3,1,4,1,5", "--tokens", "6",
    ])
    assert code == 0
    payload = doc["payload"]
    assert payload["prompt"] == [3, 1, 4, 1, 5]
    assert len(payload["generated"]) == 6
    assert all(0 <= t < 50 for t in payload["generated"])
    assert len(payload["layer_checksums"]) == 3  # embedding + two blocks
    # 5 prompt + 5 of the 6 generated reach the cache; the last is never fed back
    assert payload["attn_stats"]["max_cache_len"] == 10


def test_simulate_prompt_file_equivalent_and_deterministic(capsys, config_dir, tmp_path):
    prompt_file = tmp_path / "prompt.txt"
    prompt_file.write_text("3 1 4 1 5\n")
    args = ["simulate", "--toy-spec", _cfg(config_dir, "toy_model.json"),
            "--prompt-file", str(prompt_file), "--tokens", "6"]
    code_a = main(args)
    out_a = capsys.readouterr().out
    code_b = main(args)
    out_b = capsys.readouterr().out
    assert code_a == code_b == 0
    assert out_a == out_b  # byte-identical reruns
    inline = json.loads(out_a)["payload"]
    code, doc = _run(capsys, [
        "simulate", "--toy-spec", _cfg(config_dir, "toy_model.json"),
        "--prompt", "3,1,4,1,5", "--tokens", "6",
    ])
    assert doc["payload"]["generated"] == inline["generated"]
    assert doc["payload"]["layer_checksums"] == inline["layer_checksums"]


def test_simulate_quantized_path_differs(capsys, config_dir):
    args = ["simulate", "--toy-spec", _cfg(config_dir, "toy_model.json"),
            "--prompt", "1,2,3", "--tokens", "4"]
    _, float_doc = _run(capsys, args)
    _, quant_doc = _run(capsys, args + ["--path", "quantized"])
    assert float_doc["payload"]["layer_checksums"] != quant_doc["payload"]["layer_checksums"]


def test_simulate_prompt_argument_rules(capsys, config_dir, tmp_path):
    spec = _cfg(config_dir, "toy_model.json")
    code, err = _run_err(capsys, ["simulate", "--toy-spec", spec])
    assert code == 2 and "prompt" in err["error"]["message"]
    prompt_file = tmp_path / "p.txt"
    prompt_file.write_text("1 2")
    code, _ = _run_err(capsys, ["simulate", "--toy-spec", spec,
                                "--prompt", "1", "--prompt-file", str(prompt_file)])
    assert code == 2
    code, err = _run_err(capsys, ["simulate", "--toy-spec", spec, "--prompt", "1,99"])
    assert code == 2 and "token ids" in err["error"]["message"]
    code, _ = _run_err(capsys, ["simulate", "--toy-spec", spec, "--prompt", "1,x"])
    assert code == 2


# --- hmt --------------------------------------------------------------------------

def test_hmt_modeled_speedup(capsys, config_dir):
    code, doc = _run(capsys, [
        "hmt", "--model", _cfg(config_dir, "llama32_1b.json"),
        "--device", _cfg(config_dir, "u280.json"),
        "--arch", _cfg(config_dir, "arch_u280.json"),
        "--total-len", "65536",
    ])
    assert code == 0
    comp = doc["payload"]["comparison"]
    assert comp["n_segments"] == 64
    assert comp["augmented_len"] == 1537
    assert comp["plugin_cycles_per_segment"] == 65536.0
    assert comp["speedup"] == pytest.approx(23.364, abs=2e-3)


def test_hmt_measured_plugin_speedup(capsys, config_dir):
    code, doc = _run(capsys, [
        "hmt", "--model", _cfg(config_dir, "llama32_1b.json"),
        "--device", _cfg(config_dir, "u280.json"),
        "--arch", _cfg(config_dir, "arch_u280.json"),
        "--total-len", "65536", "--measured-plugin-ms", "8.44",
    ])
    assert code == 0
    assert doc["payload"]["comparison"]["speedup"] == pytest.approx(23.289, abs=2e-3)


def test_hmt_functional_pipeline(capsys, config_dir, tmp_path):
    tokens = tmp_path / "tokens.txt"
    tokens.write_text(" ".join(str(i % 50) for i in range(2100)))
    code, doc = _run(capsys, [
        "hmt", "--model", _cfg(config_dir, "llama32_1b.json"),
        "--device", _cfg(config_dir, "u280.json"),
        "--arch", _cfg(config_dir, "arch_u280.json"),
        "--total-len", "2100",
        "--toy-spec", _cfg(config_dir, "toy_model.json"),
        "--tokens-file", str(tokens),
    ])
    assert code == 0
    pipe = doc["payload"]["pipeline"]
    assert pipe["n_segments"] == 3
    assert pipe["max_attended_len"] == 1537
    assert pipe["final_queue_len"] == 3
    assert [s["segment_len"] for s in pipe["segments"]] == [1024, 1024, 52]
    assert pipe["segments"][0]["queue_len_before"] == 0
    assert all(len(s["memory_checksum"]) == 16 for s in pipe["segments"])


def test_hmt_tokens_file_requires_toy_spec(capsys, config_dir, tmp_path):
    tokens = tmp_path / "t.txt"
    tokens.write_text("1 2 3")
    code, err = _run_err(capsys, [
        "hmt", "--model", _cfg(config_dir, "llama32_1b.json"),
        "--device", _cfg(config_dir, "u280.json"),
        "--arch", _cfg(config_dir, "arch_u280.json"),
        "--total-len", "2048", "--tokens-file", str(tokens),
    ])
    assert code == 2
    assert "toy_spec" in err["error"]["message"]


# --- report -----------------------------------------------------------------------

def _write_report(capsys, config_dir, tmp_path, device: str, arch: str, name: str) -> str:
    out = tmp_path / name
    code = main([
        "report", "--model", _cfg(config_dir, "llama32_1b.json"),
        "--device", _cfg(config_dir, device), "--arch", _cfg(config_dir, arch),
        "--l-p", "1024", "--l-d", "1024", "--out", str(out),
    ])
    capsys.readouterr()
    assert code == 0
    return str(out)


def test_report_is_byte_deterministic(capsys, config_dir, tmp_path):
    a = _write_report(capsys, config_dir, tmp_path, "u280.json", "arch_u280.json", "a.json")
    b = _write_report(capsys, config_dir, tmp_path, "u280.json", "arch_u280.json", "b.json")
    with open(a, "rb") as fa, open(b, "rb") as fb:
        assert fa.read() == fb.read()


def test_report_compare_ratios(capsys, config_dir, tmp_path):
    a = _write_report(capsys, config_dir, tmp_path, "u280.json", "arch_u280.json", "u280.json")
    b = _write_report(capsys, config_dir, tmp_path, "v80.json", "arch_v80.json", "v80.json")
    code, doc = _run(capsys, ["report", "--compare", a, b])
    assert code == 0
    ratios = doc["payload"]["speedup_a_over_b"]
    assert ratios["prefill_speedup"] == pytest.approx(2.6316, abs=2e-4)
    assert ratios["decode_speedup"] == pytest.approx(4.1096, abs=2e-4)
    assert ratios["end_to_end_speedup"] == pytest.approx(3.6236, abs=2e-4)


def test_report_compare_rejects_non_reports(capsys, tmp_path):
    junk = tmp_path / "junk.json"
    junk.write_text("{}")
    code, err = _run_err(capsys, ["report", "--compare", str(junk), str(junk)])
    assert code == 2
    assert "compare" in err["error"]["message"]


def test_report_requires_inputs_without_compare(capsys):
    code, err = _run_err(capsys, ["report"])
    assert code == 2
    assert "required" in err["error"]["message"]


def test_report_long_context_section(capsys, config_dir, tmp_path):
    out = tmp_path / "rep.json"
    code = main([
        "report", "--model", _cfg(config_dir, "llama32_1b.json"),
        "--device", _cfg(config_dir, "u280.json"),
        "--arch", _cfg(config_dir, "arch_u280.json"),
        "--total-len", "65536", "--out", str(out),
    ])
    capsys.readouterr()
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["payload"]["long_context"]["speedup"] == pytest.approx(23.364, abs=2e-3)
