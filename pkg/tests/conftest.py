"""Shared fixtures: published device/model/stage configurations and a toy model."""

from __future__ import annotations

from pathlib import Path

import pytest

from flexsim.config import (
    DecodeConfig,
    DeviceSpec,
    HmtConfig,
    ModelSpec,
    PrefillConfig,
    load_arch_config,
    load_device_spec,
    load_model_spec,
)
from flexsim.kernels import ToyModel

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def config_dir() -> Path:
    return CONFIG_DIR


@pytest.fixture(scope="session")
def llama() -> ModelSpec:
    return load_model_spec(CONFIG_DIR / "llama32_1b.json")


@pytest.fixture(scope="session")
def u280() -> DeviceSpec:
    return load_device_spec(CONFIG_DIR / "u280.json")


@pytest.fixture(scope="session")
def v80() -> DeviceSpec:
    return load_device_spec(CONFIG_DIR / "v80.json")


@pytest.fixture(scope="session")
def u280_prefill() -> PrefillConfig:
    return PrefillConfig(tp=8, wp_kqvo=24, wp_mha=16, wp_ffn=96)


@pytest.fixture(scope="session")
def u280_decode() -> DecodeConfig:
    return DecodeConfig(bp=16, wp_int4=1024, wp_mha=256)


@pytest.fixture(scope="session")
def v80_prefill() -> PrefillConfig:
    return PrefillConfig(tp=16, wp_kqvo=32, wp_mha=32, wp_ffn=128)


@pytest.fixture(scope="session")
def v80_decode() -> DecodeConfig:
    return DecodeConfig(bp=64, wp_int4=4096, wp_mha=1024)


@pytest.fixture(scope="session")
def u280_hmt() -> HmtConfig:
    return HmtConfig(segment_len=1024, memory_queue_len=64, summary_half=512,
                     short_term_len=512, bp=4, wp_mem_attn=4)


@pytest.fixture(scope="session")
def u280_arch(llama):
    return load_arch_config(CONFIG_DIR / "arch_u280.json", model=llama)


@pytest.fixture(scope="session")
def v80_arch(llama):
    return load_arch_config(CONFIG_DIR / "arch_v80.json", model=llama)


@pytest.fixture(scope="session")
def toy_spec() -> ModelSpec:
    return load_model_spec(CONFIG_DIR / "toy_model.json")


@pytest.fixture(scope="session")
def toy(toy_spec) -> ToyModel:
    return ToyModel.random(toy_spec, seed=7, max_seq_len=256)
