import json

import pytest

from conftest import KEY_A, make_dataset
from promptlock.backends import build_backend, get_backend, load_registry
from promptlock.backends.base import (
    BackendDescriptor,
    BackendKind,
    CountingBackend,
    RetryPolicy,
    generate_many,
    score_many,
)
from promptlock.backends.http import HttpBackend
from promptlock.backends.oracle import SyntheticOracle
from promptlock.errors import InvalidConfig, UnknownBackend

ORACLE = {"id": "o1", "kind": "synthetic_oracle", "oracle": {"hidden_key": KEY_A, "seed": 3}}
HTTP = {"id": "remote", "kind": "http_logprob", "endpoint": "https://api.example/v1", "model_name": "m",
        "retry_policy": {"max_attempts": 2, "backoff_base": 0.1}}


def write(tmp_path, entries):
    path = tmp_path / "reg.json"
    path.write_text(json.dumps({"backends": entries}))
    return path


def test_registry_round_trip(tmp_path):
    reg = load_registry(write(tmp_path, [ORACLE, HTTP]))
    ds = make_dataset()
    oracle = get_backend(reg, "o1", ds)
    assert isinstance(oracle, SyntheticOracle)
    assert oracle.generate(KEY_A, ds[0].query) == ds[0].reference_text
    remote = get_backend(reg, "remote")
    assert isinstance(remote, HttpBackend)
    assert remote.descriptor.retry_policy == RetryPolicy(2, 0.1)
    with pytest.raises(UnknownBackend):
        get_backend(reg, "missing")


def test_registry_rejects_credentials_and_duplicates(tmp_path):
    with pytest.raises(InvalidConfig):
        build_backend({**HTTP, "api_key": "sk-123"})
    with pytest.raises(InvalidConfig):
        load_registry(write(tmp_path, [ORACLE, ORACLE]))
    with pytest.raises(InvalidConfig):
        build_backend({**ORACLE, "colour": "red"})
    bad = tmp_path / "bad.json"
    bad.write_text("[]")
    with pytest.raises(InvalidConfig):
        load_registry(bad)


def test_descriptor_validation():
    with pytest.raises(InvalidConfig):
        BackendDescriptor("has space", BackendKind.SYNTHETIC_ORACLE)
    with pytest.raises(InvalidConfig):
        BackendDescriptor("x", BackendKind.HTTP_LOGPROB)
    with pytest.raises(InvalidConfig):
        BackendDescriptor("x", BackendKind.SYNTHETIC_ORACLE, top_k=21)
    assert BackendDescriptor("my-model", BackendKind.SYNTHETIC_ORACLE).env_prefix == "MY_MODEL"


def test_retry_delays():
    policy = RetryPolicy(max_attempts=5, backoff_base=1.0, backoff_cap=5.0)
    assert [policy.delay(n) for n in range(1, 6)] == [1.0, 2.0, 4.0, 5.0, 5.0]


def test_many_helpers_keep_order():
    ds = make_dataset(6)
    oracle = build_backend({**ORACLE, "max_parallel": 3}, ds)
    counted = CountingBackend(oracle)
    outs = generate_many(counted, KEY_A, [ex.query for ex in ds])
    assert outs == [ex.reference_text for ex in ds]
    recs = score_many(counted, KEY_A, ds, 4)
    assert [r[2].entries[0][0] for r in recs] == [ex.label_tokens[2] for ex in ds]
    assert (counted.generate_calls, counted.score_calls) == (6, 6)
