import json
import threading
import time

import httpx
import pytest

from promptlock.backends.base import BackendDescriptor, BackendKind, RetryPolicy
from promptlock.backends.http import HttpAdapter, HttpBackend, parse_top_logprobs
from promptlock.core import TaskExample
from promptlock.errors import InvalidConfig, LogprobsUnsupported, ProviderRefusal, TransportError

SECRET = "sk-test-do-not-leak-1234"


def descriptor(kind=BackendKind.HTTP_LOGPROB, **kw):
    kw.setdefault("retry_policy", RetryPolicy(max_attempts=3, backoff_base=0.5))
    return BackendDescriptor(id="prov-x", kind=kind, model_name="m-1", endpoint="https://api.example/v1", **kw)


def completion(content="hello", logprobs=None, finish="stop"):
    choice = {"message": {"role": "assistant", "content": content}, "finish_reason": finish}
    if logprobs is not None:
        choice["logprobs"] = {"content": logprobs}
    return {"choices": [choice]}


def make(handler, kind=BackendKind.HTTP_LOGPROB, env=None, **kw):
    sleeps = []
    backend = HttpBackend(
        descriptor(kind, **kw),
        environ=env if env is not None else {"PROV_X_API_KEY": SECRET},
        transport=httpx.MockTransport(handler),
        sleep=sleeps.append,
    )
    return backend, sleeps


def test_request_shape_and_auth():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json=completion("out"))

    backend, _ = make(handler)
    assert backend.generate("SYS", "Q") == "out"
    assert seen["url"] == "https://api.example/v1/chat/completions"
    assert seen["auth"] == f"Bearer {SECRET}"
    body = seen["body"]
    assert body["messages"] == [{"role": "system", "content": "SYS"}, {"role": "user", "content": "Q"}]
    assert body["temperature"] == 0.0 and body["model"] == "m-1"


def test_key_never_in_repr_or_errors():
    backend, _ = make(lambda r: httpx.Response(400, text="bad request"))
    assert SECRET not in repr(backend)
    with pytest.raises(ProviderRefusal) as info:
        backend.generate("p", "q")
    assert SECRET not in str(info.value)


def test_base_url_override_and_custom_adapter():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["headers"] = request.headers
        return httpx.Response(200, json=completion())

    backend = HttpBackend(
        descriptor(),
        HttpAdapter(path="/v2/chat", auth_header="x-api-key", auth_scheme=""),
        environ={"PROV_X_API_KEY": SECRET, "PROV_X_BASE_URL": "http://localhost:9/"},
        transport=httpx.MockTransport(handler),
    )
    backend.generate("p", "q")
    assert seen["url"] == "http://localhost:9/v2/chat"
    assert seen["headers"]["x-api-key"] == SECRET


def test_retries_with_backoff_then_succeeds():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503) if len(calls) < 3 else httpx.Response(200, json=completion("ok"))

    backend, sleeps = make(handler)
    assert backend.generate("p", "q") == "ok"
    assert sleeps == [0.5, 1.0]


def test_retries_exhausted():
    def handler(request):
        raise httpx.ConnectError("down")

    backend, sleeps = make(handler)
    with pytest.raises(TransportError):
        backend.generate("p", "q")
    assert len(sleeps) == 2


def test_refusals_are_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(403, text="forbidden")

    backend, sleeps = make(handler)
    with pytest.raises(ProviderRefusal):
        backend.generate("p", "q")
    assert calls == [1] and sleeps == []


def test_content_filter():
    backend, _ = make(lambda r: httpx.Response(200, json=completion(None, finish="content_filter")))
    with pytest.raises(ProviderRefusal):
        backend.generate("p", "q")


def test_score_labels_parses_top_logprobs():
    lp = [
        {"token": "[", "logprob": -0.1, "top_logprobs": [{"token": "[", "logprob": -0.1}, {"token": "{", "logprob": -2.5}]},
        {"token": "x", "logprob": -0.2, "top_logprobs": [{"token": "x", "logprob": -0.2}]},
    ]
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json=completion("[x", lp))

    backend, _ = make(handler)
    recs = backend.score_labels("p", TaskExample("q", ("[", '"', "kw")), 5)
    assert seen["body"]["logprobs"] is True and seen["body"]["top_logprobs"] == 5
    assert seen["body"]["max_tokens"] == 3
    assert recs[0].logprob("[") == -0.1
    assert recs[1].logprob('"') is None
    assert recs[2].entries == ()


def test_missing_logprobs():
    backend, _ = make(lambda r: httpx.Response(200, json=completion("x")))
    with pytest.raises(LogprobsUnsupported):
        backend.score_labels("p", TaskExample("q", ("a",)), 3)


def test_token_only_backend_refuses_scoring():
    backend, _ = make(lambda r: httpx.Response(200, json=completion()), kind=BackendKind.HTTP_TOKEN_ONLY)
    with pytest.raises(LogprobsUnsupported):
        backend.score_labels("p", TaskExample("q", ("a",)), 3)


def test_k_above_cap():
    backend, _ = make(lambda r: httpx.Response(200, json=completion()), top_k=5)
    with pytest.raises(InvalidConfig):
        backend.score_labels("p", TaskExample("q", ("a",)), 6)


def test_parse_dedupes_and_truncates():
    data = completion(
        "a",
        [{"top_logprobs": [{"token": "a", "logprob": -1.0}, {"token": "a", "logprob": -0.5}, {"token": "b", "logprob": -0.7}]}],
    )
    (rec,) = parse_top_logprobs(data, 1, 1)
    assert rec.entries == (("a", -0.5),)


def test_parallel_cap():
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}

    def handler(request):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        time.sleep(0.02)
        with lock:
            state["now"] -= 1
        return httpx.Response(200, json=completion())

    backend, _ = make(handler, max_parallel=2)
    threads = [threading.Thread(target=backend.generate, args=("p", "q")) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert state["peak"] <= 2


def test_no_key_means_no_auth_header():
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json=completion())

    backend, _ = make(handler, env={})
    backend.generate("p", "q")
    assert seen["auth"] is None
