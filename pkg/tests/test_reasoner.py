"""Tests for reasoner backends and rationale parsing."""
import logging

import pytest
import requests
from urllib3.exceptions import ConnectTimeoutError

from src.core.config import config
from src.core.models import Feasibility, Rationale, ReasonerRequest, Stage
from src.core.primitives import parse_call
from src.core.reasoner import (
    BackendConfigError, BackoffRetry, FaultBackend, HttpBackend, RationaleParseError, ReasonerError,
    ReasonerResponseError, ReasonerTransportError, estimate_tokens, latest_observation,
    parse_rationale, render_rationale
)

RATIONALE_TEXT = """1. ENVIRONMENT
Red block at (-0.150, -0.150); red bowl at (0.150, 0.150).
2. INSTRUCTION
Put the red block into the red bowl.
3. FEASIBILITY
feasible: both objects exist
4. CALCULATION
distance 0.424 m
5. PLAN
1. pick_place_on blk_red onto bowl_red
2. finish with success
"""


class FakeResponse:
    def __init__(self, payload=None, status=200, invalid_json=False):
        self.payload = payload
        self.status_code = status
        self.invalid_json = invalid_json

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.exceptions.HTTPError(f"{self.status_code} error")

    def json(self):
        if self.invalid_json:
            raise ValueError("not json")
        return self.payload


class StubSession(requests.Session):
    """Session that never touches the network."""

    def __init__(self, response=None, error=None):
        super().__init__()
        self.response = response
        self.error = error
        self.calls = []

    def post(self, url, json=None, timeout=None, **kwargs):
        self.calls.append({"url": url, "json": json, "timeout": timeout})
        if self.error is not None:
            raise self.error
        return self.response


def completion(text: str, usage: dict = None) -> dict:
    payload = {"choices": [{"message": {"role": "assistant", "content": text}}]}
    if usage is not None:
        payload["usage"] = usage
    return payload


def request(stage: Stage = Stage.ACTION) -> ReasonerRequest:
    return ReasonerRequest(messages=[{"role": "user", "content": "abcdefgh"}], stage=stage)


class TestHttpBackend:
    """OpenAI-compatible client against a stubbed session."""

    def test_completion_with_usage(self):
        session = StubSession(FakeResponse(completion("hi", {"prompt_tokens": 11, "completion_tokens": 2})))
        backend = HttpBackend(base_url="http://reasoner.test/v1/", model_name="m1", api_key="k", session=session)
        response = backend.complete(request())
        assert response.text == "hi"
        assert response.input_token_count == 11
        assert response.output_token_count == 2
        assert session.calls[0]["url"] == "http://reasoner.test/v1/chat/completions"
        assert session.calls[0]["json"]["model"] == "m1"
        assert session.calls[0]["json"]["temperature"] == 0.0
        assert session.headers["Authorization"] == "Bearer k"

    def test_tokens_estimated_without_usage(self):
        session = StubSession(FakeResponse(completion("abcde")))
        backend = HttpBackend(base_url="http://reasoner.test", api_key="k", session=session)
        response = backend.complete(request())
        assert response.input_token_count == 2
        assert response.output_token_count == 2

    def test_transport_error(self):
        session = StubSession(error=requests.exceptions.ConnectionError("down"))
        backend = HttpBackend(base_url="http://reasoner.test", api_key="k", session=session)
        with pytest.raises(ReasonerTransportError):
            backend.complete(request())

    def test_http_error_status(self):
        session = StubSession(FakeResponse(status=500))
        backend = HttpBackend(base_url="http://reasoner.test", api_key="k", session=session)
        with pytest.raises(ReasonerTransportError):
            backend.complete(request())

    def test_non_json_response(self):
        session = StubSession(FakeResponse(invalid_json=True))
        backend = HttpBackend(base_url="http://reasoner.test", api_key="k", session=session)
        with pytest.raises(ReasonerResponseError):
            backend.complete(request())

    def test_malformed_completion(self):
        session = StubSession(FakeResponse({"choices": []}))
        backend = HttpBackend(base_url="http://reasoner.test", api_key="k", session=session)
        with pytest.raises(ReasonerResponseError, match="malformed chat completion"):
            backend.complete(request())

    def test_missing_credentials(self, monkeypatch):
        monkeypatch.setattr(config.reasoner, "api_key", None)
        with pytest.raises(BackendConfigError, match="REASONER_API_KEY"):
            HttpBackend(base_url="http://reasoner.test", session=StubSession())

    def test_key_never_logged(self, caplog):
        caplog.set_level(logging.DEBUG)
        session = StubSession(FakeResponse(completion("ok")))
        HttpBackend(base_url="http://reasoner.test", api_key="sk-secret", session=session).complete(request())
        assert "sk-secret" not in caplog.text

    def test_retry_waits_double_from_one_second(self, monkeypatch):
        monkeypatch.setattr(config.reasoner, "max_retries", 3)
        monkeypatch.setattr(config.reasoner, "backoff_factor", 1.0)
        backend = HttpBackend(base_url="https://reasoner.test", api_key="k", session=StubSession())
        retry = backend.session.get_adapter("https://reasoner.test/chat/completions").max_retries
        assert isinstance(retry, BackoffRetry)
        assert retry.get_backoff_time() == 0.0

        waits = []
        for _ in range(3):
            retry = retry.increment(method="POST", url="/chat/completions", error=ConnectTimeoutError("slow"))
            waits.append(retry.get_backoff_time())
        assert waits == [1.0, 2.0, 4.0]

    def test_retry_status_list(self):
        backend = HttpBackend(base_url="https://reasoner.test", api_key="k", session=StubSession())
        retry = backend.session.get_adapter("https://reasoner.test").max_retries
        assert set(retry.status_forcelist) == {429, 500, 502, 503, 504}
        assert "POST" in retry.allowed_methods


class TestRationale:
    """Five-section rationale parsing."""

    def test_parse_full_rationale(self):
        rationale = parse_rationale(RATIONALE_TEXT)
        assert rationale.feasibility == Feasibility.FEASIBLE
        assert rationale.justification == "both objects exist"
        assert rationale.plan == ["pick_place_on blk_red onto bowl_red", "finish with success"]
        assert "0.424" in rationale.calculations

    def test_markdown_headers(self):
        text = RATIONALE_TEXT.replace("1. ENVIRONMENT", "## 1. ENVIRONMENT").replace("5. PLAN", "**5. PLAN**")
        assert parse_rationale(text).plan[0] == "pick_place_on blk_red onto bowl_red"

    def test_missing_section(self):
        text = RATIONALE_TEXT.replace("4. CALCULATION\ndistance 0.424 m\n", "")
        with pytest.raises(RationaleParseError, match="missing section 4"):
            parse_rationale(text)

    def test_unparseable_feasibility(self):
        text = RATIONALE_TEXT.replace("feasible: both objects exist", "probably")
        with pytest.raises(RationaleParseError, match="unparseable feasibility"):
            parse_rationale(text)

    def test_infeasible_wins(self):
        text = RATIONALE_TEXT.replace("feasible: both objects exist", "infeasible: no pink block exists")
        rationale = parse_rationale(text)
        assert rationale.feasibility == Feasibility.INFEASIBLE
        assert rationale.justification == "no pink block exists"

    def test_rendered_rationale_parses(self):
        rationale = Rationale(
            env_status="two pairs", instruction_restatement="stack", feasibility=Feasibility.INFEASIBLE,
            justification="no pink block exists", calculations="none", plan=["finish"]
        )
        assert parse_rationale(render_rationale(rationale)) == rationale


class TestFaultBackend:
    """Scripted misbehaviour."""

    def test_unknown_mode(self):
        with pytest.raises(BackendConfigError):
            FaultBackend("sleepy")

    def test_silent_is_empty_everywhere(self):
        backend = FaultBackend("silent")
        for stage in Stage:
            assert backend.complete(request(stage)).text == ""

    def test_loop_forever_observes(self):
        call = parse_call(FaultBackend("loop_forever").complete(request()).text)
        assert call.primitive == "get_observation"

    def test_invalid_call_names_ghost(self):
        call = parse_call(FaultBackend("invalid_call").complete(request()).text)
        assert call.args["object"] == "blk_ghost"

    def test_name_carries_mode(self):
        assert FaultBackend("wrong_object").name == "fault:wrong_object"


def test_token_estimate_rounds_up():
    assert estimate_tokens([{"role": "user", "content": "abcde"}]) == 2
    assert estimate_tokens([{"role": "user", "content": "abcd"}]) == 1


def test_latest_observation_requires_table():
    with pytest.raises(ReasonerError):
        latest_observation([{"role": "user", "content": "no table here"}])
