"""
Reasoner backends, rationale parsing and token accounting.
"""
import logging
import re
import time
from itertools import takewhile
from typing import Dict, List, Optional

import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from .config import config
from .models import Feasibility, Rationale, ReasonerRequest, ReasonerResponse, Stage
from .primitives import MOVEMENT_PRIMITIVES, PrimitiveParseError, parse_call
from .prompts import parse_observation_table

logger = logging.getLogger(__name__)

FAULT_MODES = ["loop_forever", "invalid_call", "wrong_object", "silent"]
SECTION_HEADERS = [(1, "ENVIRONMENT"), (2, "INSTRUCTION"), (3, "FEASIBILITY"), (4, "CALCULATION"), (5, "PLAN")]
PLAN_ITEM = re.compile(r"^\s*(?:\d+[.)]|[-*•])\s+(.+?)\s*$")


class ReasonerError(Exception):
    """Base error for reasoner backends."""
    pass


class ReasonerTransportError(ReasonerError):
    """Network failure that persisted through all retries."""
    pass


class ReasonerResponseError(ReasonerError):
    """Provider returned something that is not a chat completion."""
    pass


class BackendConfigError(ReasonerError):
    """Backend cannot be initialized from the current configuration."""
    pass


class RationaleParseError(Exception):
    """Reasoning text lacks the five required sections."""
    pass


def estimate_tokens(messages: List[Dict[str, str]]) -> int:
    """ceil(total characters / 4)."""
    chars = sum(len(message["content"]) for message in messages)
    return -(-chars // 4)


def estimate_text_tokens(text: str) -> int:
    return -(-len(text) // 4)


def latest_observation(messages: List[Dict[str, str]]):
    """Index and parsed content of the last message carrying an observation table."""
    for index in range(len(messages) - 1, -1, -1):
        observation = parse_observation_table(messages[index]["content"])
        if observation is not None:
            return index, observation
    raise ReasonerError("no observation table in context")


def movement_calls_after(messages: List[Dict[str, str]], index: int) -> int:
    """Assistant movement calls issued after message index."""
    count = 0
    for message in messages[index + 1:]:
        if message["role"] != "assistant":
            continue
        try:
            call = parse_call(message["content"])
        except PrimitiveParseError:
            continue
        if call.primitive in MOVEMENT_PRIMITIVES:
            count += 1
    return count


def render_rationale(rationale: Rationale) -> str:
    """Five-section wire format understood by parse_rationale."""
    if rationale.feasibility == Feasibility.INFEASIBLE:
        feasibility = f"infeasible: {rationale.justification}"
    else:
        feasibility = f"feasible: {rationale.justification}" if rationale.justification else "feasible"
    plan = "\n".join(f"{i}. {item}" for i, item in enumerate(rationale.plan, start=1))
    return (
        f"1. ENVIRONMENT\n{rationale.env_status}\n"
        f"2. INSTRUCTION\n{rationale.instruction_restatement}\n"
        f"3. FEASIBILITY\n{feasibility}\n"
        f"4. CALCULATION\n{rationale.calculations}\n"
        f"5. PLAN\n{plan}"
    )


def parse_rationale(text: str) -> Rationale:
    """Split reasoning text on its five numbered headers."""
    matches = []
    for number, name in SECTION_HEADERS:
        match = re.search(rf"^[ \t#*]*{number}\.\s*{name}\b", text, re.MULTILINE)
        if match is None:
            raise RationaleParseError(f"missing section {number}")
        matches.append(match)

    ordered = sorted(matches, key=lambda m: m.start())
    sections = {}
    for position, match in enumerate(ordered):
        end = ordered[position + 1].start() if position + 1 < len(ordered) else len(text)
        sections[match] = text[match.end():end].strip(" \t*:\n")
    env, instruction, feasibility_text, calculation, plan_text = [sections[m] for m in matches]

    lowered = feasibility_text.lower()
    if "infeasible" in lowered or "not feasible" in lowered:
        feasibility = Feasibility.INFEASIBLE
    elif "feasible" in lowered:
        feasibility = Feasibility.FEASIBLE
    else:
        raise RationaleParseError("unparseable feasibility")
    justification = re.sub(r"^\s*(?:in|not )?feasible\s*[:.-]?\s*", "", feasibility_text, flags=re.IGNORECASE)

    plan = []
    for line in plan_text.splitlines():
        item = PLAN_ITEM.match(line)
        if item:
            plan.append(item.group(1))

    return Rationale(
        env_status=env,
        instruction_restatement=instruction,
        feasibility=feasibility,
        justification=justification.strip(),
        calculations=calculation,
        plan=plan
    )


class ReasonerBackend:
    """Common interface of every reasoning backend."""
    name = "base"

    def complete(self, request: ReasonerRequest) -> ReasonerResponse:
        raise NotImplementedError

    def for_task(self, task) -> "ReasonerBackend":
        """Backend to use for one trial of task."""
        return self


class BackoffRetry(Retry):
    """Retry whose n-th wait is backoff_factor * 2 ** (n - 1) seconds, starting with the first."""

    def get_backoff_time(self) -> float:
        errors = len(list(takewhile(lambda item: item.redirect_location is None, reversed(self.history))))
        if errors == 0:
            return 0.0
        cap = getattr(self, "backoff_max", Retry.DEFAULT_BACKOFF_MAX)
        return float(min(cap, self.backoff_factor * 2 ** (errors - 1)))


class HttpBackend(ReasonerBackend):
    """OpenAI-compatible chat-completions client with retries."""
    name = "http"

    def __init__(self, base_url: Optional[str] = None, model_name: Optional[str] = None,
                 api_key: Optional[str] = None, session: Optional[requests.Session] = None):
        self.base_url = (base_url or config.reasoner.base_url).rstrip('/')
        self.model_name = model_name or config.reasoner.model
        self.timeout = config.reasoner.timeout
        self.max_retries = config.reasoner.max_retries
        api_key = api_key or config.reasoner.api_key
        if not api_key:
            raise BackendConfigError("REASONER_API_KEY environment variable is required for the http backend")

        self.session = session or requests.Session()
        retry_strategy = BackoffRetry(
            total=self.max_retries,
            backoff_factor=config.reasoner.backoff_factor,
            status_forcelist=[429, 500, 502, 503, 504],
            allowed_methods=frozenset(["POST"]),
        )
        adapter = HTTPAdapter(max_retries=retry_strategy)
        self.session.mount("http://", adapter)
        self.session.mount("https://", adapter)
        self.session.headers.update({"Authorization": f"Bearer {api_key}"})
        logger.info(f"HTTP reasoner ready: {self.base_url} ({self.model_name})")

    def complete(self, request: ReasonerRequest) -> ReasonerResponse:
        url = f"{self.base_url}/chat/completions"
        body = {
            "model": self.model_name,
            "messages": request.messages,
            "temperature": request.temperature,
        }
        start = time.perf_counter()
        try:
            response = self.session.post(url, json=body, timeout=self.timeout)
            response.raise_for_status()
            payload = response.json()
        except requests.exceptions.RequestException as e:
            logger.error(f"Chat completion request to {self.base_url} failed: {type(e).__name__}")
            raise ReasonerTransportError(f"chat completion request failed: {type(e).__name__}")
        except ValueError:
            raise ReasonerResponseError("provider response is not JSON")
        latency = time.perf_counter() - start

        try:
            text = payload["choices"][0]["message"]["content"] or ""
            usage = payload.get("usage") or {}
            input_tokens = int(usage.get("prompt_tokens", estimate_tokens(request.messages)))
            output_tokens = int(usage.get("completion_tokens", estimate_text_tokens(text)))
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise ReasonerResponseError(f"malformed chat completion: {e}")

        return ReasonerResponse(
            text=text, input_token_count=input_tokens,
            output_token_count=output_tokens, latency=latency
        )


class FaultBackend(ReasonerBackend):
    """Misbehaving reasoner for robustness tests."""

    def __init__(self, mode: str):
        if mode not in FAULT_MODES:
            raise BackendConfigError(f"unknown fault mode {mode}")
        self.mode = mode
        self.name = f"fault:{mode}"

    def complete(self, request: ReasonerRequest) -> ReasonerResponse:
        start = time.perf_counter()
        text = self._reply(request)
        return ReasonerResponse(
            text=text,
            input_token_count=estimate_tokens(request.messages),
            output_token_count=estimate_text_tokens(text),
            latency=time.perf_counter() - start
        )

    def _reply(self, request: ReasonerRequest) -> str:
        if self.mode == "silent":
            return ""
        if request.stage == Stage.MODE_SELECTION:
            return "DIFFICULTY: 3.0\nMODE: slow\nSIGNALS: fault injection"
        if request.stage == Stage.REASONING:
            return render_rationale(Rationale(
                env_status="Objects as listed in the scene table.",
                instruction_restatement="Follow the instruction.",
                feasibility=Feasibility.FEASIBLE,
                calculations="None.",
                plan=["act on the scene"]
            ))

        if self.mode == "loop_forever":
            return '{"primitive": "get_observation", "args": {}}'
        if self.mode == "invalid_call":
            return '{"primitive": "pick_place_at", "args": {"object": "blk_ghost", "position": [0.0, 0.0, 0.025]}}'

        _, observation = latest_observation(request.messages)
        if movement_calls_after(request.messages, 0) > 0:
            return '{"primitive": "finish", "args": {"status": "success", "message": "done"}}'
        blocks = [o.id for o in observation.objects if o.kind.value == "block"]
        bowls = [o.id for o in observation.objects if o.kind.value == "bowl"]
        return (
            f'{{"primitive": "pick_place_on", "args": {{"object": "{blocks[0]}", "base": "{bowls[-1]}"}}}}'
        )
