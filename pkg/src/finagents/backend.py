"""Chat-completion backends: a scripted one for offline runs and an HTTP client.

Both speak in ChatRequest/ChatResponse. ``wire_encode_request`` and
``wire_decode_response`` map those onto the chat-completions JSON shape.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

import httpx
import yaml

from .core import TOOL, USER, Message, ToolCall, ToolResult
from .errors import BackendFailure, DecodeError, InvalidRequest, UnknownToolRequested
from .toolkit.registry import PARAM_TYPES, ToolParam, ToolSpec

log = logging.getLogger(__name__)

_ERROR_PREFIX = "ERROR: "


@dataclass(frozen=True)
class ModelParams:
    model: str = "scripted"
    temperature: float = 0.0
    max_tokens: int = 1024


@dataclass(frozen=True)
class ChatRequest:
    agent: str
    system_prompt: str
    context: tuple[Message, ...] = ()
    tool_specs: tuple[ToolSpec, ...] = ()
    model_params: ModelParams = ModelParams()

    def __post_init__(self):
        object.__setattr__(self, "context", tuple(self.context))
        object.__setattr__(self, "tool_specs", tuple(self.tool_specs))

    def validate(self) -> None:
        seqs = [m.seq for m in self.context]
        if any(a >= b for a, b in zip(seqs, seqs[1:])):
            raise InvalidRequest("context is not ordered by seq")
        names = [t.name for t in self.tool_specs]
        if len(set(names)) != len(names):
            raise InvalidRequest(f"duplicate tool spec names: {names}")

    @property
    def tool_names(self) -> set[str]:
        return {t.name for t in self.tool_specs}


@dataclass(frozen=True)
class ChatResponse:
    content: str = ""
    tool_calls: tuple[ToolCall, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tool_calls", tuple(self.tool_calls))
        if not self.content and not self.tool_calls:
            raise ValueError("response must have content or tool calls")


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


# ---------------------------------------------------------------- wire format

def _message_to_wire(msg: Message, agent: str) -> list[dict]:
    if msg.sender == TOOL:
        return [
            {
                "role": "tool",
                "tool_call_id": r.call_id,
                "name": r.name,
                "content": _ERROR_PREFIX + r.error if r.error is not None else r.payload,
            }
            for r in msg.tool_results
        ]
    if msg.sender == agent:
        out: dict[str, Any] = {"role": "assistant", "name": agent, "content": msg.content or None}
        if msg.tool_calls:
            out["tool_calls"] = [
                {
                    "id": c.id,
                    "type": "function",
                    "function": {"name": c.name, "arguments": json.dumps(dict(c.arguments), sort_keys=True)},
                }
                for c in msg.tool_calls
            ]
        return [out]
    out = {"role": "user", "content": msg.content}
    if msg.sender != USER:
        out["name"] = msg.sender
    return [out]


def wire_encode_request(request: ChatRequest) -> dict:
    messages = [{"role": "system", "content": request.system_prompt}]
    for m in request.context:
        messages.extend(_message_to_wire(m, request.agent))
    payload: dict[str, Any] = {
        "model": request.model_params.model,
        "temperature": request.model_params.temperature,
        "max_tokens": request.model_params.max_tokens,
        "user": request.agent,
        "messages": messages,
    }
    if request.tool_specs:
        payload["tools"] = [t.to_openai() for t in request.tool_specs]
    return payload


def _decode_tool_calls(raw: Any, path: str) -> tuple[ToolCall, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise DecodeError(path, "expected a list")
    calls = []
    for i, c in enumerate(raw):
        p = f"{path}[{i}]"
        try:
            fn = c["function"]
            name = fn["name"]
            call_id = c["id"]
        except (KeyError, TypeError):
            raise DecodeError(p, "missing id or function.name") from None
        args = fn.get("arguments") or "{}"
        try:
            parsed = json.loads(args) if isinstance(args, str) else args
        except json.JSONDecodeError as e:
            raise DecodeError(f"{p}.function.arguments", f"invalid JSON: {e.msg}") from None
        if not isinstance(parsed, dict):
            raise DecodeError(f"{p}.function.arguments", "arguments must be a JSON object")
        calls.append(ToolCall(call_id, name, parsed))
    return tuple(calls)


def _param_from_schema(name: str, schema: Mapping, required: bool) -> ToolParam:
    t = schema.get("type", "string")
    if t == "string" and schema.get("format") == "date":
        t = "date"
    if t not in PARAM_TYPES:
        raise DecodeError(f"parameters.properties.{name}.type", f"unsupported type {t!r}")
    return ToolParam(name, t, required, schema.get("description", ""), schema.get("default"))


def wire_decode_tool(entry: Mapping, path: str = "tools") -> ToolSpec:
    try:
        fn = entry["function"]
        params = fn.get("parameters") or {}
        required = set(params.get("required", ()))
        return ToolSpec(
            fn["name"],
            fn.get("description", ""),
            tuple(_param_from_schema(n, s, n in required) for n, s in params.get("properties", {}).items()),
        )
    except (KeyError, TypeError, AttributeError):
        raise DecodeError(path, "malformed tool entry") from None


def wire_decode_request(payload: Mapping) -> ChatRequest:
    """Inverse of ``wire_encode_request``; seq numbers are reassigned from position."""
    agent = payload.get("user", "assistant")
    raw = payload.get("messages")
    if not isinstance(raw, list) or not raw or raw[0].get("role") != "system":
        raise DecodeError("messages[0]", "expected a leading system message")
    context: list[Message] = []
    for i, m in enumerate(raw[1:], start=1):
        path = f"messages[{i}]"
        role = m.get("role")
        if role == "tool":
            content = m.get("content") or ""
            if content.startswith(_ERROR_PREFIX):
                result = ToolResult(m["tool_call_id"], m.get("name", ""), "", content[len(_ERROR_PREFIX):])
            else:
                result = ToolResult(m["tool_call_id"], m.get("name", ""), content)
            if context and context[-1].sender == TOOL:
                prev = context.pop()
                context.append(Message(prev.seq, TOOL, "", tool_results=prev.tool_results + (result,)))
            else:
                context.append(Message(len(context), TOOL, "", tool_results=(result,)))
        elif role == "assistant":
            calls = _decode_tool_calls(m.get("tool_calls"), f"{path}.tool_calls")
            context.append(Message(len(context), m.get("name", agent), m.get("content") or "", calls))
        elif role == "user":
            context.append(Message(len(context), m.get("name", USER), m.get("content") or ""))
        else:
            raise DecodeError(f"{path}.role", f"unexpected role {role!r}")
    tools = tuple(wire_decode_tool(t, f"tools[{i}]") for i, t in enumerate(payload.get("tools", ())))
    params = ModelParams(payload.get("model", "scripted"), payload.get("temperature", 0.0), payload.get("max_tokens", 1024))
    return ChatRequest(agent, raw[0].get("content", ""), tuple(context), tools, params)


def wire_encode_response(response: ChatResponse) -> dict:
    message: dict[str, Any] = {"role": "assistant", "content": response.content or None}
    if response.tool_calls:
        message["tool_calls"] = [
            {"id": c.id, "type": "function",
             "function": {"name": c.name, "arguments": json.dumps(dict(c.arguments), sort_keys=True)}}
            for c in response.tool_calls
        ]
    return {"choices": [{"index": 0, "message": message, "finish_reason": "tool_calls" if response.tool_calls else "stop"}]}


def wire_decode_response(payload: Any) -> ChatResponse:
    try:
        message = payload["choices"][0]["message"]
    except (KeyError, IndexError, TypeError):
        raise DecodeError("choices[0].message", "missing") from None
    if not isinstance(message, dict):
        raise DecodeError("choices[0].message", "expected an object")
    content = message.get("content") or ""
    if not isinstance(content, str):
        raise DecodeError("choices[0].message.content", "expected a string")
    calls = _decode_tool_calls(message.get("tool_calls"), "choices[0].message.tool_calls")
    if not content and not calls:
        raise DecodeError("choices[0].message", "empty content and no tool calls")
    return ChatResponse(content, calls)


# ----------------------------------------------------------------- scripted

@dataclass(frozen=True)
class Rule:
    """One scripted reply. Every condition that is set must hold for the rule to fire.

    ``agent`` is a regex full-matched against the agent name, ``turn`` the
    number of the agent's own messages in the visible context, ``pattern`` a
    regex searched in the last context message, ``tools`` names that must all
    be offered in the request.
    """

    reply_content: str = ""
    reply_calls: tuple[Mapping[str, Any], ...] = ()
    agent: str | None = None
    turn: int | None = None
    min_turn: int | None = None
    pattern: str | None = None
    tools: tuple[str, ...] = ()

    @property
    def is_default(self) -> bool:
        return self.agent is None and self.turn is None and self.min_turn is None and self.pattern is None and not self.tools

    def matches(self, request: ChatRequest, turn: int) -> bool:
        if self.agent is not None and not re.fullmatch(self.agent, request.agent):
            return False
        if self.turn is not None and turn != self.turn:
            return False
        if self.min_turn is not None and turn < self.min_turn:
            return False
        if self.pattern is not None:
            last = request.context[-1].content if request.context else ""
            if not re.search(self.pattern, last):
                return False
        return all(t in request.tool_names for t in self.tools)


class _Vars(dict):
    def __missing__(self, key):
        return "{" + key + "}"


def _fill(value: Any, variables: Mapping[str, Any]) -> Any:
    if isinstance(value, str):
        return value.format_map(_Vars(variables))
    if isinstance(value, Mapping):
        return {k: _fill(v, variables) for k, v in value.items()}
    if isinstance(value, list):
        return [_fill(v, variables) for v in value]
    return value


class ScriptedBackend:
    """Deterministic backend driven by an ordered rule table; first match wins.

    Replies are templates filled from ``variables`` (ticker, dates, ...), so one
    script serves every cell of an experiment. The reply is a pure function of
    (agent, own-turn index, visible context).
    """

    def __init__(self, rules: Sequence[Rule], variables: Mapping[str, Any] | None = None):
        self.rules = tuple(rules)
        if not any(r.is_default for r in self.rules):
            raise ValueError("scripted backend needs a default rule (one with no conditions)")
        self.variables = dict(variables or {})

    def bind(self, **variables) -> "ScriptedBackend":
        return ScriptedBackend(self.rules, {**self.variables, **variables})

    @classmethod
    def from_file(cls, path: str | Path, **variables) -> "ScriptedBackend":
        return cls(load_rules(Path(path).read_text(encoding="utf-8")), variables)

    def complete(self, request: ChatRequest) -> ChatResponse:
        request.validate()
        turn = sum(1 for m in request.context if m.sender == request.agent)
        rule = next(r for r in self.rules if r.matches(request, turn))
        variables = {**self.variables, "agent": request.agent, "turn": turn}
        calls = []
        for i, c in enumerate(rule.reply_calls):
            name = c["name"]
            if name not in request.tool_names:
                raise UnknownToolRequested(f"script asks for {name!r}, not offered to {request.agent}")
            call_id = c.get("id") or f"call_{request.agent}_{turn}_{i}"
            calls.append(ToolCall(call_id, name, _fill(dict(c.get("arguments", {})), variables)))
        return ChatResponse(_fill(rule.reply_content, variables), tuple(calls))


def load_rules(text: str) -> list[Rule]:
    """Parse a YAML rule table.

    ::

        rules:
          - agent: "Analyst.*"
            turn: 0
            tools: [get_stock_prices]
            reply: "Fetching prices."
            calls:
              - name: get_stock_prices
                arguments: {ticker: "{ticker}", start: "{window_start}", end: "{release_date}"}
          - reply: "Nothing to add."
    """
    doc = yaml.safe_load(text) or {}
    rules = []
    for i, r in enumerate(doc.get("rules", [])):
        unknown = set(r) - {"agent", "turn", "min_turn", "pattern", "tools", "reply", "calls"}
        if unknown:
            raise ValueError(f"rule {i}: unknown keys {sorted(unknown)}")
        rules.append(Rule(
            reply_content=r.get("reply", ""),
            reply_calls=tuple(r.get("calls", ())),
            agent=r.get("agent"),
            turn=r.get("turn"),
            min_turn=r.get("min_turn"),
            pattern=r.get("pattern"),
            tools=tuple(r.get("tools", ())),
        ))
    return rules


# --------------------------------------------------------------------- live

def with_retries(fn: Callable[[], Any], attempts: int = 3, base_delay: float = 0.5,
                 sleep: Callable[[float], None] = time.sleep) -> Any:
    """Call fn, retrying transient BackendFailures with exponential backoff."""
    for i in range(attempts):
        try:
            return fn()
        except BackendFailure as e:
            if not e.transient or i == attempts - 1:
                raise
            delay = base_delay * 2**i
            log.warning("transient backend failure (%s), retrying in %.1fs", e, delay)
            sleep(delay)


class HttpBackend:
    """Client for any endpoint exposing POST <base_url>/chat/completions."""

    def __init__(self, base_url: str, api_key_env: str = "OPENAI_API_KEY", model_params: ModelParams | None = None,
                 retries: int = 3, client: httpx.Client | None = None, sleep: Callable[[float], None] = time.sleep):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.api_key_env = api_key_env
        self.model_params = model_params
        self.retries = retries
        self.client = client or httpx.Client(timeout=120.0)
        self.sleep = sleep

    def _post(self, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self.client.post(self.url, json=payload, headers=headers)
        except httpx.TransportError as e:
            raise BackendFailure(str(e), transient=True) from e
        if resp.status_code == 429 or resp.status_code >= 500:
            raise BackendFailure(f"HTTP {resp.status_code}", transient=True)
        if resp.status_code >= 400:
            raise BackendFailure(f"HTTP {resp.status_code}: {resp.text[:200]}", transient=False)
        try:
            return resp.json()
        except ValueError as e:
            raise BackendFailure(f"non-JSON response: {e}", transient=False) from e

    def complete(self, request: ChatRequest) -> ChatResponse:
        request.validate()
        if self.model_params is not None:
            request = ChatRequest(request.agent, request.system_prompt, request.context, request.tool_specs, self.model_params)
        payload = wire_encode_request(request)
        data = with_retries(lambda: self._post(payload), self.retries, sleep=self.sleep)
        return wire_decode_response(data)
