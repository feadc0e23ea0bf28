"""Tool specs, JSON-schema emission, argument validation and the leakage guard."""

from __future__ import annotations

import datetime as dt
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from ..core import ToolCall, ToolResult
from ..errors import ArgValidation, LeakageViolation, UnknownTool

PARAM_TYPES = ("string", "integer", "number", "boolean", "date")
_DATE_RE = re.compile(r"^[0-9]{4}-[0-9]{2}-[0-9]{2}\Z")
_TOKEN_RE = re.compile(r"\S+")

DEFAULT_PAYLOAD_BUDGET = 4000


@dataclass(frozen=True)
class ToolParam:
    name: str
    type: str = "string"
    required: bool = True
    description: str = ""
    default: Any = None

    def __post_init__(self):
        if self.type not in PARAM_TYPES:
            raise ValueError(f"unsupported param type {self.type!r}")

    def json_schema(self) -> dict:
        if self.type == "date":
            schema: dict[str, Any] = {"type": "string", "format": "date"}
        else:
            schema = {"type": self.type}
        if self.description:
            schema["description"] = self.description
        if not self.required and self.default is not None:
            schema["default"] = self.default
        return schema


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    params: tuple[ToolParam, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate params in tool {self.name!r}")

    @property
    def date_fields(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params if p.type == "date")

    def parameters_schema(self) -> dict:
        return {
            "type": "object",
            "properties": {p.name: p.json_schema() for p in self.params},
            "required": [p.name for p in self.params if p.required],
            "additionalProperties": False,
        }

    def to_openai(self) -> dict:
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters_schema(),
            },
        }


@dataclass(frozen=True)
class ToolContext:
    """Per-conversation facts handlers need: which stock, and the leakage cutoff."""

    ticker: str
    release_date: dt.date
    inclusive: bool = True
    payload_budget: int = DEFAULT_PAYLOAD_BUDGET


Handler = Callable[[dict, ToolContext], str]


@dataclass(frozen=True)
class ToolRegistry:
    entries: Mapping[str, tuple[ToolSpec, Handler]] = field(default_factory=dict)

    def __contains__(self, name):
        return name in self.entries

    def __len__(self):
        return len(self.entries)

    def spec(self, name: str) -> ToolSpec:
        try:
            return self.entries[name][0]
        except KeyError:
            raise UnknownTool(name) from None

    def specs(self, names: Iterable[str] | None = None) -> list[ToolSpec]:
        if names is None:
            return [s for s, _ in self.entries.values()]
        wanted = set(names)
        return [s for n, (s, _) in self.entries.items() if n in wanted]


def register_tool(registry: ToolRegistry, spec: ToolSpec, handler: Handler) -> ToolRegistry:
    if spec.name in registry.entries:
        raise ValueError(f"tool {spec.name!r} already registered")
    entries = dict(registry.entries)
    entries[spec.name] = (spec, handler)
    return ToolRegistry(entries)


def parse_date(value: Any) -> dt.date:
    if isinstance(value, dt.date):
        return value
    if not isinstance(value, str) or not _DATE_RE.match(value):
        raise ValueError(f"not an ISO date: {value!r}")
    return dt.date.fromisoformat(value)


def _check_type(param: ToolParam, value: Any) -> None:
    t = param.type
    ok = {
        "string": lambda v: isinstance(v, str),
        # JSON Schema counts 3.0 as an integer; validate_arguments coerces it
        "integer": lambda v: (isinstance(v, int) and not isinstance(v, bool)) or (isinstance(v, float) and v.is_integer()),
        "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "boolean": lambda v: isinstance(v, bool),
        "date": lambda v: isinstance(v, str),
    }[t](value)
    if not ok:
        raise ArgValidation(param.name, f"expected {t}, got {type(value).__name__}")
    if t == "date":
        try:
            parse_date(value)
        except ValueError as e:
            raise ArgValidation(param.name, str(e)) from None


def validate_arguments(spec: ToolSpec, arguments: Mapping[str, Any]) -> dict:
    """Check arguments against the spec and return them with defaults filled in."""
    known = {p.name: p for p in spec.params}
    for name in arguments:
        if name not in known:
            raise ArgValidation(name, "unexpected argument")
    out = {}
    for p in spec.params:
        if p.name in arguments:
            value = arguments[p.name]
            _check_type(p, value)
            out[p.name] = int(value) if p.type == "integer" else value
        elif p.required:
            raise ArgValidation(p.name, "missing required argument")
        elif p.default is not None:
            out[p.name] = p.default
    return out


def guard_date_range(
    args: Mapping[str, Any],
    release_date: dt.date,
    date_fields: Iterable[str] = ("start", "end"),
    inclusive: bool = True,
) -> None:
    """Raise LeakageViolation if any requested date lies past the release date.

    With ``inclusive`` the release date itself is allowed.
    """
    for name in date_fields:
        if name not in args:
            continue
        requested = parse_date(args[name])
        late = requested > release_date if inclusive else requested >= release_date
        if late:
            raise LeakageViolation(name, requested.isoformat(), release_date.isoformat())


def truncate_payload(text: str, budget: int) -> str:
    tokens = list(_TOKEN_RE.finditer(text))
    if len(tokens) <= budget:
        return text
    return text[: tokens[budget].start()].rstrip() + "\n[truncated]"


def invoke_tool(registry: ToolRegistry, call: ToolCall, context: ToolContext) -> ToolResult:
    if call.name not in registry.entries:
        raise UnknownTool(call.name)
    spec, handler = registry.entries[call.name]
    args = validate_arguments(spec, call.arguments)
    guard_date_range(args, context.release_date, spec.date_fields, context.inclusive)
    payload = handler(args, context)
    return ToolResult(call_id=call.id, name=call.name, payload=truncate_payload(payload, context.payload_budget))
