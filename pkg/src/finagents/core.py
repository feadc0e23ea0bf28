"""Messages, agents and append-only transcripts with per-agent visibility.

Transcripts are immutable: ``append_message`` returns a new transcript and
leaves the old one untouched, so a snapshot can be shared freely between
threads.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import AppendAfterTermination, SeqGap, UnknownViewer

USER = "user"
TOOL = "tool"
RESERVED_SENDERS = frozenset({USER, TOOL})


class Rank(str, enum.Enum):
    PEER = "peer"
    LEADER = "leader"
    SUBORDINATE = "subordinate"


class Status(str, enum.Enum):
    RUNNING = "running"
    TERMINATED = "terminated"
    TURN_CAP_EXCEEDED = "turn_cap_exceeded"


@dataclass(frozen=True)
class AgentSpec:
    name: str
    role_description: str = ""
    system_prompt: str = ""
    allowed_tools: frozenset[str] = frozenset()
    rank: Rank = Rank.PEER

    def __post_init__(self):
        if not self.name:
            raise ValueError("agent name must be non-empty")
        if self.name in RESERVED_SENDERS:
            raise ValueError(f"agent name {self.name!r} is reserved")
        object.__setattr__(self, "allowed_tools", frozenset(self.allowed_tools))


@dataclass(frozen=True)
class ToolCall:
    id: str
    name: str
    arguments: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "arguments": dict(self.arguments)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ToolCall":
        return cls(id=d["id"], name=d["name"], arguments=dict(d.get("arguments") or {}))


@dataclass(frozen=True)
class ToolResult:
    call_id: str
    name: str
    payload: str = ""
    error: str | None = None

    def __post_init__(self):
        if self.error is not None and self.payload:
            raise ValueError("a failed tool result carries no payload")

    def to_dict(self) -> dict:
        return {"call_id": self.call_id, "name": self.name, "payload": self.payload, "error": self.error}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ToolResult":
        return cls(call_id=d["call_id"], name=d["name"], payload=d.get("payload", ""), error=d.get("error"))


@dataclass(frozen=True)
class Scope:
    """Either the shared main conversation or one leader/subordinate nested chat."""

    leader: str | None = None
    subordinate: str | None = None
    nesting_id: str | None = None

    @property
    def is_main(self) -> bool:
        return self.nesting_id is None

    def visible_to(self, viewer: str) -> bool:
        return self.is_main or viewer in (self.leader, self.subordinate)

    def serialize(self) -> str:
        if self.is_main:
            return "main"
        return f"nested:{self.leader}:{self.subordinate}:{self.nesting_id}"

    @classmethod
    def parse(cls, text: str) -> "Scope":
        if text == "main":
            return MAIN
        kind, _, rest = text.partition(":")
        parts = rest.split(":")
        if kind != "nested" or len(parts) != 3 or not all(parts):
            raise ValueError(f"bad scope {text!r}")
        return cls(*parts)

    @classmethod
    def nested(cls, leader: str, subordinate: str, nesting_id: str) -> "Scope":
        return cls(leader, subordinate, nesting_id)


MAIN = Scope()


@dataclass(frozen=True)
class Message:
    seq: int
    sender: str
    content: str = ""
    tool_calls: tuple[ToolCall, ...] = ()
    tool_results: tuple[ToolResult, ...] = ()
    scope: Scope = MAIN

    def __post_init__(self):
        object.__setattr__(self, "tool_calls", tuple(self.tool_calls))
        object.__setattr__(self, "tool_results", tuple(self.tool_results))
        if self.tool_results and self.sender != TOOL:
            raise ValueError("only tool messages may carry tool results")

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "sender": self.sender,
            "scope": self.scope.serialize(),
            "content": self.content,
            "tool_calls": [c.to_dict() for c in self.tool_calls],
            "tool_results": [r.to_dict() for r in self.tool_results],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Message":
        return cls(
            seq=int(d["seq"]),
            sender=d["sender"],
            content=d.get("content", ""),
            tool_calls=tuple(ToolCall.from_dict(c) for c in d.get("tool_calls", ())),
            tool_results=tuple(ToolResult.from_dict(r) for r in d.get("tool_results", ())),
            scope=Scope.parse(d.get("scope", "main")),
        )


@dataclass(frozen=True)
class Transcript:
    messages: tuple[Message, ...] = ()
    group: tuple[AgentSpec, ...] = ()
    status: Status = Status.RUNNING

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(self, "group", tuple(self.group))
        names = [a.name for a in self.group]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate agent names in group: {names}")

    def __len__(self):
        return len(self.messages)

    @property
    def member_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.group)

    @property
    def next_seq(self) -> int:
        return self.messages[-1].seq + 1 if self.messages else 0

    def agent(self, name: str) -> AgentSpec:
        for a in self.group:
            if a.name == name:
                return a
        raise KeyError(name)

    def with_status(self, status: Status) -> "Transcript":
        return replace(self, status=status)


def append_message(transcript: Transcript, msg: Message) -> Transcript:
    if transcript.status is not Status.RUNNING:
        raise AppendAfterTermination(f"transcript is {transcript.status.value}")
    if msg.seq != transcript.next_seq:
        raise SeqGap(f"expected seq {transcript.next_seq}, got {msg.seq}")
    if not msg.scope.is_main:
        members = transcript.member_names
        if msg.scope.leader not in members or msg.scope.subordinate not in members:
            raise ValueError(f"nested scope {msg.scope.serialize()} names agents outside the group")
    return replace(transcript, messages=transcript.messages + (msg,))


def render_context(transcript: Transcript, viewer: str) -> list[Message]:
    """Messages `viewer` is allowed to see, in seq order.

    Main-scope messages are visible to everyone; a nested message only to the
    leader and subordinate of its nesting.
    """
    if viewer != USER and viewer not in transcript.member_names:
        raise UnknownViewer(viewer)
    return [m for m in transcript.messages if m.scope.visible_to(viewer)]


def main_messages(transcript: Transcript) -> list[Message]:
    return [m for m in transcript.messages if m.scope.is_main]


def nesting_messages(transcript: Transcript, nesting_id: str) -> list[Message]:
    return [m for m in transcript.messages if m.scope.nesting_id == nesting_id]


def dump_jsonl(messages: Iterable[Message]) -> str:
    return "".join(json.dumps(m.to_dict(), ensure_ascii=False) + "\n" for m in messages)


def load_jsonl(text: str) -> list[Message]:
    return [Message.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


def save_transcript(transcript: Transcript, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_jsonl(transcript.messages), encoding="utf-8")


def load_transcript(path: str | Path, group: Iterable[AgentSpec] = ()) -> Transcript:
    return Transcript(messages=tuple(load_jsonl(Path(path).read_text(encoding="utf-8"))), group=tuple(group))
