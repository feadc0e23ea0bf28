"""Conversation drivers for the five group structures.

Single, Dual, Horizontal and Hybrid groups share one main conversation;
Dual/Horizontal/Hybrid take turns round-robin. Vertical groups are driven by
the leader, who delegates one order at a time to a subordinate through an
isolated nested chat whose last message is copied back to the main
conversation.

A *turn* is one agent's completed response: any number of tool-calling
messages (each followed by a tool-result message) and a final message
without tool calls. Only those final messages count for speaker rotation and
turn caps.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .backend import Backend, ChatRequest, ChatResponse, ModelParams
from .core import (
    MAIN,
    TOOL,
    USER,
    AgentSpec,
    Message,
    Rank,
    Scope,
    Status,
    ToolResult,
    Transcript,
    append_message,
    main_messages,
    nesting_messages,
)
from .errors import (
    BackendFailure,
    InvalidStructure,
    MissingName,
    NestedTurnCapExceeded,
    NotRoundRobin,
    ToolError,
    TurnCapExceeded,
)
from .toolkit.registry import ToolContext, ToolRegistry, invoke_tool

log = logging.getLogger(__name__)

TERMINATE = "TERMINATE"


# ------------------------------------------------------------------ structures

@dataclass(frozen=True)
class Single:
    agent: AgentSpec
    label = "single"

    @property
    def members(self) -> tuple[AgentSpec, ...]:
        return (self.agent,)


@dataclass(frozen=True)
class Dual:
    a: AgentSpec
    b: AgentSpec
    label = "dual"

    @property
    def members(self):
        return (self.a, self.b)


@dataclass(frozen=True)
class Horizontal:
    peers: tuple[AgentSpec, ...]
    label = "horizontal"

    @property
    def members(self):
        return tuple(self.peers)


@dataclass(frozen=True)
class Vertical:
    leader: AgentSpec
    subordinates: tuple[AgentSpec, ...]
    label = "vertical"

    @property
    def members(self):
        return (self.leader, *self.subordinates)


@dataclass(frozen=True)
class Hybrid:
    leader: AgentSpec
    subordinates: tuple[AgentSpec, ...]
    label = "hybrid"

    @property
    def members(self):
        # leader speaks first in the rotation
        return (self.leader, *self.subordinates)


GroupStructure = Single | Dual | Horizontal | Vertical | Hybrid
ROUND_ROBIN = (Dual, Horizontal, Hybrid)
LED = (Vertical, Hybrid)


def validate_structure(structure: GroupStructure) -> None:
    members = structure.members
    names = [m.name for m in members]
    if len(set(names)) != len(names):
        raise InvalidStructure(f"duplicate member names: {names}")
    if isinstance(structure, Horizontal) and len(members) < 2:
        raise InvalidStructure("horizontal group needs at least 2 members")
    if isinstance(structure, LED):
        if not structure.subordinates:
            raise InvalidStructure(f"{structure.label} group needs at least one subordinate")
        if structure.leader.rank is not Rank.LEADER:
            raise InvalidStructure("leader must have rank LEADER")
        if any(s.rank is not Rank.SUBORDINATE for s in structure.subordinates):
            raise InvalidStructure("subordinates must have rank SUBORDINATE")
    elif any(m.rank is not Rank.PEER for m in members):
        raise InvalidStructure(f"{structure.label} members must all be peers")


def leader_of(structure: GroupStructure) -> str | None:
    return structure.leader.name if isinstance(structure, LED) else None


# --------------------------------------------------------------------- orders

@dataclass(frozen=True)
class Order:
    target: str
    instruction: str


_ORDER_START_RE = re.compile(r"^[ \t]*\[([^\[\]\n]+)\][ \t]*(?=\S)", re.MULTILINE)


def parse_order(text: str) -> Order | None:
    """The last ``[<name>] <order>`` line of a leader response, or None.

    The order text runs from after the bracket to the end of the response.
    A response carrying the termination token never yields an order.
    """
    if TERMINATE in text:
        return None
    starts = list(_ORDER_START_RE.finditer(text))
    if not starts:
        return None
    last = starts[-1]
    instruction = text[last.end():].strip()
    name = last.group(1).strip()
    if not instruction or not name:
        return None
    return Order(name, instruction)


def detect_termination(structure: GroupStructure, msg: Message) -> bool:
    if TERMINATE not in msg.content:
        return False
    if isinstance(structure, LED):
        return msg.sender == structure.leader.name
    return msg.sender in {m.name for m in structure.members}


def strip_termination(text: str) -> str:
    return text.replace(TERMINATE, "").strip()


def _is_turn_end(msg: Message, members: set[str]) -> bool:
    return msg.scope.is_main and msg.sender in members and not msg.tool_calls


def agent_turns(transcript: Transcript, members: Sequence[str]) -> list[Message]:
    """Main-scope turn-ending messages by group members, in order."""
    names = set(members)
    return [m for m in transcript.messages if _is_turn_end(m, names)]


def next_speaker(structure: GroupStructure, transcript: Transcript) -> str:
    if not isinstance(structure, ROUND_ROBIN):
        raise NotRoundRobin(structure.label)
    if transcript.status is not Status.RUNNING:
        raise ValueError("transcript is not running")
    names = [m.name for m in structure.members]
    # re-appended nested finals never occur here; vertical is not round-robin
    return names[len(agent_turns(transcript, names)) % len(names)]


# -------------------------------------------------------------------- running

@dataclass(frozen=True)
class Caps:
    main_turns: int = 40
    nested_turns: int = 10
    tool_rounds: int = 10


@dataclass(frozen=True)
class ConversationOutcome:
    final_report: str
    transcript: Transcript
    turns_used: int
    terminated_by: str


@dataclass
class _Run:
    """Mutable bookkeeping for one conversation; the transcript itself stays immutable."""

    structure: GroupStructure
    backends: Mapping[str, Backend]
    registry: ToolRegistry
    context: ToolContext
    caps: Caps
    model_params: ModelParams
    transcript: Transcript
    turns: int = 0
    nestings: int = 0
    specs: dict[str, AgentSpec] = field(default_factory=dict)

    def append(self, sender: str, content: str = "", tool_calls=(), tool_results=(), scope: Scope = MAIN) -> Message:
        msg = Message(self.transcript.next_seq, sender, content, tuple(tool_calls), tuple(tool_results), scope)
        self.transcript = append_message(self.transcript, msg)
        return msg

    def ask(self, agent: AgentSpec, context: list[Message]) -> ChatResponse:
        request = ChatRequest(
            agent=agent.name,
            system_prompt=agent.system_prompt,
            context=tuple(context),
            tool_specs=tuple(self.registry.specs(agent.allowed_tools)),
            model_params=self.model_params,
        )
        backend = self.backends[agent.name]
        try:
            return backend.complete(request)
        except BackendFailure as e:
            e.turn = self.turns
            raise

    def run_tools(self, agent: AgentSpec, response: ChatResponse, scope: Scope) -> None:
        results = []
        for call in response.tool_calls:
            if call.name not in agent.allowed_tools:
                results.append(ToolResult(call.id, call.name, "", f"tool {call.name!r} is not available to {agent.name}"))
                continue
            try:
                results.append(invoke_tool(self.registry, call, self.context))
            except ToolError as e:
                results.append(ToolResult(call.id, call.name, "", f"{type(e).__name__}: {e}"))
        self.append(TOOL, "", tool_results=results, scope=scope)

    def main_turn(self, agent: AgentSpec) -> Message:
        """One full main-scope turn for `agent`, tool rounds included."""
        for _ in range(self.caps.tool_rounds + 1):
            response = self.ask(agent, main_messages(self.transcript))
            msg = self.append(agent.name, response.content, response.tool_calls)
            if not response.tool_calls:
                self.turns += 1
                return msg
            self.run_tools(agent, response, MAIN)
        self.transcript = self.transcript.with_status(Status.TURN_CAP_EXCEEDED)
        raise TurnCapExceeded(f"{agent.name} exceeded {self.caps.tool_rounds} tool rounds in one turn", self.transcript)

    def nested_chat(self, leader: AgentSpec, subordinate: AgentSpec, order: Order) -> list[Message]:
        self.nestings += 1
        scope = Scope.nested(leader.name, subordinate.name, f"n{self.nestings}")
        self.append(leader.name, order.instruction, scope=scope)
        for _ in range(self.caps.nested_turns):
            response = self.ask(subordinate, nesting_messages(self.transcript, scope.nesting_id))
            self.append(subordinate.name, response.content, response.tool_calls, scope=scope)
            if not response.tool_calls:
                return nesting_messages(self.transcript, scope.nesting_id)
            self.run_tools(subordinate, response, scope)
        self.transcript = self.transcript.with_status(Status.TURN_CAP_EXCEEDED)
        raise NestedTurnCapExceeded(
            f"{subordinate.name} did not report within {self.caps.nested_turns} nested turns", self.transcript
        )

    def finish(self, msg: Message) -> ConversationOutcome:
        self.transcript = self.transcript.with_status(Status.TERMINATED)
        return ConversationOutcome(strip_termination(msg.content), self.transcript, self.turns, msg.sender)

    def cap_hit(self) -> TurnCapExceeded:
        self.transcript = self.transcript.with_status(Status.TURN_CAP_EXCEEDED)
        return TurnCapExceeded(f"no termination within {self.caps.main_turns} turns", self.transcript)


def _backend_map(structure: GroupStructure, backend: Backend | Mapping[str, Backend]) -> dict[str, Backend]:
    names = [m.name for m in structure.members]
    if isinstance(backend, Mapping):
        missing = [n for n in names if n not in backend]
        if missing:
            raise ValueError(f"no backend configured for {missing}")
        return {n: backend[n] for n in names}
    return {n: backend for n in names}


def run_conversation(
    structure: GroupStructure,
    task_prompt: str,
    backend: Backend | Mapping[str, Backend],
    registry: ToolRegistry,
    context: ToolContext,
    caps: Caps = Caps(),
    model_params: ModelParams = ModelParams(),
) -> ConversationOutcome:
    """Run a conversation to termination.

    Raises TurnCapExceeded (carrying the transcript) if nobody with the
    authority to end the conversation does so within ``caps.main_turns``.
    """
    validate_structure(structure)
    for m in structure.members:
        missing = [t for t in m.allowed_tools if t not in registry]
        if missing:
            raise ValueError(f"{m.name} is allowed unregistered tools {missing}")
    run = _Run(
        structure=structure,
        backends=_backend_map(structure, backend),
        registry=registry,
        context=context,
        caps=caps,
        model_params=model_params,
        transcript=Transcript(group=structure.members),
        specs={m.name: m for m in structure.members},
    )
    run.append(USER, task_prompt)
    if isinstance(structure, Vertical):
        return _run_vertical(run, structure)
    while run.turns < caps.main_turns:
        if isinstance(structure, Single):
            speaker = structure.agent.name
        else:
            speaker = next_speaker(structure, run.transcript)
        msg = run.main_turn(run.specs[speaker])
        if detect_termination(structure, msg):
            return run.finish(msg)
    raise run.cap_hit()


def _run_vertical(run: _Run, structure: Vertical) -> ConversationOutcome:
    leader = structure.leader
    subs = {s.name: s for s in structure.subordinates}
    while run.turns < run.caps.main_turns:
        msg = run.main_turn(leader)
        if detect_termination(structure, msg):
            return run.finish(msg)
        order = parse_order(msg.content)
        if order is None:
            continue
        if order.target not in subs:
            log.warning("order addressed to unknown member %r; ignored", order.target)
            continue
        nested = run.nested_chat(leader, subs[order.target], order)
        final = nested[-1]
        run.append(final.sender, final.content)
    raise run.cap_hit()


# -------------------------------------------------------------------- prompts

LEADER_PROMPT = """You are the leader of the following group: {group_desc}

As a group leader, you are responsible for coordinating the team's efforts to achieve the project's objectives. You must ensure that the team is working together effectively and efficiently.
- Summarize the status of the whole project progress each time you respond.
- End your response with an order to one of your team members to progress the project, if the objective has not been achieved yet.
- Orders should be follow the format: "[<name>] <order>".
- Orders need to be detailed, including necessary time period information, stock information, or instruction from higher-level leaders.
- Make only one order at a time.
- After receiving feedback from a team member, check the results of the task, and make sure it has been well completed before proceeding to the next order.

Reply "TERMINATE" at the end when everything is done."""

_TERMINATE_CLAUSE = 'Reply "TERMINATE" at the end when everything is done.'


def _names(agents: Sequence[AgentSpec]) -> str:
    return " & ".join(a.name for a in agents)


def _peer_duties(others: Sequence[AgentSpec]) -> str:
    who = _names(others)
    return (
        "Responsibilities:\n"
        f"1. Ask for advice from {who} before you make any conclusion.\n"
        f"2. Inspect analysis delivered by {who} and give out advice.\n"
        f"3. Reach a consensus with {who} and provide the final analysis."
    )


def group_description(subordinates: Sequence[AgentSpec]) -> str:
    return "\n" + "\n".join(f"- {s.name}: {s.role_description}" for s in subordinates)


def build_prompts(structure: GroupStructure) -> dict[str, str]:
    """System prompt per member: its base role plus the structure's duties.

    The base role is the agent's ``system_prompt`` (falling back to its role
    description).
    """
    for m in structure.members:
        if not m.name:
            raise MissingName("every agent in the structure needs a name")
    base = {m.name: (m.system_prompt or m.role_description).strip() for m in structure.members}

    def join(*parts):
        return "\n\n".join(p for p in parts if p)

    if isinstance(structure, Single):
        a = structure.agent.name
        return {a: join(base[a], _TERMINATE_CLAUSE)}
    if isinstance(structure, (Dual, Horizontal)):
        members = structure.members
        return {
            m.name: join(base[m.name], _peer_duties([o for o in members if o.name != m.name]), _TERMINATE_CLAUSE)
            for m in members
        }
    leader = structure.leader
    subs = structure.subordinates
    if isinstance(structure, Vertical):
        prompts = {leader.name: join(base[leader.name], LEADER_PROMPT.format(group_desc=group_description(subs)))}
        prompts.update({s.name: base[s.name] for s in subs})
        return prompts
    prompts = {
        leader.name: join(
            base[leader.name],
            "Responsibilities:\n"
            f"1. Give out tasks and advices to {_names(subs)}.\n"
            "2. You should be the person to provide final analysis and finish the task.",
            _TERMINATE_CLAUSE,
        )
    }
    for s in subs:
        prompts[s.name] = join(
            base[s.name],
            "Responsibilities:\n"
            f"1. Report your findings to {leader.name} and ask for advices before providing final analysis.\n"
            f"2. You're not allowed to finish the task without the permission from {leader.name}.",
        )
    return prompts


def with_prompts(structure: GroupStructure) -> GroupStructure:
    """Copy of `structure` whose agents carry their built system prompts."""
    prompts = build_prompts(structure)

    def fix(a: AgentSpec) -> AgentSpec:
        return replace(a, system_prompt=prompts[a.name])

    if isinstance(structure, Single):
        return Single(fix(structure.agent))
    if isinstance(structure, Dual):
        return Dual(fix(structure.a), fix(structure.b))
    if isinstance(structure, Horizontal):
        return Horizontal(tuple(fix(p) for p in structure.peers))
    return type(structure)(fix(structure.leader), tuple(fix(s) for s in structure.subordinates))
