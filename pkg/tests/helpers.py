import datetime as dt
import math
from pathlib import Path

from finagents.backend import ChatResponse
from finagents.core import AgentSpec, Rank, ToolCall
from finagents.toolkit.registry import ToolParam, ToolRegistry, ToolSpec, register_tool

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"
GOLDEN = Path(__file__).resolve().parent / "golden"

RELEASE = dt.date(2024, 2, 26)


class FnBackend:
    """Backend whose reply is computed by a plain function of the request."""

    def __init__(self, fn):
        self.fn = fn
        self.requests = []

    def complete(self, request):
        request.validate()
        self.requests.append(request)
        out = self.fn(request)
        if isinstance(out, ChatResponse):
            return out
        return ChatResponse(out)


def own_turn(request):
    return sum(1 for m in request.context if m.sender == request.agent)


def peer(name, tools=()):
    return AgentSpec(name, allowed_tools=frozenset(tools))


def leader(name="L", tools=()):
    return AgentSpec(name, rank=Rank.LEADER, allowed_tools=frozenset(tools))


def sub(name, tools=()):
    return AgentSpec(name, rank=Rank.SUBORDINATE, allowed_tools=frozenset(tools))


ECHO = ToolSpec("echo", "Echo the text back.", (ToolParam("text", "string"),))
PRICES = ToolSpec(
    "fetch",
    "Fake price window.",
    (ToolParam("ticker", "string"), ToolParam("start", "date"), ToolParam("end", "date")),
)


def toy_registry():
    reg = register_tool(ToolRegistry(), ECHO, lambda a, c: a["text"])
    return register_tool(reg, PRICES, lambda a, c: f"{a['ticker']} {a['start']}..{a['end']}: 101.5")


def tool_call(name="echo", i=0, **args):
    return ToolCall(f"c{i}", name, args or {"text": "hi"})


def oracle_rank(index, query, k):
    """Full scan in pure Python; ties by (doc_id, index)."""
    q = [float(x) for x in index.embedder.embed(query)]
    scored = []
    for c, row in zip(index.chunks, index.matrix):
        v = [float(x) for x in row]
        dot = sum(a * b for a, b in zip(q, v))
        nq, nv = sum(a * a for a in q), sum(b * b for b in v)
        s = dot / math.sqrt(nq * nv) if nq * nv else 0.0
        scored.append((-s, c.doc_id, c.index, c))
    scored.sort(key=lambda t: t[:3])
    return [(c, -s) for s, _, _, c in scored[:k]]
