"""Multi-agent LLM collaboration structures for financial research, runnable offline."""

from .backend import ChatRequest, ChatResponse, HttpBackend, ModelParams, ScriptedBackend
from .core import AgentSpec, Message, Rank, Scope, Status, ToolCall, ToolResult, Transcript, append_message, render_context
from .orchestrator import (
    Caps,
    ConversationOutcome,
    Dual,
    Horizontal,
    Hybrid,
    Order,
    Single,
    Vertical,
    build_prompts,
    detect_termination,
    next_speaker,
    parse_order,
    run_conversation,
)

__version__ = "0.1.0"

__all__ = [
    "AgentSpec",
    "Caps",
    "ChatRequest",
    "ChatResponse",
    "ConversationOutcome",
    "Dual",
    "Horizontal",
    "HttpBackend",
    "Hybrid",
    "Message",
    "ModelParams",
    "Order",
    "Rank",
    "Scope",
    "ScriptedBackend",
    "Single",
    "Status",
    "ToolCall",
    "ToolResult",
    "Transcript",
    "Vertical",
    "append_message",
    "build_prompts",
    "detect_termination",
    "next_speaker",
    "parse_order",
    "render_context",
    "run_conversation",
]
