from .registry import (
    ToolContext,
    ToolParam,
    ToolRegistry,
    ToolSpec,
    guard_date_range,
    invoke_tool,
    register_tool,
    truncate_payload,
    validate_arguments,
)
from ..core import ToolCall, ToolResult
from .providers import FixtureStore, LiveMarketData
from .tools import SUB_TASKS, TASKS, all_tool_specs, build_registry, task_toolset

__all__ = [
    "FixtureStore",
    "LiveMarketData",
    "SUB_TASKS",
    "TASKS",
    "ToolCall",
    "ToolContext",
    "ToolParam",
    "ToolRegistry",
    "ToolResult",
    "ToolSpec",
    "all_tool_specs",
    "build_registry",
    "guard_date_range",
    "invoke_tool",
    "register_tool",
    "task_toolset",
    "truncate_payload",
    "validate_arguments",
]
