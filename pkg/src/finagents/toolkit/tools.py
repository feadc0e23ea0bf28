"""Financial data tools and the per-task tool sets."""

from __future__ import annotations

from typing import TYPE_CHECKING, Mapping

from ..errors import UnknownTask
from .providers import MarketData
from .registry import ToolContext, ToolParam, ToolRegistry, ToolSpec, parse_date, register_tool

if TYPE_CHECKING:
    from ..rag import VectorIndex

TASKS = ("fundamental", "sentiment", "risk", "decision")
SUB_TASKS = ("fundamental", "sentiment", "risk")

_TICKER = ToolParam("ticker", "string", True, "Stock ticker symbol, e.g. IBM")
_START = ToolParam("start", "date", True, "First day of the window (YYYY-MM-DD)")
_END = ToolParam("end", "date", True, "Last day of the window (YYYY-MM-DD)")

STOCK_PRICES = ToolSpec(
    "get_stock_prices",
    "Daily open/close prices for a stock over a date window.",
    (_TICKER, _START, _END),
)
FUNDAMENTALS = ToolSpec(
    "get_fundamentals",
    "Latest reported fundamental metrics for a company (ratios, margins, cash flow).",
    (_TICKER,),
)
COMPANY_NEWS = ToolSpec(
    "get_company_news",
    "Company-related market news headlines and summaries over a date window.",
    (_TICKER, _START, _END),
)
SOCIAL_POSTS = ToolSpec(
    "get_social_posts",
    "Retail-investor social media posts mentioning the stock over a date window.",
    (_TICKER, _START, _END, ToolParam("limit", "integer", False, "Maximum number of posts", 20)),
)

_TOOLSETS = {
    "fundamental": ("retrieve_filing", "get_fundamentals", "get_stock_prices"),
    "sentiment": ("retrieve_filing", "get_company_news", "get_social_posts"),
    "risk": ("retrieve_filing",),
    "decision": (),
}


def all_tool_specs() -> dict[str, ToolSpec]:
    from ..rag import rag_tool_spec  # rag imports this package

    specs = [rag_tool_spec(), STOCK_PRICES, FUNDAMENTALS, COMPANY_NEWS, SOCIAL_POSTS]
    return {s.name: s for s in specs}


def task_toolset(task: str) -> list[ToolSpec]:
    if task not in _TOOLSETS:
        raise UnknownTask(task)
    specs = all_tool_specs()
    return [specs[name] for name in _TOOLSETS[task]]


def _prices_handler(data: MarketData):
    def handler(args: dict, ctx: ToolContext) -> str:
        bars = data.prices(args["ticker"], parse_date(args["start"]), parse_date(args["end"]))
        if not bars:
            return f"No price data for {args['ticker']} between {args['start']} and {args['end']}."
        lines = ["date,open,close"] + [f"{b.date.isoformat()},{b.open:.2f},{b.close:.2f}" for b in bars]
        return "\n".join(lines)

    return handler


def _fundamentals_handler(data: MarketData):
    def handler(args: dict, ctx: ToolContext) -> str:
        rows = data.fundamentals(args["ticker"], ctx.release_date)
        if not rows:
            return f"No fundamentals available for {args['ticker']}."
        lines = ["metric,period,value"] + [f"{f.metric},{f.period},{f.value:g}" for f in rows]
        return "\n".join(lines)

    return handler


def _news_handler(data: MarketData):
    def handler(args: dict, ctx: ToolContext) -> str:
        items = data.news(args["ticker"], parse_date(args["start"]), parse_date(args["end"]))
        if not items:
            return f"No news for {args['ticker']} between {args['start']} and {args['end']}."
        return "\n\n".join(f"[{n.date.isoformat()}] {n.headline}\n{n.summary}" for n in items)

    return handler


def _social_handler(data: MarketData):
    def handler(args: dict, ctx: ToolContext) -> str:
        posts = data.social(args["ticker"], parse_date(args["start"]), parse_date(args["end"]))
        posts = sorted(posts, key=lambda p: (-p.score, p.date))[: args.get("limit", 20)]
        if not posts:
            return f"No social posts for {args['ticker']} between {args['start']} and {args['end']}."
        return "\n\n".join(f"[{p.date.isoformat()}] (score {p.score}) {p.title}\n{p.body}" for p in posts)

    return handler


def build_registry(data: MarketData, indices: Mapping[str, "VectorIndex"], tasks=TASKS) -> ToolRegistry:
    """Registry holding every tool needed by `tasks`, backed by `data` and per-ticker filing indices."""
    from ..rag import retrieve_handler

    handlers = {
        "retrieve_filing": retrieve_handler(indices),
        "get_stock_prices": _prices_handler(data),
        "get_fundamentals": _fundamentals_handler(data),
        "get_company_news": _news_handler(data),
        "get_social_posts": _social_handler(data),
    }
    registry = ToolRegistry()
    wanted = []
    for task in tasks:
        for spec in task_toolset(task):
            if spec.name not in wanted:
                wanted.append(spec.name)
    specs = all_tool_specs()
    for name in wanted:
        registry = register_tool(registry, specs[name], handlers[name])
    return registry
