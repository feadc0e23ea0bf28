"""Sub-task definitions, judge scoring, decision metrics and ensemble selection."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from statistics import fmean
from typing import Iterable, Mapping, Sequence

from .backend import Backend, ChatRequest, ModelParams
from .core import USER, AgentSpec, Message, Rank
from .errors import (
    EmptyRecordSet,
    IncompleteTable,
    MalformedDecisionBlock,
    MissingDecisionBlock,
    MissingSubReport,
    NonPositiveActual,
    UnknownTask,
    UnparsableJudgeOutput,
)
from .orchestrator import (
    Caps,
    ConversationOutcome,
    Dual,
    GroupStructure,
    Horizontal,
    Hybrid,
    Single,
    Vertical,
    run_conversation,
    with_prompts,
)
from .toolkit.registry import ToolContext, ToolRegistry
from .toolkit.tools import SUB_TASKS, task_toolset

STRUCTURES = ("single", "dual", "horizontal", "vertical", "hybrid")
ENSEMBLE = "ensemble"
CRITERIA = ("fundamental", "sentiment", "risk", "readability", "coherence")

DECISION_FORMAT = "DECISION: target_price=<number>; buy=<yes|no>"


# ---------------------------------------------------------------------- tasks

@dataclass(frozen=True)
class TaskDef:
    name: str
    prompt_template: str
    judge_criterion: str
    role: str

    @property
    def toolset(self):
        return task_toolset(self.name)

    def prompt(self, ticker: str, release_date: str, **extra) -> str:
        return self.prompt_template.format(ticker=ticker, release_date=release_date, **extra)


_DATA_RULE = "Only use information dated on or before {release_date}; later data is unavailable."

TASK_DEFS = {
    "fundamental": TaskDef(
        "fundamental",
        "Write a fundamental analysis of {ticker} based on its 2023 annual report (10-K), released on "
        "{release_date}. Cover financial health, operational efficiency, profitability and cash flow, "
        "using standard indicators, and conclude with a judgment. " + _DATA_RULE,
        "fundamental",
        "a financial analyst specializing in company fundamentals: financial statements, ratios and cash flow",
    ),
    "sentiment": TaskDef(
        "sentiment",
        "Write a market sentiment analysis of {ticker} around the release of its 2023 annual report (10-K) on "
        "{release_date}. Use company news and social media posts to characterize investor sentiment and the "
        "market trend it implies. " + _DATA_RULE,
        "sentiment",
        "a market analyst specializing in news flow and retail-investor sentiment",
    ),
    "risk": TaskDef(
        "risk",
        "Write a risk analysis of {ticker} based on its 2023 annual report (10-K), released on {release_date}. "
        "Identify the main investment risk factors and give concrete suggestions. " + _DATA_RULE,
        "risk",
        "a risk analyst specializing in identifying and weighing investment risk factors",
    ),
    "decision": TaskDef(
        "decision",
        "You are the chief investment officer deciding on {ticker} after its 2023 annual report (10-K) was "
        "released on {release_date}. Based on the three analyses below, predict the stock's closing price one "
        "week from the release date and decide whether to buy.\n\n"
        "## Fundamental analysis\n{fundamental}\n\n"
        "## Market sentiment analysis\n{sentiment}\n\n"
        "## Risk analysis\n{risk}\n\n"
        "End your final answer with one line in exactly this format:\n" + DECISION_FORMAT,
        "",
        "a chief investment officer who turns analyst reports into a target price and a buy/not-buy call",
    ),
}


def task_def(name: str) -> TaskDef:
    try:
        return TASK_DEFS[name]
    except KeyError:
        raise UnknownTask(name) from None


_AGENT_NAMES = {
    "single": ("Analyst",),
    "dual": ("Analyst_A", "Analyst_B"),
    "horizontal": ("Analyst_A", "Analyst_B", "Analyst_C"),
    "vertical": ("Leader", "Analyst_A", "Analyst_B"),
    "hybrid": ("Leader", "Analyst_A", "Analyst_B"),
}


def build_group(label: str, task: str) -> GroupStructure:
    """Standard roster for a structure label, with prompts built for `task`."""
    if label not in _AGENT_NAMES:
        raise ValueError(f"unknown structure {label!r}")
    tdef = task_def(task)
    tools = frozenset(t.name for t in tdef.toolset)
    names = _AGENT_NAMES[label]

    def agent(name, rank, role=None):
        role = role or f"{name}, {tdef.role}"
        return AgentSpec(name, role, f"You are {role}.", tools, rank)

    if label == "single":
        s: GroupStructure = Single(agent(names[0], Rank.PEER))
    elif label == "dual":
        s = Dual(agent(names[0], Rank.PEER), agent(names[1], Rank.PEER))
    elif label == "horizontal":
        s = Horizontal(tuple(agent(n, Rank.PEER) for n in names))
    else:
        leader = agent(names[0], Rank.LEADER, f"{names[0]}, the lead analyst and {tdef.role}")
        subs = tuple(agent(n, Rank.SUBORDINATE) for n in names[1:])
        s = Vertical(leader, subs) if label == "vertical" else Hybrid(leader, subs)
    return with_prompts(s)


# ---------------------------------------------------------------------- judge

JUDGE_PROMPTS = {
    "fundamental": (
        "Please evaluate from the perspective of whether the fundamental indicators of the enterprise have been "
        "identified or discussed, eradicated and judgments or suggestions have been given. Please give a score of "
        "1-5 based on your judgment. 1 represents a lack of fundamental analysis or nonsense, 3 represents a "
        "certain fundamental analysis capability but not sufficient, and 5 represents a relatively complete "
        "fundamental analysis."
    ),
}

# criterion -> (what is evaluated, what 1/3/5 look like)
_RUBRIC = {
    "sentiment": (
        "the quality of the analysis of market behavior and the judgment of market trends based on market sentiment",
        "a lack of sentiment analysis or nonsense",
        "a certain sentiment analysis capability but not sufficient",
        "a relatively complete sentiment analysis with a well-founded trend judgment",
    ),
    "risk": (
        "whether sufficient potential risks have been identified and effective suggestions have been given",
        "a lack of risk analysis or nonsense",
        "some risk identification but insufficient coverage or suggestions",
        "a relatively complete risk identification with effective suggestions",
    ),
    "readability": (
        "readability: precision and natural expression",
        "imprecise or unnatural text that is hard to read",
        "mostly precise text with some awkward expression",
        "precise and natural expression throughout",
    ),
    "coherence": (
        "coherence: whether the content is organized, grammatically correct, and easy to understand",
        "disorganized or ungrammatical content",
        "mostly organized content with some lapses",
        "well organized, grammatically correct and easy to understand content",
    ),
}
for _name, (_what, _low, _mid, _high) in _RUBRIC.items():
    JUDGE_PROMPTS[_name] = (
        f"Please evaluate from the perspective of {_what}. Please give a score of 1-5 based on your judgment. "
        f"1 represents {_low}, 3 represents {_mid}, and 5 represents {_high}."
    )

_JUDGE_RETRY = "Reply with a single integer score from 1 to 5."
_NUMBER_RE = re.compile(r"(?<![\w.])-?\d+(?:\.\d+)?")


@dataclass(frozen=True)
class JudgeScore:
    criterion: str
    score: int
    rationale: str

    def __post_init__(self):
        if not 1 <= self.score <= 5:
            raise ValueError(f"score {self.score} outside 1-5")


def parse_judge_score(reply: str) -> int | None:
    """First number in the reply if it is an integer in 1..5, else None."""
    m = _NUMBER_RE.search(reply)
    if m is None or "." in m.group():
        return None
    value = int(m.group())
    return value if 1 <= value <= 5 else None


def judge_report(report: str, criterion: str, judge_backend: Backend, retries: int = 2,
                 model_params: ModelParams = ModelParams()) -> JudgeScore:
    if not report.strip():
        raise ValueError("empty report")
    if criterion not in JUDGE_PROMPTS:
        raise UnknownTask(criterion)
    context = [Message(0, USER, report)]
    reply = ""
    for _ in range(retries + 1):
        request = ChatRequest("judge", JUDGE_PROMPTS[criterion], tuple(context), (), model_params)
        reply = judge_backend.complete(request).content
        score = parse_judge_score(reply)
        if score is not None:
            return JudgeScore(criterion, score, reply)
        n = len(context)
        context += [Message(n, "judge", reply), Message(n + 1, USER, _JUDGE_RETRY)]
    raise UnparsableJudgeOutput(f"{criterion}: no 1-5 score after {retries + 1} attempts; last reply {reply!r}")


# -------------------------------------------------------------------- metrics

@dataclass
class EvalRecord:
    ticker: str
    structure: str
    predicted_target_price: float
    buy_decision: bool
    actual_release_price: float
    actual_week_price: float
    scores: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("predicted_target_price", "actual_release_price", "actual_week_price"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def went_up(self) -> bool:
        # a flat week counts as "not up", so buying on it is wrong
        return self.actual_week_price > self.actual_release_price

    @property
    def correct(self) -> bool:
        return self.buy_decision == self.went_up


def price_diff(predicted: float, actual: float) -> float:
    if actual <= 0:
        raise NonPositiveActual(actual)
    return abs(predicted - actual) / actual


def avg_price_diff(records: Sequence[EvalRecord]) -> float:
    if not records:
        raise EmptyRecordSet("no records")
    return fmean(price_diff(r.predicted_target_price, r.actual_week_price) for r in records)


def binary_accuracy(records: Sequence[EvalRecord]) -> float:
    if not records:
        raise EmptyRecordSet("no records")
    return sum(r.correct for r in records) / len(records)


def rank_decisions(records: Sequence[EvalRecord]) -> list[tuple[str, float, float]]:
    """(structure, accuracy, avg diff) best first.

    Accuracy decides; a smaller price gap breaks ties, then the label.
    """
    by_structure: dict[str, list[EvalRecord]] = {}
    for r in records:
        by_structure.setdefault(r.structure, []).append(r)
    rows = [(s, binary_accuracy(rs), avg_price_diff(rs)) for s, rs in by_structure.items()]
    return sorted(rows, key=lambda row: (-row[1], row[2], row[0]))


# ------------------------------------------------------------------- ensemble

ScoreTable = Mapping[tuple[str, str], float]

# mean judge scores over 30 Dow tickers, as published
PUBLISHED_SCORE_TABLE: dict[tuple[str, str], float] = {
    ("single", "fundamental"): 4.70, ("single", "sentiment"): 3.93, ("single", "risk"): 3.57,
    ("dual", "fundamental"): 4.17, ("dual", "sentiment"): 3.90, ("dual", "risk"): 3.77,
    ("triple", "fundamental"): 3.97, ("triple", "sentiment"): 3.77, ("triple", "risk"): 3.83,
    ("vertical", "fundamental"): 3.20, ("vertical", "sentiment"): 3.43, ("vertical", "risk"): 4.23,
    ("horizontal", "fundamental"): 3.97, ("horizontal", "sentiment"): 3.77, ("horizontal", "risk"): 3.83,
    ("hybrid", "fundamental"): 4.03, ("hybrid", "sentiment"): 3.77, ("hybrid", "risk"): 3.72,
}

GROUP_SIZE = {"single": 1, "dual": 2, "triple": 3, "horizontal": 3, "vertical": 3, "hybrid": 3}
# among same-size groups; "triple" is the horizontal group under another name
_COLLAB_PREFERENCE = {"horizontal": 0, "triple": 0, "hybrid": 1, "vertical": 2}


def _tie_key(label: str) -> tuple:
    return (GROUP_SIZE.get(label, 99), _COLLAB_PREFERENCE.get(label, 0), label)


def select_ensemble(score_table: ScoreTable, sub_tasks: Iterable[str] | None = None) -> dict[str, str]:
    """Best structure per sub-task by mean score.

    Ties go to the smaller group, then horizontal > hybrid > vertical.
    """
    structures = sorted({s for s, _ in score_table})
    tasks = sorted({t for _, t in score_table}) if sub_tasks is None else list(sub_tasks)
    for s in structures:
        for t in tasks:
            if (s, t) not in score_table:
                raise IncompleteTable(f"no score for ({s}, {t})")
    if not structures:
        raise IncompleteTable("empty score table")
    return {t: min(structures, key=lambda s: (-score_table[(s, t)], *_tie_key(s))) for t in tasks}


def score_table_from_records(rows: Iterable[tuple[str, str, float]]) -> dict[tuple[str, str], float]:
    """Mean score per (structure, sub-task) from (structure, sub-task, score) rows."""
    acc: dict[tuple[str, str], list[float]] = {}
    for s, t, v in rows:
        acc.setdefault((s, t), []).append(v)
    return {k: fmean(v) for k, v in sorted(acc.items())}


# ------------------------------------------------------------------- decision

_DECISION_RE = re.compile(r"DECISION:")
_BLOCK_RE = re.compile(
    r"DECISION:\s*target_price\s*=\s*(?P<price>[^;\n]+?)\s*;\s*buy\s*=\s*(?P<buy>[A-Za-z]+)",
)
_PRICE_RE = re.compile(r"^(?:US\$|USD\s*|[$€£])?\s*(?P<num>\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?)$")


@dataclass(frozen=True)
class Decision:
    target_price: float
    buy: bool


def extract_decision(final_report: str) -> Decision:
    starts = [m.start() for m in _DECISION_RE.finditer(final_report)]
    if not starts:
        raise MissingDecisionBlock("no 'DECISION:' line in final report")
    tail = final_report[starts[-1]:]
    m = _BLOCK_RE.match(tail)
    if m is None:
        raise MalformedDecisionBlock(tail.splitlines()[0])
    price = _PRICE_RE.match(m.group("price").strip())
    buy = m.group("buy").lower()
    if price is None or buy not in ("yes", "no"):
        raise MalformedDecisionBlock(tail.splitlines()[0])
    value = float(price.group("num").replace(",", ""))
    if value <= 0:
        raise MalformedDecisionBlock(f"non-positive target price {value}")
    return Decision(value, buy == "yes")


@dataclass(frozen=True)
class DecisionResult:
    decision: Decision
    outcome: ConversationOutcome


def run_decision_task(
    sub_reports: Mapping[str, str],
    structure: GroupStructure,
    backend: Backend | Mapping[str, Backend],
    registry: ToolRegistry,
    context: ToolContext,
    caps: Caps = Caps(),
    model_params: ModelParams = ModelParams(),
) -> DecisionResult:
    missing = [t for t in SUB_TASKS if not (sub_reports.get(t) or "").strip()]
    if missing:
        raise MissingSubReport(f"missing sub-task reports: {missing}")
    prompt = TASK_DEFS["decision"].prompt(
        context.ticker, context.release_date.isoformat(), **{t: sub_reports[t] for t in SUB_TASKS}
    )
    outcome = run_conversation(structure, prompt, backend, registry, context, caps, model_params)
    return DecisionResult(extract_decision(outcome.final_report), outcome)

