import csv
import datetime as dt
import json

import httpx
import jsonschema
import pytest
from hypothesis import given, settings, strategies as st

from finagents.core import ToolCall
from finagents.errors import ArgValidation, LeakageViolation, ProviderError, UnknownTask, UnknownTool
from finagents.rag import HashEmbedder, VectorIndex, load_corpus
from finagents.toolkit import (
    FixtureStore,
    LiveMarketData,
    ToolContext,
    ToolParam,
    ToolRegistry,
    ToolSpec,
    build_registry,
    guard_date_range,
    invoke_tool,
    register_tool,
    task_toolset,
    truncate_payload,
    validate_arguments,
)
from finagents.toolkit.tools import all_tool_specs
from helpers import DATA, RELEASE

FIX = DATA / "fixtures"


@pytest.fixture(scope="module")
def store():
    return FixtureStore(FIX)


@pytest.fixture(scope="module")
def full_registry(store):
    corpus = load_corpus(DATA / "corpus", ["IBM"])
    index = VectorIndex.build({"IBM_10K_2023": corpus["IBM"]}, HashEmbedder())
    return build_registry(store, {"IBM": index})


def rows(ticker, kind):
    with open(FIX / ticker / f"{kind}.csv", newline="") as f:
        return list(csv.DictReader(f))


# --------------------------------------------------------------- invocation

def test_prices_match_fixture_rows(full_registry):
    ctx = ToolContext("IBM", dt.date(2024, 1, 15))
    call = ToolCall("c", "get_stock_prices", {"ticker": "IBM", "start": "2023-12-01", "end": "2024-01-01"})
    res = invoke_tool(full_registry, call, ctx)
    expected = [r for r in rows("IBM", "prices") if "2023-12-01" <= r["date"] <= "2024-01-01"]
    lines = res.payload.splitlines()
    assert lines[0] == "date,open,close"
    assert lines[1:] == [f"{r['date']},{float(r['open']):.2f},{float(r['close']):.2f}" for r in expected]
    assert res.error is None and res.call_id == "c"


def test_missing_required_param(full_registry):
    with pytest.raises(ArgValidation) as e:
        invoke_tool(full_registry, ToolCall("c", "get_stock_prices", {"ticker": "IBM", "start": "2024-01-01"}),
                    ToolContext("IBM", RELEASE))
    assert e.value.param == "end"


def test_unknown_tool(full_registry):
    with pytest.raises(UnknownTool):
        invoke_tool(full_registry, ToolCall("c", "get_weather", {}), ToolContext("IBM", RELEASE))


@pytest.mark.parametrize("args, param", [
    ({"ticker": 5}, "ticker"),
    ({"ticker": "IBM", "extra": 1}, "extra"),
])
def test_fundamentals_arg_errors(full_registry, args, param):
    with pytest.raises(ArgValidation) as e:
        invoke_tool(full_registry, ToolCall("c", "get_fundamentals", args), ToolContext("IBM", RELEASE))
    assert e.value.param == param


def test_social_limit_default_and_order(full_registry):
    ctx = ToolContext("IBM", RELEASE)
    args = {"ticker": "IBM", "start": "2024-01-01", "end": "2024-02-26"}
    full = invoke_tool(full_registry, ToolCall("c", "get_social_posts", args), ctx).payload
    three = invoke_tool(full_registry, ToolCall("c", "get_social_posts", {**args, "limit": 3}), ctx).payload
    in_window = [r for r in rows("IBM", "social") if "2024-01-01" <= r["date"] <= "2024-02-26"]
    assert full.count("(score ") == min(20, len(in_window))
    assert three.count("(score ") == 3 and full.startswith(three)
    scores = [int(x.split(")")[0]) for x in full.split("(score ")[1:]]
    assert scores == sorted(scores, reverse=True)


def test_news_window(full_registry):
    ctx = ToolContext("IBM", RELEASE)
    out = invoke_tool(full_registry, ToolCall("c", "get_company_news",
                                              {"ticker": "IBM", "start": "2024-02-01", "end": "2024-02-10"}), ctx)
    dates = [line[1:11] for line in out.payload.splitlines() if line.startswith("[")]
    expected = [r["date"] for r in rows("IBM", "news") if "2024-02-01" <= r["date"] <= "2024-02-10"]
    assert dates == expected


def test_retrieve_tool_default_k(full_registry):
    out = invoke_tool(full_registry, ToolCall("c", "retrieve_filing", {"query": "risk factors"}),
                      ToolContext("IBM", RELEASE, payload_budget=10**6))
    assert out.payload.count("[IBM_10K_2023#") == 3


def test_retrieve_tool_unindexed_ticker(full_registry):
    with pytest.raises(ProviderError):
        invoke_tool(full_registry, ToolCall("c", "retrieve_filing", {"query": "x"}), ToolContext("HON", RELEASE))


def test_register_tool_is_persistent():
    spec = ToolSpec("t", "d")
    r1 = ToolRegistry()
    r2 = register_tool(r1, spec, lambda a, c: "")
    assert "t" in r2 and "t" not in r1
    with pytest.raises(ValueError):
        register_tool(r2, spec, lambda a, c: "")


def test_truncate_payload():
    text = "a b  c\nd e"
    assert truncate_payload(text, 5) == text
    assert truncate_payload(text, 3) == "a b  c\n[truncated]"


# ------------------------------------------------------------------ leakage

D = dt.date(2024, 2, 26)


def test_release_date_itself_allowed():
    guard_date_range({"start": "2024-01-01", "end": "2024-02-26"}, D)


def test_day_after_release_rejected():
    with pytest.raises(LeakageViolation) as e:
        guard_date_range({"start": "2024-01-01", "end": "2024-02-27"}, D)
    assert (e.value.field, e.value.requested, e.value.limit) == ("end", "2024-02-27", "2024-02-26")


def test_exclusive_boundary():
    with pytest.raises(LeakageViolation):
        guard_date_range({"end": "2024-02-26"}, D, inclusive=False)
    guard_date_range({"end": "2024-02-25"}, D, inclusive=False)


def test_no_date_fields_ok():
    guard_date_range({"ticker": "IBM"}, D)


def test_leakage_through_invoke(full_registry):
    call = ToolCall("c", "get_company_news", {"ticker": "IBM", "start": "2024-02-27", "end": "2024-02-27"})
    with pytest.raises(LeakageViolation) as e:
        invoke_tool(full_registry, call, ToolContext("IBM", D))
    assert e.value.field == "start"


def test_fundamentals_clamped_to_release(store):
    got = store.fundamentals("IBM", RELEASE)
    latest = {}
    for r in rows("IBM", "fundamentals"):
        if r["as_of"] <= RELEASE.isoformat():
            key = (r["metric"], r["period"])
            if key not in latest or r["as_of"] >= latest[key]["as_of"]:
                latest[key] = r
    assert {(f.metric, f.period, f.value) for f in got} == {(k[0], k[1], float(v["value"])) for k, v in latest.items()}
    assert all(f.as_of <= RELEASE for f in got)
    assert not any(f.period == "Q1-2024" for f in got)


def test_ground_truth(store):
    release, week = store.ground_truth("IBM", RELEASE)
    prices = {r["date"]: float(r["close"]) for r in rows("IBM", "prices")}
    assert release == prices["2024-02-26"]
    assert week == prices[min(d for d in prices if d >= "2024-03-04")]


# ------------------------------------------------------------------ toolsets

def names(task):
    return [s.name for s in task_toolset(task)]


def test_toolsets():
    assert names("risk") == ["retrieve_filing"]
    assert names("fundamental") == ["retrieve_filing", "get_fundamentals", "get_stock_prices"]
    assert "get_social_posts" in names("sentiment")
    assert names("decision") == []
    with pytest.raises(UnknownTask):
        task_toolset("macro")


def test_build_registry_only_needed_tools(store):
    reg = build_registry(store, {}, ["risk"])
    assert len(reg) == 1 and "retrieve_filing" in reg


# ------------------------------------------------------------ schema fidelity

SPECS = list(all_tool_specs().values()) + [
    ToolSpec("mixed", "all param types", (
        ToolParam("s", "string"), ToolParam("i", "integer", False), ToolParam("n", "number", False),
        ToolParam("b", "boolean", False), ToolParam("d", "date", False),
    )),
]

values = st.one_of(
    st.text(max_size=12),
    st.sampled_from(["2024-02-26", "2024-02-30", "20240226", "2024-2-26", "2024-02-26T00:00", "IBM"]),
    st.integers(-10, 10),
    st.floats(allow_nan=False, allow_infinity=False, width=32),
    st.sampled_from([3.0, -1.0, 0.5]),
    st.booleans(),
    st.none(),
    st.lists(st.integers(), max_size=2),
)


@st.composite
def spec_and_args(draw):
    spec = draw(st.sampled_from(SPECS))
    keys = [p.name for p in spec.params] + ["extra"]
    args = draw(st.dictionaries(st.sampled_from(keys), values, max_size=len(keys)))
    return spec, args


@settings(max_examples=400)
@given(spec_and_args())
def test_schema_fidelity(sa):
    spec, args = sa
    validator = jsonschema.Draft202012Validator(spec.parameters_schema(), format_checker=jsonschema.FormatChecker())
    try:
        validate_arguments(spec, args)
        accepted = True
    except ArgValidation:
        accepted = False
    assert accepted == validator.is_valid(args)


def test_integral_float_coerced():
    spec = SPECS[-1]
    assert validate_arguments(spec, {"s": "x", "i": 3.0}) == {"s": "x", "i": 3}


def test_openai_shape():
    fn = all_tool_specs()["get_stock_prices"].to_openai()
    assert fn["type"] == "function"
    params = fn["function"]["parameters"]
    assert params["properties"]["start"] == {"type": "string", "format": "date",
                                             "description": "First day of the window (YYYY-MM-DD)"}
    assert params["required"] == ["ticker", "start", "end"] and params["additionalProperties"] is False


# --------------------------------------------------------------- live shape

def test_live_clients_wire_shape(monkeypatch):
    monkeypatch.setenv("FMP_API_KEY", "fmp")
    monkeypatch.setenv("FINNHUB_API_KEY", "fh")
    seen = []

    def handler(request):
        seen.append(request)
        path = request.url.path
        if "historical-price-full" in path:
            body = {"historical": [{"date": "2024-02-27", "open": 1, "close": 2},
                                   {"date": "2024-02-20", "open": 3, "close": 4}]}
        elif "company-news" in path:
            body = [{"datetime": 1708387200, "headline": "h", "summary": "s"}]
        elif "search.json" in path:
            body = {"data": {"children": [{"data": {"created_utc": 1708387200, "title": "t", "selftext": "b", "score": 7}}]}}
        else:
            body = [{"date": "2023-12-31", "revenue": 1.5, "symbol": "IBM"}, {"date": "2024-12-31", "revenue": 2.0}]
        return httpx.Response(200, json=body)

    live = LiveMarketData(httpx.Client(transport=httpx.MockTransport(handler)))
    s, e = dt.date(2024, 2, 1), dt.date(2024, 2, 26)
    bars = live.prices("IBM", s, e)
    assert [b.date for b in bars] == [dt.date(2024, 2, 20)]
    assert seen[0].url.params["from"] == "2024-02-01" and seen[0].url.params["apikey"] == "fmp"
    assert live.news("IBM", s, e)[0].date == dt.date(2024, 2, 20)
    assert seen[1].url.params["token"] == "fh" and seen[1].url.params["symbol"] == "IBM"
    assert live.social("IBM", s, e)[0].score == 7
    assert "/r/wallstreetbets/search.json" in seen[2].url.path
    funds = live.fundamentals("IBM", e)
    assert [(f.metric, f.value) for f in funds] == [("revenue", 1.5)]


def test_live_http_error_is_provider_error():
    live = LiveMarketData(httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(500))))
    with pytest.raises(ProviderError):
        live.prices("IBM", dt.date(2024, 1, 1), dt.date(2024, 1, 2))


def test_payload_budget_applies(full_registry):
    out = invoke_tool(full_registry, ToolCall("c", "retrieve_filing", {"query": "revenue", "k": 5}),
                      ToolContext("IBM", RELEASE, payload_budget=50))
    assert out.payload.endswith("[truncated]")
    assert len(out.payload.split()) == 51
    json.dumps(out.to_dict())
