import itertools
import random

import pytest
from hypothesis import given, strategies as st

from finagents.backend import ScriptedBackend, Rule
from finagents.errors import (
    EmptyRecordSet,
    IncompleteTable,
    MalformedDecisionBlock,
    MissingDecisionBlock,
    MissingSubReport,
    NonPositiveActual,
    UnknownTask,
    UnparsableJudgeOutput,
)
from finagents.orchestrator import Dual, Horizontal, Hybrid, Single, Vertical
from finagents.tasks_eval import (
    CRITERIA,
    JUDGE_PROMPTS,
    PUBLISHED_SCORE_TABLE,
    TASK_DEFS,
    Decision,
    EvalRecord,
    avg_price_diff,
    binary_accuracy,
    build_group,
    extract_decision,
    judge_report,
    parse_judge_score,
    price_diff,
    rank_decisions,
    run_decision_task,
    score_table_from_records,
    select_ensemble,
    task_def,
)
from helpers import FnBackend, own_turn

# ---------------------------------------------------------------- judge

REPLY_SHAPES = [
    ("Score: 4 - solid coverage", 4),
    ("4", 4),
    ("5/5", 5),
    ("I would give this a 3.", 3),
    ("**Score**: 2\nThe report is thin.", 2),
    ("Rating: 1 (nonsense)", 1),
    ("score=5", 5),
    ("3 out of 5", 3),
    ("The report deserves 4 points.", 4),
    ("Final answer: [4]", 4),
    ("  2  ", 2),
    ("Score: 4.5", None),
    ("0", None),
    ("6 - exceeds expectations", None),
    ("-3", None),
    ("excellent", None),
    ("", None),
    ("Grade: 10/10", None),
    ("Q1 analysis: 4", 4),
    ("3\n\nReasoning: mentions margins and cash flow but not liquidity ratios.", 3),
]


def test_twenty_reply_shapes():
    assert len(REPLY_SHAPES) == 20
    for reply, expected in REPLY_SHAPES:
        assert parse_judge_score(reply) == expected, reply


@given(st.text(max_size=40))
def test_parse_never_out_of_range(text):
    s = parse_judge_score(text)
    assert s is None or 1 <= s <= 5


def scripted_judge(*replies):
    def fn(req):
        turn = own_turn(req)
        return replies[min(turn, len(replies) - 1)]
    return FnBackend(fn)


def test_judge_first_try():
    js = judge_report("a report", "fundamental", scripted_judge("Score: 4 - solid coverage"))
    assert js.score == 4 and js.criterion == "fundamental"


def test_judge_retries_then_succeeds():
    backend = scripted_judge("hmm", "0", "3")
    assert judge_report("a report", "risk", backend).score == 3
    assert len(backend.requests) == 3
    assert backend.requests[-1].context[-1].content.startswith("Reply with a single integer")


def test_judge_gives_up_after_three_attempts():
    backend = scripted_judge("excellent")
    with pytest.raises(UnparsableJudgeOutput):
        judge_report("a report", "coherence", backend)
    assert len(backend.requests) == 3


def test_judge_zero_is_unparsable():
    with pytest.raises(UnparsableJudgeOutput):
        judge_report("a report", "risk", scripted_judge("0"))


def test_judge_unknown_criterion_and_empty_report():
    with pytest.raises(UnknownTask):
        judge_report("x", "style", scripted_judge("3"))
    with pytest.raises(ValueError):
        judge_report("  ", "risk", scripted_judge("3"))


def test_judge_prompts_cover_criteria():
    assert set(JUDGE_PROMPTS) == set(CRITERIA)
    for p in JUDGE_PROMPTS.values():
        assert "Please give a score of 1-5 based on your judgment." in p
        assert "1 represents" in p and "3 represents" in p and "5 represents" in p
    assert JUDGE_PROMPTS["fundamental"].startswith(
        "Please evaluate from the perspective of whether the fundamental indicators")


def test_judge_system_prompt_is_criterion_prompt():
    backend = scripted_judge("4")
    judge_report("report body", "sentiment", backend)
    r = backend.requests[0]
    assert r.system_prompt == JUDGE_PROMPTS["sentiment"] and r.context[0].content == "report body"


# --------------------------------------------------------------- metrics

def rec(pred=100.0, buy=True, release=100.0, week=101.0, structure="single"):
    return EvalRecord("T", structure, pred, buy, release, week)


def test_price_diff_examples():
    assert price_diff(105, 100) == 0.05
    assert price_diff(100, 100) == 0.0
    assert price_diff(95, 100) == 0.05
    with pytest.raises(NonPositiveActual):
        price_diff(1, 0)


@given(st.floats(0.01, 1e4), st.floats(0.01, 1e4), st.sampled_from([0.5, 2.0, 4.0, 0.25, 8.0]))
def test_price_diff_scale_invariant(p, a, c):
    # powers of two keep the scaling exact in binary floating point
    assert price_diff(c * p, c * a) == price_diff(p, a)


@given(st.floats(0.01, 1e4), st.floats(0.01, 1e4), st.floats(0.001, 1000))
def test_price_diff_scale_invariant_any_c(p, a, c):
    assert price_diff(c * p, c * a) == pytest.approx(price_diff(p, a), rel=1e-9, abs=1e-12)


def test_binary_accuracy_sign_cases():
    # oracle: enumerate up/flat/down x buy/no-buy
    for week, buy in itertools.product([99.0, 100.0, 101.0], [True, False]):
        expected = 1.0 if buy == (week > 100.0) else 0.0
        assert binary_accuracy([rec(buy=buy, week=week)]) == expected


def test_twenty_of_thirty():
    records = [rec(buy=True, week=110.0)] * 20 + [rec(buy=True, week=90.0)] * 10
    assert binary_accuracy(records) == pytest.approx(0.667, abs=5e-4)


def test_all_correct_and_empty():
    assert binary_accuracy([rec()] * 3) == 1.0
    with pytest.raises(EmptyRecordSet):
        binary_accuracy([])
    with pytest.raises(EmptyRecordSet):
        avg_price_diff([])


def test_avg_price_diff_against_week_price():
    records = [rec(pred=105, week=100), rec(pred=98, week=100)]
    assert avg_price_diff(records) == pytest.approx(0.035)


records_st = st.lists(
    st.builds(rec, st.floats(1, 500), st.booleans(), st.sampled_from([100.0]), st.sampled_from([95.0, 100.0, 105.0])),
    min_size=1, max_size=30,
)


@given(records_st)
def test_accuracy_complement(records):
    flipped = [rec(r.predicted_target_price, not r.buy_decision, r.actual_release_price, r.actual_week_price)
               for r in records]
    acc = binary_accuracy(records)
    assert 0.0 <= acc <= 1.0
    assert acc == pytest.approx(1 - binary_accuracy(flipped))


def test_rank_accuracy_then_gap_then_label():
    records = [
        rec(pred=101, week=101.0, structure="dual"),       # right, 0% off
        rec(pred=110, week=100.0, structure="single"),     # wrong, 10% off
        rec(pred=110, week=110.0, structure="vertical"),   # right, 0% off
        rec(pred=105, week=100.0, structure="hybrid", buy=False),  # right, 5% off
    ]
    assert [s for s, _, _ in rank_decisions(records)] == ["dual", "vertical", "hybrid", "single"]
    assert rank_decisions([]) == []


@given(st.lists(st.builds(rec, st.floats(50, 150), st.booleans(), st.just(100.0), st.sampled_from([95.0, 105.0]),
                          st.sampled_from(["single", "dual", "hybrid"])), min_size=1, max_size=20))
def test_rank_head_is_best(records):
    # oracle: no structure beats the head on accuracy, or ties it with a smaller gap
    ranking = rank_decisions(records)
    assert sorted(s for s, _, _ in ranking) == sorted({r.structure for r in records})
    _, acc, diff = ranking[0]
    for s in {r.structure for r in records}:
        mine = [r for r in records if r.structure == s]
        a = sum(r.correct for r in mine) / len(mine)
        assert a <= acc
        if a == acc:
            assert avg_price_diff(mine) >= diff - 1e-12


def test_record_rejects_non_positive_prices():
    with pytest.raises(ValueError):
        rec(release=0)


# --------------------------------------------------------------- ensemble

def test_published_tables_select():
    assert select_ensemble(PUBLISHED_SCORE_TABLE) == {"fundamental": "single", "sentiment": "single", "risk": "vertical"}


def test_all_equal_scores_pick_single():
    table = {(s, t): 3.0 for s in ["vertical", "hybrid", "horizontal", "dual", "single"]
             for t in ["fundamental", "sentiment", "risk"]}
    assert set(select_ensemble(table).values()) == {"single"}


@pytest.mark.parametrize("pair, winner", [
    (("horizontal", "hybrid"), "horizontal"),
    (("vertical", "hybrid"), "hybrid"),
    (("vertical", "horizontal"), "horizontal"),
    (("dual", "vertical"), "dual"),
])
def test_tie_break_order(pair, winner):
    table = {(s, "risk"): 4.0 for s in pair}
    assert select_ensemble(table) == {"risk": winner}


def test_incomplete_table():
    table = dict(PUBLISHED_SCORE_TABLE)
    del table[("hybrid", "risk")]
    with pytest.raises(IncompleteTable):
        select_ensemble(table)
    with pytest.raises(IncompleteTable):
        select_ensemble({})


def test_sub_task_subset():
    assert select_ensemble(PUBLISHED_SCORE_TABLE, ["risk"]) == {"risk": "vertical"}


@given(st.permutations(list(PUBLISHED_SCORE_TABLE.items())))
def test_selection_ignores_row_order(items):
    assert select_ensemble(dict(items)) == select_ensemble(PUBLISHED_SCORE_TABLE)


@given(st.lists(st.tuples(st.sampled_from(["single", "dual", "vertical"]), st.sampled_from(["risk", "sentiment"]),
                          st.integers(1, 5)), min_size=1))
def test_score_table_means(rows):
    table = score_table_from_records(rows)
    for (s, t), v in table.items():
        vals = [x for a, b, x in rows if (a, b) == (s, t)]
        assert v == pytest.approx(sum(vals) / len(vals))
        assert 1 <= v <= 5


# --------------------------------------------------------------- decision

@pytest.mark.parametrize("text, expected", [
    ("...DECISION: target_price=187.50; buy=yes", Decision(187.5, True)),
    ("DECISION: target_price=$1,234.5; buy=no", Decision(1234.5, False)),
    ("DECISION: target_price = USD 99 ; buy = Yes\nTERMINATE", Decision(99.0, True)),
    ("DECISION: target_price=€12; buy=NO", Decision(12.0, False)),
    ("DECISION: target_price=1; buy=no\nlater\nDECISION: target_price=2; buy=yes", Decision(2.0, True)),
])
def test_extract_decision(text, expected):
    assert extract_decision(text) == expected


@pytest.mark.parametrize("text", [
    "DECISION: target=oops",
    "DECISION: target_price=abc; buy=yes",
    "DECISION: target_price=100; buy=maybe",
    "DECISION: target_price=1,23; buy=yes",
    "DECISION: target_price=0; buy=yes",
    "DECISION: target_price=100; buy=yes\nDECISION: broken",
])
def test_malformed_decision(text):
    with pytest.raises(MalformedDecisionBlock):
        extract_decision(text)


def test_missing_decision():
    with pytest.raises(MissingDecisionBlock):
        extract_decision("I would buy at around 100.")


REPORTS = {"fundamental": "F-report", "sentiment": "S-report", "risk": "R-report"}


def test_run_decision_task(registry, ctx):
    backend = FnBackend(lambda r: "Looks good.\nDECISION: target_price=150.25; buy=yes\nTERMINATE")
    out = run_decision_task(REPORTS, build_group("single", "decision"), backend, registry, ctx)
    assert out.decision == Decision(150.25, True)
    prompt = out.outcome.transcript.messages[0].content
    for v in REPORTS.values():
        assert v in prompt
    assert "DECISION: target_price=<number>; buy=<yes|no>" in prompt


def test_missing_sub_report_before_backend(registry, ctx):
    backend = FnBackend(lambda r: "x")
    with pytest.raises(MissingSubReport):
        run_decision_task({**REPORTS, "risk": " "}, build_group("single", "decision"), backend, registry, ctx)
    assert backend.requests == []


# ------------------------------------------------------------------ groups

@pytest.mark.parametrize("label, cls, n", [
    ("single", Single, 1), ("dual", Dual, 2), ("horizontal", Horizontal, 3),
    ("vertical", Vertical, 3), ("hybrid", Hybrid, 3),
])
def test_build_group(label, cls, n):
    g = build_group(label, "risk")
    assert isinstance(g, cls) and len(g.members) == n
    assert all(m.allowed_tools == {"retrieve_filing"} for m in g.members)
    assert all(m.system_prompt for m in g.members)


def test_task_defs():
    assert set(TASK_DEFS) == {"fundamental", "sentiment", "risk", "decision"}
    p = task_def("risk").prompt("IBM", "2024-02-26")
    assert "IBM" in p and "2024-02-26" in p
    with pytest.raises(UnknownTask):
        task_def("macro")
    with pytest.raises(ValueError):
        build_group("quad", "risk")


def test_scripted_judge_rule():
    b = ScriptedBackend([Rule("Score: {judge_score}")], {"judge_score": 4})
    assert judge_report("r", "risk", b).score == 4


def test_random_judge_scores_in_range():
    rng = random.Random(1)
    for _ in range(50):
        s = rng.randint(1, 5)
        assert judge_report("r", "risk", scripted_judge(f"Score: {s}")).score == s
