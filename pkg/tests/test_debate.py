import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mad_compress.debate import (
    NO_ANSWER,
    AgentResponse,
    CostReport,
    DebateConfig,
    DebateOutcome,
    DebateState,
    ProtocolError,
    Query,
    RunningMean,
    advance_round,
    canonicalize,
    extract_answer,
    history_size,
    majority_vote,
    round_cost,
    total_cost,
)


def responses(r, texts):
    return [AgentResponse(i, r, t, len(t.split())) for i, t in enumerate(texts, start=1)]


class TestConfig:
    def test_defaults(self):
        c = DebateConfig(3, 5)
        assert c.max_response_tokens == 1024
        assert c.temperature == 0.0

    @pytest.mark.parametrize("kw", [
        dict(num_agents=0, num_rounds=1),
        dict(num_agents=1, num_rounds=0),
        dict(num_agents=1, num_rounds=1, max_response_tokens=0),
        dict(num_agents=1, num_rounds=1, answer_mode="essay"),
        dict(num_agents=1, num_rounds=1, consensus_mode="judge"),
    ])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            DebateConfig(**kw)

    def test_query_needs_text(self):
        with pytest.raises(ValueError):
            Query("q", "   ")


class TestAdvanceRound:
    def test_first_round(self):
        s = advance_round(DebateState.initial(3), responses(1, "abc"))
        assert len(s.history) == 3 and s.current_round == 2

    def test_second_round(self):
        s = advance_round(DebateState.initial(3), responses(1, "abc"))
        s2 = advance_round(s, responses(2, "def"))
        assert len(s2.history) == 6 and s2.current_round == 3
        # the earlier snapshot is untouched
        assert len(s.history) == 3 and s.current_round == 2

    def test_short_round(self):
        s = advance_round(DebateState.initial(3), responses(1, "abc"))
        with pytest.raises(ProtocolError):
            advance_round(s, responses(2, "de"))

    def test_duplicate_agent(self):
        bad = [AgentResponse(1, 1, "a", 1), AgentResponse(1, 1, "b", 1), AgentResponse(3, 1, "c", 1)]
        with pytest.raises(ProtocolError):
            advance_round(DebateState.initial(3), bad)

    def test_round_mismatch(self):
        with pytest.raises(ProtocolError):
            advance_round(DebateState.initial(3), responses(2, "abc"))

    def test_sorted_by_agent(self):
        s = advance_round(DebateState.initial(3), list(reversed(responses(1, "abc"))))
        assert [r.agent_index for r in s.history] == [1, 2, 3]

    def test_history_invariant_checked(self):
        with pytest.raises(ProtocolError):
            DebateState(3, tuple(responses(1, "ab")), current_round=2)

    @given(st.integers(1, 6), st.integers(1, 8))
    def test_history_recursion(self, K, R):
        s = DebateState.initial(K)
        assert s.is_empty
        for r in range(1, R + 1):
            assert len(s.history) == K * (r - 1)
            s = advance_round(s, responses(r, ["x"] * K))
        assert len(s.rounds()) == R

    def test_before_and_truncated(self):
        s = DebateState.initial(2)
        for r in range(1, 4):
            s = advance_round(s, responses(r, ["a", "b"]))
        assert s.before(1).is_empty
        assert len(s.before(3).history) == 4
        t = s.truncated(1)
        assert t.dropped_rounds == 1 and [x.round for x in t.history] == [2, 2, 3, 3]
        assert s.truncated(10).is_empty


class TestMajority:
    def test_strict(self):
        assert majority_vote([(1, "4"), (2, "4"), (3, "5")]) == "4"

    def test_three_way_tie(self):
        assert majority_vote([(1, "7"), (2, "8"), (3, "9")]) == "7"

    def test_two_way_tie(self):
        assert majority_vote([(1, "a"), (2, "b"), (3, "b"), (4, "a"), (5, "c")]) == "a"

    def test_empty(self):
        with pytest.raises(ValueError):
            majority_vote([])

    @given(st.lists(st.sampled_from("abcd"), min_size=1, max_size=9), st.randoms())
    def test_member_and_order_free(self, answers, rnd):
        pairs = list(enumerate(answers, start=1))
        result = majority_vote(pairs)
        assert result in answers
        rnd.shuffle(pairs)
        assert majority_vote(pairs) == result

    @given(st.lists(st.sampled_from("xyz"), min_size=1, max_size=8))
    def test_matches_brute_force(self, answers):
        counts = {a: answers.count(a) for a in answers}
        best = max(counts.values())
        expected = next(a for a in answers if counts[a] == best)
        assert majority_vote(enumerate(answers, start=1)) == expected


class TestExtract:
    def test_boxed(self):
        assert extract_answer("so \\boxed{42}", "boxed") == "42"

    def test_boxed_last_and_nested(self):
        assert extract_answer("\\boxed{1} then \\boxed{\\frac{1}{2}}", "boxed") == "\\frac{1}{2}"

    def test_final_number(self):
        assert extract_answer("The total is 1,250 apples.", "final_number") == "1250"

    def test_final_number_sign_decimal(self):
        assert extract_answer("from 3 down to -2.50 degrees", "final_number") == "-2.5"

    def test_multiple_choice(self):
        assert extract_answer("I pick (C) because...", "multiple_choice") == "C"
        assert extract_answer("not a, it is b", "multiple_choice") == "B"

    @pytest.mark.parametrize("mode", ["boxed", "final_number", "multiple_choice"])
    def test_absent(self, mode):
        assert extract_answer("nothing here!", mode) == NO_ANSWER

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            extract_answer("x", "essay")

    @pytest.mark.parametrize("raw,canon", [
        (" 18 ", "18"), ("1,000", "1000"), ("18.0", "18"), ("0.50", "0.5"), ("$5", "5"),
        ("72.", "72"), ("c", "C"), ("x+1", "x+1"),
    ])
    def test_canonicalize(self, raw, canon):
        assert canonicalize(raw) == canon


class TestCost:
    @pytest.mark.parametrize("K,r,L,expected", [(3, 1, 500, 0), (3, 2, 100, 900), (3, 5, 658, 23_688)])
    def test_round_cost(self, K, r, L, expected):
        assert round_cost(K, r, L) == expected

    def test_total_cost_examples(self):
        assert total_cost(3, 5, 658) == 59_220
        assert total_cost(2, 3, 100) == 1_200
        assert total_cost(7, 1, 999) == 0

    def test_history_size(self):
        assert history_size(3, 5, 658) == 7_896

    @pytest.mark.parametrize("args", [(0, 1, 1), (1, 0, 1), (1, 1, -1)])
    def test_bad_args(self, args):
        with pytest.raises(ValueError):
            round_cost(*args)
        with pytest.raises(ValueError):
            total_cost(*args)

    def test_identity_exhaustive(self):
        for K, R, L in itertools.product(range(1, 51), range(1, 51), (1, 10, 658)):
            assert total_cost(K, R, L) == sum(round_cost(K, r, L) for r in range(1, R + 1))

    def test_monotone(self):
        for K in range(1, 10):
            for R in range(2, 10):
                assert total_cost(K + 1, R, 5) > total_cost(K, R, 5)
                assert total_cost(K, R + 1, 5) > total_cost(K, R, 5)
                assert total_cost(K, R, 6) > total_cost(K, R, 5)

    def test_report(self):
        rep = CostReport.from_model(3, 5, 658)
        assert rep.total_cost == 59_220 == sum(rep.per_round_cost)
        assert rep.per_round_cost[0] == 0

    def test_running_mean(self):
        m = RunningMean()
        for x in (650, 660, 664):
            m.add(x)
        assert m.mean == pytest.approx(658)


def test_outcome_consensus_membership():
    state = advance_round(DebateState.initial(2), responses(1, ["\\boxed{1}", "\\boxed{2}"]))
    with pytest.raises(ProtocolError):
        DebateOutcome("q", ["1", "2"], "3", state, 0, 0, 0, 0.0, 0.0)
