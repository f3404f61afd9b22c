import io
import json

import pytest

from mad_compress.backend import MockBackend, MockScript
from mad_compress.debate import DebateConfig, Query
from mad_compress.engine import DebateAborted, read_transcript, run_debate, transcript_lines, write_transcript
from mad_compress.harness import reference_workload
from mad_compress.memory import FullTextStrategy, StrategyConfig, SummaryStrategy, VisualStrategy

Q = Query("q", "What is 2 + 2?", "4")


def scripted(rows):
    """rows[r-1][i-1] is agent i's text in round r."""
    s = MockScript()
    for r, texts in enumerate(rows, start=1):
        for i, t in enumerate(texts, start=1):
            s.set("q", i, r, t)
    return s


def test_single_round_majority():
    s = scripted([["\\boxed{4}", "\\boxed{4}", "\\boxed{5}"]])
    out = run_debate(DebateConfig(3, 1), Q, MockBackend(s), FullTextStrategy())
    assert out.consensus == "4" and out.final_answers == ["4", "4", "5"]
    assert out.history_tokens == 0


def test_agent_flips():
    s = scripted([["\\boxed{4}", "\\boxed{5}", "\\boxed{5}"], ["\\boxed{4}", "\\boxed{5}", "\\boxed{4}"]])
    out = run_debate(DebateConfig(3, 2), Q, MockBackend(s), FullTextStrategy())
    assert out.consensus == "4"
    # the history seen in round 2 held the three round-1 responses
    assert len(out.transcript.before(2).history) == 3
    assert len(out.transcript.history) == 6


def test_reference_full_text_history():
    query, script = reference_workload()
    out = run_debate(DebateConfig(3, 5), query, MockBackend(script), FullTextStrategy())
    assert out.avg_solution_length == 658
    assert out.history_tokens == pytest.approx(59_220, rel=0.02)
    assert out.measured_input_tokens == out.history_tokens + out.prompt_overhead_tokens
    assert sum(out.per_round_input_tokens) == out.measured_input_tokens
    assert out.consensus == "72"


@pytest.mark.parametrize("strategy", [FullTextStrategy(), SummaryStrategy(), VisualStrategy()])
def test_every_strategy_completes(strategy):
    s = scripted([["\\boxed{4}", "\\boxed{4}", "\\boxed{5}"]] * 3)
    out = run_debate(DebateConfig(3, 3), Q, MockBackend(s), strategy)
    assert out.consensus == "4" and out.strategy == strategy.name
    assert len(out.records) == 9


def test_summary_overhead_counted():
    s = scripted([["\\boxed{4}"] * 3] * 3)
    s.set("q", 0, 2, "all say 4")
    s.set("q", 0, 3, "all say 4")
    out = run_debate(DebateConfig(3, 3), Q, MockBackend(s), SummaryStrategy())
    assert out.measured_input_tokens > out.history_tokens + out.prompt_overhead_tokens - 1
    # two summariser calls contribute their latency
    assert out.wall_time == pytest.approx(0.1 * 3 + 0.1 * 2)


def test_parallel_matches_sequential():
    query, script = reference_workload(response_tokens=100)
    a = run_debate(DebateConfig(3, 5), query, MockBackend(script), VisualStrategy(), parallel=True)
    b = run_debate(DebateConfig(3, 5), query, MockBackend(script), VisualStrategy(), parallel=False)
    assert transcript_lines(a) == transcript_lines(b)


def test_replay_identical():
    query, script = reference_workload(response_tokens=50)
    runs = [transcript_lines(run_debate(DebateConfig(3, 4, seed=1), query, MockBackend(script),
                                        FullTextStrategy())) for _ in range(2)]
    assert runs[0] == runs[1]


def test_truncation_on_context_limit():
    s = scripted([["word " * 40 + "\\boxed{4}"] * 3] * 4)
    backend = MockBackend(s, context_limit=400)
    out = run_debate(DebateConfig(3, 4), Q, backend, FullTextStrategy())
    assert "truncated_history" in out.flags
    assert out.truncation_events and all(e["dropped_rounds"] >= 1 for e in out.truncation_events)
    assert out.consensus == "4"


def test_abort_keeps_partial():
    s = scripted([["\\boxed{4}"] * 3] * 3)
    backend = MockBackend(s, fail_on=lambda r: r.round == 3)
    with pytest.raises(DebateAborted) as err:
        run_debate(DebateConfig(3, 3), Q, backend, FullTextStrategy())
    assert err.value.state.current_round == 3
    assert len(err.value.records) == 6


def test_transcript_roundtrip():
    s = scripted([["\\boxed{4}", "\\boxed{4}", "\\boxed{5}"]] * 2)
    out = run_debate(DebateConfig(3, 2), Q, MockBackend(s), FullTextStrategy())
    buf = io.StringIO()
    write_transcript(buf, out)
    lines = buf.getvalue().splitlines()
    first = json.loads(lines[0])
    assert set(first) == {"query_id", "round", "agent", "text", "token_count", "strategy", "elapsed_ms"}
    assert json.loads(lines[-1])["outcome"]["consensus"] == "4"
    states, outcomes = read_transcript(lines)
    assert states["q"] == out.transcript
    assert outcomes["q"] == out.summary()


def test_read_transcript_bad_line():
    with pytest.raises(ValueError, match="line 2"):
        read_transcript(['{"query_id": "q", "outcome": {}}', "{nope"])


def test_visual_context_tokens_per_round():
    query, script = reference_workload()
    out = run_debate(DebateConfig(3, 5), query, MockBackend(script), VisualStrategy(StrategyConfig()))
    assert out.history_tokens % 256 == 0
    assert "multi_page@r5" in out.flags
    assert out.history_tokens <= 0.08 * 59_220
