"""Round-by-round debate execution against a chat backend."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import IO, Iterable

from .backend import BackendError, ChatBackend, ChatResponse, ContextLengthError
from .debate import (
    AgentResponse,
    DebateConfig,
    DebateOutcome,
    DebateState,
    Query,
    RunningMean,
    advance_round,
    extract_answer,
    majority_vote,
)
from .memory import MemoryContext, MemoryStrategy
from .prompts import build_prompt
from .tokenizer import DEFAULT_TOKENIZER, Tokenizer

log = logging.getLogger(__name__)


class DebateAborted(RuntimeError):
    """Backend failure mid-debate; ``state`` and ``records`` hold what completed."""

    def __init__(self, message: str, state: DebateState, records: list[dict]):
        super().__init__(message)
        self.state = state
        self.records = records


@dataclass(frozen=True)
class _Attempt:
    context: MemoryContext
    responses: list[ChatResponse]
    dropped: int


def _fan_out(backend: ChatBackend, requests, parallel: bool) -> list[ChatResponse]:
    if not parallel or len(requests) == 1:
        return [backend.chat(r) for r in requests]
    with ThreadPoolExecutor(max_workers=len(requests)) as pool:
        return list(pool.map(backend.chat, requests))


def run_debate(
    config: DebateConfig,
    query: Query,
    backend: ChatBackend,
    strategy: MemoryStrategy,
    *,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    parallel: bool = True,
) -> DebateOutcome:
    """Run R rounds; the outcome carries the transcript records (one per response).

    A context-length rejection drops the oldest remaining round from what the
    agents see and retries the round; the event is recorded on the outcome.
    """
    K = config.num_agents
    state = DebateState.initial(K)
    records: list[dict] = []
    lengths = RunningMean()
    measured = history_tokens = overhead = 0
    per_round: list[int] = []
    truncations: list[dict] = []
    flags: list[str] = []
    wall_ms = 0.0

    for r in range(1, config.num_rounds + 1):
        attempt = None
        dropped = 0
        while attempt is None:
            view = state.truncated(dropped)
            try:
                context = strategy.compress(view, query, backend)
            except BackendError as exc:
                raise DebateAborted(f"round {r}: {exc}", state, records) from exc
            requests = [
                build_prompt(
                    strategy.template, query, context,
                    num_agents=K, agent_index=i, round_=r, model=config.model,
                    max_tokens=config.max_response_tokens, temperature=config.temperature,
                    seed=config.seed,
                )
                for i in range(1, K + 1)
            ]
            try:
                attempt = _Attempt(context, _fan_out(backend, requests, parallel), dropped)
            except ContextLengthError as exc:
                if view.is_empty:
                    raise DebateAborted(f"round {r}: prompt exceeds context even without history",
                                        state, records) from exc
                dropped += 1
                log.info("round %d: context limit hit, dropping oldest round (%d dropped)", r, dropped)
            except BackendError as exc:
                raise DebateAborted(f"round {r}: {exc}", state, records) from exc

        context = attempt.context
        if attempt.dropped:
            truncations.append({"round": r, "dropped_rounds": attempt.dropped})
            if "truncated_history" not in flags:
                flags.append("truncated_history")
        for f in context.flags:
            tag = f"{f}@r{r}"
            flags.append(tag)

        responses = []
        round_input = context.overhead_tokens
        for i, resp in enumerate(attempt.responses, start=1):
            count = tokenizer.count(resp.text)
            responses.append(AgentResponse(i, r, resp.text, count))
            lengths.add(count)
            round_input += resp.prompt_tokens
            records.append({
                "query_id": query.id,
                "round": r,
                "agent": i,
                "text": resp.text,
                "token_count": count,
                "strategy": strategy.name,
                "elapsed_ms": resp.latency_ms,
            })
        history_tokens += K * context.context_tokens
        overhead += round_input - K * context.context_tokens
        measured += round_input
        per_round.append(round_input)
        wall_ms += context.overhead_latency_ms + max(resp.latency_ms for resp in attempt.responses)
        state = advance_round(state, responses)

    finals = [extract_answer(resp.text, config.answer_mode) for resp in state.last_round()]
    consensus = majority_vote(enumerate(finals, start=1))
    outcome = DebateOutcome(
        query_id=query.id,
        final_answers=finals,
        consensus=consensus,
        transcript=state,
        measured_input_tokens=measured,
        history_tokens=history_tokens,
        prompt_overhead_tokens=overhead,
        wall_time=wall_ms / 1000.0,
        avg_solution_length=lengths.mean,
        per_round_input_tokens=per_round,
        truncation_events=truncations,
        flags=flags,
        strategy=strategy.name,
        records=records,
    )
    return outcome


def transcript_lines(outcome: DebateOutcome) -> list[str]:
    """JSON Lines: one record per agent response, then an ``outcome`` record."""
    lines = [json.dumps(rec, sort_keys=True) for rec in outcome.records]
    lines.append(json.dumps({"query_id": outcome.query_id, "outcome": outcome.summary()}, sort_keys=True))
    return lines


def write_transcript(fh: IO[str], outcome: DebateOutcome) -> None:
    for line in transcript_lines(outcome):
        fh.write(line + "\n")


def read_transcript(lines: Iterable[str]) -> tuple[dict[str, DebateState], dict[str, dict]]:
    """Rebuild per-query histories (and outcome summaries) from transcript JSONL."""
    by_query: dict[str, list[dict]] = {}
    outcomes: dict[str, dict] = {}
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {n}: not JSON ({exc})") from exc
        if "outcome" in rec:
            outcomes[rec["query_id"]] = rec["outcome"]
        else:
            by_query.setdefault(rec["query_id"], []).append(rec)
    states = {}
    for qid, recs in by_query.items():
        K = max(r["agent"] for r in recs)
        state = DebateState.initial(K)
        for rnd in sorted({r["round"] for r in recs}):
            batch = [AgentResponse(r["agent"], rnd, r["text"], r["token_count"]) for r in recs if r["round"] == rnd]
            state = advance_round(state, batch)
        states[qid] = state
    return states, outcomes
