"""Debate protocol state, consensus, answer extraction and the closed-form cost model."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Iterable, Literal, Sequence

AnswerMode = Literal["boxed", "final_number", "multiple_choice"]
ANSWER_MODES: tuple[str, ...] = ("boxed", "final_number", "multiple_choice")

NO_ANSWER = "<no answer>"


class ProtocolError(ValueError):
    """A round's responses do not fit the debate protocol."""


@dataclass(frozen=True)
class DebateConfig:
    num_agents: int
    num_rounds: int
    max_response_tokens: int = 1024
    consensus_mode: Literal["majority"] = "majority"
    answer_mode: AnswerMode = "boxed"
    temperature: float = 0.0
    seed: int | None = None
    model: str = "default"

    def __post_init__(self) -> None:
        if self.num_agents < 1:
            raise ValueError(f"num_agents must be >= 1, got {self.num_agents}")
        if self.num_rounds < 1:
            raise ValueError(f"num_rounds must be >= 1, got {self.num_rounds}")
        if self.max_response_tokens < 1:
            raise ValueError("max_response_tokens must be >= 1")
        if self.consensus_mode != "majority":
            raise ValueError(f"unsupported consensus_mode {self.consensus_mode!r}")
        if self.answer_mode not in ANSWER_MODES:
            raise ValueError(f"answer_mode must be one of {ANSWER_MODES}, got {self.answer_mode!r}")


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    gold_answer: str | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError(f"query {self.id!r} has empty text")


@dataclass(frozen=True)
class AgentResponse:
    agent_index: int
    round: int
    text: str
    token_count: int

    def __post_init__(self) -> None:
        if self.agent_index < 1 or self.round < 1:
            raise ValueError("agent_index and round are 1-based")
        if self.token_count < 0:
            raise ValueError("token_count must be non-negative")


@dataclass(frozen=True)
class DebateState:
    """Immutable snapshot of the shared history H_r before round ``current_round``.

    ``dropped_rounds`` counts the oldest rounds removed by context-limit
    truncation; a full history has none.
    """

    num_agents: int
    history: tuple[AgentResponse, ...] = ()
    current_round: int = 1
    dropped_rounds: int = 0

    def __post_init__(self) -> None:
        kept = self.current_round - 1 - self.dropped_rounds
        if kept < 0:
            raise ProtocolError("cannot drop more rounds than exist")
        if len(self.history) != self.num_agents * kept:
            raise ProtocolError(
                f"history holds {len(self.history)} responses, expected {self.num_agents * kept}"
            )
        first = self.dropped_rounds + 1
        for pos, resp in enumerate(self.history):
            if resp.round != first + pos // self.num_agents:
                raise ProtocolError("history rounds are not contiguous and ordered")

    @classmethod
    def initial(cls, num_agents: int) -> "DebateState":
        return cls(num_agents=num_agents)

    @property
    def is_empty(self) -> bool:
        return not self.history

    def rounds(self) -> list[tuple[int, tuple[AgentResponse, ...]]]:
        """History grouped as ``(round, responses in agent order)``."""
        k = self.num_agents
        return [
            (self.history[i].round, self.history[i : i + k]) for i in range(0, len(self.history), k)
        ]

    def last_round(self) -> tuple[AgentResponse, ...]:
        return self.history[-self.num_agents :] if self.history else ()

    def before(self, round_: int) -> "DebateState":
        """The history as it stood at the start of ``round_`` (no truncation)."""
        if self.dropped_rounds:
            raise ProtocolError("cannot rewind a truncated history")
        if not 1 <= round_ <= self.current_round:
            raise ValueError(f"round {round_} is outside 1..{self.current_round}")
        return DebateState(self.num_agents, self.history[: self.num_agents * (round_ - 1)], round_)

    def truncated(self, drop: int) -> "DebateState":
        """View with the ``drop`` oldest remaining rounds removed."""
        if drop <= 0:
            return self
        drop = min(drop, len(self.history) // self.num_agents)
        return DebateState(
            num_agents=self.num_agents,
            history=self.history[drop * self.num_agents :],
            current_round=self.current_round,
            dropped_rounds=self.dropped_rounds + drop,
        )


def advance_round(state: DebateState, responses: Sequence[AgentResponse]) -> DebateState:
    """Append one complete round of responses (one per agent) to the history."""
    if state.dropped_rounds:
        raise ProtocolError("cannot advance a truncated view")
    if len(responses) != state.num_agents:
        raise ProtocolError(f"expected {state.num_agents} responses, got {len(responses)}")
    seen = set()
    for resp in responses:
        if resp.round != state.current_round:
            raise ProtocolError(f"response for round {resp.round} submitted in round {state.current_round}")
        if not 1 <= resp.agent_index <= state.num_agents:
            raise ProtocolError(f"agent index {resp.agent_index} out of range")
        if resp.agent_index in seen:
            raise ProtocolError(f"duplicate response from agent {resp.agent_index}")
        seen.add(resp.agent_index)
    ordered = tuple(sorted(responses, key=lambda r: r.agent_index))
    return DebateState(
        num_agents=state.num_agents,
        history=state.history + ordered,
        current_round=state.current_round + 1,
    )


def majority_vote(answers: Iterable[tuple[int, str]]) -> str:
    """Most frequent answer; ties go to the answer held by the lowest agent index."""
    answers = list(answers)
    if not answers:
        raise ValueError("majority_vote needs at least one answer")
    counts = Counter(a for _, a in answers)
    first_holder: dict[str, int] = {}
    for idx, a in answers:
        first_holder[a] = min(idx, first_holder.get(a, idx))
    top = max(counts.values())
    tied = [a for a, c in counts.items() if c == top]
    return min(tied, key=lambda a: first_holder[a])


# -- answers ---------------------------------------------------------------

_NUMBER_RE = re.compile(r"[-+]?\d[\d,]*(?:\.\d+)?")
_PLAIN_NUMBER_RE = re.compile(r"^[-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?$")
_OPTION_RE = re.compile(r"\b([A-Ea-e])\b")


def canonicalize(answer: str) -> str:
    """Trim, strip thousands separators, normalise numbers and option letters."""
    a = answer.strip().strip("$").strip()
    if a.endswith(".") and _PLAIN_NUMBER_RE.match(a[:-1]):
        a = a[:-1]
    if _PLAIN_NUMBER_RE.match(a):
        try:
            d = Decimal(a.replace(",", ""))
        except InvalidOperation:
            return a
        if d == d.to_integral_value():
            return str(int(d))
        return format(d.normalize(), "f")
    if len(a) == 1 and a.upper() in "ABCDE":
        return a.upper()
    return a


def _last_boxed(text: str) -> str | None:
    start = text.rfind("\\boxed{")
    if start < 0:
        return None
    i = start + len("\\boxed{")
    depth = 1
    for j in range(i, len(text)):
        if text[j] == "{":
            depth += 1
        elif text[j] == "}":
            depth -= 1
            if depth == 0:
                return text[i:j]
    return None


def extract_answer(text: str, mode: AnswerMode) -> str:
    """Canonical answer pulled from a response, or ``NO_ANSWER``."""
    if mode == "boxed":
        found = _last_boxed(text)
    elif mode == "final_number":
        nums = _NUMBER_RE.findall(text)
        found = nums[-1].rstrip(",") if nums else None
    elif mode == "multiple_choice":
        letters = _OPTION_RE.findall(text)
        found = letters[-1] if letters else None
    else:
        raise ValueError(f"unknown answer mode {mode!r}")
    if found is None or not found.strip():
        return NO_ANSWER
    return canonicalize(found)


# -- cost model ------------------------------------------------------------

def _check_cost_args(K: int, r: int, L: float) -> None:
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if r < 1:
        raise ValueError(f"round/horizon must be >= 1, got {r}")
    if L < 0:
        raise ValueError(f"L must be >= 0, got {L}")


def history_size(K: int, r: int, L: float) -> float:
    """Tokens in H_r: K * (r - 1) * L."""
    _check_cost_args(K, r, L)
    return K * (r - 1) * L


def round_cost(K: int, r: int, L: float) -> float:
    """Tokens read at round r when all K agents see the full history: K^2 (r-1) L."""
    _check_cost_args(K, r, L)
    return K * K * (r - 1) * L


def total_cost(K: int, R: int, L: float) -> float:
    """Cumulative history tokens over R rounds: K^2 L R (R-1) / 2."""
    _check_cost_args(K, R, L)
    if isinstance(L, int):
        return K * K * L * R * (R - 1) // 2
    return K * K * L * R * (R - 1) / 2


@dataclass(frozen=True)
class CostReport:
    per_round_cost: list[float]
    total_cost: float
    avg_solution_length: float

    @classmethod
    def from_model(cls, K: int, R: int, L: float) -> "CostReport":
        per_round = [round_cost(K, r, L) for r in range(1, R + 1)]
        return cls(per_round_cost=per_round, total_cost=sum(per_round), avg_solution_length=L)


@dataclass
class RunningMean:
    """Running mean of observed response lengths; the estimator used for L."""

    n: int = 0
    mean: float = 0.0

    def add(self, x: float) -> None:
        self.n += 1
        self.mean += (x - self.mean) / self.n


@dataclass(frozen=True)
class DebateOutcome:
    query_id: str
    final_answers: list[str]
    consensus: str
    transcript: DebateState
    measured_input_tokens: int
    history_tokens: int
    prompt_overhead_tokens: int
    wall_time: float
    avg_solution_length: float
    per_round_input_tokens: list[int] = field(default_factory=list)
    truncation_events: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    strategy: str = ""
    records: list[dict] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        if self.consensus not in self.final_answers:
            raise ProtocolError("consensus must be one of the final answers")

    def summary(self) -> dict:
        return {
            "query_id": self.query_id,
            "strategy": self.strategy,
            "final_answers": list(self.final_answers),
            "consensus": self.consensus,
            "rounds": self.transcript.current_round - 1,
            "measured_input_tokens": self.measured_input_tokens,
            "history_tokens": self.history_tokens,
            "prompt_overhead_tokens": self.prompt_overhead_tokens,
            "per_round_input_tokens": list(self.per_round_input_tokens),
            "avg_solution_length": self.avg_solution_length,
            "wall_time_s": self.wall_time,
            "truncation_events": list(self.truncation_events),
            "flags": list(self.flags),
        }
