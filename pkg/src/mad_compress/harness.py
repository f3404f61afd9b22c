"""Datasets, scripted workloads, benchmark orchestration, cost prediction and config loading."""
from __future__ import annotations

import configparser
import csv
import io
import itertools
import json
import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .backend import BackendError, ChatBackend, MockScript
from .debate import (
    AnswerMode,
    DebateConfig,
    DebateOutcome,
    ProtocolError,
    Query,
    canonicalize,
    majority_vote,
    round_cost,
)
from .engine import DebateAborted, run_debate
from .memory import MemoryStrategy, StrategyConfig, make_strategy, vision_token_count
from .theory import TheoryParams
from .tokenizer import DEFAULT_TOKENIZER, Tokenizer

log = logging.getLogger(__name__)


# -- datasets -------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    name: str
    items: tuple[Query, ...]
    answer_mode: AnswerMode = "boxed"

    def __post_init__(self) -> None:
        ids = [q.id for q in self.items]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise ValueError(f"duplicate item id {dup!r} in dataset {self.name!r}")

    def __len__(self) -> int:
        return len(self.items)


def canonical_gold(answer: str) -> str:
    """Gold answers may carry worked solutions ending in ``#### <answer>``."""
    if "####" in answer:
        answer = answer.rsplit("####", 1)[1]
    return canonicalize(answer)


def load_dataset(path: str | Path, *, name: str | None = None, answer_mode: AnswerMode = "boxed") -> Dataset:
    """Read JSON Lines of ``{"id", "question", "answer"}``."""
    path = Path(path)
    items = []
    with path.open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{n}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise ValueError(f"{path}:{n}: expected an object")
            missing = [k for k in ("id", "question", "answer") if k not in rec]
            if missing:
                raise ValueError(f"{path}:{n}: missing field(s) {', '.join(missing)}")
            try:
                items.append(Query(str(rec["id"]), str(rec["question"]), canonical_gold(str(rec["answer"]))))
            except ValueError as exc:
                raise ValueError(f"{path}:{n}: {exc}") from exc
    return Dataset(name or path.stem, tuple(items), answer_mode)


def synthetic_arithmetic(n: int = 20, seed: int = 0) -> Dataset:
    rng = random.Random(seed)
    items = []
    for i in range(n):
        a, b = rng.randint(2, 99), rng.randint(2, 99)
        op = rng.choice("+-*")
        value = {"+": a + b, "-": a - b, "*": a * b}[op]
        items.append(Query(f"arith-{i:03d}", f"What is {a} {op} {b}?", str(value)))
    return Dataset("synthetic-arithmetic", tuple(items))


# -- scripted workloads -------------------------------------------------------------

FILLER = "3+4=7;"


def pad_response(core: str, length: int, tokenizer: Tokenizer = DEFAULT_TOKENIZER, filler: str = FILLER) -> str:
    """Prefix ``core`` with filler so the whole response is exactly ``length`` tokens."""
    need = length - tokenizer.count(core)
    if need < 0:
        raise ValueError(f"core response is already {tokenizer.count(core)} tokens, above {length}")
    unit = tokenizer.tokens(filler)
    reps = need // len(unit) + 1
    body = "".join(itertools.islice(itertools.chain.from_iterable(itertools.repeat(unit, reps)), need))
    text = f"{body} {core}" if body else core
    if tokenizer.count(text) != length:
        raise ValueError("filler does not tokenise independently of its neighbours")
    return text


def _solution(query: Query, answer: str) -> str:
    return f"Working through the problem gives {answer}, so \\boxed{{{answer}}}."


def majority_script(
    dataset: Dataset,
    num_agents: int = 3,
    num_rounds: int = 5,
    *,
    seed: int = 0,
    response_tokens: int | None = None,
    summary_tokens: int = 1200,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
) -> MockScript:
    """Every round, a seeded minority of agents answers wrong (gold + 1) and the rest answer right.

    With K=3 this is the 2-of-3-correct script. Summariser calls (agent 0) get a
    fixed digest padded to ``summary_tokens``.
    """
    rng = random.Random(seed)
    wrong_count = (num_agents - 1) // 2
    script = MockScript()
    for q in dataset.items:
        gold = q.gold_answer or "0"
        try:
            wrong = str(int(gold) + 1)
        except ValueError:
            wrong = gold + "x"
        for r in range(1, num_rounds + 1):
            wrong_agents = set(rng.sample(range(1, num_agents + 1), wrong_count))
            for i in range(1, num_agents + 1):
                text = _solution(q, wrong if i in wrong_agents else gold)
                if response_tokens is not None:
                    text = pad_response(text, response_tokens, tokenizer)
                script.set(q.id, i, r, text)
            summary = f"Most agents conclude {gold}."
            script.set(q.id, 0, r, pad_response(summary, summary_tokens, tokenizer))
    return script


CLIPS_QUESTION = (
    "Natalia sold clips to 48 of her friends in April, and then she sold half as many clips "
    "to friends in May. How many clips did Natalia sell altogether in April and May?"
)


def reference_workload(num_agents: int = 3, num_rounds: int = 5, response_tokens: int = 658,
                       summary_tokens: int = 1200) -> tuple[Query, MockScript]:
    """Single-question workload whose every agent response is exactly ``response_tokens`` long."""
    query = Query("clips", CLIPS_QUESTION, "72")
    script = majority_script(Dataset("clips", (query,)), num_agents, num_rounds,
                             response_tokens=response_tokens, summary_tokens=summary_tokens)
    return query, script


# -- cost prediction ---------------------------------------------------------------

@dataclass(frozen=True)
class CostCurve:
    """Predicted per-round history tokens (summed over agents) for each paradigm."""

    rounds: tuple[int, ...]
    full_text: tuple[float, ...]
    summary: tuple[float, ...]
    visual: tuple[float, ...]

    @staticmethod
    def _cum(xs) -> list[float]:
        return list(itertools.accumulate(xs))

    def cumulative(self) -> dict[str, list[float]]:
        return {
            "full_text": self._cum(self.full_text),
            "summary": self._cum(self.summary),
            "visual": self._cum(self.visual),
        }

    def totals(self) -> dict[str, float]:
        return {k: (v[-1] if v else 0) for k, v in self.cumulative().items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "full_text", "summary", "visual", "full_text_cum", "summary_cum", "visual_cum"])
        cum = self.cumulative()
        for i, r in enumerate(self.rounds):
            w.writerow([r, self.full_text[i], self.summary[i], self.visual[i],
                        cum["full_text"][i], cum["summary"][i], cum["visual"][i]])
        return buf.getvalue()


def predict_costs(
    config: DebateConfig,
    L: float,
    *,
    tokens_per_image: int = 256,
    pages: int = 1,
    summary_tokens: float = 1200,
    count_first_round: bool = False,
) -> CostCurve:
    """Closed-form per-round history cost of the three paradigms.

    Round 1 has an empty history, so by default it costs nothing under every
    paradigm. ``count_first_round`` charges the fixed-size summary and image
    context in every round instead, which is the accounting behind the
    published 3.8K visual and 18.0K summary totals for K=3, R=5.
    """
    K, R = config.num_agents, config.num_rounds
    rounds = tuple(range(1, R + 1))
    full = tuple(round_cost(K, r, L) for r in rounds)

    def charged(r: int, per_agent: float) -> float:
        return K * per_agent if (r > 1 or count_first_round) else 0

    return CostCurve(
        rounds,
        full,
        tuple(charged(r, summary_tokens) for r in rounds),
        tuple(charged(r, tokens_per_image * pages) for r in rounds),
    )


def growth_exponent(horizons: Sequence[float], totals: Sequence[float]) -> float:
    """Least-squares slope of log(total) on log(R)."""
    x = np.log(np.asarray(horizons, dtype=np.float64))
    y = np.log(np.asarray(totals, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


def scaling_exponents(K: int = 3, L: float = 658, *, tokens_per_image: int = 256,
                      horizons: Sequence[int] = tuple(range(2, 13)),
                      count_first_round: bool = True) -> dict[str, float]:
    totals = {"full_text": [], "summary": [], "visual": []}
    for R in horizons:
        t = predict_costs(DebateConfig(K, R), L, tokens_per_image=tokens_per_image,
                          count_first_round=count_first_round).totals()
        for k in totals:
            totals[k].append(t[k])
    return {k: growth_exponent(horizons, v) for k, v in totals.items()}


# -- benchmark -----------------------------------------------------------------------

@dataclass
class StrategyRow:
    strategy: str
    items: int
    correct: int
    failures: int
    total_input_tokens: int
    history_tokens: int
    wall_time_s: float
    per_round_input_tokens: list[int]
    avg_solution_length: float
    predicted_history_tokens: float
    accuracy: float = 0.0
    mean_input_tokens_per_sample: float = 0.0
    cost_delta: float = 0.0  # measured history / predicted - 1

    def __post_init__(self) -> None:
        self.accuracy = 100.0 * self.correct / self.items if self.items else 0.0
        done = self.items - self.failures
        self.mean_input_tokens_per_sample = self.total_input_tokens / done if done else 0.0
        if self.predicted_history_tokens:
            self.cost_delta = self.history_tokens / self.predicted_history_tokens - 1.0


@dataclass
class BenchmarkReport:
    dataset: str
    config: DebateConfig
    rows: list[StrategyRow]
    outcomes: dict[str, list[DebateOutcome]] = field(repr=False)
    failures: dict[str, list[dict]] = field(default_factory=dict)

    def row(self, strategy: str) -> StrategyRow:
        for r in self.rows:
            if r.strategy == strategy:
                return r
        raise KeyError(strategy)

    def reduction(self, strategy: str, baseline: str = "full_text") -> float:
        """Percent fewer total input tokens than the baseline strategy."""
        return 100.0 * (1.0 - self.row(strategy).total_input_tokens / self.row(baseline).total_input_tokens)

    def to_json(self) -> str:
        return json.dumps({
            "dataset": self.dataset,
            "config": asdict(self.config),
            "rows": [asdict(r) for r in self.rows],
            "failures": self.failures,
        }, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "accuracy_pct", "total_input_tokens_k", "mean_input_tokens_per_sample",
                    "history_tokens", "wall_time_s", "failures", "cost_delta"])
        for r in self.rows:
            w.writerow([r.strategy, f"{r.accuracy:.1f}", f"{r.total_input_tokens / 1000:.1f}",
                        f"{r.mean_input_tokens_per_sample:.1f}", r.history_tokens, f"{r.wall_time_s:.2f}",
                        r.failures, f"{r.cost_delta:.4f}"])
        return buf.getvalue()

    def token_curve(self) -> str:
        """Cumulative input tokens per round for each strategy, as CSV."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round"] + [r.strategy for r in self.rows])
        cums = [list(itertools.accumulate(r.per_round_input_tokens)) for r in self.rows]
        for i in range(self.config.num_rounds):
            w.writerow([i + 1] + [c[i] if i < len(c) else "" for c in cums])
        return buf.getvalue()


def _predicted_history(strategy: MemoryStrategy, config: DebateConfig, L: float,
                       outcomes: list[DebateOutcome]) -> float:
    if strategy.name == "full_text":
        return len(outcomes) * predict_costs(config, L).totals()["full_text"]
    if strategy.name == "visual":
        n = strategy.config.vision_tokens_per_image
        return len(outcomes) * predict_costs(config, L, tokens_per_image=n).totals()["visual"]
    return len(outcomes) * predict_costs(config, L, summary_tokens=strategy.config.max_summary_tokens
                                         ).totals()["summary"]


def run_benchmark(
    config: DebateConfig,
    dataset: Dataset,
    backend: ChatBackend,
    strategies: Sequence[StrategyConfig | MemoryStrategy],
    *,
    parallelism: int = 4,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
) -> BenchmarkReport:
    """Debate every item under every strategy; failures are recorded per item."""
    if not strategies:
        raise ValueError("at least one strategy is required")
    config = config if config.answer_mode == dataset.answer_mode else DebateConfig(
        **{**asdict(config), "answer_mode": dataset.answer_mode})
    rows, all_outcomes, all_failures = [], {}, {}
    for spec in strategies:
        strategy = make_strategy(spec, tokenizer, config.model) if isinstance(spec, StrategyConfig) else spec

        def one(q: Query):
            try:
                return run_debate(config, q, backend, strategy, tokenizer=tokenizer, parallel=False)
            except (DebateAborted, BackendError, ProtocolError) as exc:
                log.warning("%s/%s failed: %s", strategy.name, q.id, exc)
                return {"query_id": q.id, "error": f"{type(exc).__name__}: {exc}"}

        with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
            results = list(pool.map(one, dataset.items))
        outcomes = [r for r in results if isinstance(r, DebateOutcome)]
        failures = [r for r in results if isinstance(r, dict)]
        gold = {q.id: canonicalize(q.gold_answer or "") for q in dataset.items}
        per_round = [0] * config.num_rounds
        for o in outcomes:
            for i, t in enumerate(o.per_round_input_tokens):
                per_round[i] += t
        L = float(np.mean([o.avg_solution_length for o in outcomes])) if outcomes else 0.0
        rows.append(StrategyRow(
            strategy=strategy.name,
            items=len(dataset),
            correct=sum(o.consensus == gold[o.query_id] for o in outcomes),
            failures=len(failures),
            total_input_tokens=sum(o.measured_input_tokens for o in outcomes),
            history_tokens=sum(o.history_tokens for o in outcomes),
            wall_time_s=sum(o.wall_time for o in outcomes),
            per_round_input_tokens=per_round,
            avg_solution_length=L,
            predicted_history_tokens=_predicted_history(strategy, config, L, outcomes),
        ))
        all_outcomes[strategy.name] = outcomes
        all_failures[strategy.name] = failures
    return BenchmarkReport(dataset.name, config, rows, all_outcomes, all_failures)


# -- convergence -----------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceResult:
    agent_counts: tuple[int, ...]
    accuracy: dict[int, list[float]]  # K -> per-round consensus accuracy (%)

    @property
    def spread(self) -> list[float]:
        rounds = len(next(iter(self.accuracy.values())))
        return [max(a[r] for a in self.accuracy.values()) - min(a[r] for a in self.accuracy.values())
                for r in range(rounds)]


def round_correctness(r: int, start: float, limit: float, rate: float) -> float:
    """Per-agent probability of being right in round r, rising geometrically toward ``limit``."""
    return limit - (limit - start) * rate ** (r - 1)


def convergence_study(
    agent_counts: Sequence[int] = tuple(range(2, 9)),
    num_rounds: int = 5,
    items: int = 400,
    *,
    start: float = 0.75,
    limit: float = 0.97,
    rate: float = 0.4,
    seed: int = 0,
) -> ConvergenceResult:
    """Consensus accuracy per round for several team sizes, with improving mock agents.

    Each (item, agent) pair draws one uniform shared by every round and every team
    size; the agent is right in round r iff the draw is below the round's
    correctness probability, so an agent that is right stays right. Wrong agents
    all give the same wrong answer, the hardest case for the vote.
    """
    rng = np.random.default_rng(seed)
    draws = rng.random((items, max(agent_counts)))
    accuracy: dict[int, list[float]] = {}
    for K in agent_counts:
        per_round = []
        for r in range(1, num_rounds + 1):
            p = round_correctness(r, start, limit, rate)
            right = 0
            for row in draws[:, :K]:
                votes = [(i + 1, "gold" if u < p else "wrong") for i, u in enumerate(row)]
                right += majority_vote(votes) == "gold"
            per_round.append(100.0 * right / items)
        accuracy[K] = per_round
    return ConvergenceResult(tuple(agent_counts), accuracy)


# -- config files --------------------------------------------------------------------------

@dataclass(frozen=True)
class BackendSettings:
    kind: str = "mock"
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"
    mock_script: str = ""
    image_token_charge: int = 256
    max_attempts: int = 3
    timeout_s: float = 120.0
    parallelism: int = 4


@dataclass(frozen=True)
class ExperimentConfig:
    debate: DebateConfig
    strategy: StrategyConfig
    theory: TheoryParams
    backend: BackendSettings


def _coerce(raw: str, default):
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default is None:
        raw = raw.strip()
        if raw.lower() in ("", "none"):
            return None
        return int(raw) if raw.lstrip("-").isdigit() else raw
    return raw


def _section(parser: configparser.ConfigParser, name: str, cls, required: dict | None = None):
    defaults = {f.name: f.default for f in fields(cls) if f.init}
    defaults.update(required or {})
    values = dict(defaults)
    if parser.has_section(name):
        for key, raw in parser.items(name):
            if key not in defaults:
                raise ValueError(f"[{name}] unknown key {key!r}")
            values[key] = _coerce(raw, defaults[key])
    return cls(**values)


def load_config(path: str | Path | None = None, text: str | None = None) -> ExperimentConfig:
    """INI file with [debate], [strategy], [theory] and [backend] sections; every key is optional."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys such as K are case-sensitive
    if path is not None:
        if not parser.read(path):
            raise FileNotFoundError(path)
    elif text is not None:
        parser.read_string(text)
    unknown = set(parser.sections()) - {"debate", "strategy", "theory", "backend"}
    if unknown:
        raise ValueError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    debate = _section(parser, "debate", DebateConfig, {"num_agents": 3, "num_rounds": 5})
    strategy = _section(parser, "strategy", StrategyConfig)
    theory = _section(parser, "theory", TheoryParams)
    backend = _section(parser, "backend", BackendSettings)
    if strategy.vision_tokens_per_image is None:
        object.__setattr__(strategy, "vision_tokens_per_image", vision_token_count(strategy.render_resolution))
    return ExperimentConfig(debate, strategy, theory, backend)


def reduction_percent(value: float, baseline: float) -> float:
    return 100.0 * (1.0 - value / baseline) if baseline else math.nan
