"""Debate-memory strategies: what each agent sees of the history at round r.

All three strategies share one interface: ``compress(state, query, backend)``
returns a :class:`MemoryContext` that is built once per round and shared
read-only by every agent request of that round.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal, Protocol

from .debate import DebateState, Query
from .render import RenderedImage, RenderLayout, render_pages_for
from .tokenizer import DEFAULT_TOKENIZER, Tokenizer

if TYPE_CHECKING:
    from .backend import ChatBackend

log = logging.getLogger(__name__)

ContextKind = Literal["full_text", "summary", "visual"]

# Measured vision-token counts per square input resolution.
RESOLUTION_TOKENS = {224: 16, 336: 36, 448: 49, 512: 64, 1024: 256, 1536: 576, 2048: 1024}


def vision_token_count(resolution: int) -> int:
    """Vision tokens produced for one square image of side ``resolution``."""
    if resolution in RESOLUTION_TOKENS:
        return RESOLUTION_TOKENS[resolution]
    if resolution > 0 and resolution % 64 == 0:
        return (resolution // 64) ** 2
    raise ValueError(
        f"unsupported resolution {resolution}; use one of {sorted(RESOLUTION_TOKENS)} or a multiple of 64"
    )


@dataclass(frozen=True)
class MemoryContext:
    kind: ContextKind
    context_tokens: int
    source_round: int
    text_payload: str | None = None
    image_pages: tuple[RenderedImage, ...] | None = None
    # Tokens spent producing the context (the summariser call), not shown to agents.
    overhead_tokens: int = 0
    overhead_latency_ms: float = 0.0
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.context_tokens < 0:
            raise ValueError("context_tokens must be >= 0")
        if self.kind == "visual":
            if self.image_pages is None or self.text_payload is not None:
                raise ValueError("a visual context carries image pages only")
        elif self.text_payload is None or self.image_pages is not None:
            raise ValueError("a text context carries a text payload only")

    @property
    def pages(self) -> int:
        return len(self.image_pages or ())


@dataclass(frozen=True)
class StrategyConfig:
    kind: ContextKind = "visual"
    render_resolution: int = 1024
    summarizer_prompt: str = ""
    vision_tokens_per_image: int | None = None
    max_summary_tokens: int = 1200
    max_pages: int = 8

    def __post_init__(self) -> None:
        if self.kind not in ("full_text", "summary", "visual"):
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        expected = vision_token_count(self.render_resolution)
        if self.vision_tokens_per_image is None:
            object.__setattr__(self, "vision_tokens_per_image", expected)
        elif self.vision_tokens_per_image != expected:
            raise ValueError(
                f"{self.render_resolution}px images yield {expected} vision tokens, "
                f"not {self.vision_tokens_per_image}"
            )


def history_transcript(state: DebateState) -> str:
    """Round-ordered, agent-labelled concatenation of the history."""
    return "\n".join(f"Round {r.round} - Agent {r.agent_index}: {r.text}" for r in state.history)


class MemoryStrategy(Protocol):
    name: str
    template: str

    def compress(self, state: DebateState, query: Query | None = None,
                 backend: "ChatBackend | None" = None) -> MemoryContext: ...


@dataclass
class FullTextStrategy:
    """Every agent reads the complete textual history."""

    tokenizer: Tokenizer = DEFAULT_TOKENIZER
    name: str = field(default="full_text", init=False)
    template: str = field(default="text", init=False)

    def compress(self, state, query=None, backend=None) -> MemoryContext:
        return compress_full_text(state, self.tokenizer)


def compress_full_text(state: DebateState, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> MemoryContext:
    payload = history_transcript(state)
    return MemoryContext("full_text", tokenizer.count(payload), state.current_round, text_payload=payload)


@dataclass
class SummaryStrategy:
    """The full history is re-summarised by the backend before each round's fan-out."""

    config: StrategyConfig = field(default_factory=lambda: StrategyConfig(kind="summary"))
    tokenizer: Tokenizer = DEFAULT_TOKENIZER
    model: str = "default"
    name: str = field(default="summary", init=False)
    template: str = field(default="summary", init=False)

    def compress(self, state, query=None, backend=None) -> MemoryContext:
        return compress_summary(state, backend, query, config=self.config, tokenizer=self.tokenizer,
                                model=self.model)


def compress_summary(
    state: DebateState,
    backend: "ChatBackend",
    query: Query,
    *,
    config: StrategyConfig | None = None,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    model: str = "default",
) -> MemoryContext:
    from .backend import BackendError
    from .prompts import SUMMARIZER_PROMPT, summarizer_request

    if state.is_empty:
        return MemoryContext("summary", 0, state.current_round, text_payload="")
    config = config or StrategyConfig(kind="summary")
    request = summarizer_request(
        query,
        history_transcript(state),
        state.current_round,
        instruction=config.summarizer_prompt or SUMMARIZER_PROMPT,
        model=model,
        max_tokens=config.max_summary_tokens,
    )
    try:
        resp = backend.chat(request)
    except BackendError as exc:
        log.warning("summariser failed at round %d, falling back to full text: %s", state.current_round, exc)
        full = compress_full_text(state, tokenizer)
        return MemoryContext("summary", full.context_tokens, state.current_round,
                             text_payload=full.text_payload, flags=("summary_fallback",))
    return MemoryContext(
        "summary",
        tokenizer.count(resp.text),
        state.current_round,
        text_payload=resp.text,
        overhead_tokens=resp.prompt_tokens,
        overhead_latency_ms=resp.latency_ms,
    )


@dataclass
class VisualStrategy:
    """The history is rendered to fixed-size pages, each worth N vision tokens."""

    config: StrategyConfig = field(default_factory=StrategyConfig)
    name: str = field(default="visual", init=False)
    template: str = field(default="vision", init=False)

    @property
    def layout(self) -> RenderLayout:
        return RenderLayout(canvas=self.config.render_resolution, max_pages=self.config.max_pages)

    def compress(self, state, query=None, backend=None) -> MemoryContext:
        return compress_visual(state, self.layout, self.config.vision_tokens_per_image)


def compress_visual(state: DebateState, layout: RenderLayout | None = None,
                    tokens_per_image: int | None = None) -> MemoryContext:
    layout = layout or RenderLayout()
    n = tokens_per_image if tokens_per_image is not None else vision_token_count(layout.canvas)
    pages = tuple(render_pages_for(state, layout))
    flags = ("multi_page",) if len(pages) > 1 else ()
    return MemoryContext("visual", len(pages) * n, state.current_round, image_pages=pages, flags=flags)


def make_strategy(config: StrategyConfig, tokenizer: Tokenizer = DEFAULT_TOKENIZER,
                  model: str = "default") -> MemoryStrategy:
    if config.kind == "full_text":
        return FullTextStrategy(tokenizer)
    if config.kind == "summary":
        return SummaryStrategy(config, tokenizer, model)
    return VisualStrategy(config)


STRATEGY_ALIASES = {"text": "full_text", "full_text": "full_text", "summary": "summary", "visual": "visual"}
