"""Agent prompt templates for the three history formats."""
from __future__ import annotations

from typing import Literal

from .backend import ChatRequest, ImagePart, Message, Routing, TextPart
from .debate import Query
from .memory import MemoryContext

Template = Literal["vision", "text", "summary"]

TEMPLATE_FOR_KIND = {"full_text": "text", "summary": "summary", "visual": "vision"}

VISION_HEADER = "Read the debate history in the image carefully."

_VISION_INSTRUCTIONS = (
    "Instruction:\n"
    "1. The image shows solutions from {k} agents in an optimized Grid Layout.\n"
    "2. Note the 'Agent I: X' in each agent's header.\n"
    "3. Quote the specific line or calculation from the image that contains an error (if any).\n"
    "4. Explain why it is wrong and correct it.\n"
    "5. Then solve the problem yourself step-by-step.\n"
    "6. Provide your final numerical answer in \\boxed{{number}}."
)

_TEXT_INSTRUCTIONS = (
    "Instruction:\n"
    "1. Critically analyze the previous solutions (if any).\n"
    "2. Solve the problem step-by-step.\n"
    "3. Put your final answer in \\boxed{}."
)

SUMMARIZER_PROMPT = (
    "Summarize the debate below. Keep each agent's key arguments and final answers, "
    "and state where the agents agree and where they disagree."
)


def text_prompt(question: str, history: str) -> str:
    return (
        "Here are the solutions from previous rounds:\n"
        f"{history}\n\n"
        f"Problem: {question}\n\n"
        f"{_TEXT_INSTRUCTIONS}"
    )


def summary_prompt(question: str, summary: str) -> str:
    return (
        "Here is a summary of previous rounds:\n"
        f"{summary}\n\n"
        f"Problem: {question}\n\n"
        f"{_TEXT_INSTRUCTIONS}"
    )


def vision_trailer(question: str, num_agents: int) -> str:
    return f"Problem: {question}\n\n" + _VISION_INSTRUCTIONS.format(k=num_agents)


def build_prompt(
    template: Template,
    query: Query,
    context: MemoryContext,
    *,
    num_agents: int = 3,
    agent_index: int = 1,
    round_: int = 1,
    model: str = "default",
    max_tokens: int = 1024,
    temperature: float = 0.0,
    seed: int | None = None,
) -> ChatRequest:
    """Agent request for one debate slot, with the history carried in the template's format."""
    if TEMPLATE_FOR_KIND[context.kind] != template:
        raise ValueError(f"template {template!r} cannot carry a {context.kind!r} context")
    if template == "text":
        parts: list = [TextPart(text_prompt(query.text, context.text_payload or ""))]
    elif template == "summary":
        parts = [TextPart(summary_prompt(query.text, context.text_payload or ""))]
    else:
        parts = [TextPart(VISION_HEADER)]
        parts += [ImagePart.from_png(page.to_png()) for page in context.image_pages or ()]
        parts.append(TextPart(vision_trailer(query.text, num_agents)))
    return ChatRequest(
        model=model,
        messages=(Message("user", tuple(parts)),),
        max_tokens=max_tokens,
        temperature=temperature,
        seed=seed,
        routing=Routing(query.id, agent_index, round_),
    )


def summarizer_request(
    query: Query,
    transcript: str,
    round_: int,
    *,
    instruction: str = SUMMARIZER_PROMPT,
    model: str = "default",
    max_tokens: int = 1200,
    seed: int | None = None,
) -> ChatRequest:
    """One summarisation call per round; routed as agent 0."""
    text = f"{instruction}\n\nProblem: {query.text}\n\nDebate so far:\n{transcript}"
    return ChatRequest(
        model=model,
        messages=(Message("user", (TextPart(text),)),),
        max_tokens=max_tokens,
        temperature=0.0,
        seed=seed,
        routing=Routing(query.id, 0, round_),
    )
