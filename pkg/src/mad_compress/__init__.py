"""Multi-agent debate whose shared history can be passed as text, as a summary, or as rendered page images."""

from .debate import DebateConfig, DebateState, Query, majority_vote, total_cost
from .engine import DebateAborted, run_debate
from .memory import StrategyConfig, make_strategy, vision_token_count

__version__ = "0.1.0"

__all__ = [
    "DebateAborted",
    "DebateConfig",
    "DebateState",
    "Query",
    "StrategyConfig",
    "make_strategy",
    "majority_vote",
    "run_debate",
    "total_cost",
    "vision_token_count",
]
