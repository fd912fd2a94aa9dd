"""Tool-augmented conversational recommender agent.

A chat LLM plans a complete tool-call sequence per turn (plan-first), domain
tools execute it over a shared candidate bus, a critic LLM reviews the result
and can trigger a rechain, and an evaluation harness scores the whole loop
with simulated users, one-turn tasks, and statistical baselines.
"""

from .catalog import Catalog, Interaction, Item, execute_sql, ingest_catalog, split_leave_one_out
from .errors import (
    ConfigError,
    IngestError,
    InputError,
    MissingPlaceholder,
    ModelCacheError,
    PlanParseError,
    PolicyError,
    ProviderError,
    RecAgentError,
    SqlSyntaxError,
    ToolError,
    TurnError,
)
from .gateway import ChatProvider, GenParams, HttpChatProvider, ScriptedProvider
from .memory import CandidateBus, DialogueContext, ToolCallRecord, UserProfile, reset_bus
from .planner import DemoStore, Plan, PlanStep, embed_text, parse_plan, validate_plan
from .recmodels import RankRequest, SimilarityModel, build_itemcf, rank_candidates
from .toolkit import ToolRegistry, default_registry
from .turn import Judgment, Session, SessionSettings, TurnResult, run_turn

__version__ = "0.1.0"

__all__ = [
    "Catalog",
    "Item",
    "Interaction",
    "ingest_catalog",
    "execute_sql",
    "split_leave_one_out",
    "SimilarityModel",
    "build_itemcf",
    "rank_candidates",
    "RankRequest",
    "CandidateBus",
    "ToolCallRecord",
    "UserProfile",
    "DialogueContext",
    "reset_bus",
    "ChatProvider",
    "ScriptedProvider",
    "HttpChatProvider",
    "GenParams",
    "DemoStore",
    "Plan",
    "PlanStep",
    "embed_text",
    "parse_plan",
    "validate_plan",
    "ToolRegistry",
    "default_registry",
    "Session",
    "SessionSettings",
    "TurnResult",
    "Judgment",
    "run_turn",
    "RecAgentError",
    "IngestError",
    "PolicyError",
    "SqlSyntaxError",
    "InputError",
    "ToolError",
    "ProviderError",
    "MissingPlaceholder",
    "PlanParseError",
    "TurnError",
    "ModelCacheError",
    "ConfigError",
]
