"""Assembly of the shared runtime from a service config: catalog, similarity
model, tool registry, demonstration store, and the chat provider."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from .catalog import Catalog, ingest_catalog
from .config import PROVIDER_HTTP, ServiceConfig
from .demogen import load_synthetic_dialogues
from .fixtures import games_toy_paths, seed_demos_path, synthetic_dialogues_path
from .gateway import ChatProvider, HttpChatProvider, ScriptedProvider
from .planner import DemoStore
from .recmodels import SimilarityModel, build_itemcf
from .toolkit import ToolRegistry, default_registry
from .turn import Session, SessionSettings

logger = logging.getLogger(__name__)


@dataclass
class Runtime:
    config: ServiceConfig
    catalog: Catalog
    model: SimilarityModel
    registry: ToolRegistry
    demo_store: DemoStore
    provider: ChatProvider

    def new_session(self) -> Session:
        settings = SessionSettings(
            item_noun=self.config.item_noun,
            max_rechains=self.config.max_rechains,
            char_budget=self.config.char_budget,
        )
        return Session(
            catalog=self.catalog,
            model=self.model,
            registry=self.registry,
            demo_store=self.demo_store,
            actor_provider=self.provider,
            settings=settings,
        )

    def synthetic_dialogues(self) -> list[dict]:
        return load_synthetic_dialogues(synthetic_dialogues_path())


def make_provider(config: ServiceConfig) -> ChatProvider:
    if config.provider.type == PROVIDER_HTTP:
        return HttpChatProvider(
            base_url=config.provider.base_url,
            model=config.provider.model,
            timeout=config.provider.timeout,
        )
    if not config.provider.script_path:
        # offline commands (ingest, baselines, export) never call the LLM;
        # an empty script fails loudly if anything tries to
        return ScriptedProvider([])
    return ScriptedProvider.from_path(config.provider.script_path)


def build_runtime(config: ServiceConfig) -> Runtime:
    config.validate()
    items_csv, interactions_csv = config.items_csv, config.interactions_csv
    if not items_csv or not interactions_csv:
        logger.info("no catalog paths configured; using the packaged games-toy fixture")
        items_csv, interactions_csv = games_toy_paths()
    catalog = ingest_catalog(items_csv, interactions_csv)

    if config.model_cache and Path(config.model_cache).exists():
        model = SimilarityModel.load(config.model_cache, catalog.item_count)
    else:
        model = build_itemcf(catalog.splits.train, catalog.item_count)

    demo_path = config.demo_store_path or seed_demos_path()
    demo_store = DemoStore.load(demo_path)

    return Runtime(
        config=config,
        catalog=catalog,
        model=model,
        registry=default_registry(),
        demo_store=demo_store,
        provider=make_provider(config),
    )
