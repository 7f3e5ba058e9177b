"""Declarative pipeline configuration.

One TOML file holds paths, thresholds, seeds, provider endpoints and stage
toggles. Secrets never live in the file: environment variables override them
at load time (VISKNOW_TOKEN for the review service, VISKNOW_<ROLE>_API_KEY
for provider credentials). The config hash is computed over the file's
parsed content, so it is stable regardless of environment secrets.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Optional

try:
    import tomllib as tomli  # 3.11+
except ModuleNotFoundError:
    import tomli

from .errors import ParseError
from .providers import ProviderConfig

PROVIDER_ROLES = ("llm", "detector", "segmenter", "verifier", "embedder")


@dataclass
class Thresholds:
    score_floor: float = 0.30
    merge_threshold: float = 0.85
    nms_iou: float = 0.5
    sibling_fraction: float = 0.5
    mask_slack: float = 2.0
    spot_check: float = 0.10


@dataclass
class TrainSettings:
    model: str = "rotate"
    dim: int = 64
    lr: float = 0.1
    margin: float = 6.0
    negatives: int = 16
    batch_size: int = 128
    epochs: int = 200
    loss: str = "margin"
    optimizer: str = "adagrad"
    adversarial_temp: float = 1.0


@dataclass
class PipelineConfig:
    kb_dir: str = "kb"
    seed: int = 0
    images_per_category: int = 300
    docs_dir: str = "docs"
    manifest_file: str = ""
    relations_file: str = ""
    static_dir: str = ""
    predictions_file: str = ""
    image_vectors_file: str = ""
    thresholds: Thresholds = field(default_factory=Thresholds)
    train: TrainSettings = field(default_factory=TrainSettings)
    ensemble_k: int = 10
    ensemble_aggregate: str = "mean"
    service_addr: str = "127.0.0.1:8765"
    service_token: str = ""
    stage_toggles: dict[str, bool] = field(default_factory=dict)
    providers: dict[str, dict] = field(default_factory=dict)
    config_hash: str = ""
    source_path: str = ""

    def stage_enabled(self, stage: str) -> bool:
        return self.stage_toggles.get(stage.lower(), True)

    def provider_table(self, role: str) -> dict:
        return dict(self.providers.get(role, {}))

    def provider_config(self, role: str) -> ProviderConfig:
        """ProviderConfig for an HTTP provider role, ignoring stub-only keys."""
        table = self.provider_table(role)
        names = {f.name for f in dataclasses.fields(ProviderConfig)}
        return ProviderConfig(**{k: v for k, v in table.items() if k in names})


def _fill(dc, table: dict):
    for f in dataclasses.fields(dc):
        if f.name in table:
            setattr(dc, f.name, type(getattr(dc, f.name))(table[f.name]))
    return dc


def config_hash_of(data: dict) -> str:
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def load_config(path: str, env: Optional[dict[str, str]] = None) -> PipelineConfig:
    env = os.environ if env is None else env
    try:
        with open(path, "rb") as fh:
            data: dict[str, Any] = tomli.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ParseError(f"config {path} is not valid TOML: {exc}") from exc

    cfg = PipelineConfig(config_hash=config_hash_of(data), source_path=path)
    cfg.kb_dir = str(data.get("kb_dir", cfg.kb_dir))
    cfg.seed = int(data.get("seed", cfg.seed))
    cfg.images_per_category = int(data.get("images_per_category",
                                           cfg.images_per_category))
    paths = data.get("paths", {})
    cfg.docs_dir = str(paths.get("docs", cfg.docs_dir))
    cfg.manifest_file = str(paths.get("manifest", cfg.manifest_file))
    cfg.relations_file = str(paths.get("relations", cfg.relations_file))
    cfg.static_dir = str(paths.get("static", cfg.static_dir))
    cfg.predictions_file = str(paths.get("predictions", cfg.predictions_file))
    cfg.image_vectors_file = str(paths.get("image_vectors", cfg.image_vectors_file))

    _fill(cfg.thresholds, data.get("thresholds", {}))
    _fill(cfg.train, data.get("train", {}))

    ensemble = data.get("ensemble", {})
    cfg.ensemble_k = int(ensemble.get("k", cfg.ensemble_k))
    cfg.ensemble_aggregate = str(ensemble.get("aggregate", cfg.ensemble_aggregate))

    service = data.get("service", {})
    cfg.service_addr = str(service.get("addr", cfg.service_addr))
    cfg.service_token = str(service.get("token", cfg.service_token))

    cfg.stage_toggles = {str(k).lower(): bool(v)
                         for k, v in data.get("stages", {}).items()}
    cfg.providers = {role: dict(table)
                     for role, table in data.get("providers", {}).items()}

    # secrets come from the environment, never from the file
    if env.get("VISKNOW_TOKEN"):
        cfg.service_token = env["VISKNOW_TOKEN"]
    for role in PROVIDER_ROLES:
        key = env.get(f"VISKNOW_{role.upper()}_API_KEY")
        if key:
            cfg.providers.setdefault(role, {})["api_key"] = key
    return cfg
