"""Clients for the external model services the pipeline delegates to.

Five provider roles exist: chat/LLM, detection, segmentation, verification
(chat-style) and text embedding. Each has an HTTP implementation speaking a
small JSON protocol and a stub implementation used by tests and the fixture
pipeline. Stubs are deterministic, so whole pipeline runs are reproducible.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import requests

from .errors import ProviderMalformed, ProviderUnavailable
from .graph import Box


@dataclass
class ProviderConfig:
    endpoint: str = ""
    model: str = ""
    api_key: str = ""
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.25
    few_shot_set: str = "default"
    dimension: int = 0
    unit_norm: bool = True

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def _post_json(config: ProviderConfig, payload: dict, sleep: Callable[[float], None] = time.sleep):
    """POST with exponential backoff; returns (parsed json, attempts)."""
    attempts = 0
    last_err: Optional[Exception] = None
    headers = {"Authorization": f"Bearer {config.api_key}"} if config.api_key else None
    while attempts <= config.max_retries:
        attempts += 1
        try:
            resp = requests.post(config.endpoint, json=payload, timeout=config.timeout,
                                 headers=headers)
            if resp.status_code >= 500:
                raise requests.RequestException(f"server error {resp.status_code}")
            resp.raise_for_status()
            return resp.json(), attempts
        except (requests.RequestException, json.JSONDecodeError) as exc:
            last_err = exc
            if attempts <= config.max_retries:
                sleep(config.backoff * (2 ** (attempts - 1)))
    raise ProviderUnavailable(f"{config.endpoint}: {last_err}", attempts=attempts)


# ----------------------------------------------------------------- chat / LLM

class ChatProvider:
    """Protocol: complete(prompt) -> response text. `attempts` records retries."""

    attempts: int = 0

    def complete(self, prompt: str, max_tokens: int = 1024) -> str:
        raise NotImplementedError


class HttpChatProvider(ChatProvider):
    """POST {model, prompt, max_tokens} -> {text}."""

    def __init__(self, config: ProviderConfig, sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self._sleep = sleep
        self.attempts = 0

    def complete(self, prompt: str, max_tokens: int = 1024) -> str:
        payload = {"model": self.config.model, "prompt": prompt, "max_tokens": max_tokens}
        body, self.attempts = _post_json(self.config, payload, self._sleep)
        if not isinstance(body, dict) or "text" not in body:
            raise ProviderMalformed("chat response missing 'text' field", raw=repr(body))
        return body["text"]


class StubChatProvider(ChatProvider):
    """Canned responses matched by substring.

    Rules are (match, text) pairs; the first rule whose `match` occurs in the
    prompt wins. A fixture directory may supply rules as responses.jsonl with
    {"match": ..., "text": ...} records.
    """

    def __init__(self, rules: Optional[Sequence[tuple[str, str]]] = None,
                 default: Optional[str] = None):
        self.rules = list(rules or [])
        self.default = default
        self.attempts = 0
        self.calls: list[str] = []

    @classmethod
    def from_fixture_dir(cls, path: str) -> "StubChatProvider":
        rules = []
        default = None
        fname = os.path.join(path, "responses.jsonl")
        with open(fname, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec.get("match") is None:
                    default = rec["text"]
                else:
                    rules.append((rec["match"], rec["text"]))
        return cls(rules, default=default)

    def complete(self, prompt: str, max_tokens: int = 1024) -> str:
        self.attempts = 1
        self.calls.append(prompt)
        for match, text in self.rules:
            if match in prompt:
                return text
        if self.default is not None:
            return self.default
        raise ProviderUnavailable("stub has no response for this prompt", attempts=1)


class FlakyProvider(ChatProvider):
    """Fault-injection wrapper: fail `failures` times, then delegate."""

    def __init__(self, inner: ChatProvider, failures: int):
        self.inner = inner
        self.failures = failures
        self.attempts = 0

    def complete(self, prompt: str, max_tokens: int = 1024) -> str:
        self.attempts += 1
        if self.attempts <= self.failures:
            raise ProviderUnavailable("injected transport failure", attempts=self.attempts)
        return self.inner.complete(prompt, max_tokens)


def complete_with_retries(provider: ChatProvider, prompt: str, max_retries: int = 3,
                          backoff: float = 0.25, max_tokens: int = 1024,
                          sleep: Callable[[float], None] = time.sleep) -> tuple[str, int]:
    """Call a chat provider, retrying ProviderUnavailable with backoff.

    Returns (text, attempts). HTTP providers already retry at transport level;
    this wrapper covers stub/custom providers that surface failures directly.
    """
    attempts = 0
    while True:
        attempts += 1
        try:
            return provider.complete(prompt, max_tokens), attempts
        except ProviderUnavailable as exc:
            if attempts > max_retries:
                raise ProviderUnavailable(str(exc), attempts=attempts) from exc
            sleep(backoff * (2 ** (attempts - 1)))


# ------------------------------------------------------------------ detection

class DetectionProvider:
    def detect(self, image_uri: str, labels: Sequence[str]) -> list[dict]:
        """Returns [{label, x, y, w, h, score}, ...]."""
        raise NotImplementedError


class HttpDetectionProvider(DetectionProvider):
    """POST {image_uri, labels[]} -> {boxes: [{label,x,y,w,h,score}]}."""

    def __init__(self, config: ProviderConfig, sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self._sleep = sleep

    def detect(self, image_uri: str, labels: Sequence[str]) -> list[dict]:
        body, _ = _post_json(self.config, {"image_uri": image_uri, "labels": list(labels)},
                             self._sleep)
        if not isinstance(body, dict) or not isinstance(body.get("boxes"), list):
            raise ProviderMalformed("detection response missing 'boxes' list", raw=repr(body))
        return body["boxes"]


class StubDetectionProvider(DetectionProvider):
    def __init__(self, boxes_by_image: dict[str, list[dict]]):
        self.boxes_by_image = boxes_by_image

    def detect(self, image_uri: str, labels: Sequence[str]) -> list[dict]:
        wanted = {l.lower() for l in labels}
        return [b for b in self.boxes_by_image.get(image_uri, [])
                if b.get("label", "").lower() in wanted]


# --------------------------------------------------------------- segmentation

class SegmentationProvider:
    def segment(self, image_uri: str, box: Box) -> tuple[list[int], int, int]:
        """Returns (rle counts, width, height) for the mask prompted by box."""
        raise NotImplementedError


class HttpSegmentationProvider(SegmentationProvider):
    """POST {image_uri, box} -> {rle, width, height}."""

    def __init__(self, config: ProviderConfig, sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self._sleep = sleep

    def segment(self, image_uri: str, box: Box) -> tuple[list[int], int, int]:
        payload = {"image_uri": image_uri,
                   "box": {"x": box.x, "y": box.y, "w": box.w, "h": box.h}}
        body, _ = _post_json(self.config, payload, self._sleep)
        try:
            return list(body["rle"]), int(body["width"]), int(body["height"])
        except (TypeError, KeyError, ValueError) as exc:
            raise ProviderMalformed(f"segmentation response malformed: {exc}",
                                    raw=repr(body)) from exc


class EchoBoxSegmenter(SegmentationProvider):
    """Stub returning the prompt box as a filled rectangle on the image canvas."""

    def __init__(self, sizes_by_image: dict[str, tuple[int, int]]):
        self.sizes_by_image = sizes_by_image

    def segment(self, image_uri: str, box: Box) -> tuple[list[int], int, int]:
        from .rle import box_to_full_mask, encode_mask
        width, height = self.sizes_by_image[image_uri]
        rle = encode_mask(box_to_full_mask(box, width, height))
        return list(rle.counts), width, height


# ------------------------------------------------------------------ embedding

class EmbeddingProvider:
    dimension: int = 0

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError


class HttpEmbeddingProvider(EmbeddingProvider):
    """POST {texts[]} -> {vectors[][]}; normalizes unless config says unit-norm."""

    def __init__(self, config: ProviderConfig, sleep: Callable[[float], None] = time.sleep):
        if config.dimension <= 0:
            raise ValueError("embedding provider config needs dimension > 0")
        self.config = config
        self.dimension = config.dimension
        self._sleep = sleep

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        body, _ = _post_json(self.config, {"texts": list(texts)}, self._sleep)
        try:
            vecs = np.asarray(body["vectors"], dtype=np.float64)
        except (TypeError, KeyError, ValueError) as exc:
            raise ProviderMalformed(f"embedding response malformed: {exc}",
                                    raw=repr(body)) from exc
        if vecs.shape != (len(texts), self.dimension):
            raise ProviderMalformed(
                f"expected {(len(texts), self.dimension)} vectors, got {vecs.shape}")
        if not self.config.unit_norm:
            vecs = unit_normalize(vecs)
        return vecs


class StubEmbeddingProvider(EmbeddingProvider):
    """Deterministic embeddings: fixed vectors where given, hashed otherwise.

    Unknown texts get a unit vector seeded from the text digest, so any text
    embeds reproducibly across runs and processes.
    """

    def __init__(self, dimension: int = 8,
                 fixed: Optional[dict[str, Sequence[float]]] = None):
        self.dimension = dimension
        self.fixed = {k: np.asarray(v, dtype=np.float64) for k, v in (fixed or {}).items()}

    def _vector_for(self, text: str) -> np.ndarray:
        if text in self.fixed:
            return self.fixed[text]
        seed = int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(),
                              "big")
        rng = np.random.default_rng(seed)
        return rng.standard_normal(self.dimension)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.stack([self._vector_for(t) for t in texts]) if texts else \
            np.zeros((0, self.dimension))
        return unit_normalize(out)


def unit_normalize(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    return vectors / np.where(norms == 0, 1.0, norms)
