"""Multimodal ingestion: pluggable captioners turn media into text chunks.

The `mock` endpoint is a pure function of the MediaRef so every downstream
test is deterministic; real deployments register an HTTP captioner speaking
a chat-completion-style contract (request: {model, instruction, media_uri |
media_b64, modality}; response: {"text": ...}).
"""

from __future__ import annotations

import base64
import os
import threading
import time
from dataclasses import dataclass
from pathlib import PurePosixPath
from typing import Optional
from urllib.parse import urlparse

import httpx

from .chunk_store import ChunkStore
from .errors import (
    CaptionerUnavailable,
    ConfigInvalid,
    EmptyCaption,
    ModalityMismatch,
)
from .types import ChunkId, MediaRef, Modality, SystemClock

MOCK_ENDPOINT = "mock"
CAPTION_INSTRUCTION = "Describe the attached media in one plain-text paragraph."
API_KEY_ENV = "MEMVERSE_CAPTIONER_KEY"


@dataclass(frozen=True)
class CaptionerConfig:
    modality: Modality
    endpoint: str = MOCK_ENDPOINT
    model_name: str = "mock-captioner"
    timeout_ms: int = 30000
    max_retries: int = 2
    frame_sample_count: int = 4  # video only

    def validate(self) -> None:
        if self.timeout_ms < 1:
            raise ConfigInvalid("timeout_ms must be >= 1")
        if self.max_retries < 0:
            raise ConfigInvalid("max_retries must be >= 0")
        if self.modality == Modality.VIDEO and self.frame_sample_count < 1:
            raise ConfigInvalid("frame_sample_count must be >= 1 for video")
        if not self.endpoint:
            raise ConfigInvalid("endpoint must be non-empty")


@dataclass(frozen=True)
class Description:
    text: str
    source: MediaRef
    captioner: str
    produced_at: int


def _uri_stem(uri: str) -> str:
    path = urlparse(uri).path or uri
    return PurePosixPath(path).stem or path


def mock_caption(media: MediaRef, config: CaptionerConfig) -> str:
    stem = _uri_stem(media.uri)
    if media.modality == Modality.IMAGE:
        return f"image: {stem}"
    if media.modality == Modality.AUDIO:
        return f"audio transcript: {stem}"
    if media.modality == Modality.VIDEO:
        return f"video: {stem} [frames={config.frame_sample_count}]"
    return f"text: {stem}"


class CaptionerRegistry:
    """Per-modality captioner table; registration replaces atomically."""

    def __init__(self, clock=None):
        self._clock = clock or SystemClock()
        self._lock = threading.Lock()
        self._configs: dict[Modality, CaptionerConfig] = {}

    def register_captioner(self, config: CaptionerConfig) -> None:
        config.validate()
        with self._lock:
            self._configs[config.modality] = config

    def config_for(self, modality: Modality) -> Optional[CaptionerConfig]:
        with self._lock:
            return self._configs.get(modality)

    def describe(self, media: MediaRef, config: Optional[CaptionerConfig] = None) -> Description:
        if config is None:
            config = self.config_for(media.modality)
            if config is None:
                raise CaptionerUnavailable(f"no captioner registered for {media.modality.value}")
        if config.modality != media.modality:
            raise ModalityMismatch(
                f"captioner handles {config.modality.value}, media is {media.modality.value}")
        if config.endpoint == MOCK_ENDPOINT:
            text = mock_caption(media, config)
        else:
            text = self._remote_caption(media, config)
        if not text.strip():
            raise EmptyCaption(f"captioner returned empty text for {media.uri}")
        return Description(text=text, source=media, captioner=config.model_name,
                           produced_at=self._clock.now_ms())

    def _remote_caption(self, media: MediaRef, config: CaptionerConfig) -> str:
        headers = {}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        if media.modality == Modality.VIDEO:
            # one caption call per uniformly sampled frame, joined with " | "
            parts = [
                self._remote_call(media, config, headers,
                                  extra={"frame_index": i,
                                         "frame_count": config.frame_sample_count})
                for i in range(config.frame_sample_count)
            ]
            return " | ".join(parts)
        return self._remote_call(media, config, headers)

    def _remote_call(self, media: MediaRef, config: CaptionerConfig,
                     headers: dict, extra: Optional[dict] = None) -> str:
        body = {
            "model": config.model_name,
            "instruction": CAPTION_INSTRUCTION,
            "modality": media.modality.value,
        }
        parsed = urlparse(media.uri)
        if parsed.scheme == "file" and os.path.exists(parsed.path):
            with open(parsed.path, "rb") as f:
                body["media_b64"] = base64.b64encode(f.read()).decode("ascii")
        else:
            body["media_uri"] = media.uri
        if extra:
            body.update(extra)
        last_exc = None
        for attempt in range(config.max_retries + 1):
            try:
                resp = httpx.post(config.endpoint, json=body, headers=headers,
                                  timeout=config.timeout_ms / 1000.0)
                resp.raise_for_status()
                payload = resp.json()
                if "text" not in payload:
                    raise EmptyCaption("captioner response missing 'text' field")
                return str(payload["text"])
            except (httpx.HTTPError, OSError, ValueError) as exc:
                last_exc = exc
                if attempt < config.max_retries:
                    time.sleep(0.25 * (attempt + 1))
        raise CaptionerUnavailable(f"captioner failed after retries: {last_exc}")

    def ingest_media(self, store: ChunkStore, media: MediaRef,
                     session_id: str, turn_index: int) -> ChunkId:
        """Caption the media and persist it as a chunk carrying the MediaRef."""
        description = self.describe(media)
        return store.put_chunk(description.text, session_id, turn_index, media=[media])
