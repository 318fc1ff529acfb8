"""Client for the distilled parametric-memory endpoint.

Contract: POST {endpoint}/generate with {"prompt": ...} returns
{"text": ..., "trained_round": int}.
"""

from __future__ import annotations

import httpx

from ..errors import EndpointUnavailable


class ParametricClient:
    def __init__(self, endpoint: str, timeout_s: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout_s = timeout_s

    def generate(self, prompt: str) -> tuple[str, int]:
        try:
            resp = httpx.post(f"{self.endpoint}/generate", json={"prompt": prompt},
                              timeout=self.timeout_s)
            resp.raise_for_status()
            payload = resp.json()
            return str(payload["text"]), int(payload.get("trained_round", 0))
        except (httpx.HTTPError, OSError, KeyError, ValueError) as exc:
            raise EndpointUnavailable(f"parametric endpoint failed: {exc}")

    __call__ = generate
