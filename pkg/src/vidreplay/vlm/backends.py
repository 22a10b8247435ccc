"""VLM backends: a scripted one for deterministic runs and an HTTP chat-completion client."""

from __future__ import annotations

import base64
import json
import math
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from ..errors import BackendError, InputError


@dataclass
class ScriptRule:
    match: str
    response: str
    input_tokens: int = 0
    output_tokens: int = 0
    repeat: bool = False
    probability: float | None = None
    used: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> "ScriptRule":
        if "match" not in data or "response" not in data:
            raise InputError(f"script rule needs 'match' and 'response': {data!r}")
        return cls(
            match=str(data["match"]),
            response=str(data["response"]),
            input_tokens=int(data.get("input_tokens", 0)),
            output_tokens=int(data.get("output_tokens", 0)),
            repeat=bool(data.get("repeat", False)),
            probability=data.get("probability"),
        )


class ScriptedVlmBackend:
    """Answers from a rule list in call order.

    Each call takes the first rule whose ``match`` substring occurs in the
    prompt and which is unused (or marked ``repeat``). One-shot rules are
    consumed. No matching rule is a backend failure.
    """

    def __init__(self, rules: Sequence[dict | ScriptRule]):
        self.rules = [r if isinstance(r, ScriptRule) else ScriptRule.from_dict(r) for r in rules]
        self.calls: list[dict] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ScriptedVlmBackend":
        data = json.loads(Path(path).read_text())
        return cls(data["rules"] if isinstance(data, dict) else data)

    def complete(self, images: Sequence[np.ndarray], text: str, max_tokens: int):
        with self._lock:
            for rule in self.rules:
                if (rule.repeat or not rule.used) and rule.match in text:
                    rule.used = True
                    self.calls.append({"match": rule.match, "response": rule.response, "images": len(images)})
                    return rule.response, (rule.input_tokens, rule.output_tokens), rule.probability
        raise BackendError("scripted VLM has no rule for this prompt", {"prompt_head": text[:120]})

    @property
    def unused(self) -> list[ScriptRule]:
        return [r for r in self.rules if not r.used and not r.repeat]


def encode_png(pixels: np.ndarray) -> str:
    ok, buf = cv2.imencode(".png", cv2.cvtColor(np.ascontiguousarray(pixels), cv2.COLOR_RGB2BGR))
    if not ok:
        raise BackendError("could not encode image as PNG")
    return base64.b64encode(buf.tobytes()).decode("ascii")


class HttpChatBackend:
    """Chat-completion endpoint that accepts base64 image parts.

    The API key is read from ``api_key_env`` (default ``VIDREPLAY_API_KEY``).
    When the service returns token log-probabilities, the probability of the
    first answer token is reported as the confidence.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "VIDREPLAY_API_KEY",
        timeout: float = 120.0,
        transport=None,
    ):
        import httpx

        key = os.environ.get(api_key_env)
        if not key:
            raise InputError(f"environment variable {api_key_env} is not set")
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.client = httpx.Client(
            timeout=timeout, headers={"Authorization": f"Bearer {key}"}, transport=transport
        )

    def payload(self, images: Sequence[np.ndarray], text: str, max_tokens: int) -> dict:
        content = [{"type": "text", "text": text}]
        for pixels in images:
            content.append({"type": "image_url", "image_url": {"url": f"data:image/png;base64,{encode_png(pixels)}"}})
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": max_tokens,
            "temperature": 0,
            "logprobs": True,
        }

    def complete(self, images: Sequence[np.ndarray], text: str, max_tokens: int):
        try:
            resp = self.client.post(f"{self.endpoint}/chat/completions", json=self.payload(images, text, max_tokens))
            resp.raise_for_status()
            body = resp.json()
            choice = body["choices"][0]
            answer = choice["message"]["content"] or ""
            usage = body.get("usage", {})
        except Exception as exc:
            raise BackendError(f"chat endpoint {self.endpoint} failed", {"error": repr(exc)}) from exc
        prob = None
        logprobs = (choice.get("logprobs") or {}).get("content") or []
        if logprobs:
            prob = math.exp(float(logprobs[0]["logprob"]))
        tokens = (int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))
        return answer, tokens, prob
