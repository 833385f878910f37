"""Model-role backends: summarizer, image generator, captioner, embedder, asker.

Two interchangeable implementations sit behind one facade:

* toy — pure functions over aspect vectors; bit-identical on every call,
  which is what the replay and acceptance tests lean on.
* remote — JSON-over-HTTP against a chat-completions-style service
  (`POST /chat/completions`, `/images`, `/embeddings`). Any transport or
  protocol failure surfaces as BackendUnavailable; callers treat that as
  "round did not happen".
"""

from __future__ import annotations

import base64
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

import httpx

from .core import (
    AspectSchema,
    AspectVector,
    CaptionSet,
    DialogueMemory,
    ImageRecord,
    PromptRecord,
    ReflexError,
)
from .toyworld import ToyWorldConfig, toy_generate

KIND_TOY = "toy"
KIND_REMOTE = "remote"

DEFAULT_IMAGE_SIZE = "512x512"

_SUMMARIZE_SYSTEM = (
    "You condense an ongoing dialogue about a desired image into a single "
    "concise image-generation prompt. Reply with the prompt text only."
)
_CAPTION_SYSTEM = (
    "You describe an image one aspect at a time. Reply with a JSON object "
    "mapping every requested aspect name to a short caption."
)
_QUESTION_SYSTEM = (
    "You help clarify what a user wants in an image. Reply with exactly one "
    "short question about the requested aspect."
)


class BackendError(ReflexError):
    code = "BackendError"


class BackendUnavailableError(BackendError):
    """Network failure, timeout, or a reply the protocol cannot parse."""

    code = "BackendUnavailable"


class EmptyMemoryError(ReflexError):
    code = "EmptyMemory"


class InvalidPromptError(ReflexError):
    code = "InvalidPrompt"


class MissingAspectError(BackendError):
    """Remote caption reply lacked an aspect even after one re-prompt."""

    code = "MissingAspect"


class ConfigError(ReflexError):
    code = "ConfigError"


@dataclass(frozen=True)
class BackendConfig:
    kind: str = KIND_TOY
    base_url: Optional[str] = None
    api_key: Optional[str] = None
    model_name: Optional[str] = None
    timeout_ms: int = 30_000
    persona: Optional[str] = None

    def __post_init__(self):
        if self.kind not in (KIND_TOY, KIND_REMOTE):
            raise ConfigError(f"backend kind must be toy or remote, got {self.kind!r}")
        if self.kind == KIND_REMOTE and not self.base_url:
            raise ConfigError("remote backend requires base_url")
        if self.timeout_ms <= 0:
            raise ConfigError(f"timeout_ms must be positive, got {self.timeout_ms}")

    def to_jsonable(self) -> dict:
        return {
            "kind": self.kind,
            "base_url": self.base_url,
            "api_key": self.api_key,
            "model_name": self.model_name,
            "timeout_ms": self.timeout_ms,
            "persona": self.persona,
        }

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "BackendConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown backend config keys: {sorted(unknown)}")
        return cls(**data)


def apply_env_overrides(data: dict) -> dict:
    """REFLEX_BASE_URL / REFLEX_API_KEY win over file-sourced settings;
    a base URL with no explicit kind flips the config to remote."""
    base_url = os.environ.get("REFLEX_BASE_URL")
    api_key = os.environ.get("REFLEX_API_KEY")
    if base_url:
        data["base_url"] = base_url
        data.setdefault("kind", KIND_REMOTE)
    if api_key:
        data["api_key"] = api_key
    return data


def read_config_file(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return data


def load_backend_config(path: str | Path | None = None) -> BackendConfig:
    """Config file (JSON shaped like BackendConfig) + env overrides."""
    data: dict[str, Any] = read_config_file(path) if path is not None else {}
    return BackendConfig.from_jsonable(apply_env_overrides(data))


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "system" | "user" | "assistant"
    content: str


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    system: Optional[str] = None

    def __post_init__(self):
        if not self.messages:
            raise ReflexError("chat request needs at least one message")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    finish_reason: str = "stop"


class RemoteClient:
    """Thin httpx wrapper for the three remote endpoints.

    Shareable across sessions and threads; the only shared state is the
    connection pool. Pass `transport` to run against a mock in tests.
    """

    def __init__(self, cfg: BackendConfig, transport: httpx.BaseTransport | None = None):
        if cfg.kind != KIND_REMOTE:
            raise ConfigError("RemoteClient requires a remote backend config")
        self.cfg = cfg
        headers = {}
        if cfg.api_key:
            headers["Authorization"] = f"Bearer {cfg.api_key}"
        self._http = httpx.Client(
            base_url=cfg.base_url.rstrip("/"),
            headers=headers,
            timeout=cfg.timeout_ms / 1000.0,
            transport=transport,
        )

    def close(self) -> None:
        self._http.close()

    def _post(self, path: str, payload: dict) -> dict:
        try:
            response = self._http.post(path, json=payload)
            response.raise_for_status()
            return response.json()
        except httpx.HTTPStatusError as exc:
            raise BackendUnavailableError(
                f"{path} returned HTTP {exc.response.status_code}"
            ) from exc
        except httpx.HTTPError as exc:
            raise BackendUnavailableError(f"{path} failed: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise BackendUnavailableError(f"{path} returned non-JSON body") from exc

    def chat(self, request: ChatRequest) -> ChatResponse:
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.extend({"role": m.role, "content": m.content} for m in request.messages)
        body = self._post(
            "/chat/completions",
            {"model": self.cfg.model_name, "messages": messages},
        )
        try:
            choice = body["choices"][0]
            return ChatResponse(
                text=choice["message"]["content"],
                finish_reason=choice.get("finish_reason", "stop"),
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailableError(f"malformed chat reply: {exc}") from exc

    def image(self, prompt_text: str, seed: int, size: str = DEFAULT_IMAGE_SIZE) -> bytes:
        body = self._post("/images", {"prompt": prompt_text, "seed": seed, "size": size})
        try:
            return base64.b64decode(body["image_base64"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendUnavailableError(f"malformed image reply: {exc}") from exc

    def embed(self, texts: list[str]) -> list[list[float]]:
        body = self._post("/embeddings", {"model": self.cfg.model_name, "input": texts})
        try:
            vectors = [item["embedding"] for item in body["data"]]
        except (KeyError, TypeError) as exc:
            raise BackendUnavailableError(f"malformed embeddings reply: {exc}") from exc
        if len(vectors) != len(texts):
            raise BackendUnavailableError(
                f"asked for {len(texts)} embeddings, got {len(vectors)}"
            )
        return vectors


def _tokens(text: str) -> frozenset[str]:
    return frozenset(t.strip() for t in text.split(",") if t.strip())


def toy_similarity(a: str, b: str) -> float:
    """1.0 iff every comma-separated token of `b` occurs in `a`, else 0.0.

    Single-value texts reduce to plain equality; with a stacked prompt as
    `a`, a caption naming one of the stacked values still scores 1, which is
    what keeps already-pinned aspects out of the low-score candidate pool.
    """
    return 1.0 if _tokens(b) <= _tokens(a) else 0.0


class Backends:
    """Dispatch facade bundling one BackendConfig with its collaborators.

    `world` parameterizes toy generation; `policy_sampler`, when set, is
    called with the generation seed and returns the denoising trajectory to
    attach to each toy image (the preference-tuning hook).
    """

    def __init__(
        self,
        cfg: BackendConfig,
        world: ToyWorldConfig | None = None,
        policy_sampler: Callable[[int], Any] | None = None,
        client: RemoteClient | None = None,
    ):
        self.cfg = cfg
        self.world = world if world is not None else ToyWorldConfig()
        self.policy_sampler = policy_sampler
        if cfg.kind == KIND_REMOTE and client is None:
            client = RemoteClient(cfg)
        self.client = client

    @classmethod
    def toy(
        cls,
        world: ToyWorldConfig | None = None,
        policy_sampler: Callable[[int], Any] | None = None,
        persona: Optional[str] = None,
    ) -> "Backends":
        return cls(BackendConfig(kind=KIND_TOY, persona=persona), world, policy_sampler)

    @classmethod
    def remote(cls, cfg: BackendConfig, client: RemoteClient | None = None) -> "Backends":
        return cls(cfg, client=client)

    @property
    def kind(self) -> str:
        return self.cfg.kind

    def close(self) -> None:
        if self.client is not None:
            self.client.close()

    # -- M_S ----------------------------------------------------------------
    def summarize(self, memory: DialogueMemory) -> PromptRecord:
        """Digest the dialogue so far into one prompt (current round's P_t)."""
        user_turns = memory.user_turns()
        if not user_turns:
            raise EmptyMemoryError("cannot summarize a memory with no user turns")
        round_no = user_turns[-1].round
        if self.kind == KIND_TOY:
            merged = AspectVector.empty(self.world.schema)
            for turn in user_turns:
                if turn.structured is not None:
                    merged = merged.merged_with(turn.structured)
            return PromptRecord(round=round_no, text=merged.phrase_stacked(), structured=merged)
        request = ChatRequest(
            messages=tuple(
                ChatMessage(role="user" if t.speaker == "user" else "assistant", content=t.text)
                for t in memory.turns
            ),
            system=_SUMMARIZE_SYSTEM,
        )
        text = self.client.chat(request).text.strip()
        return PromptRecord(round=round_no, text=text, structured=None)

    # -- M_G ----------------------------------------------------------------
    def generate_image(
        self, prompt: PromptRecord, seed: int, forced: frozenset[str] = frozenset()
    ) -> ImageRecord:
        if self.kind == KIND_TOY:
            if prompt.structured is None:
                raise InvalidPromptError("toy generation needs a structured prompt")
            vector = toy_generate(prompt.structured, seed, self.world, forced)
            trajectory = self.policy_sampler(seed) if self.policy_sampler else None
            return ImageRecord(
                round=prompt.round, seed=seed, toy_payload=vector, trajectory=trajectory
            )
        if not prompt.text:
            raise InvalidPromptError("remote generation needs non-empty prompt text")
        data = self.client.image(prompt.text, seed)
        return ImageRecord(round=prompt.round, seed=seed, image_bytes=data)

    # -- M_E ----------------------------------------------------------------
    def caption(self, image: ImageRecord, schema: AspectSchema) -> CaptionSet:
        if self.kind == KIND_TOY:
            vector = image.toy_payload
            if vector is None:
                raise InvalidPromptError("toy captioner needs a toy image payload")
            captions = tuple(
                (aspect, schema.value_name(aspect, vector.slots[i]))
                for i, aspect in enumerate(schema.aspects)
            )
            return CaptionSet(round=image.round, captions=captions, structured=vector)
        return self._remote_caption(image, schema)

    def _remote_caption(self, image: ImageRecord, schema: AspectSchema) -> CaptionSet:
        aspects = list(schema.aspects)
        ask = (
            f"Image {image.bytes_sha256} (seed {image.seed}). "
            f"Caption it for these aspects: {', '.join(aspects)}."
        )
        found: dict[str, str] = {}
        # one re-prompt listing what is still missing, then hard error
        for attempt in range(2):
            reply = self.client.chat(
                ChatRequest(messages=(ChatMessage("user", ask),), system=_CAPTION_SYSTEM)
            )
            found.update(
                {k: str(v) for k, v in _extract_json_object(reply.text).items() if k in aspects}
            )
            missing = [a for a in aspects if a not in found]
            if not missing:
                break
            ask = f"Image {image.bytes_sha256}. Caption only these missing aspects: {', '.join(missing)}."
        else:
            raise MissingAspectError(f"caption reply still missing aspects: {missing}")
        return CaptionSet(
            round=image.round,
            captions=tuple((a, found[a]) for a in aspects),
            structured=None,
        )

    # -- CLIP stand-in -------------------------------------------------------
    def embed_similarity(self, a: str, b: str) -> float:
        if not a or not b:
            raise ReflexError("similarity needs two non-empty texts")
        if self.kind == KIND_TOY:
            return toy_similarity(a, b)
        va, vb = self.client.embed([a, b])
        return _clamped_cosine(va, vb)

    # -- M_A (question wording) ----------------------------------------------
    def question_text(self, captions: CaptionSet, aspect: str) -> Optional[str]:
        """Backend-written question, or None when the chat call fails or the
        reply never mentions the aspect (caller falls back to the template)."""
        if self.kind == KIND_TOY:
            return None
        lines = "; ".join(f"{a}: {t}" for a, t in captions.captions)
        try:
            reply = self.client.chat(
                ChatRequest(
                    messages=(
                        ChatMessage(
                            "user",
                            f"The image showed — {lines}. Ask one question about its {aspect}.",
                        ),
                    ),
                    system=_QUESTION_SYSTEM,
                )
            )
        except BackendUnavailableError:
            return None
        text = reply.text.strip()
        if not text or aspect.lower() not in text.lower():
            return None
        return text


def _extract_json_object(text: str) -> dict:
    """First JSON object embedded in a chat reply; {} when none parses."""
    start = text.find("{")
    end = text.rfind("}")
    if start < 0 or end <= start:
        return {}
    try:
        data = json.loads(text[start : end + 1])
    except json.JSONDecodeError:
        return {}
    return data if isinstance(data, dict) else {}


def _clamped_cosine(a: list[float], b: list[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = sum(x * x for x in a) ** 0.5
    nb = sum(y * y for y in b) ** 0.5
    if na == 0.0 or nb == 0.0:
        return 0.0
    return min(1.0, max(0.0, dot / (na * nb)))
