"""HTTP JSON service: sessions, rounds, preferences, refine tools, event feed.

Design notes that matter to clients:

* Every state-mutating endpoint appends session events; GETs never do.
* One round (or refine) runs per session at a time — a second concurrent
  POST gets 409 rather than queueing, so the UI can show "in flight".
* Toy images travel as structured aspect vectors plus a deterministic
  color-card spec; the browser renders them (no raster on the server).
* `GET .../events?since=N&timeout_ms=M` long-polls up to 25 s.

Handlers are synchronous on purpose: they run in the framework's thread
pool, and per-session threading locks give the serialization contract.
"""

from __future__ import annotations

import colorsys
import threading
import time
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

import httpx
from fastapi import Body, FastAPI, HTTPException, Query, Response
from fastapi.middleware.cors import CORSMiddleware

from . import store as store_mod
from .aae import ToolConfig, run_tool
from .backends import (
    BackendConfig,
    BackendUnavailableError,
    Backends,
    KIND_REMOTE,
    KIND_TOY,
    RemoteClient,
)
from .core import (
    EventDraft,
    ImageRecord,
    ReflexError,
    UnknownSchemaError,
    bounded_index,
    derive_seed,
    get_schema,
    list_schemas,
)
from .dpo import (
    DEFAULT_DIMENSION,
    DEFAULT_SCHEDULE,
    DiffusionSchedule,
    EmptyStoreError,
    PolicyParams,
    PreferencePair,
    TrainerConfig,
    append_pair,
    kl_per_step,
    load_pairs,
    sample_trajectory,
    train,
    win_rate,
)
from .engine import (
    RoundRecord,
    SessionClosedError,
    SessionState,
    created_event,
    new_session_state,
    run_round,
)
from .store import BlobStore, SessionLog, session_log_path
from .toyworld import ToyWorldConfig

LONG_POLL_CAP_MS = 25_000


@dataclass(frozen=True)
class ServerConfig:
    data_dir: Path
    backend: BackendConfig = field(default_factory=BackendConfig)
    personas: Mapping[str, str] = field(default_factory=dict)
    batch_size: int = 40
    trainer_beta: float = 1.0
    trainer_learning_rate: float = 0.05
    trainer_epochs: int = 5
    trainer_prompts_per_epoch: int = 3
    schedule: DiffusionSchedule = DEFAULT_SCHEDULE
    policy_dim: int = DEFAULT_DIMENSION
    neglect_prob: float = 0.0
    fsync: bool = False
    static_dir: Optional[Path] = None

    def trainer_config(self, overrides: Mapping[str, Any] | None = None) -> TrainerConfig:
        params = {
            "beta": self.trainer_beta,
            "learning_rate": self.trainer_learning_rate,
            "epochs": self.trainer_epochs,
            "prompts_per_epoch": self.trainer_prompts_per_epoch,
            "batch_size": self.batch_size,
        }
        for key, value in (overrides or {}).items():
            if key not in params:
                raise ReflexError(f"unknown trainer parameter {key!r}")
            params[key] = value
        return TrainerConfig(**params)


def load_server_config(
    path: str | Path | None = None, **overrides: Any
) -> ServerConfig:
    """Server config from a JSON file plus keyword overrides.

    File keys mirror ServerConfig fields; `backend` nests a BackendConfig
    document (REFLEX_BASE_URL / REFLEX_API_KEY still apply on top).
    """
    from .backends import apply_env_overrides, read_config_file

    data: dict[str, Any] = read_config_file(path) if path is not None else {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    backend_doc = data.pop("backend", {})
    if isinstance(backend_doc, BackendConfig):
        backend = backend_doc
    else:
        backend = BackendConfig.from_jsonable(apply_env_overrides(dict(backend_doc)))
    schedule_doc = data.pop("schedule", None)
    schedule = (
        DiffusionSchedule.from_jsonable(schedule_doc) if schedule_doc else DEFAULT_SCHEDULE
    )
    if "data_dir" not in data:
        raise ReflexError("server config needs a data_dir")
    known = set(ServerConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ReflexError(f"unknown server config keys: {sorted(unknown)}")
    data["data_dir"] = Path(data["data_dir"])
    if data.get("static_dir"):
        data["static_dir"] = Path(data["static_dir"])
    return ServerConfig(backend=backend, schedule=schedule, **data)


def card_color(aspect: str, value_name: str) -> str:
    """Stable display color for an (aspect, value) pair."""
    hue = bounded_index(360, "card-color", aspect, value_name) / 360.0
    r, g, b = colorsys.hls_to_rgb(hue, 0.55, 0.65)
    return "#{:02x}{:02x}{:02x}".format(round(r * 255), round(g * 255), round(b * 255))


def render_image(image: ImageRecord) -> dict:
    if image.toy_payload is not None:
        vector = image.toy_payload
        schema = vector.schema
        card = [
            {
                "aspect": aspect,
                "value": schema.value_name(aspect, slot),
                "color": card_color(aspect, schema.value_name(aspect, slot)),
            }
            for aspect, slot in zip(schema.aspects, vector.slots)
        ]
        return {
            "kind": "toy",
            "seed": image.seed,
            "vector": vector.to_jsonable(),
            "card": card,
        }
    return {
        "kind": "bytes",
        "seed": image.seed,
        "sha256": image.bytes_sha256,
        "url": f"/images/{image.bytes_sha256}",
    }


def render_round(record: RoundRecord) -> dict:
    return {
        "round": record.round,
        "prompt": record.prompt.to_jsonable(),
        "image": render_image(record.image),
        "captions": record.captions.to_jsonable(),
        "ambiguity": record.ambiguity.to_jsonable(),
        "question": record.question.to_jsonable(),
    }


class _Session:
    """Server-side handle: live state plus log, lock, policy, pair counter."""

    def __init__(
        self,
        state: SessionState,
        log: SessionLog,
        backends: Backends,
        mode: str,
        pairs_path: Path,
        policy: PolicyParams,
    ):
        self.state = state
        self.log = log
        self.backends = backends
        self.mode = mode
        self.pairs_path = pairs_path
        self.policy = policy
        self.ref_policy = policy
        self.pair_count = 0
        self.closed = False
        self.lock = threading.Lock()
        self.new_events = threading.Condition()

    def notify(self) -> None:
        with self.new_events:
            self.new_events.notify_all()

    def api_view(self) -> dict:
        rounds = self.state.rounds
        open_questions = (
            [rounds[-1].question.to_jsonable()] if rounds and not self.closed else []
        )
        return {
            "id": self.state.id,
            "persona": self.state.persona,
            "schema": self.state.schema.name,
            "round": len(rounds),
            "open_questions": open_questions,
            "status": "closed" if self.closed else "open",
        }


def _http_error(status: int, code: str, message: str) -> HTTPException:
    return HTTPException(status_code=status, detail={"code": code, "message": message})


class SessionManager:
    def __init__(
        self,
        config: ServerConfig,
        clock: Callable[[], int] | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        self.config = config
        self.clock = clock or (lambda: time.time_ns() // 1_000_000)
        self.transport = transport
        self.blobs = BlobStore(Path(config.data_dir) / "blobs")
        self._sessions: dict[str, _Session] = {}
        self._registry_lock = threading.Lock()

    # -- lifecycle -----------------------------------------------------------

    def create_session(
        self,
        schema_name: str = "default",
        persona: Optional[str] = None,
        mode: str = KIND_TOY,
        seed: Optional[int] = None,
    ) -> _Session:
        try:
            schema = get_schema(schema_name)
        except UnknownSchemaError as exc:
            raise _http_error(400, exc.code, exc.message) from exc
        if mode not in (KIND_TOY, KIND_REMOTE):
            raise _http_error(400, "ConfigError", f"unknown mode {mode!r}")
        if mode == KIND_REMOTE and self.config.backend.kind != KIND_REMOTE:
            raise _http_error(400, "ConfigError", "server has no remote backend configured")

        session_id = uuid.uuid4().hex[:12]
        rng_seed = seed if seed is not None else derive_seed(session_id)
        state = new_session_state(session_id, schema, rng_seed, persona)
        policy = PolicyParams.zeros(self.config.schedule, self.config.policy_dim)

        session: _Session  # policy_sampler below closes over it
        if mode == KIND_TOY:
            world = ToyWorldConfig(schema=schema, neglect_prob=self.config.neglect_prob)
            backends = Backends.toy(
                world,
                policy_sampler=lambda s: sample_trajectory(session.policy, s),
                persona=persona,
            )
        else:
            model = self.config.personas.get(persona, self.config.backend.model_name)
            cfg = replace(self.config.backend, model_name=model, persona=persona)
            client = RemoteClient(cfg, transport=self.transport)
            backends = Backends.remote(cfg, client=client)

        log = SessionLog(
            session_log_path(self.config.data_dir, session_id), fsync=self.config.fsync
        )
        pairs_path = Path(self.config.data_dir) / "pairs" / f"{session_id}.jsonl"
        session = _Session(state, log, backends, mode, pairs_path, policy)
        log.append_draft(session_id, created_event(state), self.clock())
        with self._registry_lock:
            self._sessions[session_id] = session
        session.notify()
        return session

    def get(self, session_id: str) -> _Session:
        with self._registry_lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise _http_error(404, "UnknownSession", f"no session {session_id!r}")
        return session

    def close_session(self, session_id: str) -> dict:
        session = self.get(session_id)
        with session.lock:
            if session.closed:
                raise _http_error(409, "SessionClosed", "session is already closed")
            session.closed = True
            session.log.append_draft(
                session_id, EventDraft("session_closed", {"id": session_id}), self.clock()
            )
        session.notify()
        return session.api_view()

    # -- rounds ---------------------------------------------------------------

    def run_message(self, session_id: str, words: Any) -> dict:
        session = self.get(session_id)
        if not session.lock.acquire(blocking=False):
            raise _http_error(409, "RoundInFlight", "a round is already running")
        try:
            if session.closed:
                raise _http_error(409, "SessionClosed", "session is closed")
            try:
                outcome = run_round(session.state, words, session.backends)
            except BackendUnavailableError as exc:
                raise _http_error(502, exc.code, exc.message) from exc
            except SessionClosedError as exc:
                raise _http_error(409, exc.code, exc.message) from exc
            except ReflexError as exc:
                raise _http_error(400, exc.code, exc.message) from exc
            record = outcome.record
            if record.image.image_bytes is not None:
                self.blobs.put(record.image.image_bytes)
            ts = self.clock()
            for draft in outcome.events:
                session.log.append_draft(session_id, draft, ts)
            session.state = outcome.state
        finally:
            session.lock.release()
        session.notify()
        body = render_round(record)
        body["session"] = session.api_view()
        return body

    # -- preferences / training ------------------------------------------------

    def add_preference(self, session_id: str, winner_round: Any, loser_round: Any) -> dict:
        session = self.get(session_id)
        with session.lock:
            if session.closed:
                raise _http_error(409, "SessionClosed", "session is closed")
            rounds = session.state.rounds
            try:
                w, l = int(winner_round), int(loser_round)
            except (TypeError, ValueError):
                raise _http_error(422, "BadRounds", "winner_round and loser_round must be integers")
            if w == l:
                raise _http_error(422, "BadRounds", "winner and loser must differ")
            for r in (w, l):
                if not 1 <= r <= len(rounds):
                    raise _http_error(404, "UnknownRound", f"round {r} does not exist")
            winner = rounds[w - 1].image.trajectory
            loser = rounds[l - 1].image.trajectory
            if winner is None or loser is None:
                raise _http_error(
                    422, "MissingTrajectory", "both rounds need denoising trajectories (toy mode)"
                )
            pair = PreferencePair(
                winner=winner,
                loser=loser,
                prompt_id=f"{session_id}:r{w}-r{l}",
                ts_ms=self.clock(),
            )
            append_pair(session.pairs_path, pair)
            session.pair_count += 1
            count = session.pair_count
            session.log.append_draft(
                session_id,
                EventDraft(
                    "preference",
                    {"winner_round": w, "loser_round": l, "pair": pair.to_jsonable(), "count": count},
                ),
                self.clock(),
            )
            batch = self.config.batch_size
            training: Optional[dict] = None
            if count % batch == 0:
                training = self._train_locked(session, overrides=None)
        session.notify()
        return {
            "accepted": count,
            "pairs_until_training": batch - (count % batch),
            "training": training,
        }

    def _train_locked(self, session: _Session, overrides: Mapping[str, Any] | None) -> dict:
        """Run preference training on everything in the session's pair store.

        Caller holds the session lock; emits one training_update per epoch.
        """
        pairs = load_pairs(session.pairs_path)
        if not pairs:
            raise _http_error(422, "ToolUnavailable", "no preference pairs collected yet")
        try:
            cfg = self.config.trainer_config(overrides)
        except ReflexError as exc:
            raise _http_error(422, exc.code, exc.message) from exc

        def emit(epoch: int, mean_loss: float) -> None:
            session.log.append_draft(
                session.state.id,
                EventDraft(
                    "training_update",
                    {"epoch": epoch, "epochs": cfg.epochs, "mean_loss": mean_loss, "beta": cfg.beta},
                ),
                self.clock(),
            )

        try:
            result = train(session.policy, session.ref_policy, pairs, cfg, on_epoch=emit)
        except EmptyStoreError as exc:
            raise _http_error(422, exc.code, exc.message) from exc
        session.policy = result.params
        models_dir = Path(self.config.data_dir) / "models"
        models_dir.mkdir(parents=True, exist_ok=True)
        result.params.save(models_dir / f"{session.state.id}.json")
        rate = win_rate(
            session.policy,
            session.ref_policy,
            n_samples=200,
            seed=derive_seed(session.state.rng_seed, "win-rate-eval"),
        )
        return {
            "pairs": len(pairs),
            "steps": len(result.step_losses),
            "initial_loss": result.step_losses[0],
            "final_loss": result.step_losses[-1],
            "epoch_losses": list(result.epoch_losses),
            "kl_per_step": [float(v) for v in kl_per_step(session.policy, session.ref_policy)],
            "win_rate_vs_ref": rate,
        }

    # -- refine tools ------------------------------------------------------------

    def refine(self, session_id: str, tool: str, params: Mapping[str, Any] | None) -> dict:
        session = self.get(session_id)
        if not session.lock.acquire(blocking=False):
            raise _http_error(409, "RoundInFlight", "a round is already running")
        try:
            if session.closed:
                raise _http_error(409, "SessionClosed", "session is closed")
            if session.mode != KIND_TOY:
                raise _http_error(
                    422, "ToolUnavailable", "refine tools need toy-mode trajectories/latents"
                )
            if tool == "dpo":
                report = self._train_locked(session, overrides=params)
                body = {"tool": "dpo", "report": report}
            elif tool == "aae":
                body = self._run_aae_locked(session, params or {})
            else:
                raise _http_error(422, "ToolUnavailable", f"unknown tool {tool!r}")
        finally:
            session.lock.release()
        session.notify()
        return body

    def _run_aae_locked(self, session: _Session, params: Mapping[str, Any]) -> dict:
        rounds = session.state.rounds
        if not rounds:
            raise _http_error(422, "ToolUnavailable", "no rounds to refine yet")
        prompt = rounds[-1].prompt.structured
        if prompt is None or prompt.specified_count == 0:
            raise _http_error(422, "ToolUnavailable", "latest prompt has no specified aspects")
        try:
            tool_cfg = ToolConfig(
                threshold=float(params.get("threshold", 0.7)),
                max_iterations=int(params.get("max_iterations", 5)),
            )
            world = replace(
                session.backends.world,
                neglect_prob=float(params.get("neglect_prob", session.backends.world.neglect_prob)),
            )
        except ReflexError as exc:
            raise _http_error(422, exc.code, exc.message) from exc
        seed = derive_seed(session.state.rng_seed, "tool2", session.log.last_seq)
        image_vector, report = run_tool(prompt, seed, tool_cfg, world)
        image = ImageRecord(round=len(rounds), seed=seed, toy_payload=image_vector)
        session.log.append_draft(
            session.state.id,
            EventDraft(
                "tool2_invocation",
                {"round": len(rounds), "report": report.to_jsonable(), "image": image.to_jsonable()},
            ),
            self.clock(),
        )
        return {"tool": "aae", "image": render_image(image), "report": report.to_jsonable()}

    # -- reads ---------------------------------------------------------------------

    def events_since(self, session_id: str, since: int, timeout_ms: int) -> dict:
        session = self.get(session_id)
        deadline = time.monotonic() + min(max(timeout_ms, 0), LONG_POLL_CAP_MS) / 1000.0
        while True:
            events = session.log.read(since=since)
            if events or time.monotonic() >= deadline:
                return {
                    "events": [e.to_jsonable() for e in events],
                    "last_seq": session.log.last_seq,
                }
            with session.new_events:
                session.new_events.wait(timeout=max(0.0, deadline - time.monotonic()))


def create_app(
    config: ServerConfig,
    clock: Callable[[], int] | None = None,
    transport: httpx.BaseTransport | None = None,
) -> FastAPI:
    app = FastAPI(title="reflex-agent", docs_url=None, redoc_url=None)
    # the web console may be served from another origin (dev server, file://)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    manager = SessionManager(config, clock=clock, transport=transport)
    app.state.manager = manager

    @app.get("/schema")
    def get_schemas() -> dict:
        return {"schemas": [s.to_jsonable() for s in list_schemas()]}

    @app.post("/sessions", status_code=201)
    def post_sessions(payload: dict = Body(default={})) -> dict:
        session = manager.create_session(
            schema_name=payload.get("schema", "default"),
            persona=payload.get("persona"),
            mode=payload.get("mode", KIND_TOY),
            seed=payload.get("seed"),
        )
        return session.api_view()

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        return manager.get(session_id).api_view()

    @app.delete("/sessions/{session_id}")
    def delete_session(session_id: str) -> dict:
        return manager.close_session(session_id)

    @app.post("/sessions/{session_id}/message")
    def post_message(session_id: str, payload: dict = Body(...)) -> dict:
        text = payload.get("text")
        assignment = payload.get("assignment")
        if (text is None) == (assignment is None):
            raise _http_error(400, "BadMessage", "provide exactly one of text or assignment")
        return manager.run_message(session_id, text if text is not None else assignment)

    @app.post("/sessions/{session_id}/preference")
    def post_preference(session_id: str, payload: dict = Body(...)) -> dict:
        return manager.add_preference(
            session_id, payload.get("winner_round"), payload.get("loser_round")
        )

    @app.post("/sessions/{session_id}/refine")
    def post_refine(session_id: str, payload: dict = Body(...)) -> dict:
        tool = payload.get("tool")
        if tool not in ("dpo", "aae"):
            raise _http_error(422, "ToolUnavailable", "tool must be 'dpo' or 'aae'")
        return manager.refine(session_id, tool, payload.get("params"))

    @app.get("/sessions/{session_id}/events")
    def get_events(
        session_id: str,
        since: int = Query(default=0, ge=0),
        timeout_ms: int = Query(default=0, ge=0),
    ) -> dict:
        return manager.events_since(session_id, since, timeout_ms)

    @app.get("/images/{digest}")
    def get_image(digest: str) -> Response:
        data = manager.blobs.get(digest)
        if data is None:
            raise _http_error(404, "UnknownImage", f"no stored image {digest!r}")
        return Response(content=data, media_type="application/octet-stream")

    if config.static_dir and Path(config.static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.static_dir, html=True), name="ui")

    return app


def parse_listen(listen: str) -> tuple[str, int]:
    host, _, port = listen.rpartition(":")
    if not host or not port.isdigit():
        raise ReflexError(f"listen address must be host:port, got {listen!r}")
    return host, int(port)


def serve(config: ServerConfig, listen: str = "127.0.0.1:8000") -> None:
    import uvicorn

    host, port = parse_listen(listen)
    uvicorn.run(create_app(config), host=host, port=port, log_level="warning")
