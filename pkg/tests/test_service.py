import base64
import json
import threading
import time

import httpx
import pytest
from fastapi.testclient import TestClient

from reflex_agent.backends import BackendConfig
from reflex_agent.core import ReflexError, canonical_dumps, default_schema
from reflex_agent.service import (
    ServerConfig,
    card_color,
    create_app,
    load_server_config,
    parse_listen,
)
from reflex_agent.store import read_log, replay, session_log_path

SCHEMA = default_schema()


def toy_client(tmp_path, **kw):
    config = ServerConfig(data_dir=tmp_path / "data", batch_size=kw.pop("batch_size", 4), **kw)
    app = create_app(config, clock=iter(range(10**9)).__next__)
    return TestClient(app)


def start_session(client, **payload):
    response = client.post("/sessions", json=payload)
    assert response.status_code == 201
    return response.json()["id"]


def post_round(client, sid, assignment):
    response = client.post(f"/sessions/{sid}/message", json={"assignment": assignment})
    assert response.status_code == 200, response.text
    return response.json()


# -- schema and session lifecycle -------------------------------------------------

def test_schema_listing(tmp_path):
    client = toy_client(tmp_path)
    body = client.get("/schema").json()
    names = {s["name"] for s in body["schemas"]}
    assert {"default", "fashion"} <= names
    default = next(s for s in body["schemas"] if s["name"] == "default")
    assert len(default["aspects"]) == 7
    assert default["vocab_size"] == 16


def test_create_and_fetch_session(tmp_path):
    client = toy_client(tmp_path)
    created = client.post("/sessions", json={"persona": "artist", "seed": 5})
    assert created.status_code == 201
    view = created.json()
    assert view["round"] == 0
    assert view["status"] == "open"
    assert view["open_questions"] == []
    assert view["persona"] == "artist"
    assert client.get(f"/sessions/{view['id']}").json() == view
    # the birth certificate is already on disk
    events = client.get(f"/sessions/{view['id']}/events").json()
    assert [e["type"] for e in events["events"]] == ["session_created"]
    assert events["events"][0]["payload"]["rng_seed"] == 5


def test_create_session_rejections(tmp_path):
    client = toy_client(tmp_path)
    response = client.post("/sessions", json={"schema": "nope"})
    assert response.status_code == 400
    assert response.json()["detail"]["code"] == "UnknownSchema"
    response = client.post("/sessions", json={"mode": "vr"})
    assert response.status_code == 400
    # remote mode needs a remote backend configured server-side
    response = client.post("/sessions", json={"mode": "remote"})
    assert response.status_code == 400
    assert response.json()["detail"]["code"] == "ConfigError"


def test_unknown_session_is_404_everywhere(tmp_path):
    client = toy_client(tmp_path)
    assert client.get("/sessions/ghost").status_code == 404
    assert client.post("/sessions/ghost/message", json={"text": "x"}).status_code == 404
    assert client.post("/sessions/ghost/preference", json={"winner_round": 1, "loser_round": 2}).status_code == 404
    assert client.get("/sessions/ghost/events").status_code == 404
    assert client.delete("/sessions/ghost").status_code == 404


def test_close_session(tmp_path):
    client = toy_client(tmp_path)
    sid = start_session(client)
    closed = client.delete(f"/sessions/{sid}")
    assert closed.status_code == 200
    assert closed.json()["status"] == "closed"
    assert closed.json()["open_questions"] == []
    assert client.delete(f"/sessions/{sid}").status_code == 409
    response = client.post(f"/sessions/{sid}/message", json={"assignment": {"Content": "parrot"}})
    assert response.status_code == 409
    assert response.json()["detail"]["code"] == "SessionClosed"


# -- rounds ------------------------------------------------------------------------

def test_message_round_body(tmp_path):
    client = toy_client(tmp_path)
    sid = start_session(client, seed=7)
    body = post_round(client, sid, {"Content": "parrot"})
    assert body["round"] == 1
    assert body["prompt"]["text"] == "parrot"
    image = body["image"]
    assert image["kind"] == "toy"
    assert len(image["card"]) == 7
    for entry in image["card"]:
        assert set(entry) == {"aspect", "value", "color"}
        assert entry["color"].startswith("#") and len(entry["color"]) == 7
    assert body["question"]["aspect"] == body["ambiguity"]["chosen"]
    session = body["session"]
    assert session["round"] == 1
    assert session["open_questions"] == [body["question"]]


def test_text_and_assignment_are_mutually_exclusive(tmp_path):
    client = toy_client(tmp_path)
    sid = start_session(client)
    both = client.post(
        f"/sessions/{sid}/message",
        json={"text": "Content=parrot", "assignment": {"Content": "parrot"}},
    )
    assert both.status_code == 400
    assert both.json()["detail"]["code"] == "BadMessage"
    neither = client.post(f"/sessions/{sid}/message", json={})
    assert neither.status_code == 400


def test_bad_words_are_rejected_without_side_effects(tmp_path):
    client = toy_client(tmp_path)
    sid = start_session(client)
    response = client.post(f"/sessions/{sid}/message", json={"text": "free prose"})
    assert response.status_code == 400  # toy mode wants aspect=value
    response = client.post(f"/sessions/{sid}/message", json={"assignment": {"Color": "parrot"}})
    assert response.status_code == 400
    assert client.get(f"/sessions/{sid}").json()["round"] == 0
    events = client.get(f"/sessions/{sid}/events").json()["events"]
    assert [e["type"] for e in events] == ["session_created"]


def test_round_events_and_text_answers(tmp_path):
    client = toy_client(tmp_path)
    sid = start_session(client, seed=3)
    first = post_round(client, sid, {"Content": "parrot"})
    aspect = first["question"]["aspect"]
    answer = client.post(f"/sessions/{sid}/message", json={"text": f"{aspect}=3"})
    assert answer.status_code == 200
    assert answer.json()["prompt"]["structured"]["slots"].count(None) == 5
    events = client.get(f"/sessions/{sid}/events").json()
    types = [e["type"] for e in events["events"]]
    assert types == ["session_created"] + [
        "user_message", "prompt", "generation", "caption", "ambiguity", "question",
    ] * 2
    assert events["last_seq"] == 13
    assert [e["seq"] for e in events["events"]] == list(range(1, 14))


def test_concurrent_round_gets_409(tmp_path):
    client = toy_client(tmp_path)
    sid = start_session(client)
    session = client.app.state.manager.get(sid)
    assert session.lock.acquire(blocking=False)  # simulate an in-flight round
    try:
        response = client.post(
            f"/sessions/{sid}/message", json={"assignment": {"Content": "parrot"}}
        )
        assert response.status_code == 409
        assert response.json()["detail"]["code"] == "RoundInFlight"
        refine = client.post(f"/sessions/{sid}/refine", json={"tool": "aae"})
        assert refine.status_code == 409
    finally:
        session.lock.release()
    assert post_round(client, sid, {"Content": "parrot"})["round"] == 1


# -- preferences and training -------------------------------------------------------

def test_preference_validation(tmp_path):
    client = toy_client(tmp_path)
    sid = start_session(client)
    post_round(client, sid, {"Content": "parrot"})
    post_round(client, sid, {"Color": "red"})
    url = f"/sessions/{sid}/preference"
    assert client.post(url, json={"winner_round": 1, "loser_round": 1}).status_code == 422
    assert client.post(url, json={"winner_round": "x", "loser_round": 2}).status_code == 422
    response = client.post(url, json={"winner_round": 1, "loser_round": 9})
    assert response.status_code == 404
    assert response.json()["detail"]["code"] == "UnknownRound"


def test_preference_counts_down_to_training(tmp_path):
    client = toy_client(tmp_path, batch_size=4)
    sid = start_session(client, seed=11)
    for value in ("parrot", "cat", "dog", "temple", "teapot"):
        post_round(client, sid, {"Content": value})
    url = f"/sessions/{sid}/preference"
    for i, (w, l) in enumerate([(1, 2), (3, 4), (5, 1)], start=1):
        body = client.post(url, json={"winner_round": w, "loser_round": l}).json()
        assert body["accepted"] == i
        assert body["pairs_until_training"] == 4 - i
        assert body["training"] is None

    body = client.post(url, json={"winner_round": 2, "loser_round": 3}).json()
    assert body["accepted"] == 4
    assert body["pairs_until_training"] == 4  # fresh batch starts counting again
    training = body["training"]
    assert training["pairs"] == 4
    assert training["steps"] == 15  # 5 epochs x 3 prompts_per_epoch
    assert len(training["epoch_losses"]) == 5
    assert len(training["kl_per_step"]) == 4
    assert 0.0 <= training["win_rate_vs_ref"] <= 1.0

    types = [e["type"] for e in client.get(f"/sessions/{sid}/events").json()["events"]]
    assert types.count("preference") == 4
    assert types.count("training_update") == 5  # one per epoch
    # updated policy is persisted for later sessions to inspect
    assert (tmp_path / "data" / "models" / f"{sid}.json").exists()


def test_training_actually_moves_the_served_policy(tmp_path):
    client = toy_client(tmp_path, batch_size=2)
    sid = start_session(client, seed=13)
    post_round(client, sid, {"Content": "parrot"})
    post_round(client, sid, {"Color": "red"})
    post_round(client, sid, {"Style": "anime"})
    manager = client.app.state.manager
    before = manager.get(sid).policy
    url = f"/sessions/{sid}/preference"
    client.post(url, json={"winner_round": 1, "loser_round": 2})
    body = client.post(url, json={"winner_round": 1, "loser_round": 3}).json()
    assert body["training"] is not None
    assert manager.get(sid).policy != before
    assert manager.get(sid).ref_policy == before  # the anchor never moves


# -- refine tools ----------------------------------------------------------------------

def test_refine_requires_known_tool_and_rounds(tmp_path):
    client = toy_client(tmp_path)
    sid = start_session(client)
    assert client.post(f"/sessions/{sid}/refine", json={"tool": "sharpen"}).status_code == 422
    response = client.post(f"/sessions/{sid}/refine", json={"tool": "aae"})
    assert response.status_code == 422  # no rounds yet
    response = client.post(f"/sessions/{sid}/refine", json={"tool": "dpo"})
    assert response.status_code == 422  # no pairs yet
    assert response.json()["detail"]["code"] == "ToolUnavailable"


def test_refine_aae_reports_and_logs(tmp_path):
    client = toy_client(tmp_path, neglect_prob=0.3)
    sid = start_session(client, seed=2)
    post_round(client, sid, {"Content": "parrot", "Color": "red", "Style": "anime"})
    response = client.post(
        f"/sessions/{sid}/refine",
        json={"tool": "aae", "params": {"threshold": 0.7, "neglect_prob": 1.0}},
    )
    assert response.status_code == 200
    body = response.json()
    assert body["tool"] == "aae"
    report = body["report"]
    assert report["invoked"] is True
    assert report["sim"] >= report["initial_sim"]
    assert body["image"]["kind"] == "toy"
    types = [e["type"] for e in client.get(f"/sessions/{sid}/events").json()["events"]]
    assert types[-1] == "tool2_invocation"
    # refine leaves the dialogue state alone
    assert client.get(f"/sessions/{sid}").json()["round"] == 1


def test_refine_aae_validates_params(tmp_path):
    client = toy_client(tmp_path)
    sid = start_session(client)
    post_round(client, sid, {"Content": "parrot"})
    response = client.post(
        f"/sessions/{sid}/refine", json={"tool": "aae", "params": {"threshold": 2.0}}
    )
    assert response.status_code == 422


def test_refine_dpo_with_params_and_bad_keys(tmp_path):
    client = toy_client(tmp_path, batch_size=40)
    sid = start_session(client, seed=4)
    post_round(client, sid, {"Content": "parrot"})
    post_round(client, sid, {"Color": "red"})
    client.post(f"/sessions/{sid}/preference", json={"winner_round": 1, "loser_round": 2})
    response = client.post(
        f"/sessions/{sid}/refine", json={"tool": "dpo", "params": {"epochs": 2}}
    )
    assert response.status_code == 200
    assert response.json()["report"]["steps"] == 6
    response = client.post(
        f"/sessions/{sid}/refine", json={"tool": "dpo", "params": {"momentum": 0.9}}
    )
    assert response.status_code == 422


# -- events / long poll -------------------------------------------------------------

def test_events_since_filter(tmp_path):
    client = toy_client(tmp_path)
    sid = start_session(client)
    post_round(client, sid, {"Content": "parrot"})
    body = client.get(f"/sessions/{sid}/events", params={"since": 5}).json()
    assert [e["seq"] for e in body["events"]] == [6, 7]
    assert body["last_seq"] == 7
    empty = client.get(f"/sessions/{sid}/events", params={"since": 7}).json()
    assert empty["events"] == []
    assert empty["last_seq"] == 7


def test_long_poll_wakes_on_new_events(tmp_path):
    client = toy_client(tmp_path)
    sid = start_session(client)

    def later():
        time.sleep(0.15)
        client.post(f"/sessions/{sid}/message", json={"assignment": {"Content": "parrot"}})

    thread = threading.Thread(target=later)
    thread.start()
    t0 = time.monotonic()
    body = client.get(
        f"/sessions/{sid}/events", params={"since": 1, "timeout_ms": 10_000}
    ).json()
    elapsed = time.monotonic() - t0
    thread.join()
    assert len(body["events"]) == 6  # the six round events
    assert elapsed < 5.0  # woke well before the requested timeout


def test_poll_timeout_returns_empty(tmp_path):
    client = toy_client(tmp_path)
    sid = start_session(client)
    t0 = time.monotonic()
    body = client.get(
        f"/sessions/{sid}/events", params={"since": 1, "timeout_ms": 200}
    ).json()
    assert body["events"] == []
    assert time.monotonic() - t0 < 2.0


# -- remote mode ---------------------------------------------------------------------

class ChatScript:
    """Mock remote model: answers summarize/caption/question chats by shape."""

    def __init__(self):
        self.models_seen: list[str] = []
        self.fail = False

    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self.handle)

    def handle(self, request: httpx.Request) -> httpx.Response:
        if self.fail:
            return httpx.Response(500, json={"error": "down"})
        body = json.loads(request.content.decode())
        if request.url.path == "/images":
            raw = f"img:{body['prompt']}".encode()
            return httpx.Response(200, json={"image_base64": base64.b64encode(raw).decode()})
        if request.url.path == "/embeddings":
            vectors = [[1.0, 0.0] for _ in body["input"]]
            return httpx.Response(200, json={"data": [{"embedding": v} for v in vectors]})
        self.models_seen.append(body.get("model"))
        ask = body["messages"][-1]["content"]
        if "Caption" in ask:
            text = json.dumps({a: f"{a.lower()}-text" for a in SCHEMA.aspects})
        elif "Ask one question" in ask:
            aspect = ask.rstrip(".").split()[-1]
            text = f"Could you pick a {aspect} for the image?"
        else:
            text = "a tasteful parrot"
        return httpx.Response(
            200, json={"choices": [{"message": {"content": text}, "finish_reason": "stop"}]}
        )


def remote_client(tmp_path, script):
    config = ServerConfig(
        data_dir=tmp_path / "data",
        backend=BackendConfig(kind="remote", base_url="http://api.test", model_name="m-default"),
        personas={"artist": "m-artist"},
    )
    app = create_app(config, transport=script.transport())
    return TestClient(app)


def test_remote_round_uses_persona_model_and_blobs(tmp_path):
    script = ChatScript()
    client = remote_client(tmp_path, script)
    sid = start_session(client, mode="remote", persona="artist")
    body = client.post(f"/sessions/{sid}/message", json={"text": "paint me a parrot"})
    assert body.status_code == 200, body.text
    image = body.json()["image"]
    assert image["kind"] == "bytes"
    assert image["url"] == f"/images/{image['sha256']}"
    # the persona mapped to its configured model on every chat call
    assert set(script.models_seen) == {"m-artist"}
    # question came from the backend, not the template
    assert body.json()["question"]["source"] == "backend"
    fetched = client.get(image["url"])
    assert fetched.status_code == 200
    assert fetched.content == b"img:a tasteful parrot"
    assert client.get("/images/deadbeef").status_code == 404


def test_remote_failure_is_502_and_leaves_no_trace(tmp_path):
    script = ChatScript()
    client = remote_client(tmp_path, script)
    sid = start_session(client, mode="remote")
    script.fail = True
    response = client.post(f"/sessions/{sid}/message", json={"text": "a parrot"})
    assert response.status_code == 502
    assert response.json()["detail"]["code"] == "BackendUnavailable"
    assert client.get(f"/sessions/{sid}").json()["round"] == 0
    events = client.get(f"/sessions/{sid}/events").json()["events"]
    assert [e["type"] for e in events] == ["session_created"]
    script.fail = False
    assert client.post(f"/sessions/{sid}/message", json={"text": "a parrot"}).status_code == 200


def test_remote_rounds_cannot_take_preferences_or_refine(tmp_path):
    script = ChatScript()
    client = remote_client(tmp_path, script)
    sid = start_session(client, mode="remote")
    client.post(f"/sessions/{sid}/message", json={"text": "a parrot"})
    client.post(f"/sessions/{sid}/message", json={"text": "make it red"})
    response = client.post(
        f"/sessions/{sid}/preference", json={"winner_round": 1, "loser_round": 2}
    )
    assert response.status_code == 422
    assert response.json()["detail"]["code"] == "MissingTrajectory"
    refine = client.post(f"/sessions/{sid}/refine", json={"tool": "aae"})
    assert refine.status_code == 422
    assert refine.json()["detail"]["code"] == "ToolUnavailable"


# -- persistence --------------------------------------------------------------------

def test_log_replays_to_the_live_state(tmp_path):
    client = toy_client(tmp_path, batch_size=2, neglect_prob=0.1)
    sid = start_session(client, seed=21)
    post_round(client, sid, {"Content": "parrot"})
    post_round(client, sid, {"Color": "red"})
    client.post(f"/sessions/{sid}/preference", json={"winner_round": 1, "loser_round": 2})
    client.post(f"/sessions/{sid}/preference", json={"winner_round": 2, "loser_round": 1})
    client.post(f"/sessions/{sid}/refine", json={"tool": "aae", "params": {"threshold": 0.7}})
    client.delete(f"/sessions/{sid}")

    live = client.app.state.manager.get(sid).state
    replayed = replay(session_log_path(tmp_path / "data", sid))
    assert canonical_dumps(replayed.to_jsonable()) == canonical_dumps(live.to_jsonable())
    # and the log itself passes its own integrity check
    events = read_log(session_log_path(tmp_path / "data", sid))
    assert events[-1].type == "session_closed"


# -- config helpers -------------------------------------------------------------------

def test_card_color_is_stable_hex():
    first = card_color("Color", "red")
    assert first == card_color("Color", "red")
    assert first.startswith("#") and len(first) == 7
    assert card_color("Color", "blue") != first


def test_parse_listen():
    assert parse_listen("0.0.0.0:8080") == ("0.0.0.0", 8080)
    with pytest.raises(ReflexError):
        parse_listen("8080")
    with pytest.raises(ReflexError):
        parse_listen("host:port")


def test_load_server_config(tmp_path):
    path = tmp_path / "server.json"
    path.write_text(
        json.dumps(
            {
                "data_dir": str(tmp_path / "d"),
                "batch_size": 8,
                "backend": {"kind": "remote", "base_url": "http://api.test"},
                "personas": {"artist": "m-artist"},
            }
        )
    )
    config = load_server_config(path, neglect_prob=0.2)
    assert config.batch_size == 8
    assert config.neglect_prob == 0.2
    assert config.backend.kind == "remote"
    assert config.personas == {"artist": "m-artist"}

    with pytest.raises(ReflexError):
        load_server_config(None)  # no data_dir anywhere
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"data_dir": "x", "turbo": True}))
    with pytest.raises(ReflexError):
        load_server_config(bad)


def test_trainer_config_override_validation(tmp_path):
    config = ServerConfig(data_dir=tmp_path)
    assert config.trainer_config({"epochs": 2}).epochs == 2
    with pytest.raises(ReflexError):
        config.trainer_config({"bogus": 1})
