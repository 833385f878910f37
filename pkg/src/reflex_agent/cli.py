"""Terminal entry points: interactive chat, batch experiments, training, serving.

Every subcommand taking --seed is bit-reproducible for a fixed seed; errors
exit nonzero with a one-line reason.
"""

from __future__ import annotations

import functools
import json
import os
import secrets
import uuid

import click

from .aae import SWEEP_DEFAULT_THRESHOLDS, ToolConfig, threshold_sweep
from .backends import Backends, load_backend_config
from .core import ReflexError, canonical_dumps, derive_seed, get_schema
from .dpo import (
    DiffusionSchedule,
    PolicyParams,
    TrainerConfig,
    load_pairs,
    synthesize_pairs,
    train,
    win_rate,
)
from .engine import new_session_state, run_round
from .store import replay as replay_log
from .toyworld import ToyWorldConfig, run_simulation

FORMATS = click.Choice(["text", "csv", "json"])


def reflex_errors(fn):
    """Turn domain errors into one-line nonzero exits."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ReflexError as exc:
            raise click.ClickException(exc.message) from exc

    return wrapper


@click.group()
def main():
    """Reflective image-generation agent: chat, simulate, train, sweep, serve, replay."""


# ---------------------------------------------------------------------------
# chat
# ---------------------------------------------------------------------------

@main.command()
@click.option("--mode", type=click.Choice(["toy", "remote"]), default="toy", show_default=True)
@click.option("--schema", "schema_name", default="default", show_default=True)
@click.option("--persona", default=None, help="persona label (remote: picks the model)")
@click.option("--seed", type=int, default=None, help="session seed; random when omitted")
@click.option("--neglect-prob", type=float, default=0.0, show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None, help="backend config JSON")
@reflex_errors
def chat(mode, schema_name, persona, seed, neglect_prob, config_path):
    """Interactive reflection loop.

    Each turn: your words -> prompt -> image -> captions -> one question.
    Toy mode takes `Aspect=value` pairs (comma-separated); remote mode takes
    free text. `quit`, `exit` or Ctrl-D ends the session.
    """
    schema = get_schema(schema_name)
    if mode == "toy":
        backends = Backends.toy(
            ToyWorldConfig(schema=schema, neglect_prob=neglect_prob), persona=persona
        )
    else:
        cfg = load_backend_config(config_path)
        if cfg.kind != "remote":
            raise ReflexError("remote chat needs a base_url (config file or REFLEX_BASE_URL)")
        backends = Backends.remote(cfg)

    rng_seed = seed if seed is not None else secrets.randbits(63)
    state = new_session_state(uuid.uuid4().hex[:12], schema, rng_seed, persona)
    click.echo(f"session {state.id} — schema {schema.name}, mode {mode}, seed {rng_seed}")
    click.echo(f"aspects: {', '.join(schema.aspects)}")
    while True:
        try:
            words = click.prompt("you", prompt_suffix="> ")
        except (EOFError, click.exceptions.Abort):
            break
        if words.strip().lower() in {"quit", "exit"}:
            break
        try:
            outcome = run_round(state, words, backends)
        except ReflexError as exc:
            click.echo(f"error: {exc.message}", err=True)
            continue
        state = outcome.state
        record = outcome.record
        image = record.image
        if image.toy_payload is not None:
            shown = image.toy_payload.phrase_stacked()
        else:
            shown = f"bytes sha256:{image.bytes_sha256[:16]}…"
        click.echo(f"-- round {record.round}")
        click.echo(f"prompt:   {record.prompt.text}")
        click.echo(f"image:    {shown}")
        click.echo(f"question: {record.question.text}  [{record.question.aspect}]")
    click.echo(f"bye — {len(state.rounds)} round(s)")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

@main.command()
@click.option("--dialogues", type=int, default=500, show_default=True)
@click.option("--rounds", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--schema", "schema_name", default="default", show_default=True)
@click.option("--neglect-prob", type=float, default=0.0, show_default=True)
@click.option("--reply-prob", type=float, default=1.0, show_default=True)
@click.option("--format", "fmt", type=FORMATS, default="text", show_default=True)
@reflex_errors
def simulate(dialogues, rounds, seed, schema_name, neglect_prob, reply_prob, fmt):
    """Scripted multi-round dialogues: mean image/target alignment per round."""
    cfg = ToyWorldConfig(
        schema=get_schema(schema_name), neglect_prob=neglect_prob, seed=seed
    )
    result = run_simulation(dialogues, rounds, cfg, reply_prob=reply_prob)
    if fmt == "csv":
        click.echo(result.to_csv(), nl=False)
    elif fmt == "json":
        click.echo(json.dumps(result.to_jsonable()))
    else:
        click.echo(result.to_text())


# ---------------------------------------------------------------------------
# train-dpo
# ---------------------------------------------------------------------------

@main.command("train-dpo")
@click.option("--pairs", "pairs_file", type=click.Path(exists=True), default=None,
              help="JSONL preference-pair store (e.g. <data_dir>/pairs/<session>.jsonl)")
@click.option("--synthetic", type=int, default=None,
              help="train on N synthetic pairs (winners prefer larger outputs) instead of a file")
@click.option("--beta", type=float, default=1.0, show_default=True)
@click.option("--epochs", type=int, default=5, show_default=True)
@click.option("--prompts-per-epoch", type=int, default=3, show_default=True)
@click.option("--learning-rate", "--lr", type=float, default=0.05, show_default=True)
@click.option("--batch-size", type=int, default=40, show_default=True)
@click.option("--num-steps", type=int, default=4, show_default=True, help="denoising steps (synthetic pairs)")
@click.option("--dim", type=int, default=2, show_default=True, help="latent dimension (synthetic pairs)")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--eval-samples", type=int, default=2000, show_default=True)
@click.option("--save", "save_path", type=click.Path(), default=None, help="write trained params JSON here")
@click.option("--format", "fmt", type=FORMATS, default="text", show_default=True)
@reflex_errors
def train_dpo(pairs_file, synthetic, beta, epochs, prompts_per_epoch, learning_rate,
              batch_size, num_steps, dim, seed, eval_samples, save_path, fmt):
    """Preference-train the toy denoising policy; print loss curve and win rate."""
    if (pairs_file is None) == (synthetic is None):
        raise ReflexError("provide exactly one of --pairs or --synthetic")
    if pairs_file is not None:
        pairs = load_pairs(pairs_file)
        if not pairs:
            raise ReflexError(f"no pairs found in {pairs_file}")
        schedule = DiffusionSchedule.constant(pairs[0].winner.num_steps)
        ref = PolicyParams.zeros(schedule, pairs[0].winner.dimension)
    else:
        schedule = DiffusionSchedule.constant(num_steps)
        ref = PolicyParams.zeros(schedule, dim)
        pairs = synthesize_pairs(ref, synthetic, seed=seed)

    cfg = TrainerConfig(
        beta=beta,
        learning_rate=learning_rate,
        epochs=epochs,
        prompts_per_epoch=prompts_per_epoch,
        batch_size=batch_size,
    )
    result = train(ref, ref, pairs, cfg)
    rate = win_rate(result.params, ref, n_samples=eval_samples, seed=derive_seed(seed, "eval"))
    if save_path:
        result.params.save(save_path)

    if fmt == "json":
        click.echo(json.dumps({
            "pairs": len(pairs),
            "steps": len(result.step_losses),
            "step_losses": list(result.step_losses),
            "epoch_losses": list(result.epoch_losses),
            "win_rate": rate,
            "eval_samples": eval_samples,
        }))
    elif fmt == "csv":
        click.echo("step,loss")
        for i, loss in enumerate(result.step_losses, start=1):
            click.echo(f"{i},{loss:.6f}")
        click.echo(f"# win_rate={rate:.4f} n={eval_samples}")
    else:
        click.echo(f"trained on {len(pairs)} pairs — {len(result.step_losses)} steps")
        click.echo(f"loss: {result.step_losses[0]:.6f} -> {result.step_losses[-1]:.6f}")
        click.echo("epoch means: " + ", ".join(f"{m:.4f}" for m in result.epoch_losses))
        click.echo(f"win rate vs ref: {rate:.4f}  (n={eval_samples}, paired seeds)")
        if save_path:
            click.echo(f"params saved to {save_path}")


# ---------------------------------------------------------------------------
# aae-sweep
# ---------------------------------------------------------------------------

@main.command("aae-sweep")
@click.option("--thresholds", default=",".join(str(k) for k in SWEEP_DEFAULT_THRESHOLDS),
              show_default=True, help="comma-separated similarity thresholds")
@click.option("--trials", type=int, default=2000, show_default=True)
@click.option("--neglect-prob", type=float, default=0.2, show_default=True)
@click.option("--max-iterations", type=int, default=5, show_default=True)
@click.option("--specified", type=int, default=3, show_default=True,
              help="aspects pinned per trial prompt")
@click.option("--schema", "schema_name", default="default", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--format", "fmt", type=FORMATS, default="text", show_default=True)
@reflex_errors
def aae_sweep(thresholds, trials, neglect_prob, max_iterations, specified, schema_name, seed, fmt):
    """Neglect-tool invocation frequency and similarity lift per threshold."""
    try:
        ks = [float(part) for part in thresholds.split(",") if part.strip()]
    except ValueError:
        raise ReflexError(f"bad --thresholds value {thresholds!r}") from None
    if not ks:
        raise ReflexError("need at least one threshold")
    world = ToyWorldConfig(
        schema=get_schema(schema_name), neglect_prob=neglect_prob, seed=seed
    )
    cfg = ToolConfig(threshold=ks[0], max_iterations=max_iterations)
    result = threshold_sweep(ks, trials, cfg, world, specified_aspects=specified)
    if fmt == "csv":
        click.echo(result.to_csv(), nl=False)
    elif fmt == "json":
        click.echo(json.dumps(result.to_jsonable()))
    else:
        click.echo(result.to_text())


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------

@main.command()
@click.option("--listen", default=None, help="host:port [default: REFLEX_LISTEN or 127.0.0.1:8000]")
@click.option("--data-dir", type=click.Path(), default=None,
              help="event logs / pairs / models root [default: ./reflex-data]")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="server config JSON")
@click.option("--batch-size", type=int, default=None, help="pairs per training trigger")
@click.option("--neglect-prob", type=float, default=None, help="toy-session neglect probability")
@click.option("--static-dir", type=click.Path(), default=None, help="built web UI to mount at /")
@reflex_errors
def serve(listen, data_dir, config_path, batch_size, neglect_prob, static_dir):
    """Start the HTTP JSON service."""
    from .service import load_server_config, parse_listen, serve as run_server

    if data_dir is None and config_path is None:
        data_dir = "./reflex-data"
    cfg = load_server_config(
        config_path,
        data_dir=data_dir,
        batch_size=batch_size,
        neglect_prob=neglect_prob,
        static_dir=static_dir,
    )
    listen = listen or os.environ.get("REFLEX_LISTEN") or "127.0.0.1:8000"
    parse_listen(listen)  # reject a bad address before claiming to listen
    click.echo(f"listening on {listen} (data under {cfg.data_dir})")
    run_server(cfg, listen)


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

@main.command()
@click.argument("log_file", type=click.Path(exists=True))
@reflex_errors
def replay(log_file):
    """Integrity-check a session log and print the replayed session."""
    state = replay_log(log_file)
    if state is None:
        click.echo("empty log — no session")
        return
    click.echo(f"session {state.id} — schema {state.schema.name}, seed {state.rng_seed}")
    if state.persona:
        click.echo(f"persona: {state.persona}")
    for record in state.rounds:
        click.echo(
            f"round {record.round}: prompt {record.prompt.text!r} "
            f"-> asked {record.question.aspect} ({record.question.source})"
        )
    digest = derive_seed(canonical_dumps(state.to_jsonable()))
    click.echo(f"rounds: {len(state.rounds)}, state digest: {digest:016x}")


if __name__ == "__main__":
    main()
