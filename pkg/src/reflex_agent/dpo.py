"""Preference optimization of a toy denoising policy (the "refine model" tool).

The policy is exactly differentiable: step t of a trajectory draws
a_t ~ Normal(c_t * x_t + b_t, sigma_t^2 I) and the learnable parameters are
the per-step bias vectors b_t. Preference pairs of whole trajectories feed
the pairwise logistic loss

    loss = -log sigmoid(beta * [L(theta, w) - L(ref, w)]
                        - beta * [L(theta, l) - L(ref, l)])

where L is the trajectory's total Gaussian log-probability. The loss is
convex in the biases, its gradient is closed-form, and at theta == ref it
equals ln 2 exactly — all three facts are test oracles.

All sampling noise comes from hash-keyed Box-Muller draws, never from a
stateful generator, so trajectories are bit-identical across platforms and
"paired seeds" (same seed, two policies) share their noise exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .core import ReflexError, canonical_dumps, derive_seed, unit_uniform

PreferenceOracle = Callable[[np.ndarray, np.ndarray], int]


class ShapeMismatchError(ReflexError):
    code = "ShapeMismatch"


class NonPositiveBetaError(ReflexError):
    code = "NonPositiveBeta"


class EmptyStoreError(ReflexError):
    code = "EmptyStore"


@dataclass(frozen=True)
class DiffusionSchedule:
    """Step structure of the denoising chain: drift c_t and noise sigma_t."""

    num_steps: int
    noise_scales: tuple[float, ...]
    drift_coeffs: tuple[float, ...]

    def __post_init__(self):
        if self.num_steps < 1:
            raise ReflexError(f"need at least one denoising step, got {self.num_steps}")
        if len(self.noise_scales) != self.num_steps or len(self.drift_coeffs) != self.num_steps:
            raise ShapeMismatchError(
                f"schedule arrays must have length {self.num_steps}"
            )
        if any(s <= 0 for s in self.noise_scales):
            raise ReflexError("noise scales must be positive")

    @classmethod
    def constant(cls, num_steps: int, sigma: float = 1.0, c: float = 1.0) -> "DiffusionSchedule":
        return cls(num_steps, (sigma,) * num_steps, (c,) * num_steps)

    def to_jsonable(self) -> dict:
        return {
            "num_steps": self.num_steps,
            "noise_scales": list(self.noise_scales),
            "drift_coeffs": list(self.drift_coeffs),
        }

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "DiffusionSchedule":
        return cls(
            num_steps=int(data["num_steps"]),
            noise_scales=tuple(float(x) for x in data["noise_scales"]),
            drift_coeffs=tuple(float(x) for x in data["drift_coeffs"]),
        )


DEFAULT_SCHEDULE = DiffusionSchedule.constant(num_steps=4)
DEFAULT_DIMENSION = 2


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """The learnable theta: one bias vector per denoising step, shape (T, d)."""

    schedule: DiffusionSchedule
    biases: np.ndarray

    def __post_init__(self):
        biases = np.asarray(self.biases, dtype=float)
        if biases.ndim != 2 or biases.shape[0] != self.schedule.num_steps:
            raise ShapeMismatchError(
                f"biases must have shape ({self.schedule.num_steps}, d), "
                f"got {biases.shape}"
            )
        if not np.all(np.isfinite(biases)):
            raise ReflexError("policy biases must be finite")
        biases.setflags(write=False)
        object.__setattr__(self, "biases", biases)

    @property
    def dimension(self) -> int:
        return self.biases.shape[1]

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, PolicyParams)
            and self.schedule == other.schedule
            and np.array_equal(self.biases, other.biases)
        )

    @classmethod
    def zeros(cls, schedule: DiffusionSchedule, dimension: int) -> "PolicyParams":
        return cls(schedule, np.zeros((schedule.num_steps, dimension)))

    def with_biases(self, biases: np.ndarray) -> "PolicyParams":
        return PolicyParams(self.schedule, np.array(biases, dtype=float))

    def to_jsonable(self) -> dict:
        return {
            "schedule": self.schedule.to_jsonable(),
            "biases": [[float(v) for v in row] for row in self.biases],
        }

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "PolicyParams":
        return cls(
            schedule=DiffusionSchedule.from_jsonable(data["schedule"]),
            biases=np.array(data["biases"], dtype=float),
        )

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(canonical_dumps(self.to_jsonable()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PolicyParams":
        return cls.from_jsonable(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True, eq=False)
class DenoisingTrajectory:
    """States x_0..x_{T-1} and actions a_0..a_{T-1}; state t+1 equals action t."""

    states: np.ndarray  # (T, d)
    actions: np.ndarray  # (T, d)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        actions = np.asarray(self.actions, dtype=float)
        if states.ndim != 2 or states.shape != actions.shape:
            raise ShapeMismatchError(
                f"states {states.shape} and actions {actions.shape} must both be (T, d)"
            )
        if states.shape[0] > 1 and not np.array_equal(states[1:], actions[:-1]):
            raise ReflexError("state t+1 must equal action t along the chain")
        states.setflags(write=False)
        actions.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)

    @property
    def num_steps(self) -> int:
        return self.states.shape[0]

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    @property
    def final_sample(self) -> np.ndarray:
        return self.actions[-1]

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, DenoisingTrajectory)
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
        )

    def to_jsonable(self) -> dict:
        return {
            "states": [[float(v) for v in row] for row in self.states],
            "actions": [[float(v) for v in row] for row in self.actions],
        }

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "DenoisingTrajectory":
        return cls(
            states=np.array(data["states"], dtype=float),
            actions=np.array(data["actions"], dtype=float),
        )


@dataclass(frozen=True)
class PreferencePair:
    winner: DenoisingTrajectory
    loser: DenoisingTrajectory
    prompt_id: str
    ts_ms: int

    def __post_init__(self):
        if (
            self.winner.num_steps != self.loser.num_steps
            or self.winner.dimension != self.loser.dimension
        ):
            raise ShapeMismatchError("winner and loser trajectories must share (T, d)")

    def to_jsonable(self) -> dict:
        return {
            "winner": self.winner.to_jsonable(),
            "loser": self.loser.to_jsonable(),
            "prompt_id": self.prompt_id,
            "ts_ms": self.ts_ms,
        }

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "PreferencePair":
        return cls(
            winner=DenoisingTrajectory.from_jsonable(data["winner"]),
            loser=DenoisingTrajectory.from_jsonable(data["loser"]),
            prompt_id=data["prompt_id"],
            ts_ms=int(data["ts_ms"]),
        )


@dataclass(frozen=True)
class TrainerConfig:
    beta: float = 1.0
    learning_rate: float = 0.05
    epochs: int = 5
    prompts_per_epoch: int = 3
    batch_size: int = 40

    def __post_init__(self):
        if self.beta <= 0:
            raise NonPositiveBetaError(f"beta must be positive, got {self.beta}")
        for name in ("learning_rate", "epochs", "prompts_per_epoch", "batch_size"):
            if getattr(self, name) <= 0:
                raise ReflexError(f"{name} must be positive")


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _std_normal(*parts: int | str) -> float:
    # Box-Muller on hash-keyed uniforms; (k + 0.5)/2^64 keeps u1 off zero
    u1 = (derive_seed(*parts, "u1") + 0.5) / float(1 << 64)
    u2 = unit_uniform(*parts, "u2")
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def _noise(seed: int, tag: str, t: int, dimension: int) -> np.ndarray:
    return np.array([_std_normal(seed, tag, t, i) for i in range(dimension)])


def sample_trajectory(params: PolicyParams, seed: int) -> DenoisingTrajectory:
    """Roll the policy forward from x_0 ~ Normal(0, I).

    Two policies sampled with the same seed share x_0 and every per-step
    noise draw, so their trajectories differ only through the biases —
    the "paired seeds" evaluation protocol.
    """
    d = params.dimension
    schedule = params.schedule
    states = np.empty((schedule.num_steps, d))
    actions = np.empty((schedule.num_steps, d))
    x = _noise(seed, "x0", 0, d)
    for t in range(schedule.num_steps):
        states[t] = x
        mean = schedule.drift_coeffs[t] * x + params.biases[t]
        x = mean + schedule.noise_scales[t] * _noise(seed, "eps", t + 1, d)
        actions[t] = x
    return DenoisingTrajectory(states=states, actions=actions)


# ---------------------------------------------------------------------------
# Log-probabilities, loss, gradient
# ---------------------------------------------------------------------------

def _check_shapes(params: PolicyParams, traj: DenoisingTrajectory) -> None:
    if traj.num_steps != params.schedule.num_steps or traj.dimension != params.dimension:
        raise ShapeMismatchError(
            f"trajectory shape ({traj.num_steps}, {traj.dimension}) does not match "
            f"policy shape ({params.schedule.num_steps}, {params.dimension})"
        )


def _means(params: PolicyParams, traj: DenoisingTrajectory) -> np.ndarray:
    drift = np.asarray(params.schedule.drift_coeffs)[:, None]
    return drift * traj.states + params.biases


def log_prob(params: PolicyParams, traj: DenoisingTrajectory) -> tuple[np.ndarray, float]:
    """Per-step Gaussian log densities of the actions, and their total."""
    _check_shapes(params, traj)
    sigma = np.asarray(params.schedule.noise_scales)
    residual = traj.actions - _means(params, traj)
    sq = np.sum(residual * residual, axis=1)
    d = traj.dimension
    per_step = -0.5 * d * np.log(2.0 * np.pi) - d * np.log(sigma) - sq / (2.0 * sigma**2)
    return per_step, float(np.sum(per_step))


def step_log_ratios(theta: PolicyParams, ref: PolicyParams, traj: DenoisingTrajectory) -> np.ndarray:
    """Per-step log pi_theta / pi_ref along one trajectory (diagnostics)."""
    theta_steps, _ = log_prob(theta, traj)
    ref_steps, _ = log_prob(ref, traj)
    return theta_steps - ref_steps


def _inner_argument(
    theta: PolicyParams, ref: PolicyParams, pair: PreferencePair, beta: float
) -> float:
    _, lw_theta = log_prob(theta, pair.winner)
    _, lw_ref = log_prob(ref, pair.winner)
    _, ll_theta = log_prob(theta, pair.loser)
    _, ll_ref = log_prob(ref, pair.loser)
    return beta * (lw_theta - lw_ref) - beta * (ll_theta - ll_ref)


def d3po_loss(
    theta: PolicyParams, ref: PolicyParams, pair: PreferencePair, beta: float
) -> float:
    """-log sigmoid of the winner-vs-loser log-ratio margin; ln 2 at theta=ref."""
    if beta <= 0:
        raise NonPositiveBetaError(f"beta must be positive, got {beta}")
    z = _inner_argument(theta, ref, pair, beta)
    return float(np.logaddexp(0.0, -z))  # softplus(-z), numerically stable


def batch_loss(
    theta: PolicyParams, ref: PolicyParams, pairs: Sequence[PreferencePair], beta: float
) -> float:
    if not pairs:
        raise EmptyStoreError("no preference pairs to evaluate")
    return float(np.mean([d3po_loss(theta, ref, p, beta) for p in pairs]))


def d3po_grad(
    theta: PolicyParams, ref: PolicyParams, pairs: Sequence[PreferencePair], beta: float
) -> np.ndarray:
    """Analytic gradient of the mean batch loss w.r.t. every bias b_t.

    With Gaussian policies, d L(theta, traj) / d b_t = (a_t - mu_t) / sigma_t^2,
    so each pair contributes -sigmoid(-z) * beta * [winner residual - loser
    residual] / sigma_t^2.
    """
    if beta <= 0:
        raise NonPositiveBetaError(f"beta must be positive, got {beta}")
    if not pairs:
        raise EmptyStoreError("no preference pairs to differentiate")
    sigma_sq = np.asarray(theta.schedule.noise_scales)[:, None] ** 2
    grad = np.zeros_like(theta.biases)
    for pair in pairs:
        _check_shapes(theta, pair.winner)
        _check_shapes(ref, pair.winner)
        z = _inner_argument(theta, ref, pair, beta)
        weight = math.exp(-np.logaddexp(0.0, z))  # sigmoid(-z), stable for large |z|
        dw = (pair.winner.actions - _means(theta, pair.winner)) / sigma_sq
        dl = (pair.loser.actions - _means(theta, pair.loser)) / sigma_sq
        grad += -weight * beta * (dw - dl)
    return grad / len(pairs)


def kl_per_step(theta: PolicyParams, ref: PolicyParams) -> np.ndarray:
    """KL(pi_theta || pi_ref) per step; closed form for equal-variance Gaussians."""
    if theta.schedule != ref.schedule or theta.dimension != ref.dimension:
        raise ShapeMismatchError("KL needs policies on the same schedule and dimension")
    diff = theta.biases - ref.biases
    sigma_sq = np.asarray(theta.schedule.noise_scales) ** 2
    return np.sum(diff * diff, axis=1) / (2.0 * sigma_sq)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

class _BatchStats:
    """Per-batch arrays that do not depend on theta, stacked once.

    With mu_t = c_t * x_t + b_t, the residual a_t - mu_t is (a_t - c_t x_t)
    - b_t, and only the bias term changes during training — so the drift
    part is precomputed and every step is a few whole-batch numpy ops.
    Identical math to d3po_loss / d3po_grad (tested against them).
    """

    def __init__(self, pairs: Sequence[PreferencePair], schedule: DiffusionSchedule):
        drift = np.asarray(schedule.drift_coeffs)[None, :, None]
        self.w_drifted = np.stack([p.winner.actions for p in pairs]) - drift * np.stack(
            [p.winner.states for p in pairs]
        )  # (n, T, d): a_t - c_t x_t
        self.l_drifted = np.stack([p.loser.actions for p in pairs]) - drift * np.stack(
            [p.loser.states for p in pairs]
        )
        self.sigma_sq = np.asarray(schedule.noise_scales)[None, :, None] ** 2
        self.n = len(pairs)

    def loss_and_grad(
        self, theta: PolicyParams, ref: PolicyParams, beta: float
    ) -> tuple[float, np.ndarray]:
        rw = self.w_drifted - theta.biases[None]
        rl = self.l_drifted - theta.biases[None]
        rw_ref = self.w_drifted - ref.biases[None]
        rl_ref = self.l_drifted - ref.biases[None]
        # L_theta(traj) - L_ref(traj) = sum_t (|r_ref|^2 - |r_theta|^2) / (2 sigma_t^2)
        dw = np.sum((rw_ref**2 - rw**2) / (2.0 * self.sigma_sq), axis=(1, 2))
        dl = np.sum((rl_ref**2 - rl**2) / (2.0 * self.sigma_sq), axis=(1, 2))
        z = beta * (dw - dl)  # (n,)
        loss = float(np.mean(np.logaddexp(0.0, -z)))
        weight = np.exp(-np.logaddexp(0.0, z))  # sigmoid(-z)
        grad = np.mean(
            -weight[:, None, None] * beta * (rw - rl) / self.sigma_sq, axis=0
        )
        return loss, grad


@dataclass(frozen=True)
class TrainResult:
    params: PolicyParams
    step_losses: tuple[float, ...]
    epoch_losses: tuple[float, ...]

    def to_jsonable(self) -> dict:
        return {
            "params": self.params.to_jsonable(),
            "step_losses": list(self.step_losses),
            "epoch_losses": list(self.epoch_losses),
        }


def train(
    theta0: PolicyParams,
    ref: PolicyParams,
    pairs: Sequence[PreferencePair],
    cfg: TrainerConfig,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Plain gradient descent over epochs x prompts_per_epoch batch steps.

    `ref` is never updated. Batches are consecutive slices of `pairs`,
    cycled in order; a final short slice still trains (the interactive
    service always calls with an exact multiple of batch_size).
    `on_epoch(epoch, mean_loss)` reports per-epoch progress.
    """
    if not pairs:
        raise EmptyStoreError("pair store is empty")
    for pair in pairs:
        _check_shapes(theta0, pair.winner)
        _check_shapes(ref, pair.loser)
    batches = [
        _BatchStats(pairs[i : i + cfg.batch_size], theta0.schedule)
        for i in range(0, len(pairs), cfg.batch_size)
    ]
    theta = theta0
    step_losses: list[float] = []
    epoch_losses: list[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        losses_this_epoch: list[float] = []
        for _ in range(cfg.prompts_per_epoch):
            batch = batches[step % len(batches)]
            loss, grad = batch.loss_and_grad(theta, ref, cfg.beta)
            losses_this_epoch.append(loss)
            theta = theta.with_biases(theta.biases - cfg.learning_rate * grad)
            step += 1
        step_losses.extend(losses_this_epoch)
        epoch_mean = float(np.mean(losses_this_epoch))
        epoch_losses.append(epoch_mean)
        if on_epoch is not None:
            on_epoch(epoch + 1, epoch_mean)
    return TrainResult(
        params=theta,
        step_losses=tuple(step_losses),
        epoch_losses=tuple(epoch_losses),
    )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def prefer_positive(a_final: np.ndarray, b_final: np.ndarray) -> int:
    """Default judge: the sample with the larger coordinate sum wins; 0 = tie."""
    sa, sb = float(np.sum(a_final)), float(np.sum(b_final))
    if sa > sb:
        return 1
    if sa < sb:
        return -1
    return 0


def win_rate(
    theta: PolicyParams,
    ref: PolicyParams,
    preference_oracle: PreferenceOracle = prefer_positive,
    n_samples: int = 2000,
    seed: int = 0,
) -> float:
    """Fraction of paired-seed samples where the oracle prefers theta's.

    Paired seeds mean both policies see identical noise, so theta == ref
    yields all ties; ties are broken by a seeded fair coin.
    """
    if n_samples < 1:
        raise ReflexError("need at least one sample")
    import random as _random

    coin = _random.Random(derive_seed(seed, "tiebreak"))
    wins = 0
    for i in range(n_samples):
        pair_seed = derive_seed(seed, "sample", i)
        ours = sample_trajectory(theta, pair_seed).final_sample
        theirs = sample_trajectory(ref, pair_seed).final_sample
        verdict = preference_oracle(ours, theirs)
        if verdict > 0 or (verdict == 0 and coin.random() < 0.5):
            wins += 1
    return wins / n_samples


def synthesize_pairs(
    ref: PolicyParams,
    n_pairs: int,
    seed: int = 0,
    oracle: PreferenceOracle = prefer_positive,
) -> list[PreferencePair]:
    """Sample pair candidates from `ref` and label them with the oracle.

    The stand-in for accumulated human feedback in batch experiments; exact
    ties are broken toward the first sample.
    """
    pairs: list[PreferencePair] = []
    for j in range(n_pairs):
        first = sample_trajectory(ref, derive_seed(seed, "pair", j, 0))
        second = sample_trajectory(ref, derive_seed(seed, "pair", j, 1))
        if oracle(first.final_sample, second.final_sample) >= 0:
            winner, loser = first, second
        else:
            winner, loser = second, first
        pairs.append(PreferencePair(winner=winner, loser=loser, prompt_id=f"synthetic-{j}", ts_ms=0))
    return pairs


# ---------------------------------------------------------------------------
# Pair store files (append-only JSONL)
# ---------------------------------------------------------------------------

def append_pair(path: Union[str, Path], pair: PreferencePair) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(canonical_dumps(pair.to_jsonable()) + "\n")


def load_pairs(path: Union[str, Path]) -> list[PreferencePair]:
    path = Path(path)
    if not path.exists():
        return []
    pairs = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            pairs.append(PreferencePair.from_jsonable(json.loads(line)))
    return pairs
