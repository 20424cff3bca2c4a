"""Discrete batch-constrained Q-learning, generic over quantum and classical
function approximators."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import env
from .ansatz import QModel, expectations, init_qmodel, softmax
from .data import Buffer, sample_minibatch
from .grad import cross_entropy_loss, loss_grad_exact, spsa_grad, td_loss
from .mlp import MlpModel, backward, forward, init_mlp, mlp_sizes
from .optim import OptimizerState, step as optim_step
from .rng import derive_seeds, make_rng

RECORD_COLUMNS = ("update", "mean_reward", "td_loss", "gen_loss", "seed")


class TrainingDiverged(RuntimeError):
    def __init__(self, update: int, td: float, gen: float):
        super().__init__(f"non-finite loss at update {update}: td={td}, gen={gen}")
        self.diagnostic = {"update": update, "td_loss": td, "gen_loss": gen}


@dataclass
class TrainConfig:
    agent: str = "quantum"  # quantum | classical
    encoding: str = "cyclic"
    layers: int = 5
    hidden: int = 5
    gamma: float = 0.99
    tau: float = 0.3
    batch_size: int = 32
    lr: float = 0.01
    optimizer: str = "amsgrad"
    grad: str = "spsa"  # spsa | paramshift | backprop
    spsa_c: float = 0.1
    max_updates: int = 25000
    target_period: int = 100
    eval_every: int = 100
    eval_episodes: int = 10
    early_stop: bool = True
    shots: int | None = None
    seed: int = 0
    bounds: tuple = env.DEFAULT_BOUNDS

    def __post_init__(self):
        self.agent = self.agent.lower()
        self.grad = self.grad.lower()
        self.optimizer = self.optimizer.lower()
        self.bounds = tuple(float(b) for b in self.bounds)
        if self.agent not in ("quantum", "classical"):
            raise ValueError(f"unknown agent kind {self.agent!r}")
        allowed = ("spsa", "paramshift") if self.agent == "quantum" else ("backprop",)
        if self.grad not in allowed:
            raise ValueError(f"gradient method {self.grad!r} not available for {self.agent} agents")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0 <= self.tau <= 1:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.lr < 0 or self.batch_size < 1 or self.max_updates < 0:
            raise ValueError("lr and max_updates must be non-negative, batch_size positive")
        if self.target_period < 1 or self.eval_every < 1:
            raise ValueError("target_period and eval_every must be positive")


# ----------------------------------------------------------------------------
# function approximators


class QuantumApprox:
    """Adapter exposing a QModel through flat parameters."""

    kind = "quantum"

    def __init__(self, model: QModel):
        self.model = model

    @property
    def n_params(self) -> int:
        return self.model.n_trainable

    def get_params(self) -> np.ndarray:
        return self.model.get_flat()

    def set_params(self, flat: np.ndarray) -> None:
        self.model.set_flat(flat)

    def copy(self) -> "QuantumApprox":
        return QuantumApprox(self.model.copy())

    def outputs(self, x, shots: int | None = None, rng=None) -> np.ndarray:
        m = self.model
        return m.w * expectations(m.template, m.observables, x, m.theta, shots, rng)

    def exact_grad(self, x, loss) -> tuple[float, np.ndarray]:
        est = loss_grad_exact(loss, self.model, x)
        return est.loss, est.flat

    def spsa_grad(self, x, loss, c: float, rng) -> tuple[float, np.ndarray]:
        """SPSA over the circuit angles; output weights get their analytic gradient."""
        m = self.model
        plain = expectations(m.template, m.observables, x, m.theta)
        value, dq = loss(m.w * plain)
        dw = (dq * plain).sum(axis=0)

        def loss_at(theta):
            return loss(m.w * expectations(m.template, m.observables, x, theta))[0]

        est = spsa_grad(loss_at, m.theta, c, rng)
        return value, np.concatenate([est.dtheta, dw])


class MlpApprox:
    kind = "classical"

    def __init__(self, model: MlpModel):
        self.model = model

    @property
    def n_params(self) -> int:
        return self.model.n_params

    def get_params(self) -> np.ndarray:
        return self.model.get_flat()

    def set_params(self, flat: np.ndarray) -> None:
        self.model.set_flat(flat)

    def copy(self) -> "MlpApprox":
        return MlpApprox(self.model.copy())

    def outputs(self, x, shots: int | None = None, rng=None) -> np.ndarray:
        return forward(self.model, x)

    def exact_grad(self, x, loss) -> tuple[float, np.ndarray]:
        value, dout = loss(forward(self.model, x))
        return value, backward(self.model, x, dout)


def make_approximators(config: TrainConfig, rng: np.random.Generator):
    """Fresh (Q, generative) pair; both share one architecture."""
    if config.agent == "quantum":
        return tuple(
            QuantumApprox(init_qmodel(config.encoding, config.layers, rng)) for _ in range(2)
        )
    sizes = mlp_sizes(config.hidden)
    return tuple(MlpApprox(init_mlp(sizes, rng)) for _ in range(2))


# ----------------------------------------------------------------------------
# batch constraint and policy


def constraint_mask(probs: np.ndarray, tau: float) -> np.ndarray:
    """Actions whose probability relative to the most likely one exceeds ``tau``.

    With ``tau == 1`` the strict inequality would exclude everything, so the
    argmax set is returned instead.
    """
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("probabilities must be non-negative and sum to one")
    return ratio_mask(probs, tau)


def ratio_mask(scores: np.ndarray, tau: float) -> np.ndarray:
    """The filter in ratio form: ``scores / max(scores) > tau``.

    Only ratios matter, so any positive rescaling of ``scores`` gives the same mask.
    """
    if not 0 <= tau <= 1:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    scores = np.asarray(scores, dtype=float)
    top = scores.max(axis=-1, keepdims=True)
    if tau >= 1:
        return scores == top
    return scores / top > tau


def batch_constrained_actions(probs, tau: float) -> list[int]:
    return np.flatnonzero(constraint_mask(probs, tau)).tolist()


def constrained_argmax(q: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Greedy action among allowed ones; ties go to the lowest index."""
    return np.argmax(np.where(mask, q, -np.inf), axis=-1)


def policy_action(q_model, gen_model, s_norm, tau: float) -> int:
    s = np.asarray(s_norm, dtype=float)[None, :]
    probs = softmax(gen_model.outputs(s))
    return int(constrained_argmax(q_model.outputs(s), constraint_mask(probs, tau))[0])


def td_targets(
    batch: Buffer,
    q_online: Callable[[np.ndarray], np.ndarray],
    q_target: Callable[[np.ndarray], np.ndarray],
    gen_probs: Callable[[np.ndarray], np.ndarray],
    gamma: float,
    tau: float,
) -> np.ndarray:
    """Double-DQN targets restricted to the batch-constrained action set.

    The next action is picked by the online network and scored by the target
    network. Terminal transitions do not bootstrap; time-limit truncation does.
    """
    mask = constraint_mask(gen_probs(batch.sp), tau)
    a_next = constrained_argmax(q_online(batch.sp), mask)
    bootstrap = q_target(batch.sp)[np.arange(len(batch)), a_next]
    return batch.r + gamma * np.where(batch.terminal, 0.0, bootstrap)


# ----------------------------------------------------------------------------
# evaluation


@dataclass
class EpisodeStats:
    rewards: np.ndarray
    violations: int = 0


def run_episodes(
    q_model,
    gen_model,
    tau: float,
    seeds: Sequence[int],
    max_steps: int = env.MAX_STEPS,
    bounds=env.DEFAULT_BOUNDS,
    shots: int | None = None,
    rng: np.random.Generator | None = None,
) -> EpisodeStats:
    """Run one greedy batch-constrained episode per seed, all in lock step.

    Every executed action is checked against the constraint set; ``max_steps``
    caps episode length (time-limit truncation).
    """
    seeds = list(seeds)
    obs = np.stack([env.reset_obs(make_rng(s, "eval")) for s in seeds])
    alive = np.ones(len(seeds), dtype=bool)
    rewards = np.zeros(len(seeds))
    violations = 0
    for _ in range(max_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        s = env.normalize(obs[idx], bounds)
        probs = softmax(gen_model.outputs(s, shots, rng))
        mask = constraint_mask(probs, tau)
        actions = constrained_argmax(q_model.outputs(s, shots, rng), mask)
        violations += int(np.count_nonzero(~mask[np.arange(idx.size), actions]))
        obs[idx] = env.dynamics(obs[idx], actions)
        rewards[idx] += 1.0
        alive[idx[env.out_of_bounds(obs[idx])]] = False
    return EpisodeStats(rewards, violations)


def globality_test(
    q_model, gen_model, tau: float, seeds: Sequence[int], cap: int = 100_000,
    bounds=env.DEFAULT_BOUNDS,
) -> np.ndarray:
    """Steps survived per seed without the 500-step limit, capped at ``cap``."""
    return run_episodes(q_model, gen_model, tau, seeds, cap, bounds).rewards.astype(int)


# ----------------------------------------------------------------------------
# training


@dataclass
class RunRecord:
    seed: int
    config: dict
    rows: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    violations: int = 0
    early_stopped: bool = False
    updates: int = 0
    notes: dict = field(default_factory=dict)

    @property
    def rewards(self) -> list[float]:
        return [r["mean_reward"] for r in self.rows]

    @property
    def best_reward(self) -> float:
        return max(self.rewards) if self.rows else float("nan")

    @property
    def final_reward(self) -> float:
        return self.rows[-1]["mean_reward"] if self.rows else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(RECORD_COLUMNS)
            for row in self.rows:
                writer.writerow([_fmt(row[c]) for c in RECORD_COLUMNS])

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "updates": self.updates,
            "early_stopped": self.early_stopped,
            "best_mean_reward": self.best_reward,
            "final_mean_reward": self.final_reward,
            "constraint_violations": self.violations,
            "config": self.config,
            "notes": self.notes,
        }

    def to_json(self, path, include_timing: bool = True) -> None:
        out = self.summary()
        if include_timing:
            out["wall_times"] = self.wall_times
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(out, fh, indent=2, sort_keys=True)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


class Trainer:
    """Owns the online, target and generative approximators plus optimizer state."""

    def __init__(self, config: TrainConfig, buffer: Buffer, approximators=None):
        self.config = config
        self.buffer = buffer
        if len(buffer) == 0:
            raise ValueError("cannot train on an empty buffer")
        init_rng = make_rng(config.seed, "init")
        self.q, self.gen = approximators or make_approximators(config, init_rng)
        self.q_target = self.q.copy()
        self.q_opt = OptimizerState(self.q.n_params, config.optimizer)
        self.gen_opt = OptimizerState(self.gen.n_params, config.optimizer)
        self.minibatch_rng = make_rng(config.seed, "minibatch")
        self.spsa_rng = make_rng(config.seed, "spsa")
        self.updates = 0

    def _grad(self, approx, x, loss):
        if self.config.grad == "spsa":
            return approx.spsa_grad(x, loss, self.config.spsa_c, self.spsa_rng)
        return approx.exact_grad(x, loss)

    def targets(self, batch: Buffer) -> np.ndarray:
        return td_targets(
            batch,
            self.q.outputs,
            self.q_target.outputs,
            lambda x: softmax(self.gen.outputs(x)),
            self.config.gamma,
            self.config.tau,
        )

    def train_step(self) -> tuple[float, float]:
        cfg = self.config
        batch = sample_minibatch(self.buffer, cfg.batch_size, self.minibatch_rng)
        y = self.targets(batch)
        td, g_q = self._grad(self.q, batch.s, td_loss(batch.a, y))
        ce, g_gen = self._grad(self.gen, batch.s, cross_entropy_loss(batch.a))
        if not (math.isfinite(td) and math.isfinite(ce)):
            raise TrainingDiverged(self.updates, td, ce)
        params, self.q_opt = optim_step(self.q_opt, self.q.get_params(), g_q, cfg.lr)
        self.q.set_params(params)
        params, self.gen_opt = optim_step(self.gen_opt, self.gen.get_params(), g_gen, cfg.lr)
        self.gen.set_params(params)
        self.updates += 1
        if self.updates % cfg.target_period == 0:
            self.sync_target()
        return td, ce

    def sync_target(self) -> None:
        self.q_target = self.q.copy()

    def snapshot(self):
        return self.q.copy(), self.gen.copy()


@dataclass
class TrainResult:
    record: RunRecord
    q: object
    gen: object
    best_q: object
    best_gen: object


def train(
    config: TrainConfig,
    buffer: Buffer,
    approximators=None,
    stop_when: Callable[[RunRecord], bool] | None = None,
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Loop train steps, evaluating every ``eval_every`` updates on
    ``eval_episodes`` seeded episodes.

    Early stopping (when enabled) triggers once every validation episode
    reaches the 500-step limit. ``stop_when`` is an extra caller-side hook.
    """
    trainer = Trainer(config, buffer, approximators)
    eval_seeds = derive_seeds(config.seed, "eval", config.eval_episodes)
    record = RunRecord(config.seed, _config_dict(config))
    record.notes = {
        "output_weights": "analytic gradient" if config.grad == "spsa" else "same as angles",
        "init": "angles U[-pi, pi], w = 1" if config.agent == "quantum" else "glorot uniform",
        "target_update": f"hard copy every {config.target_period} updates",
        "n_params": trainer.q.n_params,
    }
    start = time.perf_counter()
    best = (-np.inf, trainer.snapshot())
    td_hist: list[float] = []
    gen_hist: list[float] = []

    def evaluate() -> bool:
        nonlocal best
        stats = run_episodes(trainer.q, trainer.gen, config.tau, eval_seeds, bounds=config.bounds)
        record.violations += stats.violations
        row = {
            "update": trainer.updates,
            "mean_reward": float(stats.rewards.mean()),
            "td_loss": float(np.mean(td_hist)) if td_hist else float("nan"),
            "gen_loss": float(np.mean(gen_hist)) if gen_hist else float("nan"),
            "seed": config.seed,
        }
        td_hist.clear()
        gen_hist.clear()
        record.rows.append(row)
        record.wall_times.append(time.perf_counter() - start)
        if row["mean_reward"] > best[0]:
            best = (row["mean_reward"], trainer.snapshot())
        if progress:
            progress(row)
        solved = bool(np.all(stats.rewards >= env.MAX_STEPS))
        return (config.early_stop and solved) or bool(stop_when and stop_when(record))

    stop = evaluate()
    while not stop and trainer.updates < config.max_updates:
        td, ce = trainer.train_step()
        td_hist.append(td)
        gen_hist.append(ce)
        if trainer.updates % config.eval_every == 0 or trainer.updates == config.max_updates:
            stop = evaluate()
    record.updates = trainer.updates
    record.early_stopped = stop and trainer.updates < config.max_updates
    return TrainResult(record, trainer.q, trainer.gen, *best[1])


def _config_dict(config: TrainConfig) -> dict:
    out = asdict(config)
    out["bounds"] = list(config.bounds)
    return out


def config_fields() -> list[str]:
    return [f.name for f in fields(TrainConfig)]
