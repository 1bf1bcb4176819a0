"""Imitation learning against a BFS shortest-path teacher.

Rollouts execute the teacher's actions while the full pipeline (in
train mode, so forgetting stays off) computes its action distribution
at every step; the loss is the mean negative log-likelihood of the
teacher actions, backpropagated through the policy, both decoders, the
graph encoder, and goal fusion (the frozen observation projection is
excluded). Optimization is plain SGD with momentum so checkpoints carry
no optimizer state.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .agent import AgentConfig, EpisodeResult, Mode, init_params, run_episode
from .encoders import decode_backward, generate_wm_backward
from .episodes import EpisodeSpec, RuleThresholds, generate_episode, oracle_length
from .errors import TrainingDiverged, WorldUnsuitableError
from .gridworld import Action, AgentPose, GridWorld, bfs_distance_field, generate_world, success_check
from .metrics import aggregate, episode_metrics
from .policy import action_nll_backward, policy_step_backward
from .rng import stream
from .tensor import ParamStore, save_checkpoint


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    optimizer: str = "adam"  # "adam" | "sgd" (plain SGD with momentum)
    batch_episodes: int = 32
    worlds_per_batch: int = 4
    updates: int = 2000
    seed: int = 0
    grad_clip_norm: float = 5.0
    world_size: int = 15
    obstacle_density: float = 0.10
    eval_every: int = 100
    eval_episodes: int = 20
    agent: AgentConfig = field(default_factory=lambda: AgentConfig(mode=Mode.TRAIN))

    def __post_init__(self):
        for name in ("learning_rate", "batch_episodes", "updates", "grad_clip_norm",
                     "worlds_per_batch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


# ---------------------------------------------------------------------------
# The teacher.
# ---------------------------------------------------------------------------


def expert_action(world: GridWorld, pose: AgentPose, goal_cell: tuple[int, int]) -> Action:
    """STOP once within the success radius; otherwise head for the next
    cell of the BFS geodesic, turning if needed (left on the 180 tie)."""
    if success_check(pose, goal_cell, world.cell_size):
        return Action.STOP
    dist = bfs_distance_field(world, goal_cell)
    here = dist[pose.y, pose.x]
    if here < 0:
        raise ValueError(f"goal {goal_cell} unreachable from {pose.cell}")
    # First neighbor (N, E, S, W order) that steps down the field.
    for direction, (dx, dy) in enumerate(((0, -1), (1, 0), (0, 1), (-1, 0))):
        nx, ny = pose.x + dx, pose.y + dy
        if not world.blocked(nx, ny) and dist[ny, nx] == here - 1:
            break
    else:
        raise ValueError(f"no descending neighbor at {pose.cell}")
    diff = (direction - int(pose.heading)) % 4
    if diff == 0:
        return Action.MOVE_FORWARD
    if diff == 1:
        return Action.TURN_RIGHT
    return Action.TURN_LEFT  # diff 2 (tie) or 3


# ---------------------------------------------------------------------------
# Loss and backward over collected tapes.
# ---------------------------------------------------------------------------


def tape_loss(tape) -> float:
    total = 0.0
    for caches, action in tape:
        total += -math.log(max(caches["pol"]["probs"][action], 1e-300))
    return total


def episode_backward(tape, params: ParamStore, total_steps: int, hidden_dim: int) -> None:
    """Backpropagate mean-NLL gradients through one episode's tape,
    carrying the LSTM state and LTM recurrences across steps."""
    dh = np.zeros(hidden_dim)
    dc = np.zeros(hidden_dim)
    dltm: np.ndarray | None = None
    for caches, action in reversed(tape):
        probs = caches["pol"]["probs"]
        dlogits = action_nll_backward(probs, action, 1.0 / total_steps)
        dh, dc, df_cur, df_goal, _ = policy_step_backward(dlogits, dh, dc, caches["pol"], params)
        dwm, _ = decode_backward(df_cur, caches["dec_cur"], params, "enc.dec_cur")
        dwm_goal, _ = decode_backward(df_goal, caches["dec_goal"], params, "enc.dec_goal")
        dwm = dwm + dwm_goal
        dltm = generate_wm_backward(dwm, dltm, caches["wm"], params)


def collect_teacher_episode(world, spec: EpisodeSpec, params, config: AgentConfig,
                            seed: int) -> EpisodeResult:
    return run_episode(
        world, spec.start, spec.goals, params, config,
        seed=seed, episode_id=spec.episode_id,
        action_source=expert_action, collect_tape=True,
    )


def batch_loss_and_grads(params: ParamStore, episodes, hidden_dim: int,
                         accumulate: bool = True) -> float:
    """Mean NLL over all steps of the batch; optionally accumulates
    gradients. `episodes` is a list of (world, spec, tape) triples with
    tapes already collected, or EpisodeResult tapes directly."""
    tapes = [ep.tape for ep in episodes]
    total_steps = sum(len(t) for t in tapes)
    if total_steps == 0:
        raise ValueError("empty batch")
    loss = sum(tape_loss(t) for t in tapes) / total_steps
    if accumulate:
        for t in tapes:
            episode_backward(t, params, total_steps, hidden_dim)
    return loss


class Optimizer:
    """Plain SGD with momentum, or Adam. Kept out of checkpoints: a
    released model is just its parameters."""

    def __init__(self, kind: str, learning_rate: float, momentum: float = 0.9):
        self.kind = kind
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.state: dict[str, np.ndarray] = {}
        self.steps = 0

    def apply(self, params: ParamStore) -> None:
        self.steps += 1
        if self.kind == "sgd":
            for name, value, grad in params.items():
                v = self.state.setdefault(name, np.zeros_like(value))
                v *= self.momentum
                v += grad
                value -= self.learning_rate * v
            return
        b1, b2, eps = 0.9, 0.999, 1e-8
        for name, value, grad in params.items():
            m = self.state.setdefault("m." + name, np.zeros_like(value))
            v = self.state.setdefault("v." + name, np.zeros_like(value))
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad * grad
            m_hat = m / (1 - b1 ** self.steps)
            v_hat = v / (1 - b2 ** self.steps)
            value -= self.learning_rate * m_hat / (np.sqrt(v_hat) + eps)


def imitation_update(params: ParamStore, episodes, cfg: TrainConfig,
                     optimizer: Optimizer) -> tuple[float, float]:
    """One optimizer step on a batch of teacher-driven episodes;
    returns (mean NLL, pre-clip gradient norm)."""
    params.zero_grads()
    loss = batch_loss_and_grads(params, episodes, cfg.agent.hidden_dim)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss!r}")
    grad_norm = params.grad_global_norm()
    if not np.isfinite(grad_norm):
        raise TrainingDiverged(f"non-finite gradient norm at loss {loss}")
    if grad_norm > cfg.grad_clip_norm:
        params.scale_grads(cfg.grad_clip_norm / grad_norm)
    optimizer.apply(params)
    return loss, grad_norm


# ---------------------------------------------------------------------------
# Fresh-episode curriculum (1-goal) and the training loop.
# ---------------------------------------------------------------------------


def sample_episodes_with_retry(seed: int, stream_name: str, index: int, size: int,
                               density: float, n_goals: int, count: int,
                               max_world_tries: int = 16):
    """Deterministically draw a world that can bear `count` episodes,
    retrying fresh world seeds when a layout is unsuitable (too small a
    free component, or sampling budget exhausted)."""
    last_exc = None
    for attempt in range(max_world_tries):
        world_seed = int(stream(seed, stream_name + "_world", index, attempt).integers(0, 2**31 - 1))
        world = generate_world(world_seed, size, size, density)
        rng = stream(seed, stream_name + "_episode", index, attempt)
        try:
            specs = [
                generate_episode(world, n_goals, rng, episode_id=i)
                for i in range(count)
            ]
            return world, specs
        except WorldUnsuitableError as exc:
            last_exc = exc
    raise WorldUnsuitableError(
        f"no suitable {size}x{size} world after {max_world_tries} tries: {last_exc}")


def training_batch(cfg: TrainConfig, update_idx: int):
    """Fresh worlds + 1-goal episodes for one update, fully seeded.
    Episodes are spread over several worlds to de-correlate the batch;
    returns a list of (world, spec) pairs."""
    n_worlds = min(cfg.worlds_per_batch, cfg.batch_episodes)
    per_world = cfg.batch_episodes // n_worlds
    remainder = cfg.batch_episodes - per_world * n_worlds
    pairs = []
    for w in range(n_worlds):
        count = per_world + (1 if w < remainder else 0)
        world, specs = sample_episodes_with_retry(
            cfg.seed, "train", update_idx * 16 + w, cfg.world_size,
            cfg.obstacle_density, 1, count)
        pairs.extend((world, spec) for spec in specs)
    return pairs


def heldout_set(cfg: TrainConfig, n_worlds: int = 3):
    """Fixed 1-goal evaluation set drawn from its own stream."""
    out = []
    per_world = max(1, cfg.eval_episodes // n_worlds)
    for w in range(n_worlds):
        world, specs = sample_episodes_with_retry(
            cfg.seed, "heldout", w, cfg.world_size, cfg.obstacle_density, 1, per_world)
        for i, spec in enumerate(specs):
            spec.episode_id = w * per_world + i
            out.append((world, spec))
    return out


def evaluate_heldout(params, heldout, agent_cfg: AgentConfig, seed: int) -> dict:
    eval_cfg = replace(agent_cfg, mode=Mode.EVAL, forget_enabled=False)
    records = []
    for world, spec in heldout:
        result = run_episode(world, spec.start, spec.goals, params, eval_cfg,
                             seed=seed, episode_id=spec.episode_id)
        length, _ = oracle_length(world, spec)
        records.append(episode_metrics(result, length, spec.difficulty))
    return aggregate(records)


TRAIN_LOG_COLUMNS = ["update", "loss", "grad_norm", "eval_sr", "eval_spl"]


def train_loop(cfg: TrainConfig, out_dir, log_cb=None) -> dict:
    """Run imitation learning; keeps the best-SR checkpoint.

    Writes <out_dir>/best.ckpt, final.ckpt, sidecar JSON and
    train_log.csv. Returns a summary dict.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    params = init_params(cfg.agent, cfg.seed)
    optimizer = Optimizer(cfg.optimizer, cfg.learning_rate, cfg.momentum)
    heldout = heldout_set(cfg)
    best_sr = -1.0
    best_path = os.path.join(out_dir, "best.ckpt")
    final_path = os.path.join(out_dir, "final.ckpt")
    log_path = os.path.join(out_dir, "train_log.csv")
    history = []
    t0 = time.monotonic()

    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAIN_LOG_COLUMNS)
        for update in range(1, cfg.updates + 1):
            pairs = training_batch(cfg, update)
            episodes = [
                collect_teacher_episode(world, spec, params, cfg.agent, seed=cfg.seed)
                for world, spec in pairs
            ]
            loss, grad_norm = imitation_update(params, episodes, cfg, optimizer)
            eval_sr = eval_spl = ""
            if update % cfg.eval_every == 0 or update == cfg.updates:
                agg = evaluate_heldout(params, heldout, cfg.agent, cfg.seed)
                eval_sr, eval_spl = f"{agg['sr']:.6f}", f"{agg['spl']:.6f}"
                if agg["sr"] > best_sr:
                    best_sr = agg["sr"]
                    save_checkpoint(best_path, params)
                    _write_sidecar(best_path, cfg)
                if log_cb:
                    log_cb(update, loss, agg)
            writer.writerow([update, f"{loss:.6f}", f"{grad_norm:.6f}", eval_sr, eval_spl])
            history.append({"update": update, "loss": loss, "grad_norm": grad_norm})

    save_checkpoint(final_path, params)
    _write_sidecar(final_path, cfg)
    if best_sr < 0:  # no eval happened (tiny runs)
        save_checkpoint(best_path, params)
        _write_sidecar(best_path, cfg)
        best_sr = 0.0
    return {
        "best_sr": best_sr,
        "best_checkpoint": best_path,
        "final_checkpoint": final_path,
        "log": log_path,
        "history": history,
        "wall_clock_s": time.monotonic() - t0,
    }


def _write_sidecar(ckpt_path, cfg: TrainConfig) -> None:
    sidecar = {
        "dim": cfg.agent.dim,
        "hidden_dim": cfg.agent.hidden_dim,
        "seed": cfg.seed,
        "projection_seed": cfg.agent.projection_seed,
        "obs_radius": cfg.agent.obs_radius,
        "position_bands": cfg.agent.position_bands,
        "config_hash": config_hash(cfg),
    }
    with open(str(ckpt_path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
        fh.write("\n")


def config_hash(cfg: TrainConfig) -> str:
    import hashlib

    doc = {
        "learning_rate": cfg.learning_rate,
        "momentum": cfg.momentum,
        "batch_episodes": cfg.batch_episodes,
        "updates": cfg.updates,
        "seed": cfg.seed,
        "grad_clip_norm": cfg.grad_clip_norm,
        "world_size": cfg.world_size,
        "obstacle_density": cfg.obstacle_density,
        "dim": cfg.agent.dim,
        "hidden_dim": cfg.agent.hidden_dim,
        "wm_gatv2": cfg.agent.wm_gatv2,
        "ltm_enabled": cfg.agent.ltm_enabled,
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]
