"""Per-step navigation pipeline and multi-goal episode driver.

Step order matters and is fixed: localize/update the map, apply
pending forgetting (evaluation only — the scores were computed by the
goal decoder at the previous step, which is the one-step lag), generate
working memory, decode, then act. Reaching a non-final goal restores
all forgotten nodes and re-targets the goal embedding while the LSTM
state and the LTM carry across the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .encoders import (
    ObsEmbedding,
    decode,
    encode_observation,
    generate_wm,
    init_encoder_params,
    observation_projection,
)
from .errors import SequencingError
from .gridworld import (
    Action,
    AgentPose,
    GridWorld,
    Heading,
    OBS_RADIUS,
    POSITION_BANDS,
    apply_action,
    observe,
    patch_input_dim,
    success_check,
)
from .graph_memory import AttentionScores, TopoMap
from .policy import ActionDist, PolicyState, greedy_action, init_policy_params, policy_step, sample_action
from .rng import stream
from .tensor import ParamStore


class Mode(Enum):
    TRAIN = "train"
    EVAL = "eval"


class Outcome(Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    TIMEOUT = "timeout"


@dataclass
class AgentConfig:
    dim: int = 32
    hidden_dim: int = 64
    mode: Mode = Mode.EVAL
    forget_enabled: bool = False
    forget_fraction: float = 0.2
    ltm_enabled: bool = True
    wm_gatv2: bool = True
    step_budget: int = 500
    success_radius_m: float = 1.0
    strict_stop: bool = True  # a wrong STOP ends the episode
    map_capacity: int = 100
    similarity_threshold: float = 0.9
    obs_radius: int = OBS_RADIUS
    position_bands: int = POSITION_BANDS
    projection_seed: int = 7
    record_scores: bool = False


@dataclass
class AgentState:
    topo: TopoMap
    policy_state: PolicyState
    e_goal: ObsEmbedding
    goal_cells: list[tuple[int, int]]
    goal_index: int = 0
    step: int = 0
    pending_scores: AttentionScores | None = None


@dataclass
class StepRecord:
    episode_id: int
    goal_index: int  # 0-based internally; serialized 1-based
    step: int
    pose: AgentPose
    action: Action
    n_active: int
    forgotten_ids: list[int]  # full forgotten set after this step
    ltm_delta_l2: float
    stm_scores: dict[int, float] | None = None


@dataclass
class EpisodeResult:
    episode_id: int
    outcome: Outcome
    goals_reached: list[bool]
    steps: int
    agent_path_len: float
    records: list[StepRecord] = field(default_factory=list)
    snapshots: list[dict] | None = None
    tape: list | None = None
    forget_calls: int = 0

    @property
    def progress(self) -> float:
        return sum(self.goals_reached) / len(self.goals_reached)

    @property
    def success(self) -> bool:
        return self.outcome is Outcome.SUCCESS


def init_params(config: AgentConfig, seed: int) -> ParamStore:
    params = ParamStore()
    rng = stream(seed, "init")
    init_encoder_params(params, config.dim, rng)
    init_policy_params(params, config.dim, config.hidden_dim, rng)
    return params


def build_projection(config: AgentConfig) -> np.ndarray:
    return observation_projection(
        config.dim,
        patch_input_dim(config.obs_radius, config.position_bands),
        config.projection_seed,
    )


def goal_observation(world: GridWorld, goal_cell: tuple[int, int], config: AgentConfig):
    # The panoramic patch is heading-invariant, so any heading works.
    pose = AgentPose(goal_cell[0], goal_cell[1], Heading.NORTH)
    return observe(world, pose, config.obs_radius, config.position_bands)


def start_state(world: GridWorld, start: AgentPose, goals: list[tuple[int, int]],
                config: AgentConfig, projection: np.ndarray) -> AgentState:
    topo = TopoMap(config.dim, config.similarity_threshold, config.map_capacity)
    e_goal = encode_observation(goal_observation(world, goals[0], config), projection)
    return AgentState(
        topo=topo,
        policy_state=PolicyState.zeros(config.hidden_dim),
        e_goal=e_goal,
        goal_cells=list(goals),
    )


def pipeline_step(
    state: AgentState,
    world: GridWorld,
    pose: AgentPose,
    params: ParamStore,
    config: AgentConfig,
    projection: np.ndarray,
    collect: bool = False,
):
    """One full pipeline pass; returns (dist, info, caches-or-None).

    Mutates the map (localization, eviction, forgetting, LTM write) and
    the agent state (policy state, pending scores, step counter).
    """
    topo = state.topo
    patch = observe(world, pose, config.obs_radius, config.position_bands)
    e_cur = encode_observation(patch, projection)
    topo.localize_and_update(e_cur.vector, pose, state.step)
    topo.evict_if_full()

    forgotten_now: list[int] = []
    forget_called = False
    if (
        config.mode is Mode.EVAL
        and config.forget_enabled
        and state.pending_scores is not None
    ):
        scores = state.pending_scores.reconciled(set(topo.active_ids()), topo.current_node)
        forgotten_now = topo.forget(scores, config.forget_fraction)
        forget_called = True

    ltm_before = topo.ltm_read()
    wm, wm_cache = generate_wm(
        topo, state.e_goal.vector, params,
        use_gatv2=config.wm_gatv2, ltm_enabled=config.ltm_enabled,
    )
    ltm_delta = float(np.linalg.norm(topo.ltm_read() - ltm_before))

    res_cur, cache_cur = decode(e_cur.vector, wm.rows, params, "enc.dec_cur")
    res_goal, cache_goal = decode(state.e_goal.vector, wm.rows, params, "enc.dec_goal")

    n = len(wm.ordering)
    stm_raw = res_goal.scores[:n]
    stm_sum = float(stm_raw.sum())
    pending = AttentionScores(
        scores={node_id: float(s) / stm_sum for node_id, s in zip(wm.ordering, stm_raw)},
        ltm_score=0.0,
        step=state.step,
    )

    dist, new_pol_state, pol_cache = policy_step(
        state.policy_state, res_cur.feature, res_goal.feature, e_cur.vector, params
    )

    state.pending_scores = pending
    state.policy_state = new_pol_state
    state.step += 1

    info = {
        "n_active": n,
        "forgotten_now": forgotten_now,
        "forget_called": forget_called,
        "ltm_delta": ltm_delta,
        "stm_scores": dict(pending.scores),
        "e_cur": e_cur,
    }
    caches = None
    if collect:
        caches = {"wm": wm_cache, "dec_cur": cache_cur, "dec_goal": cache_goal, "pol": pol_cache}
    return dist, info, caches


def on_goal_reached(state: AgentState, world: GridWorld, config: AgentConfig,
                    projection: np.ndarray) -> None:
    """Advance to the next goal: restore every forgotten node, re-encode
    the goal embedding, and clear pending scores. The policy state and
    the LTM deliberately carry across the boundary."""
    if state.goal_index >= len(state.goal_cells) - 1:
        raise SequencingError("on_goal_reached called past the final goal")
    state.topo.restore_all()
    state.goal_index += 1
    next_goal = state.goal_cells[state.goal_index]
    state.e_goal = encode_observation(goal_observation(world, next_goal, config), projection)
    state.pending_scores = None


def run_episode(
    world: GridWorld,
    start: AgentPose,
    goals: list[tuple[int, int]],
    params: ParamStore,
    config: AgentConfig,
    seed: int = 0,
    episode_id: int = 0,
    action_source="greedy",
    collect_tape: bool = False,
    record_snapshots: bool = False,
) -> EpisodeResult:
    """Drive one multi-goal episode to completion.

    `action_source` is "greedy", "sample", "uniform", or a callable
    (world, pose, goal_cell) -> Action used as a teacher override; the
    pipeline still runs every step so its distribution can be trained
    or traced.
    """
    projection = build_projection(config)
    state = start_state(world, start, goals, config, projection)
    pose = start
    rng = stream(seed, "sample", episode_id)
    records: list[StepRecord] = []
    snapshots: list[dict] = [] if record_snapshots else None
    tape = [] if collect_tape else None
    goals_reached = [False] * len(goals)
    path_len = 0.0
    forget_calls = 0
    outcome = Outcome.TIMEOUT

    for t in range(config.step_budget):
        dist, info, caches = pipeline_step(
            state, world, pose, params, config, projection, collect=collect_tape
        )
        forget_calls += int(info["forget_called"])
        if callable(action_source):
            action = action_source(world, pose, state.goal_cells[state.goal_index])
        elif action_source == "greedy":
            action = greedy_action(dist)
        elif action_source == "sample":
            action = sample_action(dist, rng)
        elif action_source == "uniform":
            action = Action(int(rng.integers(0, 4)))
        else:
            raise ValueError(f"unknown action source {action_source!r}")

        records.append(StepRecord(
            episode_id=episode_id,
            goal_index=state.goal_index,
            step=t,
            pose=pose,
            action=action,
            n_active=info["n_active"],
            forgotten_ids=state.topo.forgotten_ids(),
            ltm_delta_l2=info["ltm_delta"],
            stm_scores=info["stm_scores"] if config.record_scores else None,
        ))
        if collect_tape:
            tape.append((caches, int(action)))
        if record_snapshots:
            snapshots.append({"episode": episode_id, **state.topo.snapshot(t)})

        if action == Action.STOP:
            goal_cell = state.goal_cells[state.goal_index]
            if success_check(pose, goal_cell, world.cell_size, config.success_radius_m):
                goals_reached[state.goal_index] = True
                if state.goal_index == len(goals) - 1:
                    outcome = Outcome.SUCCESS
                    break
                on_goal_reached(state, world, config, projection)
            elif config.strict_stop:
                outcome = Outcome.FAILURE
                break
            # lenient mode: a wrong STOP is ignored
        else:
            new_pose = apply_action(world, pose, action)
            if new_pose.cell != pose.cell:
                path_len += world.cell_size
            pose = new_pose

    return EpisodeResult(
        episode_id=episode_id,
        outcome=outcome,
        goals_reached=goals_reached,
        steps=state.step,
        agent_path_len=path_len,
        records=records,
        snapshots=snapshots,
        tape=tape,
        forget_calls=forget_calls,
    )
