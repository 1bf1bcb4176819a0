"""Shared fixtures for the heavier end-to-end checks."""

import numpy as np

from navmem.agent import (
    AgentConfig,
    Mode,
    build_projection,
    init_params,
    pipeline_step,
    start_state,
)
from navmem.encoders import encode_observation
from navmem.gridworld import Action, AgentPose, Heading, apply_action, observe
from navmem.rng import stream
from navmem.training import (
    episode_backward,
    expert_action,
    sample_episodes_with_retry,
    tape_loss,
)

# Frozen mini-episode for the end-to-end gradient gate: 3 teacher steps
# on a cluttered 15x15 world, map topped up to exactly 5 nodes. Seeds
# pinned to a kink-generic draw where every used parameter coordinate
# carries a healthy gradient; near-degenerate draws make the
# central-difference comparison noise-bound (see test_encoders).
MINI_PARAM_SEED = 36
MINI_FEAT_SEED = 0
MINI_WORLD_SEED = 501


def build_mini_episode(d=8, dh=12, param_seed=MINI_PARAM_SEED,
                       feat_seed=MINI_FEAT_SEED, world_seed=MINI_WORLD_SEED):
    config = AgentConfig(dim=d, hidden_dim=dh, mode=Mode.TRAIN)
    params = init_params(config, param_seed)
    # the near-uniform default head leaves degenerate gradients; the
    # fixture freezes a generic scale instead
    params.value("pol.head.w")[:] = stream(param_seed, "fixture_head").normal(
        0, 1 / np.sqrt(dh), size=(4, dh))
    world, (spec,) = sample_episodes_with_retry(world_seed, "fix", 0, 15, 0.2, 1, 1)
    projection = build_projection(config)

    # Dry run (localization is parameter-free): teacher actions for the
    # 3 steps and how many nodes they create.
    state = start_state(world, spec.start, spec.goals, config, projection)
    pose = spec.start
    labels = []
    for _ in range(3):
        action = expert_action(world, pose, spec.goals[0])
        labels.append(int(action))
        emb = encode_observation(observe(world, pose), projection)
        state.topo.localize_and_update(emb.vector, pose, 0)
        pose = apply_action(world, pose, action)
    preseed = []
    rng = stream(feat_seed, "fixture_feats")
    for _ in range(5 - len(state.topo)):
        f = rng.normal(size=d)
        preseed.append(f / np.linalg.norm(f))
    return config, params, world, spec, preseed, labels, projection


def mini_episode_loss(ps, config, world, spec, preseed, labels, projection):
    """Forward + backward over the frozen mini-episode; returns the
    mean NLL of the frozen labels and accumulates gradients."""
    pose = spec.start
    state = start_state(world, pose, [spec.goals[0]], config, projection)
    for step, f in enumerate(preseed):
        state.topo.localize_and_update(f, AgentPose(1 + step, 1, Heading.NORTH), step)
    tape = []
    for label in labels:
        _, _, caches = pipeline_step(state, world, pose, ps, config, projection,
                                     collect=True)
        tape.append((caches, label))
        pose = apply_action(world, pose, Action(label))
    assert len(state.topo) == 5
    loss = tape_loss(tape) / len(tape)
    episode_backward(tape, ps, len(tape), config.hidden_dim)
    return loss
