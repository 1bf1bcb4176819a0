"""LSTM policy head: decoded features in, action distribution out."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .gridworld import Action
from .tensor import ParamStore, sigmoid, softmax, softmax_backward

N_ACTIONS = 4
DEFAULT_HIDDEN_DIM = 64
# Small enough that the initial policy is near-uniform (first-batch
# NLL ~ ln 4), large enough that gradients reach the encoders from the
# first update instead of stalling behind a near-zero head.
HEAD_INIT_SCALE = 0.3


@dataclass
class PolicyState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int) -> "PolicyState":
        return cls(h=np.zeros(hidden_dim), c=np.zeros(hidden_dim))


@dataclass
class ActionDist:
    probs: np.ndarray  # over (STOP, MOVE_FORWARD, TURN_LEFT, TURN_RIGHT)


def init_policy_params(params: ParamStore, dim: int, hidden_dim: int, rng: np.random.Generator) -> None:
    d, dh = dim, hidden_dim
    params.add("pol.proj.w", rng.normal(0.0, 1.0 / np.sqrt(3 * d), size=(dh, 3 * d)))
    params.add("pol.proj.b", np.zeros((1, dh)))
    params.add("pol.lstm.w_ih", rng.normal(0.0, 1.0 / np.sqrt(dh), size=(4 * dh, dh)))
    params.add("pol.lstm.w_hh", rng.normal(0.0, 1.0 / np.sqrt(dh), size=(4 * dh, dh)))
    params.add("pol.lstm.b", np.zeros((1, 4 * dh)))
    params.add("pol.head.w", rng.normal(0.0, HEAD_INIT_SCALE / np.sqrt(dh), size=(N_ACTIONS, dh)))
    params.add("pol.head.b", np.zeros((1, N_ACTIONS)))


def policy_step(
    state: PolicyState,
    f_cur: np.ndarray,
    f_goal: np.ndarray,
    e_cur: np.ndarray,
    params: ParamStore,
):
    """Project the 3d-concatenation, run one LSTM cell (gate order
    i, f, g, o), and softmax a linear head into the action space."""
    if not (f_cur.shape == f_goal.shape == e_cur.shape):
        raise DimensionError(
            f"policy inputs disagree: {f_cur.shape}, {f_goal.shape}, {e_cur.shape}"
        )
    w_p = params.value("pol.proj.w")
    b_p = params.vec("pol.proj.b")
    w_ih = params.value("pol.lstm.w_ih")
    w_hh = params.value("pol.lstm.w_hh")
    b_l = params.vec("pol.lstm.b")
    w_a = params.value("pol.head.w")
    b_a = params.vec("pol.head.b")
    dh = state.h.shape[0]

    x_in = np.concatenate([f_cur, f_goal, e_cur])
    if w_p.shape[1] != x_in.shape[0]:
        raise DimensionError(f"policy projection {w_p.shape} vs input {x_in.shape}")
    x = w_p @ x_in + b_p
    gates = w_ih @ x + w_hh @ state.h + b_l
    gi = sigmoid(gates[:dh])
    gf = sigmoid(gates[dh : 2 * dh])
    gg = np.tanh(gates[2 * dh : 3 * dh])
    go = sigmoid(gates[3 * dh :])
    c_new = gf * state.c + gi * gg
    tanh_c = np.tanh(c_new)
    h_new = go * tanh_c
    logits = w_a @ h_new + b_a
    probs = softmax(logits)

    cache = {"x_in": x_in, "x": x, "h_prev": state.h, "c_prev": state.c,
             "gi": gi, "gf": gf, "gg": gg, "go": go,
             "c_new": c_new, "tanh_c": tanh_c, "h_new": h_new, "probs": probs}
    return ActionDist(probs=probs), PolicyState(h=h_new, c=c_new), cache


def policy_step_backward(
    dlogits: np.ndarray,
    dh_next: np.ndarray,
    dc_next: np.ndarray,
    cache: dict,
    params: ParamStore,
):
    """Backward through head + LSTM cell + projection.

    Returns (dh_prev, dc_prev, df_cur, df_goal, de_cur).
    """
    w_p = params.value("pol.proj.w")
    w_ih = params.value("pol.lstm.w_ih")
    w_hh = params.value("pol.lstm.w_hh")
    w_a = params.value("pol.head.w")
    dh = cache["h_prev"].shape[0]

    params.grad("pol.head.w")[:] += np.outer(dlogits, cache["h_new"])
    params.grad_vec("pol.head.b")[:] += dlogits
    dh_new = w_a.T @ dlogits + dh_next

    go, gi, gf, gg = cache["go"], cache["gi"], cache["gf"], cache["gg"]
    tanh_c = cache["tanh_c"]
    dgo = dh_new * tanh_c
    dc = dh_new * go * (1.0 - tanh_c * tanh_c) + dc_next
    dgf = dc * cache["c_prev"]
    dc_prev = dc * gf
    dgi = dc * gg
    dgg = dc * gi

    dgates = np.concatenate([
        dgi * gi * (1.0 - gi),
        dgf * gf * (1.0 - gf),
        dgg * (1.0 - gg * gg),
        dgo * go * (1.0 - go),
    ])
    params.grad("pol.lstm.w_ih")[:] += np.outer(dgates, cache["x"])
    params.grad("pol.lstm.w_hh")[:] += np.outer(dgates, cache["h_prev"])
    params.grad_vec("pol.lstm.b")[:] += dgates
    dx = w_ih.T @ dgates
    dh_prev = w_hh.T @ dgates

    params.grad("pol.proj.w")[:] += np.outer(dx, cache["x_in"])
    params.grad_vec("pol.proj.b")[:] += dx
    dx_in = w_p.T @ dx
    d = dx_in.shape[0] // 3
    return dh_prev, dc_prev, dx_in[:d], dx_in[d : 2 * d], dx_in[2 * d :]


def action_nll_backward(probs: np.ndarray, action: int, weight: float = 1.0) -> np.ndarray:
    """d(-log p[action]) / dlogits, scaled by `weight`."""
    dlogits = probs.copy()
    dlogits[action] -= 1.0
    return dlogits * weight


def sample_action(dist: ActionDist, rng: np.random.Generator) -> Action:
    """Inverse-CDF sampling from the run's seeded generator."""
    r = rng.random()
    acc = 0.0
    for i, p in enumerate(dist.probs):
        acc += p
        if r < acc:
            return Action(i)
    return Action(N_ACTIONS - 1)


def greedy_action(dist: ActionDist) -> Action:
    """Argmax; ties resolve to the lowest action index."""
    return Action(int(np.argmax(dist.probs)))
