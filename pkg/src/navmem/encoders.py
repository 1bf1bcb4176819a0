"""Observation embedding, goal fusion, and working-memory generation.

The working memory is built each step by fusing every active map
feature with the goal embedding, stacking the long-term-memory vector
underneath, and running one graph-attention layer over map edges plus
LTM-to-everything links and self-loops. Two cross-attention decoders
(one queried by the current observation, one by the goal) read the
result and expose their attention weights, which is what the forgetting
module ranks nodes by.

Every trainable op comes as a forward returning (output, cache) and a
matching backward that accumulates parameter gradients and returns
input gradients; `tensor.grad_check` gates all of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, DimensionError
from .gridworld import Patch, patch_input_dim
from .graph_memory import TopoMap
from .rng import stream
from .tensor import ParamStore, leaky_relu, leaky_relu_backward, softmax, softmax_backward

LEAKY_SLOPE = 0.2
PROJECTION_SEED = 7
# Safety cap on the recurrent LTM state's L2 norm. The recurrence
# applies the message matrix every step; an unlucky spectrum would
# otherwise grow the state exponentially over a 500-step episode until
# attention softmaxes underflow. Inactive in healthy regimes.
LTM_NORM_CAP = 8.0


@dataclass
class ObsEmbedding:
    vector: np.ndarray  # unit L2 norm
    cell: tuple[int, int]


@dataclass
class WorkingMemory:
    """Encoded retained map rows followed by the LTM row."""

    rows: np.ndarray  # (n_active + 1, d)
    ordering: list[int]  # node id per STM row


@dataclass
class DecodeResult:
    feature: np.ndarray
    scores: np.ndarray  # over working-memory rows, sums to 1


# ---------------------------------------------------------------------------
# Observation encoder: a frozen seeded random projection of the
# flattened panoramic patch. Deterministic, never trained.
# ---------------------------------------------------------------------------


def observation_projection(dim: int, input_dim: int | None = None, r_seed: int = PROJECTION_SEED) -> np.ndarray:
    if input_dim is None:
        input_dim = patch_input_dim()
    rng = stream(r_seed, "obs_projection")
    return rng.normal(0.0, 1.0 / np.sqrt(input_dim), size=(dim, input_dim))


def encode_observation(patch: Patch, projection: np.ndarray) -> ObsEmbedding:
    flat = patch.flatten()
    if projection.shape[1] != flat.shape[0]:
        raise DimensionError(f"projection {projection.shape} vs patch input {flat.shape}")
    v = projection @ flat
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        v = np.zeros(projection.shape[0])
        v[0] = 1.0
    else:
        v = v / norm
    return ObsEmbedding(vector=v, cell=patch.cell)


# ---------------------------------------------------------------------------
# Parameter initialisation.
# ---------------------------------------------------------------------------


def init_encoder_params(params: ParamStore, dim: int, rng: np.random.Generator) -> None:
    """Feature-preserving initialisation.

    Observation embeddings are unit-norm and carry their information in
    a linearly decodable form; a plain random init buries it. Three
    choices keep the pipeline transparent at step zero so gradient
    descent refines structure instead of having to rediscover it:
    fusion/value/message matrices start near identity (WM rows begin as
    recognizable node-plus-goal features), each decoder's query and key
    projections start EQUAL (attention logits then reduce to scaled
    cosine similarity, so the goal decoder immediately concentrates on
    goal-like map rows), and noise everywhere breaks symmetry.
    """
    d = dim

    def noisy_identity(scale=1.0, noise=0.1):
        return scale * (np.eye(d) + rng.normal(0.0, noise, size=(d, d)))

    fuse = np.hstack([np.eye(d), np.eye(d)]) / np.sqrt(2.0)
    fuse += rng.normal(0.0, 0.1 / np.sqrt(2.0), size=(d, 2 * d))
    params.add("enc.fuse.w", fuse)
    params.add("enc.fuse.b", np.zeros((1, d)))

    params.add("enc.gat.w_l", noisy_identity())
    params.add("enc.gat.w_r", noisy_identity())
    params.add("enc.gat.a", rng.normal(0.0, 1.0 / np.sqrt(d), size=(1, d)))
    params.add("enc.gcn.w", noisy_identity())

    for dec in ("dec_cur", "dec_goal"):
        # shared query/key start: logits ~ (std^2 d / sqrt(d)) * cosine
        qk = rng.normal(0.0, np.sqrt(3.0) * d ** -0.25, size=(d, d))
        params.add(f"enc.{dec}.w_q", qk.copy())
        params.add(f"enc.{dec}.w_k", qk.copy())
        params.add(f"enc.{dec}.w_v", noisy_identity())
        params.add(f"enc.{dec}.w_o", rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)))
        params.add(f"enc.{dec}.ffn.w1",
                   rng.normal(0.0, 1.0 / np.sqrt(d), size=(2 * d, d)))
        params.add(f"enc.{dec}.ffn.b1", np.zeros((1, 2 * d)))
        params.add(f"enc.{dec}.ffn.w2",
                   rng.normal(0.0, 1.0 / np.sqrt(2.0 * d), size=(d, 2 * d)))
        params.add(f"enc.{dec}.ffn.b2", np.zeros((1, d)))


# ---------------------------------------------------------------------------
# Goal fusion: every node row is linearly combined with the goal.
# ---------------------------------------------------------------------------


def fuse_goal(v: np.ndarray, e_goal: np.ndarray, params: ParamStore):
    n, d = v.shape
    if e_goal.shape != (d,):
        raise DimensionError(f"fuse_goal: features {v.shape} vs goal {e_goal.shape}")
    w = params.value("enc.fuse.w")
    b = params.vec("enc.fuse.b")
    x = np.concatenate([v, np.tile(e_goal, (n, 1))], axis=1)
    fused = x @ w.T + b
    return fused, {"x": x}


def fuse_goal_backward(dfused: np.ndarray, cache: dict, params: ParamStore):
    x = cache["x"]
    w = params.value("enc.fuse.w")
    params.grad("enc.fuse.w")[:] += dfused.T @ x
    params.grad_vec("enc.fuse.b")[:] += dfused.sum(axis=0)
    dx = dfused @ w
    d = w.shape[0]
    return dx[:, :d], dx[:, d:].sum(axis=0)


# ---------------------------------------------------------------------------
# Graph attention over the working-memory graph.
# ---------------------------------------------------------------------------


def wm_adjacency(n_active: int, stm_edges: list[tuple[int, int]]):
    """Directed (target, source) pairs for the encoder graph: both
    directions of every STM edge, the LTM row linked with every STM
    row, and a self-loop on every row. Sorted by target."""
    ltm = n_active
    pairs = []
    for i, j in stm_edges:
        pairs.append((i, j))
        pairs.append((j, i))
    for k in range(n_active):
        pairs.append((ltm, k))
        pairs.append((k, ltm))
    for k in range(n_active + 1):
        pairs.append((k, k))
    pairs.sort()
    tgt = np.array([p[0] for p in pairs], dtype=np.int64)
    src = np.array([p[1] for p in pairs], dtype=np.int64)
    counts = np.bincount(tgt, minlength=n_active + 1)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return tgt, src, starts


def gatv2_layer(h: np.ndarray, tgt: np.ndarray, src: np.ndarray, starts: np.ndarray, params: ParamStore):
    """Single-head GATv2: per target i the score of source j is
    a . leaky_relu(W_l h_i + W_r h_j), softmax-normalized over the
    neighborhood (incl. self), and messages are W_r h_j."""
    n_rows = h.shape[0]
    if tgt.size and (tgt.max() >= n_rows or src.max() >= n_rows):
        raise ConsistencyError(f"adjacency references rows beyond {n_rows}")
    w_l = params.value("enc.gat.w_l")
    w_r = params.value("enc.gat.w_r")
    a = params.vec("enc.gat.a")
    s_l = h @ w_l.T
    s_r = h @ w_r.T
    z = s_l[tgt] + s_r[src]
    zl = leaky_relu(z, LEAKY_SLOPE)
    e = zl @ a
    seg_max = np.maximum.reduceat(e, starts)
    ex = np.exp(e - seg_max[tgt])
    denom = np.add.reduceat(ex, starts)
    alpha = ex / denom[tgt]
    out = np.zeros_like(h)
    np.add.at(out, tgt, alpha[:, None] * s_r[src])
    cache = {"h": h, "tgt": tgt, "src": src, "starts": starts,
             "s_r": s_r, "z": z, "zl": zl, "alpha": alpha}
    return out, cache


def gatv2_backward(dout: np.ndarray, cache: dict, params: ParamStore) -> np.ndarray:
    h, tgt, src = cache["h"], cache["tgt"], cache["src"]
    starts, s_r = cache["starts"], cache["s_r"]
    z, zl, alpha = cache["z"], cache["zl"], cache["alpha"]
    w_l = params.value("enc.gat.w_l")
    w_r = params.value("enc.gat.w_r")
    a = params.vec("enc.gat.a")

    ds_l = np.zeros_like(s_r)
    ds_r = np.zeros_like(s_r)
    # Messages: out_i = sum alpha_e * s_r[src_e]
    dalpha = np.einsum("ed,ed->e", dout[tgt], s_r[src])
    np.add.at(ds_r, src, alpha[:, None] * dout[tgt])
    # Segment softmax backward.
    prod = dalpha * alpha
    seg = np.add.reduceat(prod, starts)
    de = alpha * (dalpha - seg[tgt])
    # Score: e = a . leaky_relu(z)
    params.grad_vec("enc.gat.a")[:] += zl.T @ de
    dz = leaky_relu_backward(np.outer(de, a), z, LEAKY_SLOPE)
    np.add.at(ds_l, tgt, dz)
    np.add.at(ds_r, src, dz)

    params.grad("enc.gat.w_l")[:] += ds_l.T @ h
    params.grad("enc.gat.w_r")[:] += ds_r.T @ h
    return ds_l @ w_l + ds_r @ w_r


# ---------------------------------------------------------------------------
# GCN baseline encoder (used when the adaptive working memory is
# toggled off): symmetric-normalized adjacency with self-loops.
# ---------------------------------------------------------------------------


def gcn_layer(h: np.ndarray, stm_edges: list[tuple[int, int]], params: ParamStore):
    n = h.shape[0]
    for i, j in stm_edges:
        if not (0 <= i < n and 0 <= j < n):
            raise ConsistencyError(f"edge ({i}, {j}) out of range for {n} rows")
    w = params.value("enc.gcn.w")
    a_hat = np.eye(n)
    for i, j in stm_edges:
        a_hat[i, j] = 1.0
        a_hat[j, i] = 1.0
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    m = a_hat * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    mh = m @ h
    out = mh @ w
    return out, {"m": m, "mh": mh}


def gcn_backward(dout: np.ndarray, cache: dict, params: ParamStore) -> np.ndarray:
    m, mh = cache["m"], cache["mh"]
    w = params.value("enc.gcn.w")
    params.grad("enc.gcn.w")[:] += mh.T @ dout
    return m.T @ (dout @ w.T)


# ---------------------------------------------------------------------------
# Cross-attention decoder exposing its attention weights.
# ---------------------------------------------------------------------------


def decode(query: np.ndarray, memory: np.ndarray, params: ParamStore, prefix: str):
    """One cross-attention block: scaled-dot-product attention over the
    working-memory rows, output projection with a residual from the
    query, then a two-layer feed-forward with residual. Returns the
    decoded feature and the (verbatim) attention scores."""
    if memory.shape[0] == 0:
        raise ValueError("decode: empty working memory")
    d = query.shape[0]
    w_q = params.value(f"{prefix}.w_q")
    w_k = params.value(f"{prefix}.w_k")
    w_v = params.value(f"{prefix}.w_v")
    w_o = params.value(f"{prefix}.w_o")
    w1 = params.value(f"{prefix}.ffn.w1")
    b1 = params.vec(f"{prefix}.ffn.b1")
    w2 = params.value(f"{prefix}.ffn.w2")
    b2 = params.vec(f"{prefix}.ffn.b2")

    q = w_q @ query
    k = memory @ w_k.T
    vv = memory @ w_v.T
    scale = 1.0 / np.sqrt(d)
    logits = (k @ q) * scale
    scores = softmax(logits)
    ctx = vv.T @ scores
    u = query + w_o @ ctx
    pre = w1 @ u + b1
    act = leaky_relu(pre, LEAKY_SLOPE)
    ffn = w2 @ act + b2
    feature = u + ffn
    cache = {"query": query, "memory": memory, "q": q, "k": k, "vv": vv,
             "scale": scale, "scores": scores, "ctx": ctx, "u": u,
             "pre": pre, "act": act}
    return DecodeResult(feature=feature, scores=scores), cache


def decode_backward(dfeature: np.ndarray, cache: dict, params: ParamStore, prefix: str):
    query, memory = cache["query"], cache["memory"]
    q, k, vv = cache["q"], cache["k"], cache["vv"]
    scale, scores, ctx = cache["scale"], cache["scores"], cache["ctx"]
    u, pre, act = cache["u"], cache["pre"], cache["act"]
    w_q = params.value(f"{prefix}.w_q")
    w_k = params.value(f"{prefix}.w_k")
    w_v = params.value(f"{prefix}.w_v")
    w_o = params.value(f"{prefix}.w_o")
    w1 = params.value(f"{prefix}.ffn.w1")
    w2 = params.value(f"{prefix}.ffn.w2")

    du = dfeature.copy()
    params.grad(f"{prefix}.ffn.w2")[:] += np.outer(dfeature, act)
    params.grad_vec(f"{prefix}.ffn.b2")[:] += dfeature
    dact = w2.T @ dfeature
    dpre = leaky_relu_backward(dact, pre, LEAKY_SLOPE)
    params.grad(f"{prefix}.ffn.w1")[:] += np.outer(dpre, u)
    params.grad_vec(f"{prefix}.ffn.b1")[:] += dpre
    du += w1.T @ dpre

    dquery = du.copy()  # residual from the query
    dctx = w_o.T @ du
    params.grad(f"{prefix}.w_o")[:] += np.outer(du, ctx)

    dscores = vv @ dctx
    dvv = np.outer(scores, dctx)
    dlogits = softmax_backward(dscores, scores)
    dk = np.outer(dlogits, q) * scale
    dq = (k.T @ dlogits) * scale

    params.grad(f"{prefix}.w_k")[:] += dk.T @ memory
    dmem = dk @ w_k
    params.grad(f"{prefix}.w_v")[:] += dvv.T @ memory
    dmem += dvv @ w_v
    params.grad(f"{prefix}.w_q")[:] += np.outer(dq, query)
    dquery += w_q.T @ dq
    return dmem, dquery


# ---------------------------------------------------------------------------
# Working-memory generation: the per-step encoder pipeline.
# ---------------------------------------------------------------------------


def generate_wm(
    topo: TopoMap,
    e_goal: np.ndarray,
    params: ParamStore,
    use_gatv2: bool = True,
    ltm_enabled: bool = True,
):
    """Fuse, encode, and (when enabled) advance the recurrent LTM.

    GATv2 path: the LTM vector rides along as the last row of the
    encoder input and its encoded row is written back, which is the
    recurrence. With the LTM disabled that row is zeroed beforehand and
    never written, cutting the recurrence but keeping shapes stable.

    GCN path (adaptive-WM toggle off): only the map rows are encoded;
    the LTM slot is appended unencoded and, when enabled, updated to
    the mean of the encoded rows.
    """
    v, edge_ids, ordering = topo.active_subgraph()
    if not ordering:
        raise ValueError("generate_wm: map has no active nodes")
    index = {node_id: row for row, node_id in enumerate(ordering)}
    edge_rows = [(index[a], index[b]) for a, b in edge_ids]
    fused, fuse_cache = fuse_goal(v, e_goal, params)
    n = len(ordering)
    if use_gatv2:
        ltm_in = topo.ltm_read() if ltm_enabled else np.zeros(topo.dim)
        h = np.vstack([fused, ltm_in[None, :]])
        tgt, src, starts = wm_adjacency(n, edge_rows)
        out, gat_cache = gatv2_layer(h, tgt, src, starts, params)
        raw_ltm = out[-1]
        norm = float(np.linalg.norm(raw_ltm))
        clamped = norm > LTM_NORM_CAP
        if clamped:
            out = out.copy()
            out[-1] = raw_ltm * (LTM_NORM_CAP / norm)
        if ltm_enabled:
            topo.ltm_write(out[-1])
        rows = out
        cache = {"mode": "gatv2", "fuse": fuse_cache, "gat": gat_cache,
                 "n": n, "ltm_enabled": ltm_enabled,
                 "clamped": clamped, "raw_ltm": raw_ltm, "raw_norm": norm}
    else:
        out, gcn_cache = gcn_layer(fused, edge_rows, params)
        if ltm_enabled:
            ltm_row = out.mean(axis=0)
            topo.ltm_write(ltm_row)
        else:
            ltm_row = np.zeros(topo.dim)
        rows = np.vstack([out, ltm_row[None, :]])
        cache = {"mode": "gcn", "fuse": fuse_cache, "gcn": gcn_cache,
                 "n": n, "ltm_enabled": ltm_enabled}
    return WorkingMemory(rows=rows, ordering=ordering), cache


def generate_wm_backward(drows: np.ndarray, dltm_next: np.ndarray | None, cache: dict, params: ParamStore):
    """Backward through one step's working-memory generation.

    `drows` is the gradient on the WM rows; `dltm_next` is the gradient
    flowing back into this step's written LTM state from the following
    step (None when there is no recurrence). Returns the gradient on
    the incoming LTM state (for the previous step), or None.
    """
    n = cache["n"]
    if cache["mode"] == "gatv2":
        dout = drows.copy()
        if cache["ltm_enabled"] and dltm_next is not None:
            dout[-1] += dltm_next
        if cache["clamped"]:
            # y = cap * v / |v|  =>  dv = (cap/|v|) (g - (g.v_hat) v_hat)
            v_hat = cache["raw_ltm"] / cache["raw_norm"]
            g = dout[-1]
            dout[-1] = (LTM_NORM_CAP / cache["raw_norm"]) * (g - (g @ v_hat) * v_hat)
        dh = gatv2_backward(dout, cache["gat"], params)
        dfused = dh[:n]
        dltm_in = dh[n] if cache["ltm_enabled"] else None
    else:
        dencoded = drows[:n].copy()
        dltm_row = drows[n].copy()
        if cache["ltm_enabled"]:
            if dltm_next is not None:
                dltm_row += dltm_next
            # ltm row was the mean of the encoded rows; no recurrence.
            dencoded += dltm_row[None, :] / n
        dfused = gcn_backward(dencoded, cache["gcn"], params)
        dltm_in = None
    fuse_goal_backward(dfused, cache["fuse"], params)
    return dltm_in
