"""Single executable: dataset generation, training, evaluation,
threshold sweeps, and analysis export.

Exit codes: 0 success, 2 usage error, 3 missing input artifact,
4 malformed input. A JSON config file can stand in for flags
(--config); explicitly passed flags win. Every command writes a
run manifest next to its outputs; outputs are byte-identical for
identical flags+seed (manifests excepted for wall-clock).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .agent import AgentConfig, Mode
from .episodes import RuleThresholds, generate_episode, load_dataset, save_dataset, validate_episode
from .errors import WorldUnsuitableError
from .evaluate import (
    evaluate_dataset,
    load_worlds_for,
    write_snapshots_jsonl,
    write_trajectory_jsonl,
)
from .gridworld import AgentPose, generate_world, load_world, save_world, shortest_path
from .metrics import (
    DISTANCE_CSV_COLUMNS,
    aggregate,
    distance_metrics,
    write_metrics_csv,
)
from .rng import stream
from .tensor import load_checkpoint
from .training import TrainConfig, train_loop

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_MALFORMED = 4

LTM_CSV_COLUMNS = ["episode", "goal_index", "step", "ltm_delta_l2"]


class MissingArtifact(Exception):
    pass


class MalformedInput(Exception):
    pass


def _require_file(path, kind: str) -> str:
    if not os.path.isfile(path):
        raise MissingArtifact(f"{kind} not found: {path}")
    return path


def _write_manifest(out_dir, command: str, resolved: dict, inputs: list, outputs: list, t0: float) -> None:
    doc = {
        "command": command,
        "config": resolved,
        "config_hash": hashlib.sha256(
            json.dumps(resolved, sort_keys=True).encode()
        ).hexdigest()[:16],
        "seed": resolved.get("seed"),
        "inputs": sorted(str(p) for p in inputs),
        "outputs": sorted(str(p) for p in outputs),
        "tool_version": __version__,
        "wall_clock_s": round(time.monotonic() - t0, 3),
    }
    path = os.path.join(out_dir, "manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _merge_config(args: argparse.Namespace, parser_defaults: dict) -> None:
    """Fill unset flags from --config JSON; explicit flags win."""
    if getattr(args, "config", None) is None:
        for key, default in parser_defaults.items():
            if getattr(args, key, None) is None:
                setattr(args, key, default)
        return
    with open(args.config, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for key, default in parser_defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, doc.get(key, default))


def _onoff(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on|off, got {value!r}")
    return value == "on"


def _agent_config_from_args(args, sidecar: dict) -> AgentConfig:
    return AgentConfig(
        dim=sidecar["dim"],
        hidden_dim=sidecar["hidden_dim"],
        mode=Mode.EVAL,
        forget_enabled=args.forget,
        forget_fraction=args.p,
        ltm_enabled=args.ltm,
        wm_gatv2=(args.wm == "gatv2"),
        step_budget=args.budget,
        strict_stop=not args.lenient_stop,
        projection_seed=sidecar.get("projection_seed", 7),
        obs_radius=sidecar.get("obs_radius", 4),
        position_bands=sidecar.get("position_bands", 8),
        record_scores=args.record_scores,
    )


def _load_sidecar(ckpt_path) -> dict:
    sidecar_path = str(ckpt_path) + ".json"
    if os.path.isfile(sidecar_path):
        with open(sidecar_path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    return {"dim": 32, "hidden_dim": 64}


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

GENERATE_DEFAULTS = dict(worlds=4, size="21x21", density=0.15, goals=1,
                         episodes=100, seed=0, out=None)


def cmd_generate(args) -> int:
    _merge_config(args, GENERATE_DEFAULTS)
    if args.out is None:
        print("generate: --out is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        width, height = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        print(f"generate: bad --size {args.size!r}, expected WxH", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.monotonic()
    os.makedirs(args.out, exist_ok=True)
    world_dir = os.path.join(args.out, "worlds")
    os.makedirs(world_dir, exist_ok=True)
    worlds, world_files = [], []
    for w in range(args.worlds):
        world_seed = int(stream(args.seed, "world_seed", w).integers(0, 2**31 - 1))
        world = generate_world(world_seed, width, height, args.density)
        rel = os.path.join("worlds", f"world_{w:03d}.txt")
        save_world(os.path.join(args.out, rel), world)
        worlds.append(world)
        world_files.append(rel)

    episodes = []
    rng = stream(args.seed, "episode_gen")
    attempts_left = args.episodes * 20
    ep_id = 0
    while len(episodes) < args.episodes:
        w = ep_id % len(worlds)
        try:
            episodes.append(generate_episode(
                worlds[w], args.goals, rng, episode_id=ep_id, world_index=w))
        except WorldUnsuitableError:
            pass
        ep_id += 1
        attempts_left -= 1
        if attempts_left <= 0:
            print("generate: sampling budget exhausted; worlds unsuitable", file=sys.stderr)
            return EXIT_MALFORMED
    th = RuleThresholds()
    bad = [ep.episode_id for ep in episodes
           if not validate_episode(worlds[ep.world_index], ep, th).all_passed]
    if bad:
        print(f"generate: internal rule violation on episodes {bad}", file=sys.stderr)
        return 1
    dataset_path = os.path.join(args.out, "episodes.json")
    save_dataset(dataset_path, world_files, episodes, worlds[0].cell_size, args.seed, th)
    _write_manifest(args.out, "generate", _resolved(args, GENERATE_DEFAULTS), [],
                    [dataset_path, *world_files], t0)
    print(f"wrote {len(episodes)} episodes over {len(worlds)} worlds to {args.out}")
    return EXIT_OK


def _resolved(args, defaults: dict) -> dict:
    return {k: getattr(args, k) for k in defaults}


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

TRAIN_DEFAULTS = dict(updates=2000, batch=32, worlds_per_batch=4, lr=1e-3,
                      optimizer="adam", seed=0, size=15, density=0.10,
                      dim=96, hidden_dim=128, wm="gatv2", ltm=True,
                      eval_every=100, eval_episodes=20, out=None)


def cmd_train(args) -> int:
    _merge_config(args, TRAIN_DEFAULTS)
    if args.out is None:
        print("train: --out is required", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.monotonic()
    agent_cfg = AgentConfig(
        dim=args.dim, hidden_dim=args.hidden_dim, mode=Mode.TRAIN,
        ltm_enabled=args.ltm, wm_gatv2=(args.wm == "gatv2"),
    )
    cfg = TrainConfig(
        learning_rate=args.lr, optimizer=args.optimizer, batch_episodes=args.batch,
        worlds_per_batch=args.worlds_per_batch, updates=args.updates,
        seed=args.seed, world_size=args.size, obstacle_density=args.density,
        eval_every=args.eval_every, eval_episodes=args.eval_episodes, agent=agent_cfg,
    )

    def log_cb(update, loss, agg):
        print(f"update {update}: loss {loss:.4f}  heldout sr {agg['sr']:.3f} spl {agg['spl']:.3f}")

    summary = train_loop(cfg, args.out, log_cb=log_cb)
    _write_manifest(args.out, "train", _resolved(args, TRAIN_DEFAULTS), [],
                    [summary["best_checkpoint"], summary["final_checkpoint"], summary["log"]], t0)
    print(f"best heldout sr {summary['best_sr']:.3f}; checkpoint {summary['best_checkpoint']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

EVAL_DEFAULTS = dict(ckpt=None, dataset=None, out=None, p=0.2, forget=False,
                     ltm=True, wm="gatv2", workers=1, seed=0, budget=500,
                     lenient_stop=False, record_scores=False, traj=False,
                     snapshots=False)


def cmd_eval(args) -> int:
    _merge_config(args, EVAL_DEFAULTS)
    if args.ckpt is None or args.dataset is None or args.out is None:
        print("eval: --ckpt, --dataset and --out are required", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.monotonic()
    _require_file(args.ckpt, "checkpoint")
    _require_file(args.dataset, "dataset")
    params = load_checkpoint(args.ckpt)
    sidecar = _load_sidecar(args.ckpt)
    config = _agent_config_from_args(args, sidecar)
    if args.snapshots or args.traj:
        config.record_scores = config.record_scores or args.record_scores
    header, records, results, agg = evaluate_dataset(
        args.dataset, params, config, seed=args.seed, workers=args.workers,
        record_snapshots=args.snapshots,
    )
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    metrics_path = os.path.join(args.out, "metrics.csv")
    write_metrics_csv(metrics_path, records)
    outputs.append(metrics_path)
    summary_path = os.path.join(args.out, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(agg, fh, indent=1, sort_keys=True)
        fh.write("\n")
    outputs.append(summary_path)
    if args.traj:
        traj_path = os.path.join(args.out, "trajectory.jsonl")
        write_trajectory_jsonl(traj_path, results)
        outputs.append(traj_path)
    if args.snapshots:
        snap_path = os.path.join(args.out, "snapshots.jsonl")
        write_snapshots_jsonl(snap_path, results)
        outputs.append(snap_path)
    _write_manifest(args.out, "eval", _resolved(args, EVAL_DEFAULTS),
                    [args.ckpt, args.dataset], outputs, t0)
    print(f"episodes {agg['episodes']}  SR {agg['sr']:.4f}  SPL {agg['spl']:.4f}  "
          f"PR {agg['pr']:.4f}  PPL {agg['ppl']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep-p
# ---------------------------------------------------------------------------

SWEEP_DEFAULTS = dict(ckpt=None, datasets=None, out=None, p_grid="0,0.2,0.4,0.6,0.8",
                      workers=1, seed=0, budget=500, ltm=True, wm="gatv2",
                      lenient_stop=False)

SWEEP_CSV_COLUMNS = ["p", "difficulty", "episodes", "sr", "spl", "pr", "ppl"]


def cmd_sweep_p(args) -> int:
    _merge_config(args, SWEEP_DEFAULTS)
    if args.ckpt is None or not args.datasets or args.out is None:
        print("sweep-p: --ckpt, --datasets and --out are required", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.monotonic()
    _require_file(args.ckpt, "checkpoint")
    for ds in args.datasets:
        _require_file(ds, "dataset")
    try:
        grid = [float(v) for v in str(args.p_grid).split(",") if v != ""]
    except ValueError:
        print(f"sweep-p: bad --p-grid {args.p_grid!r}", file=sys.stderr)
        return EXIT_USAGE
    params = load_checkpoint(args.ckpt)
    sidecar = _load_sidecar(args.ckpt)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for p in grid:
        for ds in args.datasets:
            ns = argparse.Namespace(**vars(args), p=p, forget=p > 0,
                                    record_scores=False)
            config = _agent_config_from_args(ns, sidecar)
            _, records, _, agg = evaluate_dataset(
                ds, params, config, seed=args.seed, workers=args.workers)
            difficulty = records[0].difficulty if records else 0
            rows.append([p, difficulty, agg["episodes"],
                         f"{agg['sr']:.6f}", f"{agg['spl']:.6f}",
                         f"{agg['pr']:.6f}", f"{agg['ppl']:.6f}"])
    sweep_path = os.path.join(args.out, "sweep.csv")
    with open(sweep_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_CSV_COLUMNS)
        writer.writerows(rows)
    _write_manifest(args.out, "sweep-p", _resolved(args, SWEEP_DEFAULTS),
                    [args.ckpt, *args.datasets], [sweep_path], t0)
    print(f"wrote {len(rows)} sweep rows to {sweep_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

ANALYZE_DEFAULTS = dict(traj=None, snapshots=None, dataset=None, out=None,
                        euclidean=False)


def _read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise MalformedInput(f"{path}: malformed JSONL at line {lineno}: {exc}") from exc
    return rows


def cmd_analyze(args) -> int:
    _merge_config(args, ANALYZE_DEFAULTS)
    if args.traj is None or args.dataset is None or args.out is None:
        print("analyze: --traj, --dataset and --out are required", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.monotonic()
    _require_file(args.traj, "trajectory file")
    _require_file(args.dataset, "dataset")
    traj_rows = _read_jsonl(args.traj)
    snap_rows = _read_jsonl(_require_file(args.snapshots, "snapshot file")) if args.snapshots else []
    header, episodes = load_dataset(args.dataset)
    worlds = load_worlds_for(header, args.dataset)
    ep_by_id = {ep.episode_id: ep for ep in episodes}
    snaps = {(row["episode"], row["step"]): row for row in snap_rows}

    os.makedirs(args.out, exist_ok=True)
    dist_path = os.path.join(args.out, "distances.csv")
    ltm_path = os.path.join(args.out, "ltm_deltas.csv")

    with open(ltm_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LTM_CSV_COLUMNS)
        for row in traj_rows:
            writer.writerow([row["episode"], row["goal_index"], row["step"],
                             f"{row['ltm_delta_l2']:.12f}"])

    with open(dist_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(DISTANCE_CSV_COLUMNS)
        for row in traj_rows:
            snap = snaps.get((row["episode"], row["step"]))
            if snap is None:
                continue
            ep = ep_by_id.get(row["episode"])
            if ep is None:
                raise MalformedInput(
                    f"trajectory references episode {row['episode']} missing from dataset")
            world = worlds[ep.world_index]
            goal_cell = ep.goals[row["goal_index"] - 1]
            agent_cell = (row["pose"][0], row["pose"][1])
            _, path = shortest_path(world, agent_cell, goal_cell)
            if not path:
                continue
            node_cells = {n["id"]: (n["pose"][0], n["pose"][1]) for n in snap["nodes"]}
            status = {n["id"]: n["status"] for n in snap["nodes"]}
            dists = distance_metrics(world, node_cells, agent_cell, goal_cell, path,
                                     geodesic=not args.euclidean)
            for node_id in sorted(dists):
                m = dists[node_id]
                writer.writerow([row["episode"], row["goal_index"], row["step"],
                                 node_id, status[node_id],
                                 *(f"{v:.6f}" for v in m)])

    _write_manifest(args.out, "analyze", _resolved(args, ANALYZE_DEFAULTS),
                    [args.traj, args.snapshots or "", args.dataset],
                    [dist_path, ltm_path], t0)
    print(f"wrote {dist_path} and {ltm_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="navmem",
        description="Topological-memory navigation: datasets, training, evaluation, analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate worlds and a multi-goal episode dataset")
    g.add_argument("--config")
    g.add_argument("--worlds", type=int)
    g.add_argument("--size")
    g.add_argument("--density", type=float)
    g.add_argument("--goals", type=int)
    g.add_argument("--episodes", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="imitation-learn a checkpoint")
    t.add_argument("--config")
    t.add_argument("--updates", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--worlds-per-batch", dest="worlds_per_batch", type=int)
    t.add_argument("--optimizer", choices=["adam", "sgd"])
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--size", type=int)
    t.add_argument("--density", type=float)
    t.add_argument("--dim", type=int)
    t.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    t.add_argument("--wm", choices=["gatv2", "gcn"])
    t.add_argument("--ltm", type=_onoff)
    t.add_argument("--eval-every", dest="eval_every", type=int)
    t.add_argument("--eval-episodes", dest="eval_episodes", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--config")
    e.add_argument("--ckpt")
    e.add_argument("--dataset")
    e.add_argument("--out")
    e.add_argument("--p", type=float)
    e.add_argument("--forget", type=_onoff)
    e.add_argument("--ltm", type=_onoff)
    e.add_argument("--wm", choices=["gatv2", "gcn"])
    e.add_argument("--workers", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--budget", type=int)
    e.add_argument("--lenient-stop", dest="lenient_stop", action="store_const", const=True)
    e.add_argument("--record-scores", dest="record_scores", action="store_const", const=True)
    e.add_argument("--traj", action="store_const", const=True)
    e.add_argument("--snapshots", action="store_const", const=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep-p", help="metrics across a forgetting-fraction grid")
    s.add_argument("--config")
    s.add_argument("--ckpt")
    s.add_argument("--datasets", nargs="+")
    s.add_argument("--out")
    s.add_argument("--p-grid", dest="p_grid")
    s.add_argument("--workers", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--budget", type=int)
    s.add_argument("--ltm", type=_onoff)
    s.add_argument("--wm", choices=["gatv2", "gcn"])
    s.add_argument("--lenient-stop", dest="lenient_stop", action="store_const", const=True)
    s.set_defaults(func=cmd_sweep_p)

    a = sub.add_parser("analyze", help="distance-metric and LTM-delta CSVs from run logs")
    a.add_argument("--config")
    a.add_argument("--traj")
    a.add_argument("--snapshots")
    a.add_argument("--dataset")
    a.add_argument("--out")
    a.add_argument("--euclidean", action="store_const", const=True)
    a.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MissingArtifact as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MISSING
    except MalformedInput as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MALFORMED
    except (json.JSONDecodeError, ValueError) as exc:
        print(f"malformed input: {exc}", file=sys.stderr)
        return EXIT_MALFORMED


if __name__ == "__main__":
    sys.exit(main())
