"""Command-line entry point: world generation, data collection, training, evaluation.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command
writes its fully-resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import config as cfgmod
from .classes import ClassId
from .env import DriveEnv, EnvConfig, RewardWeights
from .learner import (
    CEMConfig,
    Policy,
    RandomPolicy,
    ScriptedGoalPolicy,
    evaluate,
    load_policy,
    save_curve,
    save_policy,
    train_cem,
)
from .metrics import (
    EpisodeTrace,
    PolicyProposer,
    RandomProposer,
    ReplayOracleProposer,
    SubprocessTranslator,
    build_offline_dataset,
    evaluate_offline,
    format_report_table,
    load_offline_dataset,
    write_report_csv,
)
from .render import CameraModel, RandomizationConfig, render, save_pair, colorize_segmentation
from .world import (
    PRESETS,
    RoadSpec,
    WorldSpec,
    generate_world,
    load_world,
    save_topdown_png,
    save_world,
)


def _write_provenance(out_dir: str, name: str, merged: dict, source: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    cfgmod.write_resolved(os.path.join(out_dir, name), merged, source)


def _densities_from_args(args) -> dict | None:
    dens = {}
    if args.tree_density is not None:
        dens[ClassId.TREES] = args.tree_density
    if args.rock_density is not None:
        dens[ClassId.ROCKS] = args.rock_density
    if args.log_density is not None:
        dens[ClassId.LOGS] = args.log_density
    return dens or None


# -- gen-world ----------------------------------------------------------------


def cmd_gen_world(args) -> int:
    spec = WorldSpec(
        seed=args.seed,
        preset=args.preset,
        extent=args.extent,
        grid_resolution=args.grid_resolution,
        obstacle_density=_densities_from_args(args),
        road=RoadSpec(width=args.road_width) if args.road else None,
    )
    world = generate_world(spec)
    os.makedirs(args.out, exist_ok=True)
    save_world(world, os.path.join(args.out, "world.s2sw"))
    save_topdown_png(world, os.path.join(args.out, "preview.png"))
    merged = {
        "preset": spec.preset, "seed": spec.seed, "extent": spec.extent,
        "grid_resolution": spec.grid_resolution, "road": bool(args.road),
        **{f"density_{c.name.lower()}": v for c, v in spec.densities().items()},
    }
    _write_provenance(args.out, "gen-world.cfg", {k: str(v) for k, v in merged.items()},
                      {k: "override" for k in merged})
    print(f"wrote {args.out}/world.s2sw ({len(world.obstacles)} obstacle discs)")
    return 0


# -- collect-pairs ------------------------------------------------------------


def cmd_collect_pairs(args) -> int:
    if args.pairs < 1:
        raise ValueError("--pairs must be >= 1")
    os.makedirs(args.out, exist_ok=True)
    presets = [p.strip() for p in args.presets.split(",")]
    for p in presets:
        if p not in PRESETS:
            raise ValueError(f"unknown preset {p!r}")
    pair_camera = CameraModel(resolution=args.resolution, max_range=args.max_range)
    rand = RandomizationConfig.appearance_only() if args.appearance_only or args.views > 1 \
        else RandomizationConfig()
    master = np.random.default_rng(args.seed)

    total = 0
    for preset in presets:
        written = 0
        episode = 0
        while written < args.pairs:
            ep_seed = int(master.integers(2 ** 31))
            env = DriveEnv(EnvConfig(
                presets=(preset,),
                camera=CameraModel(resolution=16, max_range=args.max_range),
                road_probability=args.road_probability,
                max_decisions=12,
            ))
            policy = RandomPolicy(env.config.action_count)
            rng = np.random.default_rng(ep_seed)
            obs = env.reset(ep_seed)
            while written < args.pairs:
                pose = env.state.pose
                base_id = f"{preset}_{written:06d}"
                for view in range(args.views):
                    pid = base_id if view == 0 else f"{base_id}v{view}"
                    rseed = int(master.integers(2 ** 31))
                    out = render(env.world, pose, pair_camera, rand, rng_seed=rseed)
                    save_pair(args.out, pid, out, meta={
                        "preset": preset, "world_seed": ep_seed,
                        "pose": [float(v) for v in pose],
                        "rand_seed": rseed, "group": base_id,
                    })
                written += 1
                total += 1
                if env.done:
                    break
                obs, _, done, _ = env.step(policy.actions(obs, rng))
                if done:
                    break
            episode += 1
    merged = {"presets": args.presets, "pairs": args.pairs, "resolution": args.resolution,
              "seed": args.seed, "views": args.views,
              "appearance_only": args.appearance_only, "max_range": args.max_range}
    _write_provenance(args.out, "collect-pairs.cfg",
                      {k: str(v) for k, v in merged.items()}, {k: "override" for k in merged})
    print(f"wrote {total} pairs under {args.out}")
    return 0


# -- shared env/config plumbing -------------------------------------------------


_ENV_DEFAULTS = {
    "presets": "meadow,landscape,canyon",
    "extent": 60.0,
    "grid_resolution": 0.5,
    "goal_range": 20.0,
    "goal_radius": 2.0,
    "A": 5,
    "substeps": 20,
    "dt": 0.05,
    "max_decisions": 20,
    "initial_speed": 0.0,
    "camera_resolution": 16,
    "max_range": 60.0,
    "lambda_g": 1.0,
    "lambda_u": 1.0,
    "lambda_s": 0.1,
    "lambda_c": 1.0,
    "terminal_collision": False,
    "tree_density": "",
    "rock_density": "",
    "log_density": "",
    "road_probability": 0.0,
}

_CEM_DEFAULTS = {
    "population": 32,
    "elite_frac": 0.2,
    "iterations": 20,
    "init_std": 0.5,
    "min_std": 0.05,
    "episodes_per_candidate": 2,
    "parallel_envs": 1,
    "pool": 4,
    "hidden": 16,
    "shared": False,
    "fixed_eval_seeds": True,
    "seed": 0,
}


def _env_config_from(cfg: dict) -> EnvConfig:
    densities = {}
    for key, cls in (("tree_density", ClassId.TREES), ("rock_density", ClassId.ROCKS),
                     ("log_density", ClassId.LOGS)):
        if cfg.get(key, "") != "":
            densities[cls] = float(cfg[key])
    return EnvConfig(
        presets=tuple(cfgmod.as_list(cfg, "presets")),
        extent=cfgmod.as_float(cfg, "extent"),
        grid_resolution=cfgmod.as_float(cfg, "grid_resolution"),
        obstacle_density=densities or None,
        road_probability=cfgmod.as_float(cfg, "road_probability"),
        action_count=cfgmod.as_int(cfg, "A"),
        substeps=cfgmod.as_int(cfg, "substeps"),
        dt=cfgmod.as_float(cfg, "dt"),
        max_decisions=cfgmod.as_int(cfg, "max_decisions"),
        goal_range=cfgmod.as_float(cfg, "goal_range"),
        goal_radius=cfgmod.as_float(cfg, "goal_radius"),
        initial_speed=cfgmod.as_float(cfg, "initial_speed"),
        weights=RewardWeights(
            goal=cfgmod.as_float(cfg, "lambda_g"),
            upright=cfgmod.as_float(cfg, "lambda_u"),
            steer=cfgmod.as_float(cfg, "lambda_s"),
            collision=cfgmod.as_float(cfg, "lambda_c"),
        ),
        camera=CameraModel(resolution=cfgmod.as_int(cfg, "camera_resolution"),
                           max_range=cfgmod.as_float(cfg, "max_range")),
        terminal_collision=cfgmod.as_bool(cfg, "terminal_collision"),
    )


# -- train ----------------------------------------------------------------------


def cmd_train(args) -> int:
    defaults = dict(_ENV_DEFAULTS)
    defaults.update(_CEM_DEFAULTS)
    if args.A is not None:
        defaults["A"] = args.A
    merged, source = cfgmod.resolve_config(defaults, args.config, args.set)
    env_cfg = _env_config_from(merged)
    cem_cfg = CEMConfig(
        population=cfgmod.as_int(merged, "population"),
        elite_frac=cfgmod.as_float(merged, "elite_frac"),
        iterations=cfgmod.as_int(merged, "iterations"),
        init_std=cfgmod.as_float(merged, "init_std"),
        min_std=cfgmod.as_float(merged, "min_std"),
        episodes_per_candidate=cfgmod.as_int(merged, "episodes_per_candidate"),
        parallel_envs=cfgmod.as_int(merged, "parallel_envs"),
        action_count=env_cfg.action_count,
        pool=cfgmod.as_int(merged, "pool"),
        hidden=cfgmod.as_int(merged, "hidden"),
        shared=cfgmod.as_bool(merged, "shared"),
        fixed_eval_seeds=cfgmod.as_bool(merged, "fixed_eval_seeds"),
    )
    seed = cfgmod.as_int(merged, "seed")
    os.makedirs(args.out, exist_ok=True)
    _write_provenance(args.out, "train.cfg", merged, source)

    def factory() -> DriveEnv:
        return DriveEnv(env_cfg)

    def progress(row: dict) -> None:
        print(f"iter {row['iteration']:3d}  elite {row['elite_mean']:9.2f}  "
              f"pop {row['population_mean']:9.2f}  best {row['best_return']:9.2f}")

    policy, curve = train_cem(factory, cem_cfg, np.random.default_rng(seed), progress)
    save_policy(os.path.join(args.out, "policy.s2sp"), policy)
    save_curve(os.path.join(args.out, "curve.csv"), curve)
    print(f"wrote {args.out}/policy.s2sp and curve.csv ({len(curve)} iterations)")
    return 0


# -- eval-offline -----------------------------------------------------------------


def cmd_eval_offline(args) -> int:
    if args.from_logs:
        dataset = _dataset_from_logs(args.from_logs, args.horizon)
    else:
        dataset = load_offline_dataset(args.dataset)
    if not dataset:
        raise ValueError("no offline records available")
    needs_rgb = any(r.class_map is None for r in dataset)
    translate = None
    if args.translator:
        translate = SubprocessTranslator(args.translator.split(),
                                         workdir=os.path.dirname(args.out) or ".")
    elif needs_rgb:
        raise ValueError("dataset contains RGB-only records; --translator is required")

    rows = []
    name = args.dataset or args.from_logs
    for ckpt in args.policy or []:
        policy = load_policy(ckpt)
        report = evaluate_offline(PolicyProposer(policy, translate), dataset)
        rows.append({"method": f"policy:{os.path.basename(ckpt)}", "dataset": name,
                     **report.row()})
    if args.with_random:
        report = evaluate_offline(RandomProposer(args.A, seed=args.seed), dataset)
        rows.append({"method": "random", "dataset": name, **report.row()})
    if args.with_oracle:
        report = evaluate_offline(ReplayOracleProposer(), dataset)
        rows.append({"method": "replay-oracle", "dataset": name, **report.row()})
    if not rows:
        raise ValueError("nothing to evaluate: give --policy, --with-random, or --with-oracle")
    write_report_csv(args.out, rows)
    merged = {"dataset": str(name), "policies": ",".join(args.policy or []),
              "seed": str(args.seed), "horizon": str(args.horizon)}
    _write_provenance(os.path.dirname(args.out) or ".", "eval-offline.cfg",
                      merged, {k: "override" for k in merged})
    print(format_report_table(rows))
    if translate:
        translate.close()
    return 0


def _dataset_from_logs(log_dir: str, horizon: float):
    from PIL import Image

    traces = []
    with open(os.path.join(log_dir, "episodes.jsonl")) as f:
        for line in f:
            rec = json.loads(line)
            class_maps = []
            for rel in rec.get("obs_files", []):
                class_maps.append(np.asarray(Image.open(os.path.join(log_dir, rel))))
            traces.append(EpisodeTrace(
                poses=np.asarray(rec["poses"], dtype=np.float64),
                times=np.asarray(rec["times"], dtype=np.float64),
                anchor_indices=rec["anchor_indices"],
                class_maps=class_maps,
            ))
    records, skipped = build_offline_dataset(traces, horizon_s=horizon)
    print(f"built {len(records)} offline records (skipped: {skipped})")
    return records


# -- eval-online -------------------------------------------------------------------


def cmd_eval_online(args) -> int:
    merged, source = cfgmod.resolve_config(dict(_ENV_DEFAULTS), args.config, args.set)
    env_cfg = _env_config_from(merged)
    if args.policy:
        policy = load_policy(args.policy)
    elif args.scripted:
        policy = ScriptedGoalPolicy(env_cfg.action_count)
    else:
        policy = RandomPolicy(env_cfg.action_count)

    os.makedirs(args.out, exist_ok=True)
    _write_provenance(args.out, "eval-online.cfg", merged, source)

    from .metrics import run_episode_trace

    stats = []
    with open(os.path.join(args.out, "episodes.jsonl"), "w") as log:
        for i in range(args.episodes):
            env = DriveEnv(env_cfg)
            ep_seed = args.seed * 100003 + i
            trace, info = run_episode_trace(
                env, policy, ep_seed,
                np.random.default_rng(np.random.SeedSequence([args.seed & 0xFFFFFFFFFFFFFFFF, i, 7])))
            obs_files = []
            if args.save_obs:
                from PIL import Image

                obs_dir = os.path.join(args.out, "obs")
                os.makedirs(obs_dir, exist_ok=True)
                for k, cm in enumerate(trace.class_maps):
                    rel = os.path.join("obs", f"ep{i:04d}_d{k:03d}_seg.png")
                    Image.fromarray(cm, mode="L").save(os.path.join(args.out, rel))
                    obs_files.append(rel)
            if args.preview:
                save_topdown_png(env.world, os.path.join(args.out, f"ep{i:04d}_topdown.png"),
                                 trajectories=[trace.poses],
                                 goal=tuple(env.goal_world))
            log.write(json.dumps({
                "episode": i, "seed": ep_seed,
                "success": info["success"], "collision": info["collision"],
                "return": info["return"], "decisions": info["decisions"],
                "goal_world": [float(v) for v in env.goal_world],
                "poses": np.asarray(trace.poses).tolist(),
                "times": np.asarray(trace.times).tolist(),
                "anchor_indices": list(trace.anchor_indices),
                "obs_files": obs_files,
            }) + "\n")
            stats.append(info)

    n = len(stats)
    successes = sum(1 for s in stats if s["success"])
    report = {
        "episodes": n,
        "success_rate": successes / n,
        "mean_return": float(np.mean([s["return"] for s in stats])),
        "mean_decisions_to_goal": float(np.mean([s["decisions"] for s in stats if s["success"]]))
        if successes else float("nan"),
        "collision_rate": sum(1 for s in stats if s["collision"]) / n,
    }
    with open(os.path.join(args.out, "report.json"), "w") as f:
        json.dump(report, f, indent=2)
    print(json.dumps(report, indent=2))
    return 0


# -- render-preview ------------------------------------------------------------------


def cmd_render_preview(args) -> int:
    from PIL import Image

    if args.world:
        world = load_world(args.world)
    else:
        world = generate_world(WorldSpec(seed=args.seed, preset=args.preset,
                                         extent=args.extent))
    if args.pose:
        parts = [float(v) for v in args.pose.split(",")]
        if len(parts) != 3:
            raise ValueError("--pose must be x,y,yaw")
        pose = parts
    else:
        pose = [world.extent / 2, world.extent / 2, 0.0]
    camera = CameraModel(resolution=args.resolution, max_range=args.max_range)
    rand = RandomizationConfig() if args.randomize else RandomizationConfig.canonical()
    out = render(world, pose, camera, rand, rng_seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    Image.fromarray(out.rgb).save(os.path.join(args.out, "rgb.png"))
    Image.fromarray(colorize_segmentation(out.class_map)).save(os.path.join(args.out, "seg.png"))
    depth_vis = (np.clip(out.depth / camera.max_range, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(depth_vis, mode="L").save(os.path.join(args.out, "depth.png"))
    merged = {"pose": ",".join(f"{v:.3f}" for v in pose), "seed": str(args.seed),
              "resolution": str(args.resolution), "randomize": str(args.randomize)}
    _write_provenance(args.out, "render-preview.cfg", merged, {k: "override" for k in merged})
    print(f"wrote rgb/seg/depth previews under {args.out}")
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segdrive",
        description="Off-road driving simulation, policy training, and trajectory evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="generate a procedural world file + preview")
    p.add_argument("--preset", choices=PRESETS, default="meadow")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extent", type=float, default=60.0)
    p.add_argument("--grid-resolution", type=float, default=0.5)
    p.add_argument("--tree-density", type=float, default=None)
    p.add_argument("--rock-density", type=float, default=None)
    p.add_argument("--log-density", type=float, default=None)
    p.add_argument("--road", action="store_true")
    p.add_argument("--road-width", type=float, default=4.0)
    p.add_argument("--out", default="world_out")
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("collect-pairs", help="collect a paired RGB/seg/depth dataset")
    p.add_argument("--presets", default="meadow,landscape,canyon")
    p.add_argument("--pairs", type=int, default=2000, help="pairs per preset")
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--max-range", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--views", type=int, default=1,
                   help="appearance variants per pose (>1 fixes geometry)")
    p.add_argument("--appearance-only", action="store_true")
    p.add_argument("--road-probability", type=float, default=0.5)
    p.add_argument("--out", default="pairs_out")
    p.set_defaults(func=cmd_collect_pairs)

    p = sub.add_parser("train", help="train a policy by population search")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--A", type=int, choices=(1, 5, 10), default=None)
    p.add_argument("--out", default="train_out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-offline", help="score trajectory proposals on an offline dataset")
    p.add_argument("--dataset", default=None)
    p.add_argument("--from-logs", default=None,
                   help="episode log dir from eval-online --save-obs")
    p.add_argument("--horizon", type=float, default=3.0)
    p.add_argument("--policy", action="append", default=[])
    p.add_argument("--with-random", action="store_true")
    p.add_argument("--with-oracle", action="store_true")
    p.add_argument("--translator", default=None,
                   help="command implementing the PNG-path stdin/stdout contract")
    p.add_argument("--A", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="offline_report.csv")
    p.set_defaults(func=cmd_eval_offline)

    p = sub.add_parser("eval-online", help="roll out a policy and report success rates")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--policy", default=None)
    p.add_argument("--scripted", action="store_true")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save-obs", action="store_true")
    p.add_argument("--preview", action="store_true")
    p.add_argument("--out", default="eval_out")
    p.set_defaults(func=cmd_eval_online)

    p = sub.add_parser("render-preview", help="render one frame (rgb/seg/depth)")
    p.add_argument("--world", default=None)
    p.add_argument("--preset", choices=PRESETS, default="meadow")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extent", type=float, default=60.0)
    p.add_argument("--pose", default=None)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--max-range", type=float, default=100.0)
    p.add_argument("--randomize", action="store_true")
    p.add_argument("--out", default="preview_out")
    p.set_defaults(func=cmd_render_preview)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
