"""Command-line entry point: ``surgsim train|bench|eval|list-robots``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from surgsim.config import ConfigError, RunConfig, load_config
from surgsim.robots import BUNDLED, DescriptorError, load_robot

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("surgsim")


def _models(cfg: RunConfig) -> dict:
    """Load every robot the env needs up front so a bad path is a config error."""
    out = {}
    for name in cfg.env.tool_names():
        try:
            out[name] = load_robot(name)
        except FileNotFoundError as e:
            raise ConfigError(str(e)) from None
        except DescriptorError as e:
            raise ConfigError(str(e)) from None
    return out


def _make_env(cfg: RunConfig, models: dict, **update):
    from surgsim.envs import VecEnv

    env_cfg = cfg.env.model_copy(update=update) if update else cfg.env
    return VecEnv(env_cfg, dynamics=cfg.dynamics, render=cfg.render, workers=cfg.workers, models=models)


def cmd_train(args) -> int:
    from surgsim.learn import train

    cfg = load_config(args.config, args.override)
    models = _models(cfg)
    out = cfg.output_path()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.dump())
    env = _make_env(cfg, models)
    (out / "obs_layout.json").write_text(json.dumps(env.manifest(), indent=2))
    result = train(env, cfg.train, out)
    last = result.metrics[-1] if result.metrics else {}
    print(f"trained {result.env_steps} env steps; checkpoint {result.checkpoint}")
    if last:
        print(f"last mean final distance: {last.get('mean_final_distance')}")
    return EXIT_RUNTIME if result.interrupted else EXIT_OK


def cmd_bench(args) -> int:
    from surgsim.bench import BenchMode, bench_sequential, reports_json, run_protocol

    overrides = list(args.override)
    flags = {"bench.mode": args.mode, "bench.n_envs": args.envs, "bench.total_steps": args.steps,
             "bench.runs": args.runs, "env.task": args.task, "robot": args.robot}
    overrides += [f"{k}={v}" for k, v in flags.items() if v is not None]
    cfg = load_config(args.config, overrides)
    _models(cfg)
    kw = {"dynamics": cfg.dynamics, "render": cfg.render}
    env_cfg = cfg.env
    reports = []
    if cfg.bench.mode is BenchMode.SIM:
        reports.append(run_protocol(env_cfg, cfg.bench, workers=cfg.workers, **kw))
    else:
        tc = cfg.train.model_copy(update={"n_robots": cfg.bench.n_envs})
        reports.append(run_protocol(env_cfg, cfg.bench, tc, workers=cfg.workers, **kw))
    if args.baseline:
        reports.append(bench_sequential(env_cfg, cfg.bench.model_copy(update={"runs": args.baseline}), **kw))
    for r in reports:
        print(r.table())
        print()
    if args.json:
        Path(args.json).write_text(reports_json(reports))
    return EXIT_OK


def cmd_eval(args) -> int:
    from surgsim.learn import CheckpointError, evaluate, load_checkpoint

    cfg = load_config(args.config, args.override)
    models = _models(cfg)
    n = args.envs or cfg.env.n_envs
    env = _make_env(cfg, models, n_envs=n, terminate_on_success=False, seed=args.seed)
    try:
        policy, normalizer, meta = load_checkpoint(args.checkpoint, env.obs_dim, env.act_dim)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {args.checkpoint}") from None
    except CheckpointError as e:
        raise ConfigError(str(e)) from None
    robots = [m.name for m in env.models]
    if meta.get("robots") and meta["robots"] != robots:
        raise ConfigError(f"checkpoint was trained on {meta['robots']}, config selects {robots}")
    if args.dump_images:
        _dump_images(env, Path(args.dump_images))
    summary = evaluate(env, policy, normalizer, episodes=args.episodes, csv_path=args.csv)
    print(json.dumps(summary.as_dict(), indent=2))
    return EXIT_OK


def _dump_images(env, out: Path):
    from surgsim.envs import Task
    from surgsim.render import write_pgm

    if env.cfg.task is not Task.IMAGE:
        log.warning("--dump-images only applies to the image task")
        return
    out.mkdir(parents=True, exist_ok=True)
    env.reset()
    w, h = env.render_cfg.width, env.render_cfg.height
    for i in range(min(env.n, 8)):
        write_pgm(out / f"target_{i}.pgm", env.state.target_images[i].reshape(h, w))
        write_pgm(out / f"view_{i}.pgm", env._images[i].reshape(h, w))


def cmd_list_robots(args) -> int:
    for name in BUNDLED:
        m = load_robot(name)
        print(f"{m.name:<6} {m.dof_count} DoF  {m.sequence}  workspace r={m.workspace_radius:g} m")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="surgsim", description="Vectorized surgical-robot simulation and PPO training.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", "-c", help="YAML run configuration")
        sp.add_argument("--override", "-o", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path override, e.g. train.n_robots=64 (repeatable)")

    t = sub.add_parser("train", help="train a policy")
    common(t)
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bench", help="throughput benchmark")
    common(b)
    b.add_argument("--mode", choices=["sim", "learn"])
    b.add_argument("--envs", type=int)
    b.add_argument("--steps", type=int)
    b.add_argument("--runs", type=int)
    b.add_argument("--task")
    b.add_argument("--robot")
    b.add_argument("--baseline", type=int, default=0, metavar="RUNS",
                   help="also time a sequential loop of single-env instances for RUNS runs")
    b.add_argument("--json", help="write the reports as JSON to this path")
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("eval", help="evaluate a checkpoint with mean actions")
    common(e)
    e.add_argument("checkpoint")
    e.add_argument("--episodes", type=int, default=1, help="episode rounds per env row")
    e.add_argument("--envs", type=int, help="env rows (default: env.n_envs)")
    e.add_argument("--seed", type=int, default=12345)
    e.add_argument("--csv", help="per-step trajectory export")
    e.add_argument("--dump-images", metavar="DIR", help="write target/view images as PGM (image task)")
    e.set_defaults(func=cmd_eval)

    lr = sub.add_parser("list-robots", help="list bundled robot descriptors")
    lr.set_defaults(func=cmd_list_robots)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - top-level handler maps everything else to exit 1
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
