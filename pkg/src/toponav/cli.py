"""toponav command line: scenes, data, training, maps, navigation, experiments."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _pose(text: str):
    from .world import Pose

    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"pose must be x,y[,theta], got {text!r}")
    if len(vals) not in (2, 3):
        raise argparse.ArgumentTypeError(f"pose must be x,y[,theta], got {text!r}")
    return Pose(vals[0], vals[1], vals[2] if len(vals) == 3 else 0.0)


def _load_scene(path):
    from .world import CATEGORIES, OccupancyScene

    stem = Path(path).stem
    cat = next((c for c in CATEGORIES if stem.startswith(c)), None)
    return OccupancyScene.load(path, category=cat)


def _scene_files(arg):
    p = Path(arg)
    files = sorted(p.glob("*.tnls")) if p.is_dir() else [p]
    if not files:
        raise UsageError(f"no scene files (*.tnls) in {arg}")
    return files


# ---------------------------------------------------------------- commands

def cmd_gen_scenes(a):
    from .world import CATEGORIES, generate_scene

    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    cats = a.category or list(CATEGORIES)
    for c in cats:
        if c not in CATEGORIES:
            raise UsageError(f"unknown category {c!r}")
        for s in range(a.seed, a.seed + a.count):
            generate_scene(c, a.size, s).save(out / f"{c}_{s:05d}.tnls")
    print(f"wrote {len(cats) * a.count} scenes to {out}")


def _policy_cfg(a, seed):
    from .policy import PolicyConfig

    return PolicyConfig(variant=a.variant, encoder_mode=a.encoder_mode, seed=seed)


def cmd_collect(a):
    from .dataset import write_shard
    from .learner import DaggerConfig, collect_round
    from .policy import Policy

    scenes = [_load_scene(f) for f in _scene_files(a.scenes)]
    policy = Policy.load(a.policy) if a.policy else None
    if policy is None and a.beta is not None:
        raise UsageError("--beta needs --policy (student actions come from a policy)")
    cfg = DaggerConfig(beta=a.beta if a.beta is not None else 1.0, trajectories_per_round=a.trajectories,
                       seed=a.seed, samples_per_round=a.samples, max_traj_steps=a.max_traj_steps)
    data, stats = collect_round(policy, scenes, cfg, a.round, p_student=None if policy else 0.0)
    n = write_shard(a.out, data)
    print(f"wrote {n} triplets to {a.out} ({stats.trajectories} trajectories, "
          f"{stats.student_steps} student steps, {stats.skipped_routes} skipped routes)")


def cmd_train_bc(a):
    from .dataset import load_shards, read_manifest
    from .learner import TrainConfig, train_bc
    from .policy import Policy

    paths = []
    for s in a.shards:
        paths += [p for p, _ in read_manifest(s)] if s.endswith(".txt") else [s]
    data = load_shards(paths)
    pol = Policy.load(a.init) if a.init else Policy(_policy_cfg(a, a.seed))
    pol, rep = train_bc(pol, data, TrainConfig(a.epochs, a.batch_size, a.lr, a.weight_decay, seed=a.seed))
    pol.save(a.out)
    if a.report:
        rep.write_csv(a.report)
    print(rep.summary(), end="")


def cmd_train_dagger(a):
    from .learner import DaggerConfig, run_dagger
    from .policy import Policy

    scenes = [_load_scene(f) for f in _scene_files(a.scenes)]
    cfg = DaggerConfig(rounds=a.rounds, beta=a.beta, trajectories_per_round=a.trajectories,
                       epochs_per_round=a.epochs_per_round, seed=a.seed, samples_per_round=a.samples_per_round,
                       batch_size=a.batch_size, lr=a.lr, max_traj_steps=a.max_traj_steps)
    pol = Policy(_policy_cfg(a, a.seed))
    pol, rep = run_dagger(pol, scenes, cfg, pure_oracle=a.pure_oracle, shard_dir=a.shard_dir)
    pol.save(a.out)
    rep.checkpoint = a.out
    if a.report:
        rep.write_csv(a.report)
    print(rep.summary(), end="")


def cmd_build_map(a):
    from .topo import build_map

    scene = _load_scene(a.scene)
    m = build_map(scene, a.start, a.goal, a.spacing, light_level=a.light)
    m.save(a.out)
    print(f"wrote map with {len(m)} nodes to {a.out}")


def cmd_navigate(a):
    from .policy import Policy
    from .topo import NavParams, TopoMap, navigate
    from .world import Embodiment

    scene = _load_scene(a.scene)
    m = TopoMap.load(a.map)
    pol = Policy.load(a.policy)
    emb = Embodiment(v_max=a.v_max, omega_max=a.omega_max)
    res = navigate(scene, m, pol, a.start, NavParams(emb=emb, light_level=a.light, max_steps=a.max_steps))
    if a.trace:
        res.write_trace(a.trace)
    print(f"outcome {res.outcome} steps {res.steps} path_length {res.path_length:.3f} "
          f"shortest_length {res.shortest_length:.3f}")


def _experiment_cfg(a):
    from .harness.config import ExperimentConfig

    return ExperimentConfig.load(a.config)


def cmd_eval(a):
    from .harness.experiments import run_experiment

    paths = run_experiment(_experiment_cfg(a), ws=a.workspace, out_dir=a.out, train=not a.no_train)
    for k, p in paths.items():
        print(f"{k}\t{p}")


def cmd_report(a):
    from .harness.config import workspace_dir
    from .harness.report import write_report

    cfg = _experiment_cfg(a)
    out = Path(a.out) if a.out else workspace_dir(a.workspace) / "reports" / f"{cfg.experiment}-{cfg.hash()}"
    if not (out / "metrics.csv").exists():
        raise UsageError(f"no metrics.csv in {out}; run `toponav eval` first")
    for k, p in write_report(cfg, out).items():
        print(f"{k}\t{p}")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    from .policy import ENCODER_MODES, VARIANTS

    p = _Parser(prog="toponav", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def policy_args(q):
        q.add_argument("--variant", default="CrossBlock", choices=VARIANTS)
        q.add_argument("--encoder-mode", default="frozen_robust", choices=ENCODER_MODES)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--batch-size", type=int, default=64)
        q.add_argument("--lr", type=float, default=1e-3)
        q.add_argument("--report", help="per-epoch loss CSV")

    q = sub.add_parser("gen-scenes", help="generate scene files")
    q.add_argument("--category", action="append")
    q.add_argument("--size", type=int, default=48)
    q.add_argument("--count", type=int, default=10)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_gen_scenes)

    q = sub.add_parser("collect", help="roll out routes and write a triplet shard")
    q.add_argument("--scenes", required=True, help="scene file or directory")
    q.add_argument("--out", required=True)
    q.add_argument("--trajectories", type=int, default=16)
    q.add_argument("--samples", type=int, help="exact sample quota (overrides --trajectories)")
    q.add_argument("--policy", help="student checkpoint; without it collection is pure oracle")
    q.add_argument("--beta", type=float)
    q.add_argument("--round", type=int, default=1)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--max-traj-steps", type=int, default=150)
    q.set_defaults(fn=cmd_collect)

    q = sub.add_parser("train-bc", help="behavior cloning on shards")
    q.add_argument("--shards", nargs="+", required=True, help="shard files or a manifest (.txt)")
    q.add_argument("--out", required=True)
    q.add_argument("--init", help="checkpoint to continue from")
    q.add_argument("--epochs", type=int, default=10)
    q.add_argument("--weight-decay", type=float, default=0.01)
    policy_args(q)
    q.set_defaults(fn=cmd_train_bc)

    q = sub.add_parser("train-dagger", help="DAgger rounds on generated scenes")
    q.add_argument("--scenes", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--rounds", type=int, default=10)
    q.add_argument("--beta", type=float, default=0.8)
    q.add_argument("--trajectories", type=int, default=16)
    q.add_argument("--samples-per-round", type=int)
    q.add_argument("--epochs-per-round", type=int, default=2)
    q.add_argument("--max-traj-steps", type=int, default=150)
    q.add_argument("--pure-oracle", action="store_true", help="never execute student actions (BC arm)")
    q.add_argument("--shard-dir")
    policy_args(q)
    q.set_defaults(fn=cmd_train_dagger)

    q = sub.add_parser("build-map", help="drive a route with the oracle and save a topological map")
    q.add_argument("--scene", required=True)
    q.add_argument("--start", type=_pose, required=True)
    q.add_argument("--goal", type=_pose, required=True)
    q.add_argument("--spacing", type=float, default=1.5)
    q.add_argument("--light", type=float, default=1.0)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_build_map)

    q = sub.add_parser("navigate", help="run one closed-loop episode")
    q.add_argument("--scene", required=True)
    q.add_argument("--map", required=True)
    q.add_argument("--policy", required=True)
    q.add_argument("--start", type=_pose, required=True)
    q.add_argument("--light", type=float, default=1.0)
    q.add_argument("--v-max", type=float, default=0.3)
    q.add_argument("--omega-max", type=float, default=1.0)
    q.add_argument("--max-steps", type=int, default=500)
    q.add_argument("--trace", help="episode trace CSV")
    q.set_defaults(fn=cmd_navigate)

    for name, fn, hlp in (("eval", cmd_eval, "train/load arms and evaluate an experiment"),
                          ("report", cmd_report, "rebuild summary tables and plots")):
        q = sub.add_parser(name, help=hlp)
        q.add_argument("--config", required=True, help="experiment INI file")
        q.add_argument("--workspace", help="defaults to $TOPONAV_WORKSPACE")
        q.add_argument("--out", help="report directory")
        if name == "eval":
            q.add_argument("--no-train", action="store_true", help="fail instead of training missing arms")
        q.set_defaults(fn=fn)
    return p


def main(argv=None) -> int:
    from .harness.config import ConfigError

    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        a.fn(a)
    except (UsageError, ConfigError, FileNotFoundError) as e:
        print(f"toponav: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # experiment failure
        logging.getLogger("toponav").debug("failure", exc_info=True)
        print(f"toponav: {a.command} failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
