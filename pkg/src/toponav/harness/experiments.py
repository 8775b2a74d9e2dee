"""Experiment arms, cached training, seeded evaluation suites and result tables."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..learner import DaggerConfig, run_dagger
from ..oracle import OracleConfig, RouteSpec, sample_route, write_route_manifest
from ..policy import Policy, PolicyConfig
from ..topo import Episode, NavParams, TopoMap, build_map, navigate_many, relight_map
from ..world import CATEGORIES, Embodiment, PlanningError, generate_scene
from .config import ExperimentConfig, workspace_dir
from .metrics import compute_metrics

log = logging.getLogger(__name__)

HELD_OUT_SCENE_BASE = 1_000_000


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class Arm:
    name: str
    variant: str = "CrossBlock"
    encoder_mode: str = "frozen_robust"
    budget_fraction: float = 1.0
    pure_oracle: bool = False


def arms_for(cfg: ExperimentConfig) -> list[Arm]:
    base = Arm("dagger", cfg.variant, cfg.encoder_mode)
    if cfg.experiment == "bc_vs_dagger":
        return [Arm("bc", cfg.variant, cfg.encoder_mode, pure_oracle=True), base]
    if cfg.experiment == "data_scale":
        pct = int(round(100 * cfg.budget_fraction))
        return [Arm(f"dagger_{pct}pct", cfg.variant, cfg.encoder_mode, cfg.budget_fraction), base]
    if cfg.experiment == "binocular_ablation":
        return [Arm(v, v, cfg.encoder_mode) for v in cfg.variants]
    if cfg.experiment == "illumination":
        return [Arm("frozen_robust", cfg.variant, "frozen_robust"),
                Arm("trainable_appearance", cfg.variant, "trainable_appearance")]
    if cfg.experiment == "embodiment_swap":
        return [base]
    raise ExperimentError(f"no arms defined for {cfg.experiment!r}")


# ---------------------------------------------------------------- scenes and routes

def training_scenes(cfg: ExperimentConfig):
    return [generate_scene(c, cfg.scene_size, s) for s in range(cfg.train_scenes_per_category)
            for c in cfg.categories]


@dataclass
class EvalRoute:
    scene: object
    scene_ref: str
    start: object
    goal: object
    path: list

    @property
    def category(self):
        return self.scene.category


def _route_key(scene_ref, start, goal):
    return (scene_ref, round(start.x, 6), round(start.y, 6), round(goal.x, 6), round(goal.y, 6))


def eval_suite(cfg: ExperimentConfig, seed: int, kind: str = "held_out", categories=None, n=None,
               exclude=frozenset()) -> list[EvalRoute]:
    """Seeded route suite stratified by category.

    ``held_out`` uses freshly generated scenes never used in training;
    ``in_distribution`` samples new routes on the training scenes, skipping any
    (scene, start, goal) listed in ``exclude``.
    """
    cats = tuple(categories or cfg.categories)
    n = n if n is not None else (cfg.eval_routes if kind == "held_out" else cfg.in_distribution_routes)
    ocfg, emb = OracleConfig(), Embodiment()
    train = training_scenes(cfg) if kind == "in_distribution" else None
    out, k = [], 0
    while len(out) < n:
        cat = cats[len(out) % len(cats)]
        if kind == "held_out":
            sseed = HELD_OUT_SCENE_BASE + 10_000 * seed + k
            scene = generate_scene(cat, cfg.scene_size, sseed)
            ref = f"{cat}/{sseed}"
        elif kind == "in_distribution":
            idx = [i for i, s in enumerate(train) if s.category == cat]
            j = idx[(k * 7919 + seed) % len(idx)]
            scene = train[j]
            ref = f"train/{j}"
        else:
            raise ExperimentError(f"unknown suite kind {kind!r}")
        k += 1
        try:
            start, goal, path = sample_route(scene, np.random.default_rng([seed, k, 77]), ocfg, emb)
        except PlanningError:
            continue
        if _route_key(ref, start, goal) in exclude:
            continue
        out.append(EvalRoute(scene, ref, start, goal, path))
    return out


def write_suite_manifest(path, suite, seed):
    write_route_manifest(path, [RouteSpec(r.scene, r.start, r.goal, [], r.path, seed, r.scene_ref)
                                for r in suite])


# ---------------------------------------------------------------- training with a checkpoint cache

def dagger_config(cfg: ExperimentConfig, arm: Arm, seed: int) -> DaggerConfig:
    return DaggerConfig(rounds=cfg.rounds, beta=cfg.beta, trajectories_per_round=16,
                        epochs_per_round=cfg.epochs_per_round, seed=seed, max_traj_steps=cfg.max_traj_steps,
                        batch_size=cfg.batch_size, lr=cfg.lr, weight_decay=cfg.weight_decay,
                        samples_per_round=max(1, int(round(cfg.samples_per_round * arm.budget_fraction))))


def policy_config(arm: Arm, seed: int) -> PolicyConfig:
    return PolicyConfig(variant=arm.variant, encoder_mode=arm.encoder_mode, seed=seed)


def arm_key(cfg: ExperimentConfig, arm: Arm, seed: int) -> str:
    """Hash of everything that determines the trained weights."""
    blob = json.dumps({"arm": {k: v for k, v in asdict(arm).items() if k != "name"},
                       "dagger": asdict(dagger_config(cfg, arm, seed)),
                       "policy": json.loads(policy_config(arm, seed).to_json()),
                       "scenes": [cfg.scene_size, cfg.train_scenes_per_category, list(cfg.categories)]},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def train_arm(cfg: ExperimentConfig, arm: Arm, seed: int, ws=None, train: bool = True):
    """Returns (policy, checkpoint path, training route keys); trains only on a cache miss."""
    ws = workspace_dir(ws)
    key = arm_key(cfg, arm, seed)
    d = ws / "checkpoints"
    d.mkdir(exist_ok=True)
    ck, routes = d / f"{key}.tnck", d / f"{key}.routes.jsonl"
    if not ck.exists():
        if not train:
            raise ExperimentError(f"missing checkpoint for arm {arm.name} seed {seed}: {ck}")
        log.info("training arm %s seed %d (%s)", arm.name, seed, key)
        scenes = training_scenes(cfg)
        pol = Policy(policy_config(arm, seed))
        pol, rep = run_dagger(pol, scenes, dagger_config(cfg, arm, seed), pure_oracle=arm.pure_oracle)
        rep.checkpoint = str(ck)
        rep.write_csv(d / f"{key}.losses.csv")
        (d / f"{key}.log").write_text(rep.summary())
        write_route_manifest(routes, [RouteSpec(scenes[i], s, g, [], [], seed, f"train/{i}")
                                      for i, s, g in rep.routes])
        tmp = ck.with_suffix(".tmp")
        pol.save(tmp)
        tmp.replace(ck)
    pol = Policy.load(ck)
    keys = set()
    if routes.exists():
        for line in routes.read_text().splitlines():
            r = json.loads(line)
            keys.add((r["scene"], round(r["start"][0], 6), round(r["start"][1], 6),
                      round(r["goal"][0], 6), round(r["goal"][1], 6)))
    return pol, ck, keys


# ---------------------------------------------------------------- evaluation

def nav_params(cfg: ExperimentConfig, light_level: float = 1.0, emb: Embodiment = Embodiment()) -> NavParams:
    return NavParams(emb=emb, light_level=light_level, max_steps=cfg.max_steps, success_radius=cfg.success_radius)


def build_maps(cfg: ExperimentConfig, suite, light_level: float = 1.0) -> list[TopoMap]:
    maps = []
    for r in suite:
        m = build_map(r.scene, r.start, r.goal, cfg.node_spacing, path=r.path)
        maps.append(m if light_level == 1.0 else relight_map(r.scene, m, light_level))
    return maps


def evaluate(policy, suite, maps, params: NavParams, parallel: int = 50):
    eps = [Episode(r.scene, m, r.start) for r, m in zip(suite, maps)]
    out = []
    for k in range(0, len(eps), parallel):
        out += navigate_many(eps[k:k + parallel], policy, params)
    return out


@dataclass
class Condition:
    name: str
    suite: str = "held_out"
    map_light: float = 1.0
    eval_light: float = 1.0
    v_max: float = 0.3
    omega_max: float = 1.0
    category: str = ""


def conditions_for(cfg: ExperimentConfig) -> list[Condition]:
    if cfg.experiment == "bc_vs_dagger":
        return [Condition("held_out"), Condition("in_distribution", suite="in_distribution")]
    if cfg.experiment in ("data_scale", "binocular_ablation"):
        return [Condition("held_out")]
    if cfg.experiment == "illumination":
        return [Condition(f"map{m:g}_eval{l:g}", map_light=m, eval_light=l)
                for m in cfg.map_light_levels for l in cfg.light_levels]
    if cfg.experiment == "embodiment_swap":
        nom = Embodiment()
        return [Condition("nominal", category=cfg.swap_category),
                Condition(f"v{cfg.swap_v_max:g}", v_max=cfg.swap_v_max,
                          omega_max=nom.omega_max * cfg.swap_omega_scale, category=cfg.swap_category)]
    raise ExperimentError(f"no conditions for {cfg.experiment!r}")


METRIC_FIELDS = ["experiment", "arm", "seed", "condition", "n", "SR", "SPL"] + \
    [f"SR_{c}" for c in CATEGORIES] + ["config_hash", "checkpoint_hash"]
EPISODE_FIELDS = ["experiment", "arm", "seed", "condition", "route", "scene", "category", "outcome", "steps",
                  "path_length", "shortest_length", "localized_last"]


def _f(x: float) -> str:
    return f"{x:.6f}"


def run_experiment(cfg: ExperimentConfig, ws=None, out_dir=None, train: bool = True) -> dict:
    """Train (or load) every arm, evaluate every condition, write CSV tables and plots.

    Returns a dict of written paths.  Output bytes depend only on (cfg, seeds).
    """
    from .report import write_report

    ws = workspace_dir(ws)
    out = Path(out_dir) if out_dir else ws / "reports" / f"{cfg.experiment}-{cfg.hash()}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    arms, conds = arms_for(cfg), conditions_for(cfg)
    metric_rows, episode_rows = [], []
    for seed in cfg.seeds:
        trained = {a.name: train_arm(cfg, a, seed, ws, train) for a in arms}
        train_keys = set().union(*(t[2] for t in trained.values()))
        suites, maps = {}, {}
        for c in conds:
            skey = (c.suite, c.category)
            if skey not in suites:
                cats = (c.category,) if c.category else None
                suites[skey] = eval_suite(cfg, seed, c.suite, cats, exclude=train_keys)
                hit = {_route_key(r.scene_ref, r.start, r.goal) for r in suites[skey]} & train_keys
                if hit:
                    raise ExperimentError(f"evaluation routes overlap training routes: {sorted(hit)[:3]}")
                write_suite_manifest(out / f"routes_{c.suite}{'_' + c.category if c.category else ''}_s{seed}.jsonl",
                                     suites[skey], seed)
            mkey = skey + (c.map_light,)
            if mkey not in maps:
                maps[mkey] = build_maps(cfg, suites[skey], c.map_light)
        for a in arms:
            pol, ck, _ = trained[a.name]
            ckh = file_hash(ck)
            for c in conds:
                skey = (c.suite, c.category)
                suite = suites[skey]
                emb = Embodiment(v_max=c.v_max, omega_max=c.omega_max)
                res = evaluate(pol, suite, maps[skey + (c.map_light,)], nav_params(cfg, c.eval_light, emb),
                               cfg.eval_parallel)
                m = compute_metrics(res, [r.category for r in suite])
                row = {"experiment": cfg.experiment, "arm": a.name, "seed": seed, "condition": c.name, "n": m.n,
                       "SR": _f(m.SR), "SPL": _f(m.SPL), "config_hash": cfg.hash(), "checkpoint_hash": ckh}
                for cat in CATEGORIES:
                    row[f"SR_{cat}"] = _f(m.per_category[cat][0]) if cat in m.per_category else ""
                metric_rows.append(row)
                for k, (r, e) in enumerate(zip(suite, res)):
                    episode_rows.append({"experiment": cfg.experiment, "arm": a.name, "seed": seed,
                                         "condition": c.name, "route": k, "scene": r.scene_ref,
                                         "category": r.category, "outcome": e.outcome, "steps": e.steps,
                                         "path_length": _f(e.path_length),
                                         "shortest_length": _f(e.shortest_length),
                                         "localized_last": int(e.localized_last)})
                log.info("%s seed %d %s %s: SR %.3f SPL %.3f", cfg.experiment, seed, a.name, c.name, m.SR, m.SPL)
    paths = {"config": out / "config.ini",
             "metrics": write_csv(out / "metrics.csv", METRIC_FIELDS, metric_rows),
             "episodes": write_csv(out / "episodes.csv", EPISODE_FIELDS, episode_rows)}
    paths.update(write_report(cfg, out))
    return paths


def write_csv(path, fieldnames, rows) -> Path:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())
    return Path(path)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
