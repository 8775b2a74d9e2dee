"""Behavior cloning and DAgger data collection / training loops."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import nn
from .dataset import Triplet, TripletArrays, load_shards, mirror_arrays, normalize_waypoints, stack_history
from .oracle import (
    CollisionError,
    OracleConfig,
    OracleGuide,
    current_subgoal,
    rollout_oracle,
    sample_route,
    sample_subgoals,
)
from .policy import Policy, loss_mse
from .topo import PDGains, pd_controller
from .world import Camera, Embodiment, PlanningError, is_collision, euler_step, render, step_kinematic

log = logging.getLogger(__name__)


class CollectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup: int = 0
    seed: int = 0
    mirror: bool = True  # reflect a random half of every batch


@dataclass(frozen=True)
class DaggerConfig:
    rounds: int = 10
    beta: float = 0.8
    trajectories_per_round: int = 32
    epochs_per_round: int = 2
    seed: int = 0
    max_traj_steps: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.01
    parallel: int = 16
    light_level: float = 1.0
    min_route: float = 2.0
    max_route: float = 8.0
    samples_per_round: Optional[int] = None  # exact per-round quota; trajectories then keep coming until met

    def __post_init__(self):
        if not (0.0 < self.beta <= 1.0):
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.trajectories_per_round < 1 or self.epochs_per_round < 0:
            raise ValueError("need trajectories_per_round >= 1 and epochs_per_round >= 0")

    def train_config(self, round_: int) -> TrainConfig:
        return TrainConfig(self.epochs_per_round, self.batch_size, self.lr, self.weight_decay, 0,
                           self.seed * 1000 + round_)


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    round_counts: list = field(default_factory=list)
    student_steps: list = field(default_factory=list)
    skipped_routes: list = field(default_factory=list)
    routes: list = field(default_factory=list)
    wall_time: float = 0.0
    checkpoint: str = ""

    def extend(self, other: "TrainReport"):
        self.epoch_losses += other.epoch_losses
        self.wall_time += other.wall_time

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "loss"])
            for k, l in enumerate(self.epoch_losses):
                w.writerow([k, repr(float(l))])

    def summary(self) -> str:
        lines = [f"epochs {len(self.epoch_losses)}",
                 f"final_loss {self.epoch_losses[-1]:.6g}" if self.epoch_losses else "final_loss nan",
                 f"round_counts {' '.join(map(str, self.round_counts))}",
                 f"student_steps {' '.join(map(str, self.student_steps))}",
                 f"wall_time {self.wall_time:.1f}",
                 f"checkpoint {self.checkpoint}"]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- training

def _as_arrays(data) -> TripletArrays:
    if isinstance(data, TripletArrays):
        return data
    if isinstance(data, (str, Path)):
        return load_shards([data])
    data = list(data)
    if data and isinstance(data[0], Triplet):
        return TripletArrays.from_triplets(data)
    return load_shards(data)


def train_bc(policy: Policy, data, cfg: TrainConfig = TrainConfig()):
    """Minimize loss_mse over shuffled mini-batches; returns (policy, report)."""
    t0 = time.time()
    data = _as_arrays(data)
    n = len(data)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    P, H, W, C = data.dims
    if (P, H, W, C) != (policy.cfg.P, policy.cfg.H, policy.cfg.W, policy.cfg.C):
        raise ValueError(f"dataset dims {(P, H, W, C)} do not match the policy config")
    report = TrainReport()
    if cfg.epochs == 0:
        return policy, report
    bs = min(cfg.batch_size, n)
    per_epoch = -(-n // bs)
    opt = nn.AdamW(policy.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay,
                   total_steps=per_epoch * cfg.epochs, warmup=cfg.warmup)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b in range(per_epoch):
            idx = np.sort(order[b * bs:(b + 1) * bs])
            opt.zero_grad()
            obs, goal, wp = data.obs[idx], data.goal[idx], data.waypoints[idx]
            if cfg.mirror:
                flip = rng.random(len(idx)) < 0.5
                mo, mg, mw = mirror_arrays(obs[flip], goal[flip], wp[flip])
                obs, goal, wp = obs.copy(), goal.copy(), wp.copy()
                obs[flip], goal[flip], wp[flip] = mo, mg, mw
            label = normalize_waypoints(wp, policy.cfg.waypoint_scale)
            loss = loss_mse(policy(obs, goal), label)
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
        report.epoch_losses.append(total / n)
    report.wall_time = time.time() - t0
    return policy, report


# ---------------------------------------------------------------- DAgger

def student_action_probability(beta: float, round_: int) -> float:
    if round_ < 1:
        raise ValueError(f"rounds are indexed from 1, got {round_}")
    return float(beta) ** int(round_)


@dataclass
class _Traj:
    scene: object
    guide: OracleGuide
    path: list
    goal: object
    subgoals: list
    pose: object
    rng: np.random.Generator
    frames: list = field(default_factory=list)
    alpha: Optional[float] = None
    steps: int = 0
    done: bool = False
    use_student: bool = False
    student_twist: object = None
    executed: list = field(default_factory=list)


@dataclass
class CollectStats:
    samples: int = 0
    trajectories: int = 0
    student_steps: int = 0
    gated_steps: int = 0
    skipped_routes: int = 0
    skipped_labels: int = 0
    executed: list = field(default_factory=list)  # per-trajectory executed poses
    routes: list = field(default_factory=list)  # (scene index, start, goal) per trajectory


def _start_traj(scene, cfg: DaggerConfig, ocfg, emb, camera, seed) -> Optional[_Traj]:
    rng = np.random.default_rng(seed)
    try:
        start, goal, path = sample_route(scene, rng, ocfg, emb, cfg.min_route, cfg.max_route)
    except PlanningError:
        return None
    subgoals = sample_subgoals(scene, path, ocfg, rng.integers(2 ** 31), camera, cfg.light_level)
    return _Traj(scene, OracleGuide(scene, goal, path, ocfg, emb), path, goal, subgoals, start, rng)


def collect_round(policy: Optional[Policy], scenes, cfg: DaggerConfig, round_: int,
                  ocfg: OracleConfig = OracleConfig(), emb: Embodiment = Embodiment(), camera: Camera = Camera(),
                  p_student: Optional[float] = None, gains: PDGains = PDGains(), keep_poses: bool = False):
    """Roll out trajectories_per_round routes mixing student and oracle actions.

    Returns (TripletArrays, CollectStats).  Labels are always oracle rollouts.
    ``p_student`` overrides beta**round (0 gives pure oracle collection).
    """
    scenes = list(scenes)
    if not scenes:
        raise ValueError("no scenes to collect from")
    p = student_action_probability(cfg.beta, round_) if p_student is None else float(p_student)
    if p > 0 and policy is None:
        raise ValueError("a student policy is needed when p_student > 0")
    P = policy.cfg.P if policy is not None else 6
    stats = CollectStats()
    obs_l, goal_l, wp_l = [], [], []
    n = cfg.trajectories_per_round
    quota = cfg.samples_per_round
    c0 = 0
    while (c0 < n) if quota is None else (len(wp_l) < quota and c0 < 1000 * n):
        hi = min(n, c0 + cfg.parallel) if quota is None else c0 + cfg.parallel
        trajs = []
        for i in range(c0, hi):
            tr = _start_traj(scenes[i % len(scenes)], cfg, ocfg, emb, camera, [cfg.seed, round_, i])
            if tr is None:
                stats.skipped_routes += 1
                continue
            tr.executed = [tr.pose]
            stats.routes.append((i % len(scenes), tr.pose, tr.goal))
            trajs.append(tr)
        for _ in range(cfg.max_traj_steps):
            live = [t for t in trajs if not t.done]
            if not live:
                break
            want = []
            for t in live:
                if t.pose.distance(t.goal) <= ocfg.success_radius:
                    t.done = True
                    continue
                t.frames.append(render(t.scene, t.pose, camera, cfg.light_level).to_array())
                stack = stack_history(t.frames, len(t.frames) - 1, P)
                k = current_subgoal(t.subgoals, t.guide.progress(t.pose), ocfg.subgoal_reach)
                goal_obs = t.subgoals[k].observation.to_array()
                try:
                    label = rollout_oracle(t.scene, t.pose, t.path, ocfg, emb, t.guide)
                    obs_l.append(stack)
                    goal_l.append(goal_obs)
                    wp_l.append(label)
                except (CollisionError, PlanningError):
                    stats.skipped_labels += 1
                t.use_student = p > 0 and t.rng.random() < p
                if t.use_student:
                    want.append((t, stack, goal_obs))
            if want:
                preds = policy.predict(np.stack([w[1] for w in want]), np.stack([w[2] for w in want]),
                                       scale=emb.v_max * emb.dt)
                for (t, _, _), pr in zip(want, preds):
                    t.student_twist, t.alpha = pd_controller(pr, gains, emb, t.alpha)
            for t in live:
                if t.done:
                    continue
                tw = None
                if t.use_student:
                    cand = t.student_twist
                    if is_collision(t.scene, euler_step(t.pose, cand, emb.dt), emb.radius):
                        stats.gated_steps += 1
                    else:
                        tw = cand
                        stats.student_steps += 1
                if tw is None:
                    try:
                        tw = t.guide.action(t.pose)
                    except PlanningError:
                        t.done = True
                        continue
                new, collided = step_kinematic(t.scene, t.pose, tw, emb)
                if collided:
                    # oracle off its validated path; end the trajectory here
                    t.done = True
                    continue
                t.pose = new
                t.executed.append(new)
                t.steps += 1
        for t in trajs:
            stats.trajectories += 1
            if keep_poses:
                stats.executed.append(t.executed)
        c0 = hi
    if quota is not None:
        del obs_l[quota:], goal_l[quota:], wp_l[quota:]
    attempted = stats.trajectories + stats.skipped_routes
    if attempted and stats.skipped_routes > 0.5 * attempted:
        raise CollectionError(f"route sampling failed for {stats.skipped_routes}/{attempted} trajectories "
                              f"in round {round_}")
    stats.samples = len(wp_l)
    if not wp_l:
        W, C = policy.cfg.W if policy else camera.W, policy.cfg.C if policy else 10
        return TripletArrays.empty(P, ocfg.H, W, C), stats
    data = TripletArrays(np.stack(obs_l).astype(np.float32), np.stack(goal_l).astype(np.float32),
                         np.stack(wp_l).astype(np.float32))
    return data, stats


def run_dagger(policy: Policy, scenes, cfg: DaggerConfig, ocfg: OracleConfig = OracleConfig(),
               emb: Embodiment = Embodiment(), camera: Camera = Camera(), pure_oracle: bool = False,
               shard_dir=None):
    """Collect with the current policy, aggregate, retrain; repeated for cfg.rounds.

    ``pure_oracle`` forces p_student = 0 every round, which is behavior cloning
    with the identical budget and training schedule.
    """
    from .dataset import write_shard

    t0 = time.time()
    report = TrainReport()
    parts = []
    for r in range(1, cfg.rounds + 1):
        data, stats = collect_round(policy, scenes, cfg, r, ocfg, emb, camera,
                                    p_student=0.0 if pure_oracle else None)
        if shard_dir is not None:
            write_shard(Path(shard_dir) / f"round_{r:02d}.tnd", data)
        parts.append(data)
        report.round_counts.append(stats.samples)
        report.student_steps.append(stats.student_steps)
        report.skipped_routes.append(stats.skipped_routes)
        report.routes += stats.routes
        agg = TripletArrays.concat(parts)
        log.info("round %d: %d new samples, %d aggregated, %d student steps", r, stats.samples, len(agg),
                 stats.student_steps)
        policy, rep = train_bc(policy, agg, cfg.train_config(r))
        report.extend(rep)
    report.wall_time = time.time() - t0
    return policy, report
