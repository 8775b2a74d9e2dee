"""Small end-to-end run: scenes, a short DAgger run, a map and one navigation episode.

    python demos/quickstart.py [out_dir]

Takes about a minute on one core.  The policy is far from converged; the
point is the plumbing, not the success rate.
"""
import sys
from pathlib import Path

import numpy as np

from toponav.learner import DaggerConfig, run_dagger
from toponav.oracle import OracleConfig, sample_route
from toponav.policy import Policy, PolicyConfig
from toponav.topo import build_map, navigate
from toponav.world import CATEGORIES, Embodiment, generate_scene

out = Path(sys.argv[1] if len(sys.argv) > 1 else "quickstart_out")
out.mkdir(parents=True, exist_ok=True)

scenes = [generate_scene(c, 48, s) for s in range(4) for c in CATEGORIES]
cfg = DaggerConfig(rounds=2, beta=0.8, trajectories_per_round=8, epochs_per_round=2, max_traj_steps=80)
policy, report = run_dagger(Policy(PolicyConfig(seed=0)), scenes, cfg)
print(report.summary(), end="")
policy.save(out / "policy.tnck")

scene = generate_scene("open_space", 48, 12345)
start, goal, path = sample_route(scene, np.random.default_rng(0), OracleConfig(), Embodiment())
topomap = build_map(scene, start, goal, path=path)
topomap.save(out / "route.tnmp")
print(f"map: {len(topomap)} nodes, start {start}, goal {goal}")

res = navigate(scene, topomap, policy, start)
res.write_trace(out / "trace.csv")
print(f"outcome {res.outcome} after {res.steps} steps, path {res.path_length:.2f} m, "
      f"shortest {res.shortest_length:.2f} m, SPL term {res.spl_term():.2f}")
