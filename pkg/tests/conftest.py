import numpy as np
import pytest

from toponav.world import OccupancyScene, empty_scene


def corridor_scene(length=16, cs=0.1):
    """One free row of cells between walls."""
    occ = np.ones((3, length + 2), bool)
    occ[1, 1:-1] = False
    return OccupancyScene(occ, np.full(occ.shape, 0.5, np.float32), occ.astype(np.uint8), cs)


def l_scene(n=12):
    """L-shaped free region: bottom strip plus left strip."""
    occ = np.ones((n, n), bool)
    occ[1:4, 1:-1] = False
    occ[1:-1, 1:4] = False
    return OccupancyScene(occ, np.full(occ.shape, 0.5, np.float32), occ.astype(np.uint8), 0.1)


@pytest.fixture
def open_box():
    return empty_scene(40, 40)


@pytest.fixture(scope="session")
def scenes48():
    from toponav.world import CATEGORIES, generate_scene

    return {c: [generate_scene(c, 48, s) for s in range(3)] for c in CATEGORIES}


class DisguisedOracle:
    """Policy stand-in that replays oracle rollouts from the true poses (fed by ``on_step``)."""

    def __init__(self, episodes, ocfg=None, emb=None):
        from toponav.oracle import OracleConfig, OracleGuide, route_path
        from toponav.policy import PolicyConfig
        from toponav.world import Embodiment

        self.cfg = PolicyConfig()
        self.ocfg, self.emb = ocfg or OracleConfig(), emb or Embodiment()
        self.episodes = episodes
        self.guides = [OracleGuide(e.scene, e.topomap.goal_pose,
                                   route_path(e.scene, e.start, e.topomap.goal_pose, self.ocfg), self.ocfg, self.emb)
                       for e in episodes]
        self.poses = {}

    def hook(self, t, poses):
        self.poses = poses

    def predict(self, obs, goal, scale=None):
        from toponav.oracle import rollout_oracle

        return np.array([rollout_oracle(self.episodes[k].scene, p, self.guides[k].path, self.ocfg, self.emb,
                                        self.guides[k]) for k, p in self.poses.items()])


class ConstantPolicy:
    """Predicts the same waypoints for every input."""

    def __init__(self, wps):
        from toponav.policy import PolicyConfig

        self.cfg = PolicyConfig()
        self.wps = np.asarray(wps, dtype=np.float64)

    def predict(self, obs, goal, scale=None):
        return np.broadcast_to(self.wps, (len(obs),) + self.wps.shape).copy()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
