import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import corridor_scene
from toponav.dataset import TripletArrays
from toponav.learner import (
    CollectionError, DaggerConfig, TrainConfig, collect_round, run_dagger, student_action_probability,
    train_bc,
)
from toponav.oracle import OracleConfig, rollout_oracle, sample_route
from toponav.policy import Policy, PolicyConfig
from toponav.world import CATEGORIES, Embodiment, generate_scene, is_collision

EMB = Embodiment()
OCFG = OracleConfig()


@pytest.fixture(scope="module")
def scenes():
    return [generate_scene(c, 48, 40 + s) for s in range(2) for c in CATEGORIES]


def tiny(**kw):
    base = dict(rounds=2, trajectories_per_round=3, epochs_per_round=1, max_traj_steps=12, parallel=3)
    base.update(kw)
    return DaggerConfig(**base)


# ---------------------------------------------------------------- schedule

def test_student_probability_schedule():
    assert student_action_probability(0.8, 1) == 0.8
    assert np.isclose(student_action_probability(0.8, 10), 0.8 ** 10)
    assert student_action_probability(1.0, 7) == 1.0
    with pytest.raises(ValueError):
        student_action_probability(0.8, 0)


@given(st.floats(0.01, 1.0), st.integers(1, 30))
def test_student_probability_monotone(beta, r):
    assert student_action_probability(beta, r + 1) <= student_action_probability(beta, r)


def test_dagger_config_validation():
    for kw in ({"beta": 0.0}, {"beta": 1.5}, {"rounds": 0}, {"trajectories_per_round": 0}):
        with pytest.raises(ValueError):
            DaggerConfig(**kw)


# ---------------------------------------------------------------- collection

def test_pure_oracle_labels_equal_resimulation(scenes):
    cfg = tiny(trajectories_per_round=1, max_traj_steps=25)
    data, stats = collect_round(None, scenes, cfg, 1, p_student=0.0, keep_poses=True)
    assert stats.student_steps == 0 and stats.skipped_labels == 0
    rng = np.random.default_rng([cfg.seed, 1, 0])
    start, goal, path = sample_route(scenes[0], rng, OCFG, EMB, cfg.min_route, cfg.max_route)
    poses = stats.executed[0]
    assert poses[0] == start and len(data) <= len(poses)
    for k in range(len(data)):
        want = rollout_oracle(scenes[0], poses[k], path, OCFG, EMB)
        assert np.allclose(data.waypoints[k], want, atol=1e-6)


def test_student_executions_are_collision_free(scenes):
    pol = Policy(PolicyConfig(seed=5))
    data, stats = collect_round(pol, scenes, tiny(max_traj_steps=30, trajectories_per_round=6), 1,
                                p_student=1.0, keep_poses=True)
    assert stats.student_steps > 0
    for i, poses in enumerate(stats.executed):
        scene = scenes[stats.routes[i][0]]
        assert all(not is_collision(scene, p, EMB.radius) for p in poses)
    assert len(data) > 0 and np.isfinite(data.waypoints).all()


def test_tiny_beta_gives_no_student_steps(scenes):
    pol = Policy(PolicyConfig(seed=5))
    _, stats = collect_round(pol, scenes, tiny(beta=1e-9), 1)
    assert stats.student_steps == 0


def test_student_needs_policy(scenes):
    with pytest.raises(ValueError):
        collect_round(None, scenes, tiny(), 1)


def test_sample_quota_is_exact(scenes):
    data, stats = collect_round(None, scenes, tiny(samples_per_round=57), 1, p_student=0.0)
    assert len(data) == 57 and stats.samples == 57


def test_collection_deterministic(scenes):
    pol = Policy(PolicyConfig(seed=2))
    a, _ = collect_round(pol, scenes, tiny(), 1, p_student=0.5)
    b, _ = collect_round(pol, scenes, tiny(), 1, p_student=0.5)
    assert np.array_equal(a.obs, b.obs) and np.array_equal(a.waypoints, b.waypoints)


def test_unroutable_scenes_raise():
    with pytest.raises(CollectionError):
        collect_round(None, [corridor_scene(16)], tiny(min_route=5.0), 1, p_student=0.0)


# ---------------------------------------------------------------- training

def _straight_data(n=32):
    rng = np.random.default_rng(0)
    obs = rng.random((n, 6, 32, 10)).astype(np.float32)
    goal = rng.random((n, 32, 10)).astype(np.float32)
    wp = np.zeros((n, 5, 3), np.float32)
    wp[:, :, 0] = 0.075 * np.arange(1, 6)
    return TripletArrays(obs, goal, wp)


def test_train_bc_reduces_loss():
    pol, rep = train_bc(Policy(PolicyConfig(seed=0)), _straight_data(), TrainConfig(epochs=8, batch_size=16))
    assert len(rep.epoch_losses) == 8 and rep.epoch_losses[-1] < 0.5 * rep.epoch_losses[0]


def test_train_bc_errors():
    with pytest.raises(ValueError):
        train_bc(Policy(PolicyConfig()), TripletArrays.empty(6, 5, 32, 10))
    with pytest.raises(ValueError):
        train_bc(Policy(PolicyConfig(P=4)), _straight_data())


def test_train_bc_deterministic():
    a, _ = train_bc(Policy(PolicyConfig(seed=1)), _straight_data(), TrainConfig(epochs=2, batch_size=8, seed=3))
    b, _ = train_bc(Policy(PolicyConfig(seed=1)), _straight_data(), TrainConfig(epochs=2, batch_size=8, seed=3))
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))


def test_run_dagger_deterministic_and_reported(scenes, tmp_path):
    a, ra = run_dagger(Policy(PolicyConfig(seed=0)), scenes, tiny(), shard_dir=tmp_path)
    b, rb = run_dagger(Policy(PolicyConfig(seed=0)), scenes, tiny())
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))
    assert ra.round_counts == rb.round_counts and len(ra.epoch_losses) == 2
    assert sorted(f.name for f in tmp_path.iterdir()) == ["round_01.tnd", "round_02.tnd"]
    assert "epochs 2" in ra.summary()


def test_run_dagger_pure_oracle_never_uses_student(scenes):
    _, rep = run_dagger(Policy(PolicyConfig(seed=0)), scenes, tiny(beta=1.0), pure_oracle=True)
    assert rep.student_steps == [0, 0]


def test_pure_oracle_dagger_equals_bc_on_same_routes(scenes):
    cfg = tiny(rounds=1)
    a, _ = run_dagger(Policy(PolicyConfig(seed=4)), scenes, cfg, pure_oracle=True)
    data, _ = collect_round(None, scenes, cfg, 1, p_student=0.0)
    b, _ = train_bc(Policy(PolicyConfig(seed=4)), data, cfg.train_config(1))
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))
