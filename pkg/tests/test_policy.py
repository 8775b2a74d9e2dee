import math

import numpy as np
import pytest

from toponav.learner import TrainConfig, train_bc
from toponav.dataset import TripletArrays
from toponav.nn import Tensor
from toponav.policy import (
    ENCODER_MODES, VARIANTS, CrossBlock, FrozenEncoder, NoBlock, Policy, PolicyConfig, TokenCompressor,
    binocular_encode, compress_tokens, encode_frozen, loss_mse, make_block,
)
from toponav.world import Pose, empty_scene, generate_scene, render

CFG = PolicyConfig()


def random_obs(rng, *lead):
    from toponav.world import C_SEMANTIC

    W = CFG.W
    inv = rng.uniform(0, 1, (*lead, W, 1))
    app = rng.uniform(0, 1, (*lead, W, 1))
    sem = np.eye(C_SEMANTIC)[rng.integers(0, C_SEMANTIC, (*lead, W))]
    return np.concatenate([inv, app, sem], -1).astype(np.float32)


def test_config_validation():
    with pytest.raises(ValueError):
        PolicyConfig(P=0)
    with pytest.raises(ValueError):
        PolicyConfig(W=30, patch_width=4)
    with pytest.raises(ValueError):
        PolicyConfig(variant="Bogus")
    with pytest.raises(ValueError):
        make_block("Bogus", CFG)
    with pytest.raises(ValueError):
        PolicyConfig(encoder_mode="finetune")


# ---------------------------------------------------------------- frozen encoder

def test_frozen_tokens_deterministic():
    obs = random_obs(np.random.default_rng(0))
    a, b = encode_frozen(obs, CFG), encode_frozen(obs, CFG)
    assert a.shape == (CFG.T, CFG.token_dim) and np.array_equal(a, b)
    with pytest.raises(ValueError):
        encode_frozen(obs[:16], CFG)


def test_frozen_tokens_invariant_to_light():
    scene = generate_scene("clutter", 32, 0)
    j, i = np.argwhere(scene.feasible(0.2))[10]
    p = Pose(*scene.cell_center(j, i), 0.3)
    bright, dark = render(scene, p, light_level=1.0), render(scene, p, light_level=0.15)
    enc = FrozenEncoder(CFG)
    ra, rb = enc.robust_inputs(bright.to_array()), enc.robust_inputs(dark.to_array())
    assert np.array_equal(ra, rb)
    ta, tb = enc(bright.to_array()), enc(dark.to_array())
    assert np.allclose(ta, tb, atol=1e-5)


def test_frozen_encoder_not_trainable():
    pol = Policy(CFG)
    names = [n for n, _ in pol.named_parameters()]
    assert not any("frozen" in n for n in names)
    before = {k: v.copy() for k, v in pol.frozen.arrays().items()}
    rng = np.random.default_rng(0)
    data = TripletArrays(random_obs(rng, 64, CFG.P), random_obs(rng, 64), rng.normal(0, 0.1, (64, 5, 3)))
    train_bc(pol, data, TrainConfig(epochs=1, batch_size=32))
    for k, v in pol.frozen.arrays().items():
        assert v.tobytes() == before[k].tobytes()


def test_trainable_appearance_encoder_is_trainable():
    pol = Policy(PolicyConfig(encoder_mode="trainable_appearance"))
    assert any(n.startswith("app_encoder.") for n, _ in pol.named_parameters())


# ---------------------------------------------------------------- blocks

def test_noblock_passthrough():
    g = Tensor(np.random.default_rng(0).standard_normal((2, 8, 32)).astype(np.float32))
    o = Tensor(np.zeros((2, 8, 32), np.float32))
    assert binocular_encode(g, o, NoBlock()) is g


@pytest.mark.parametrize("variant", VARIANTS)
def test_block_shape_contract(variant):
    rng = np.random.default_rng(1)
    blk = make_block(variant, CFG, rng)
    g = rng.standard_normal((3, CFG.T, CFG.token_dim)).astype(np.float32)
    o = rng.standard_normal((3, CFG.T, CFG.token_dim)).astype(np.float32)
    out = binocular_encode(g, o, blk, random_obs(rng, 3), random_obs(rng, 3))
    assert out.shape == (3, CFG.T, CFG.token_dim)


def test_block_rejects_token_dim_mismatch():
    with pytest.raises(ValueError):
        binocular_encode(np.zeros((1, 8, 32)), np.zeros((1, 8, 16)), NoBlock())


def test_cross_attention_maps_are_distributions():
    blk = CrossBlock(CFG, np.random.default_rng(2))
    rng = np.random.default_rng(3)
    blk(Tensor(rng.standard_normal((2, 8, 32)).astype(np.float32)),
        Tensor(rng.standard_normal((2, 8, 32)).astype(np.float32)))
    maps = blk.attention_maps()
    assert len(maps) == CFG.bin_layers
    for m in maps:
        assert m.shape == (2, CFG.bin_heads, CFG.T, CFG.T) and np.allclose(m.sum(-1), 1, atol=1e-6)


def test_compressor_zero_and_shape():
    comp = TokenCompressor(CFG, np.random.default_rng(0))
    out = compress_tokens(np.zeros((2, CFG.T, CFG.token_dim), np.float32), comp)
    assert out.shape == (2, CFG.token_dim) and np.array_equal(out.data, np.zeros((2, CFG.token_dim)))
    cfg16 = PolicyConfig(W=64)
    comp16 = TokenCompressor(cfg16, np.random.default_rng(0))
    assert compress_tokens(np.ones((1, cfg16.T, 32), np.float32), comp16).shape == (1, 32)


# ---------------------------------------------------------------- forward

@pytest.mark.parametrize("mode", ENCODER_MODES)
def test_forward_shape_and_determinism(mode):
    pol = Policy(PolicyConfig(encoder_mode=mode))
    rng = np.random.default_rng(0)
    obs, goal = random_obs(rng, CFG.P), random_obs(rng)
    a, b = pol.predict(obs, goal), pol.predict(obs, goal)
    assert a.shape == (1, 5, 3) and np.array_equal(a, b) and np.isfinite(a).all()
    with pytest.raises(ValueError):
        pol.predict(obs[:5], goal)


def test_forward_is_frame_order_sensitive():
    pol = Policy(CFG)
    rng = np.random.default_rng(4)
    obs, goal = random_obs(rng, 4, CFG.P), random_obs(rng, 4)
    shuffled = obs[:, ::-1]
    assert not np.allclose(pol.predict(obs, goal), pol.predict(shuffled, goal))


def test_predict_scale_denormalizes():
    pol = Policy(CFG)
    rng = np.random.default_rng(5)
    obs, goal = random_obs(rng, CFG.P), random_obs(rng)
    a, b = pol.predict(obs, goal), pol.predict(obs, goal, scale=0.1)
    assert np.allclose(b[..., :2], a[..., :2] * 0.1 / CFG.waypoint_scale, rtol=1e-6)
    assert np.array_equal(a[..., 2], b[..., 2])


def test_parameter_counts_comparable():
    counts = {v: Policy(PolicyConfig(variant=v)).trainable_parameter_count() for v in VARIANTS}
    assert max(counts.values()) < 2 * min(counts.values())


# ---------------------------------------------------------------- loss

def test_loss_examples():
    label = np.random.default_rng(0).uniform(-1, 1, (2, 5, 3))
    assert float(loss_mse(Tensor(label.copy()), label).data) == 0.0
    assert math.isclose(float(loss_mse(Tensor(label + 0.1), label).data), 0.01, rel_tol=1e-9)
    pred = np.zeros((1, 1, 3))
    lab = np.zeros((1, 1, 3))
    pred[0, 0, 2], lab[0, 0, 2] = 3.1, -3.1
    want = (2 * math.pi - 6.2) ** 2 / 3
    assert math.isclose(float(loss_mse(Tensor(pred), lab).data), want, rel_tol=1e-9)


# ---------------------------------------------------------------- micro-benchmark

def test_overfit_straight_corridor():
    scene = empty_scene(60, 7)
    frames = [render(scene, Pose(0.5 + 0.075 * k, 0.35, 0.0)).to_array() for k in range(12)]
    obs = np.stack([np.stack(frames[k:k + 6]) for k in range(6)])
    goal = np.stack([frames[min(k + 10, 11)] for k in range(6)])
    wps = np.tile(np.stack([0.075 * np.arange(1, 6), np.zeros(5), np.zeros(5)], 1), (6, 1, 1))
    data = TripletArrays(obs, goal, wps)
    pol = Policy(PolicyConfig(seed=1))
    pol, rep = train_bc(pol, data, TrainConfig(epochs=150, batch_size=6, lr=1e-3, mirror=False))
    pred = pol.predict(obs[0], goal[0])[0]
    assert np.abs(pred - wps[0]).max() < 0.02
    assert rep.epoch_losses[-1] < rep.epoch_losses[0]
