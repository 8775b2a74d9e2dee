"""Goal-reaching waypoint policy.

Observation and goal scanlines are tokenized by a frozen encoder, the goal tokens
are refined against the latest observation by a binocular block, every image is
compressed to one vector, and a non-causal sequence encoder with a learnable
state token feeds an MLP head that emits ``H`` relative waypoints.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import nn
from .dataset import denormalize_waypoints
from .nn import Tensor, concat, no_grad, relu, wrapped_mse
from .world import C_SEMANTIC, N_CHANNELS, Observation

VARIANTS = ("NoBlock", "EarlyConv", "LateConv", "CatBlock", "CrossBlock")
ENCODER_MODES = ("frozen_robust", "trainable_appearance")


@dataclass(frozen=True)
class PolicyConfig:
    P: int = 6
    H: int = 5
    W: int = 32
    C: int = N_CHANNELS
    token_dim: int = 32
    patch_width: int = 4
    bin_layers: int = 4
    bin_heads: int = 4
    seq_layers: int = 4
    seq_heads: int = 4
    variant: str = "CrossBlock"
    encoder_mode: str = "frozen_robust"
    encoder_seed: int = 0
    seed: int = 0
    compress_channels: int = 8
    head_mult: int = 4
    out_scale: tuple = (1.0, 1.0, 0.25)
    waypoint_scale: float = 0.075  # meters per normalized unit (training v_max * dt)

    def __post_init__(self):
        if self.P < 1 or self.H < 1:
            raise ValueError("P and H must be >= 1")
        if self.W % self.patch_width:
            raise ValueError(f"W={self.W} is not divisible by patch_width={self.patch_width}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown binocular variant {self.variant!r}")
        if not self.waypoint_scale > 0:
            raise ValueError("waypoint_scale must be positive")
        if self.encoder_mode not in ENCODER_MODES:
            raise ValueError(f"unknown encoder mode {self.encoder_mode!r}")

    @property
    def T(self) -> int:
        return self.W // self.patch_width

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        d = dict(d)
        if "out_scale" in d:
            d["out_scale"] = tuple(d["out_scale"])
        return cls(**d)


def as_batch(obs) -> np.ndarray:
    """Observation / list / array -> float array with trailing (W, C) axes."""
    if isinstance(obs, Observation):
        return obs.to_array()
    if isinstance(obs, (list, tuple)):
        return np.stack([as_batch(o) for o in obs])
    return np.asarray(obs)


def normalized_appearance(app: np.ndarray, hit: np.ndarray) -> np.ndarray:
    """Appearance divided by its mean over hit columns; invariant to global light scale."""
    n = hit.sum(axis=-1, keepdims=True)
    mean = (app * hit).sum(axis=-1, keepdims=True) / np.maximum(n, 1)
    return np.where(mean > 0, app / np.where(mean > 0, mean, 1.0), 0.0)


class FrozenEncoder:
    """Fixed random projection of per-patch channels; never trained.

    Depth and semantics are projected as is.  Appearance enters only after
    normalization by its per-image mean, so tokens do not move when the global
    illumination changes.
    """

    def __init__(self, cfg: PolicyConfig):
        rng = np.random.default_rng([cfg.encoder_seed, 7919])
        pw, d = cfg.patch_width, cfg.token_dim
        n_rob = pw * (1 + C_SEMANTIC)
        self.patch_width, self.T = pw, cfg.T
        self.w_robust = (rng.standard_normal((n_rob, d)) / np.sqrt(n_rob + pw)).astype(np.float32)
        self.w_app = (rng.standard_normal((pw, d)) / np.sqrt(n_rob + pw)).astype(np.float32)
        self.bias = (0.1 * rng.standard_normal(d)).astype(np.float32)
        self.pos = nn.sinusoidal_positions(cfg.T, d)
        for a in (self.w_robust, self.w_app, self.bias, self.pos):
            a.setflags(write=False)

    def robust_inputs(self, obs: np.ndarray) -> np.ndarray:
        """(..., T, pw*(1+C_s)) depth + semantic patch features."""
        lead = obs.shape[:-2]
        chans = np.concatenate([obs[..., 0:1], obs[..., 2:]], axis=-1)
        return chans.reshape(*lead, self.T, -1)

    def appearance_inputs(self, obs: np.ndarray) -> np.ndarray:
        hit = obs[..., 2:].argmax(axis=-1) > 0
        app = normalized_appearance(obs[..., 1], hit)
        return app.reshape(*obs.shape[:-2], self.T, self.patch_width)

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float32)
        tok = self.robust_inputs(obs) @ self.w_robust + self.appearance_inputs(obs) @ self.w_app
        return (tok + self.bias + self.pos).astype(np.float32)

    def arrays(self):
        return {"w_robust": self.w_robust, "w_app": self.w_app, "bias": self.bias, "pos": self.pos}


class AppearanceEncoder(nn.Module):
    """Trainable projection of the raw appearance channel only."""

    def __init__(self, cfg: PolicyConfig, rng):
        self.proj = nn.Linear(cfg.patch_width, cfg.token_dim, rng)
        self._pos = nn.sinusoidal_positions(cfg.T, cfg.token_dim)
        self._T, self._pw = cfg.T, cfg.patch_width

    def forward(self, obs: np.ndarray) -> Tensor:
        app = np.asarray(obs[..., 1], dtype=self.proj.w.dtype)
        x = Tensor(app.reshape(*obs.shape[:-2], self._T, self._pw))
        return self.proj(x) + self._pos.astype(self.proj.w.dtype)


# ---------------------------------------------------------------- binocular blocks

class NoBlock(nn.Module):
    def forward(self, goal, obs, goal_raw=None, obs_raw=None):
        return goal


class CrossBlock(nn.Module):
    def __init__(self, cfg, rng):
        self.layers = [nn.CrossLayer(cfg.token_dim, cfg.bin_heads, rng) for _ in range(cfg.bin_layers)]

    def forward(self, goal, obs, goal_raw=None, obs_raw=None):
        for layer in self.layers:
            goal = layer(goal, obs)
        return goal

    def attention_maps(self):
        """Per-layer cross-attention weights from the last call, (B, heads, T_goal, T_obs)."""
        return [layer.cross_attn.last_weights for layer in self.layers]


class CatBlock(nn.Module):
    def __init__(self, cfg, rng):
        d = cfg.token_dim
        self.seg_goal = nn.parameter(np.zeros(d, np.float32))
        self.seg_obs = nn.parameter((0.1 * rng.standard_normal(d)).astype(np.float32))
        self.layers = [nn.EncoderLayer(d, cfg.bin_heads, rng) for _ in range(cfg.bin_layers)]

    def forward(self, goal, obs, goal_raw=None, obs_raw=None):
        T = goal.shape[1]
        x = concat([goal + self.seg_goal, obs + self.seg_obs], axis=1)
        for layer in self.layers:
            x = layer(x)
        return x[:, :T]


class LateConv(nn.Module):
    def __init__(self, cfg, rng):
        d = cfg.token_dim
        self.c1 = nn.Conv1d(2 * d, d, 3, rng, padding=1)
        self.c2 = nn.Conv1d(d, d, 3, rng, padding=1)
        self.c3 = nn.Conv1d(d, d, 3, rng, padding=1)

    def forward(self, goal, obs, goal_raw=None, obs_raw=None):
        x = concat([goal, obs], axis=-1)
        return self.c3(relu(self.c2(relu(self.c1(x)))))


class EarlyConv(nn.Module):
    """Raw goal and observation scanlines stacked channel-wise, own conv stack."""

    def __init__(self, cfg, rng):
        d, pw = cfg.token_dim, cfg.patch_width
        self.c1 = nn.Conv1d(2 * cfg.C, d, pw, rng, stride=pw)
        self.c2 = nn.Conv1d(d, d, 3, rng, padding=1)
        self.c3 = nn.Conv1d(d, d, 3, rng, padding=1)
        self._pos = nn.sinusoidal_positions(cfg.T, d)

    def forward(self, goal, obs, goal_raw=None, obs_raw=None):
        x = Tensor(np.concatenate([goal_raw, obs_raw], axis=-1).astype(self.c1.w.dtype))
        return self.c3(relu(self.c2(relu(self.c1(x))))) + self._pos.astype(self.c1.w.dtype)


BLOCKS = {"NoBlock": NoBlock, "CrossBlock": CrossBlock, "CatBlock": CatBlock,
          "LateConv": LateConv, "EarlyConv": EarlyConv}


class TokenCompressor(nn.Module):
    """Convolution over the token axis, flatten, affine back to ``token_dim``."""

    def __init__(self, cfg, rng):
        c = cfg.compress_channels
        self.conv = nn.Conv1d(cfg.token_dim, c, 3, rng, padding=1)
        self.proj = nn.Linear(cfg.T * c, cfg.token_dim, rng)

    def forward(self, tokens):
        B, T, _ = tokens.shape
        x = self.conv(tokens)
        return self.proj(x.reshape(B, -1))


def compress_tokens(tokens, compressor: TokenCompressor):
    return compressor(tokens if isinstance(tokens, Tensor) else Tensor(np.asarray(tokens)))


# ---------------------------------------------------------------- policy

class Policy(nn.Module):
    def __init__(self, cfg: PolicyConfig):
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 1])
        d = cfg.token_dim
        self._frozen = FrozenEncoder(cfg)
        self.app_encoder = AppearanceEncoder(cfg, rng) if cfg.encoder_mode == "trainable_appearance" else None
        self.binocular = BLOCKS[cfg.variant](cfg, rng) if cfg.variant != "NoBlock" else NoBlock()
        self.frame_compress = TokenCompressor(cfg, rng)
        self.goal_compress = TokenCompressor(cfg, rng)
        self.seq_pos = nn.parameter((0.1 * rng.standard_normal((cfg.P + 2, d))).astype(np.float32))
        self.state_token = nn.parameter(np.zeros((1, 1, d), np.float32))
        self.seq_layers = [nn.EncoderLayer(d, cfg.seq_heads, rng) for _ in range(cfg.seq_layers)]
        self.ln_out = nn.LayerNorm(d)
        hid = cfg.head_mult * d
        self.head = nn.MLP([d, hid, hid, 3 * cfg.H], rng)
        self._out_scale = np.asarray(cfg.out_scale, np.float32)

    @property
    def frozen(self) -> FrozenEncoder:
        return self._frozen

    def encode(self, obs: np.ndarray):
        """Frame tokens (..., T, D): frozen arrays or a trainable Tensor."""
        if self.app_encoder is not None:
            return self.app_encoder(obs)
        return Tensor(self._frozen(obs).astype(self.ln_out.w.dtype))

    def forward(self, obs_stack, goal_obs) -> Tensor:
        obs_stack = as_batch(obs_stack)
        goal_obs = as_batch(goal_obs)
        if obs_stack.ndim == 3:
            obs_stack, goal_obs = obs_stack[None], goal_obs[None]
        B, P = obs_stack.shape[:2]
        if P != self.cfg.P:
            raise ValueError(f"observation stack has {P} frames, policy expects {self.cfg.P}")
        d, T = self.cfg.token_dim, self.cfg.T
        frames = self.encode(obs_stack)  # B, P, T, D
        goal = self.encode(goal_obs)  # B, T, D
        latest = frames[:, P - 1]
        goal = self.binocular(goal, latest, goal_obs, obs_stack[:, P - 1])
        fvec = self.frame_compress(frames.reshape(B * P, T, d)).reshape(B, P, d)
        gvec = self.goal_compress(goal).reshape(B, 1, d)
        state = Tensor(np.zeros((B, 1, d), dtype=self.state_token.dtype)) + self.state_token
        x = concat([fvec, gvec, state], axis=1) + self.seq_pos
        for layer in self.seq_layers:
            x = layer(x)
        out = self.head(self.ln_out(x[:, P + 1]))
        return out.reshape(B, self.cfg.H, 3) * self._out_scale.astype(out.dtype)

    def predict(self, obs_stack, goal_obs, scale: Optional[float] = None) -> np.ndarray:
        """Metric waypoints; ``scale`` is the deployed robot's step length (default: training one)."""
        with no_grad():
            out = self.forward(obs_stack, goal_obs).data
        return denormalize_waypoints(out, self.cfg.waypoint_scale if scale is None else scale)

    def metadata(self) -> dict:
        return {"policy_config": json.loads(self.cfg.to_json()), "encoder_seed": self.cfg.encoder_seed,
                "variant": self.cfg.variant}

    def save(self, path, optimizer=None):
        return nn.save_checkpoint(path, self.named_parameters(), optimizer, self.metadata())

    @classmethod
    def load(cls, path_or_bytes) -> "Policy":
        meta, params, _ = nn.read_checkpoint(path_or_bytes)
        pol = cls(PolicyConfig.from_dict(meta["policy_config"]))
        nn.load_into(pol, params)
        return pol

    def trainable_parameter_count(self) -> int:
        return self.num_parameters()


def loss_mse(pred: Tensor, label) -> Tensor:
    """Mean over all H x 3 components; heading error uses the wrapped difference."""
    return wrapped_mse(pred, np.asarray(label, dtype=pred.dtype), angle_index=2)


def encode_frozen(obs, cfg: PolicyConfig):
    """Tokens for one observation (or batch): frozen array, or Tensor in trainable mode."""
    enc = FrozenEncoder(cfg)
    arr = as_batch(obs)
    if arr.shape[-2] != cfg.W:
        raise ValueError(f"observation width {arr.shape[-2]} does not match configured W={cfg.W}")
    return enc(arr)


def binocular_encode(goal_tokens, obs_tokens, block: nn.Module, goal_raw=None, obs_raw=None):
    g = goal_tokens if isinstance(goal_tokens, Tensor) else Tensor(np.asarray(goal_tokens))
    o = obs_tokens if isinstance(obs_tokens, Tensor) else Tensor(np.asarray(obs_tokens))
    if g.shape[-1] != o.shape[-1]:
        raise ValueError(f"goal token dim {g.shape[-1]} != observation token dim {o.shape[-1]}")
    return block(g, o, goal_raw, obs_raw)


def make_block(variant: str, cfg: PolicyConfig, rng=None) -> nn.Module:
    if variant not in BLOCKS:
        raise ValueError(f"unknown binocular variant {variant!r}")
    if variant == "NoBlock":
        return NoBlock()
    return BLOCKS[variant](cfg, rng if rng is not None else np.random.default_rng(0))
