"""Synthetic vector-observation environments with known ground truth.

Three families: a linear-gaussian system, a pendulum-like nonlinearity
(explicit Euler, step 0.05), and a sparse-chain task whose only reward is
the goal indicator.  Observations carry an optional distractor block that
is resampled once per episode; the grounding oracle is a frozen random
projection of the semantic block only, so it is distractor-blind by
construction.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod

KINDS = ("linear-gaussian", "pendulum-like", "sparse-chain")

PENDULUM_DT = 0.05


@dataclass
class ToyEnvSpec:
    kind: str
    state_dim: int
    action_dim: int
    horizon: int
    distractor_dim: int = 0
    # linear-gaussian
    a_matrix: np.ndarray = None
    b_matrix: np.ndarray = None
    noise_scale: float = 0.0
    # pendulum-like
    length: float = 1.0
    gravity: float = 10.0
    # sparse-chain
    chain_length: int = 0
    goal_index: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown env kind {self.kind!r}")
        if self.kind == "linear-gaussian":
            radius = np.max(np.abs(np.linalg.eigvals(self.a_matrix)))
            if radius > 1.05:
                raise ValueError(f"spectral radius {radius:.3f} > 1.05")
        if self.kind == "sparse-chain" and not (0 < self.goal_index < self.chain_length):
            raise ValueError("goal index must lie inside the chain")

    @property
    def semantic_dim(self):
        if self.kind == "pendulum-like":
            return 3  # (cos, sin, angular velocity)
        if self.kind == "sparse-chain":
            return 2
        return self.state_dim

    @property
    def obs_dim(self):
        return self.semantic_dim + self.distractor_dim

    @property
    def min_solve_steps(self):
        """Shortest possible solve length for the sparse chain."""
        if self.kind != "sparse-chain":
            raise ValueError("only defined for sparse-chain")
        return self.goal_index


@dataclass
class Observation:
    semantic: np.ndarray
    distractor: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def vector(self):
        return np.concatenate([self.semantic, self.distractor])


@dataclass
class EnvState:
    s: np.ndarray  # true state
    t: int
    distractor: np.ndarray


def make_env_spec(kind, seed=0, state_dim=4, action_dim=1, horizon=50,
                  distractor_dim=0, noise_scale=0.1, chain_length=64,
                  goal_index=50):
    """Build a default spec of the given kind with seeded dynamics."""
    if kind == "linear-gaussian":
        g = rngmod.stream(seed, "env-spec", kind)
        a = g.normal(0.0, 1.0, size=(state_dim, state_dim))
        a = 0.9 * a / max(np.max(np.abs(np.linalg.eigvals(a))), 1e-12)
        b = g.normal(0.0, 0.5, size=(state_dim, action_dim))
        return ToyEnvSpec(kind, state_dim, action_dim, horizon, distractor_dim,
                          a_matrix=a, b_matrix=b, noise_scale=noise_scale)
    if kind == "pendulum-like":
        return ToyEnvSpec(kind, 2, 1, horizon, distractor_dim)
    if kind == "sparse-chain":
        return ToyEnvSpec(kind, 1, 1, horizon, distractor_dim,
                          chain_length=chain_length, goal_index=goal_index)
    raise ValueError(f"unknown env kind {kind!r}")


def _semantic_obs(spec, s):
    if spec.kind == "pendulum-like":
        return np.array([np.cos(s[0]), np.sin(s[0]), s[1]])
    if spec.kind == "sparse-chain":
        n = spec.chain_length - 1
        return np.array([s[0] / n, (spec.goal_index - s[0]) / n])
    return s.copy()


def env_reset(spec, rng):
    """Start an episode; the distractor block is drawn once here."""
    if spec.kind == "linear-gaussian":
        s = rng.normal(0.0, 0.5, size=spec.state_dim)
    elif spec.kind == "pendulum-like":
        s = np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-1.0, 1.0)])
    else:
        s = np.zeros(1)
    distractor = rng.normal(0.0, 1.0, size=spec.distractor_dim)
    state = EnvState(s=s, t=0, distractor=distractor)
    return state, Observation(_semantic_obs(spec, s), distractor.copy())


def env_step(spec, state, action, rng):
    """One transition; actions are clipped to [-1, 1] per dimension."""
    a = np.clip(np.asarray(action, dtype=np.float64).reshape(spec.action_dim), -1.0, 1.0)
    s = state.s
    if spec.kind == "linear-gaussian":
        noise = rng.normal(0.0, 1.0, size=spec.state_dim) if spec.noise_scale > 0 else np.zeros(spec.state_dim)
        s_next = spec.a_matrix @ s + spec.b_matrix @ a + spec.noise_scale * noise
        reward = -float(np.mean(s_next ** 2))
        done = state.t + 1 >= spec.horizon
    elif spec.kind == "pendulum-like":
        theta, omega = s
        torque = 2.0 * a[0]
        omega_next = omega + PENDULUM_DT * (-(spec.gravity / spec.length) * np.sin(theta) + torque)
        theta_next = theta + PENDULUM_DT * omega_next
        s_next = np.array([theta_next, omega_next])
        wrapped = ((theta_next + np.pi) % (2 * np.pi)) - np.pi
        reward = -float(wrapped ** 2 + 0.1 * omega_next ** 2 + 0.001 * torque ** 2)
        done = state.t + 1 >= spec.horizon
    else:  # sparse-chain
        move = int(np.round(a[0]))
        pos = int(np.clip(s[0] + move, 0, spec.chain_length - 1))
        s_next = np.array([float(pos)])
        reward = 1.0 if pos == spec.goal_index else 0.0
        done = (pos == spec.goal_index) or (state.t + 1 >= spec.horizon)
    if not np.all(np.isfinite(s_next)):
        raise FloatingPointError("environment state became non-finite")
    next_state = EnvState(s=s_next, t=state.t + 1, distractor=state.distractor)
    obs = Observation(_semantic_obs(spec, s_next), state.distractor.copy())
    return next_state, obs, reward, done


def make_distractor_variant(spec, distractor_dim):
    """Same dynamics and reward, observation widened by a distractor block."""
    if distractor_dim < 1:
        raise ValueError("distractor_dim must be >= 1")
    return replace(spec, distractor_dim=distractor_dim)


# ---- synthetic grounding oracle (stand-in for a frozen vision backbone) ----

@dataclass
class GroundingOracle:
    proj: np.ndarray      # (d_g, semantic_dim), frozen
    bias: np.ndarray      # (d_g,), frozen
    ln_gain: np.ndarray
    ln_bias: np.ndarray

    @property
    def d_g(self):
        return self.proj.shape[0]


def make_grounding_oracle(spec, d_g, seed=0):
    g = rngmod.stream(seed, "grounding-oracle")
    d_s = spec.semantic_dim
    proj = g.normal(0.0, 1.0 / np.sqrt(d_s), size=(d_g, d_s))
    bias = g.normal(0.0, 0.1, size=d_g)
    return GroundingOracle(proj=proj, bias=bias,
                           ln_gain=np.ones(d_g), ln_bias=np.zeros(d_g))


def layer_norm(v, gain, bias, eps=1e-5):
    mu = v.mean()
    var = v.var()
    return (v - mu) / np.sqrt(var + eps) * gain + bias


def grounding_vector(oracle, obs):
    """Layer-normalized frozen projection of the semantic part only."""
    v = oracle.proj @ obs.semantic + oracle.bias
    return layer_norm(v, oracle.ln_gain, oracle.ln_bias)
