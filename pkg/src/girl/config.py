"""Run configuration.

Defaults mirror the published hyperparameter table exactly; desk-scale
runs override network widths, step counts, and MC sample counts through
the same keys.  Unknown keys are rejected.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field


@dataclass
class EnvConfig:
    kind: str = "linear-gaussian"
    state_dim: int = 4
    action_dim: int = 1
    horizon: int = 50
    distractor_dim: int = 0
    noise_scale: float = 0.1
    chain_length: int = 64
    goal_index: int = 50
    env_seed: int = 0


@dataclass
class RunConfig:
    # model sizes
    latent_dim: int = 32
    recurrent_dim: int = 512
    ground_dim: int = 128
    ensemble_size: int = 5
    net_width: int = 64
    msae_window: int = 16
    msae_mask_rate: float = 0.4
    # objective / controller
    imagination_horizon: int = 15
    lambda_return: float = 0.95
    gamma: float = 0.995
    beta_min: float = 0.01
    beta_max: float = 10.0
    delta_min: float = 0.01
    delta_max: float = 2.0
    eta_delta: float = 3e-4
    eta_beta: float = 1e-3
    tau_eig: float = 0.5
    tau_rpl: float = 1.5
    mu_consistency: float = 0.1
    intrinsic_alpha: float = 0.01
    tau_distill: float = 0.05
    beta0: float = 1.0
    delta0: float = -1.0          # < 0 means warm-start from empirical mean drift
    # data / optimization
    replay_capacity: int = 2_000_000
    batch_sequences: int = 50
    batch_length: int = 50
    learning_rate: float = 6e-4
    actor_critic_lr: float = 8e-5
    grad_clip: float = 100.0
    entropy_coef: float = 3e-4
    target_critic_rate: float = 0.02
    spectral_norm: bool = False
    # loop shape
    iterations: int = 100
    env_steps_per_iter: int = 100
    imagination_phases: int = 4   # world-model : policy update ratio 1:4
    prefill_steps: int = 50_000
    eval_episodes: int = 4
    # estimator sample counts
    mc_samples_train: int = 256
    eig_positions: int = 8
    imag_eig_samples: int = 32
    msae_pretrain_steps: int = 2_000
    # statistics
    seeds_per_task: int = 10
    bootstrap_resamples: int = 50_000
    # ablations
    no_ground: bool = False
    fixed_beta: bool = False
    no_intrinsic: bool = False
    vae_ground: bool = False
    proprio_msae: bool = False
    distill: bool = False
    distill_start_iter: int = 10
    distill_batch: int = 32
    env: EnvConfig = field(default_factory=EnvConfig)

    def validate(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.intrinsic_alpha < 0:
            raise ValueError("intrinsic_alpha must be >= 0")
        if self.mu_consistency < 0:
            raise ValueError("mu_consistency must be >= 0")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        return self


class ConfigError(ValueError):
    pass


def config_from_dict(data):
    """Build a RunConfig from nested dicts; unknown keys are an error."""
    data = dict(data)
    env_data = data.pop("env", {})
    known = {f.name for f in dataclasses.fields(RunConfig)} - {"env"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    env_known = {f.name for f in dataclasses.fields(EnvConfig)}
    env_unknown = set(env_data) - env_known
    if env_unknown:
        raise ConfigError(f"unknown env config keys: {sorted(env_unknown)}")
    cfg = RunConfig(env=EnvConfig(**env_data), **data)
    return cfg.validate()


def config_to_dict(cfg):
    return dataclasses.asdict(cfg)


def load_config(path):
    with open(path) as f:
        return config_from_dict(json.load(f))


def save_config(cfg, path):
    with open(path, "w") as f:
        json.dump(config_to_dict(cfg), f, indent=1, sort_keys=True)


def config_hash(cfg):
    """Stable under key reordering: canonical-JSON sha256."""
    canon = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
