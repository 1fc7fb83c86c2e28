"""Drift-fidelity measurement and the phase-transition predictor.

DFM(L): mean over horizon offsets of KL between the filtered posterior
and the open-loop multi-step prior, the prior being moment-matched from
particle rollouts conditioned on real actions and real groundings.
"""

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from . import world_model as wmmod
from .autodiff import Tensor
from .gaussian import GaussianDiag, kl_diag


@dataclass
class RealTrajectory:
    """Observations, actions, and model-space groundings from a real run."""

    obs: np.ndarray         # (T+1, obs_dim)
    actions: np.ndarray     # (T, action_dim)
    groundings: np.ndarray  # (T+1, d_g), the model's grounding inputs

    def __len__(self):
        return len(self.actions)


@dataclass
class DfmReport:
    horizon: int
    per_step_kl: list
    mean: float
    particles: int

    def to_dict(self):
        return {"horizon": self.horizon, "per_step_kl": list(self.per_step_kl),
                "mean": self.mean, "particles": self.particles}


def filter_trajectory(wm, traj):
    """Noise-free posterior filter: z is the posterior mean at every step."""
    h = wm.initial_hidden()
    hs, posts, zs = [], [], []
    for t in range(len(traj) + 1):
        q = wmmod.posterior(wm, h, traj.obs[t])
        hs.append(h.data.copy())
        posts.append(GaussianDiag(q.mean.data.copy(), q.log_std.data.copy()))
        zs.append(q.mean.data.copy())
        if t < len(traj):
            h = wm.advance_hidden(h, Tensor(zs[-1]), traj.actions[t]).detach()
    return hs, zs, posts


def _particle_rollout(wm, z0, h0, actions, groundings, particles, rng):
    """Yield the moment-matched prior at each offset of an open-loop rollout."""
    h = np.repeat(np.asarray(h0)[None], particles, axis=0)
    z = np.repeat(np.asarray(z0)[None], particles, axis=0)
    out = []
    for a, c in zip(actions, groundings):
        a_rows = np.repeat(np.asarray(a, dtype=np.float64)[None], particles, axis=0)
        h = wm.advance_hidden(Tensor(h), Tensor(z), a_rows).data
        c_rows = np.repeat(np.asarray(c, dtype=np.float64)[None], particles, axis=0)
        means, stds = [], []
        for k in range(wm.k):
            p = wmmod.prior(wm, k, Tensor(h), Tensor(c_rows))
            means.append(p.mean.data)
            stds.append(np.exp(p.log_std.data))
        means = np.stack(means)   # (K, P, d)
        stds = np.stack(stds)
        members = rng.integers(0, wm.k, size=particles)
        rows = np.arange(particles)
        mu = means[members, rows]
        sd = stds[members, rows]
        # moment-match the particle mixture of member Gaussians
        mix_mean = np.mean(means.reshape(-1, means.shape[-1]), axis=0)
        second = np.mean((stds ** 2 + means ** 2).reshape(-1, means.shape[-1]), axis=0)
        mix_var = np.maximum(second - mix_mean ** 2, 1e-16)
        out.append(GaussianDiag(mix_mean, 0.5 * np.log(mix_var)))
        z = mu + sd * rng.standard_normal(size=mu.shape)
    return out


def multi_step_prior(wm, z_t, h_t, actions, groundings, particles=256, seed=0):
    """Moment-matched diagonal Gaussian over the latent after len(actions) steps."""
    if len(actions) == 0:
        raise ValueError("need at least one action")
    if len(actions) != len(groundings):
        raise ValueError("actions and groundings must have equal length")
    rng = np.random.Generator(np.random.PCG64(seed))
    priors = _particle_rollout(wm, z_t, h_t, actions, groundings, particles, rng)
    return priors[-1]


def dfm(wm, traj, horizon, particles=256, seed=0, n_starts=16):
    """Drift-Fidelity Metric at the given horizon.

    Averages, over start indices and offsets 1..L, the KL between the
    filtered posterior at t+offset and the open-loop multi-step prior
    rolled from t conditioned on real actions and groundings.
    """
    if len(traj) < horizon + 1:
        raise ValueError("trajectory too short for requested horizon")
    hs, zs, posts = filter_trajectory(wm, traj)
    start_rng = np.random.Generator(np.random.PCG64(rngmod.derive_seed(seed, "starts")))
    max_start = len(traj) - horizon
    if max_start <= n_starts:
        starts = list(range(max_start))
    else:
        starts = sorted(start_rng.choice(max_start, size=n_starts, replace=False))
    per_step = np.zeros(horizon)
    for i, t0 in enumerate(starts):
        rng = np.random.Generator(np.random.PCG64(rngmod.derive_seed(seed, "roll", i)))
        priors = _particle_rollout(
            wm, zs[t0], hs[t0],
            traj.actions[t0: t0 + horizon],
            traj.groundings[t0 + 1: t0 + horizon + 1],
            particles, rng)
        for off, prior_l in enumerate(priors, start=1):
            per_step[off - 1] += kl_diag(posts[t0 + off], prior_l)
    per_step /= len(starts)
    return DfmReport(horizon=horizon, per_step_kl=per_step.tolist(),
                     mean=float(np.mean(per_step)), particles=particles)


def imagined_return_lower_bound(r_star, gamma, eps_tau):
    """r_star - 2*gamma/(1-gamma)^2 * eps_tau."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if eps_tau < 0:
        raise ValueError("eps_tau must be >= 0")
    return r_star - 2.0 * gamma / (1.0 - gamma) ** 2 * eps_tau


def phase_threshold(gamma, r_thresh):
    """(1-gamma)^2 * r_thresh / (2*gamma)."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    return (1.0 - gamma) ** 2 * r_thresh / (2.0 * gamma)


def predict_solve(dfm_at_l, threshold):
    """Predicted solve iff measured drift is at or below the threshold."""
    if dfm_at_l < 0 or threshold < 0:
        raise ValueError("inputs must be non-negative")
    return dfm_at_l <= threshold
