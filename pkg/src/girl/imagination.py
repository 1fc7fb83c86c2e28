"""Imagined rollouts, actor-critic training, and the full training loop.

The loop per iteration: collect real steps with the current policy,
filter a replay batch through the posterior, measure EIG/RPL and update
the trust-region controller, ascend the bottlenecked world-model
objective, then run several imagination phases that update the actor and
critic (world-model : policy update ratio 1:4 by default).

Imagination never touches the grounding oracle: imagined groundings come
from the learned head on the recurrent state, by construction.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import envs as envmod
from . import rng as rngmod
from . import trust_region as trmod
from . import world_model as wmmod
from .autodiff import Adam, Mlp, Params, Tensor
from .gaussian import (GaussianDiag, GaussianDiagT, GaussianMixture,
                       entropy_diag, gaussian_log_prob_unit_t, kl_diag,
                       kl_diag_rows_t)

ACTOR_LOG_STD_MIN = -5.0
ACTOR_LOG_STD_MAX = 2.0


# ---- replay buffer ----

class ReplayBuffer:
    """FIFO episode store; total transition count never exceeds capacity."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.episodes = []
        self.size = 0

    def add_episode(self, obs_sem, obs_dis, actions, rewards):
        ep = {
            "sem": np.asarray(obs_sem, dtype=np.float64),
            "dis": np.asarray(obs_dis, dtype=np.float64),
            "actions": np.asarray(actions, dtype=np.float64),
            "rewards": np.asarray(rewards, dtype=np.float64),
        }
        n = len(ep["actions"])
        if n == 0:
            return
        self.episodes.append(ep)
        self.size += n
        while self.size > self.capacity and self.episodes:
            dropped = self.episodes.pop(0)
            self.size -= len(dropped["actions"])

    def sample_sequences(self, rng, n_seq, seq_len):
        """Contiguous segments: obs (n, L+1, *), actions (n, L, *), rewards (n, L)."""
        eligible = [ep for ep in self.episodes if len(ep["actions"]) >= seq_len]
        if not eligible:
            raise RuntimeError("replay buffer holds no sequence long enough")
        sems, diss, acts, rews = [], [], [], []
        for _ in range(n_seq):
            ep = eligible[rng.integers(len(eligible))]
            t0 = rng.integers(len(ep["actions"]) - seq_len + 1)
            sems.append(ep["sem"][t0: t0 + seq_len + 1])
            diss.append(ep["dis"][t0: t0 + seq_len + 1])
            acts.append(ep["actions"][t0: t0 + seq_len])
            rews.append(ep["rewards"][t0: t0 + seq_len])
        return (np.stack(sems), np.stack(diss), np.stack(acts), np.stack(rews))


# ---- actor-critic ----

class ActorCritic:
    def __init__(self, feat_dim, action_dim, width=64, seed=0):
        g = rngmod.stream(seed, "actor-critic-init")
        self.action_dim = action_dim
        self.actor = Mlp([feat_dim, width, 2 * action_dim], rng=g, prefix="actor")
        self.critic = Mlp([feat_dim, width, 1], rng=g, prefix="critic")
        self.target_critic = self.critic.params.copy_values()

    def actor_dist(self, feat):
        out = self.actor(feat)
        mu = out[..., : self.action_dim]
        log_std = ad.clamp(out[..., self.action_dim:],
                           ACTOR_LOG_STD_MIN, ACTOR_LOG_STD_MAX)
        return GaussianDiagT(mu, log_std)

    def value(self, feat):
        v = self.critic(feat)
        return v.reshape(v.data.shape[0]) if v.data.ndim == 2 else v

    def target_value(self, feat_data):
        """Slow critic applied to raw numpy features (no tape)."""
        x = feat_data
        for i, act in enumerate(self.critic.activations):
            w = self.target_critic[f"critic.w{i}"]
            b = self.target_critic[f"critic.b{i}"]
            x = x @ w + b
            if act == "elu":
                x = np.where(x > 0, x, np.expm1(x))
        return x[..., 0]

    def update_target(self, rate):
        for k, v in self.critic.params.items():
            self.target_critic[k] = (1.0 - rate) * self.target_critic[k] + rate * v.data


@dataclass
class ImaginedTrajectory:
    hs: list = field(default_factory=list)
    zs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)       # Tensor (B,) per step
    groundings: list = field(default_factory=list)    # predicted c-hat per step
    action_dists: list = field(default_factory=list)  # pre-squash Gaussians
    bonuses: list = field(default_factory=list)       # numpy intrinsic bonus per step

    def __len__(self):
        return len(self.zs)


def imagine_rollout(wm, ac, z0, h0, horizon, rng, intrinsic_alpha=0.0,
                    eig_samples=32):
    """Roll out `horizon` imagined steps from (h0, z0).

    Each step: sample an action from the actor, advance the recurrent
    state, predict the grounding from it, then sample the next latent
    from a uniformly chosen ensemble member conditioned on that predicted
    grounding.  horizon = 0 yields an empty trajectory.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    traj = ImaginedTrajectory()
    h, z = ad._as_tensor(h0), ad._as_tensor(z0)
    batch = z.data.shape[0] if z.data.ndim == 2 else None
    for _ in range(horizon):
        feat = ad.concat([h, z], axis=-1)
        dist = ac.actor_dist(feat)
        eps = rng.standard_normal(size=dist.mean.data.shape)
        action = ad.tanh(dist.sample(eps))
        h = wm.advance_hidden(h, z, action)
        c_hat = wmmod.predict_grounding(wm, h)
        member = int(rng.integers(wm.k))
        p = wmmod.prior(wm, member, h, c_hat)
        z = p.sample(rng.standard_normal(size=p.mean.data.shape))
        r = wmmod.predict_reward(wm, z)
        r = r.reshape(batch) if batch is not None else r.reshape(())
        if intrinsic_alpha > 0.0:
            bonus = _rollout_eig_bonus(wm, h, c_hat, intrinsic_alpha,
                                       eig_samples, rng)
        else:
            bonus = np.zeros(batch) if batch is not None else 0.0
        traj.hs.append(h)
        traj.zs.append(z)
        traj.actions.append(action)
        traj.rewards.append(r)
        traj.groundings.append(c_hat)
        traj.action_dists.append(dist)
        traj.bonuses.append(bonus)
    _check_finite(traj)
    return traj


def _rollout_eig_bonus(wm, h, c_hat, alpha, n_samples, rng):
    """Per-row ensemble-disagreement bonus at an imagined state."""
    priors = [wmmod.prior(wm, k, h, c_hat) for k in range(wm.k)]
    means = [p.mean.data for p in priors]
    stds = [p.log_std.data for p in priors]
    seed = int(rng.integers(2 ** 63))
    if h.data.ndim == 1:
        mix = GaussianMixture([GaussianDiag(m, s) for m, s in zip(means, stds)])
        return intrinsic_bonus(trmod.eig(mix, n_samples, seed), alpha)
    out = np.zeros(h.data.shape[0])
    for b in range(h.data.shape[0]):
        mix = GaussianMixture([GaussianDiag(m[b], s[b]) for m, s in zip(means, stds)])
        out[b] = intrinsic_bonus(trmod.eig(mix, n_samples, seed + b), alpha)
    return out


def _check_finite(traj):
    for group in (traj.zs, traj.rewards):
        for t in group:
            if not np.all(np.isfinite(t.data)):
                raise FloatingPointError("imagined trajectory became non-finite")


def intrinsic_bonus(eig_t, alpha):
    """alpha * EIG, added to predicted reward when the bonus is enabled."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    return alpha * eig_t


def lambda_returns(rewards, values, bootstrap, gamma, lam):
    """G_t = r_t + gamma * [(1 - lam) * v_{t+1} + lam * G_{t+1}], tail
    bootstrapped.  Works elementwise on floats, arrays, or Tensors."""
    if len(rewards) != len(values):
        raise ValueError("rewards and values must have equal length")
    horizon = len(rewards)
    returns = [None] * horizon
    next_g = bootstrap
    for t in reversed(range(horizon)):
        next_v = bootstrap if t == horizon - 1 else values[t + 1]
        returns[t] = rewards[t] + gamma * ((1.0 - lam) * next_v + lam * next_g)
        next_g = returns[t]
    return returns


def actor_critic_update(ac, wm, traj, actor_opt, critic_opt, gamma, lam,
                        entropy_coef=3e-4, target_rate=0.02):
    """One actor step (pathwise through the model) and one critic step."""
    if len(traj) == 0:
        raise ValueError("trajectory is empty")
    feats = [ad.concat([h, z], axis=-1) for h, z in zip(traj.hs, traj.zs)]
    values = [ac.value(f) for f in feats]
    rewards = [r + Tensor(b) for r, b in zip(traj.rewards, traj.bonuses)]
    bootstrap = Tensor(ac.target_value(feats[-1].data))
    returns = lambda_returns(rewards, values, bootstrap, gamma, lam)

    # actor: ascend lambda-returns, small pre-squash entropy stabilizer
    total = Tensor(0.0)
    for g in returns:
        total = total + g.mean()
    entropy = Tensor(0.0)
    for dist in traj.action_dists:
        entropy = entropy + (dist.log_std + 0.5 * np.log(2 * np.pi * np.e)).sum() * (
            1.0 / dist.log_std.data.shape[0] if dist.log_std.data.ndim == 2 else 1.0)
    actor_loss = (-1.0 / len(returns)) * total + (-entropy_coef / len(returns)) * entropy
    for p in (wm.params, ac.actor.params, ac.critic.params):
        p.zero_grad()
    actor_loss.backward()
    actor_opt.step()

    # critic: regress to stop-gradded returns on detached features
    targets = [g.data.copy() for g in returns]
    ac.critic.params.zero_grad()
    critic_loss = Tensor(0.0)
    for f, tgt in zip(feats, targets):
        v = ac.value(Tensor(f.data.copy()))
        critic_loss = critic_loss + ((v - Tensor(tgt)) ** 2).mean()
    critic_loss = critic_loss * (1.0 / len(feats))
    critic_loss.backward()
    critic_opt.step()
    ac.update_target(target_rate)
    return float(actor_loss.data), float(critic_loss.data)


# ---- metrics row ----

METRIC_COLUMNS = ("step", "episodic_return", "mean_drift", "delta", "beta",
                  "eig", "rpl", "wm_loss", "actor_loss", "critic_loss")


@dataclass
class IterationMetrics:
    step: int
    episodic_return: float
    mean_drift: float
    delta: float
    beta: float
    eig: float
    rpl: float
    wm_loss: float
    actor_loss: float
    critic_loss: float

    def row(self):
        vals = [str(self.step)]
        for name in METRIC_COLUMNS[1:]:
            vals.append(f"{getattr(self, name):.10g}")
        return ",".join(vals)


# ---- trainer ----

class Trainer:
    """Owns every mutable piece of one training run."""

    def __init__(self, cfg, seed):
        self.cfg = cfg
        self.seed = seed
        e = cfg.env
        self.spec = envmod.make_env_spec(
            e.kind, seed=e.env_seed, state_dim=e.state_dim,
            action_dim=e.action_dim, horizon=e.horizon,
            distractor_dim=e.distractor_dim, noise_scale=e.noise_scale,
            chain_length=e.chain_length, goal_index=e.goal_index)
        self.oracle = envmod.make_grounding_oracle(self.spec, cfg.ground_dim,
                                                   seed=e.env_seed)
        self.wm = wmmod.WorldModel(
            self.spec.obs_dim, self.spec.action_dim,
            latent_dim=cfg.latent_dim, hidden_dim=cfg.recurrent_dim,
            ground_dim=cfg.ground_dim, ensemble_size=cfg.ensemble_size,
            width=cfg.net_width, seed=seed, vae_ground=cfg.vae_ground)
        self.ac = ActorCritic(cfg.recurrent_dim + cfg.latent_dim,
                              self.spec.action_dim, width=cfg.net_width,
                              seed=seed)
        self.tr = trmod.TrustRegionState(
            delta=cfg.delta0 if cfg.delta0 >= 0 else 1.0,
            beta=cfg.beta0, delta_min=cfg.delta_min, delta_max=cfg.delta_max,
            beta_min=cfg.beta_min, beta_max=cfg.beta_max,
            eta_delta=cfg.eta_delta, eta_beta=cfg.eta_beta,
            tau_eig=cfg.tau_eig, tau_rpl=cfg.tau_rpl)
        self._delta_warm_started = cfg.delta0 >= 0
        self.buffer = ReplayBuffer(cfg.replay_capacity)
        self.wm_opt = Adam(self.wm.params, lr=cfg.learning_rate,
                           clip_norm=cfg.grad_clip)
        self.actor_opt = Adam(self.ac.actor.params, lr=cfg.actor_critic_lr,
                              clip_norm=cfg.grad_clip)
        self.critic_opt = Adam(self.ac.critic.params, lr=cfg.actor_critic_lr,
                               clip_norm=cfg.grad_clip)
        self.msae = None
        if cfg.proprio_msae:
            self.msae = wmmod.MsaeParams(
                self.spec.semantic_dim, window=cfg.msae_window,
                mask_rate=cfg.msae_mask_rate, ground_dim=cfg.ground_dim,
                width=cfg.net_width, seed=seed)
        self.distill = None
        if cfg.distill:
            self.distill = wmmod.DistillParams.create(
                self.spec.obs_dim, cfg.ground_dim, width=cfg.net_width,
                tau_distill=cfg.tau_distill, seed=seed)
        self.iteration = 0
        self.env_steps = 0
        self.metrics = []
        self._prefill()
        if self.msae is not None:
            self._pretrain_msae()

    # -- grounding pipeline --

    def raw_grounding(self, sem, dis):
        """Frozen teacher features for one observation (numpy, d_g)."""
        obs = envmod.Observation(np.asarray(sem, dtype=np.float64),
                                 np.asarray(dis, dtype=np.float64))
        if self.msae is not None:
            window = getattr(self, "_msae_window", None)
            if window is None or len(window) == 0:
                window = [obs.semantic] * self.cfg.msae_window
            mask = np.zeros(self.cfg.msae_window, dtype=bool)
            return wmmod.msae_embed(self.msae, np.stack(window[-self.cfg.msae_window:]),
                                    mask).data
        return envmod.grounding_vector(self.oracle, obs)

    def _raw_grounding_batch(self, sem, dis):
        return np.stack([self.raw_grounding(s, d) for s, d in zip(sem, dis)])

    def model_grounding(self, sem_batch, dis_batch, obs_batch):
        """Differentiable grounding input to the prior gate and cm loss."""
        batch = len(sem_batch)
        if self.cfg.no_ground:
            return self.wm.constant_grounding(batch)
        if self.cfg.vae_ground:
            enc = self.wm.vae_encoder(Tensor(obs_batch))
            return wmmod.layer_norm_t(enc, self.wm.ln_gain, self.wm.ln_bias)
        if self.distill is not None and self.distill.retired:
            student = wmmod.student_grounding(self.distill, obs_batch)
            return wmmod.layer_norm_t(Tensor(student), self.wm.ln_gain,
                                      self.wm.ln_bias)
        raw = self._raw_grounding_batch(sem_batch, dis_batch)
        return self.wm.project_grounding(raw)

    # -- data collection --

    def _prefill(self):
        rng = rngmod.stream(self.seed, "prefill")
        steps = 0
        while steps < self.cfg.prefill_steps:
            steps += self._run_episode(rng, policy="random")

    def _pretrain_msae(self):
        cfg = self.cfg
        rng = rngmod.stream(self.seed, "msae-pretrain")
        opt = Adam(self.msae.params, lr=3e-4, clip_norm=cfg.grad_clip)
        windows = []
        for ep in self.buffer.episodes:
            sem = ep["sem"]
            for t0 in range(0, max(1, len(sem) - cfg.msae_window)):
                if t0 + cfg.msae_window <= len(sem):
                    windows.append(sem[t0: t0 + cfg.msae_window])
        if not windows:
            return
        for _ in range(cfg.msae_pretrain_steps):
            w = windows[rng.integers(len(windows))]
            mask = wmmod.sample_mask(self.msae, rng)
            if not mask.any():
                continue
            self.msae.params.zero_grad()
            loss = wmmod.msae_loss(self.msae, w, mask)
            loss.backward()
            opt.step()

    def _policy_action(self, h, z, rng, stochastic=True):
        feat = ad.concat([h, z], axis=-1)
        dist = self.ac.actor_dist(feat)
        if stochastic:
            eps = rng.standard_normal(size=dist.mean.data.shape)
            pre = dist.mean.data + np.exp(dist.log_std.data) * eps
        else:
            pre = dist.mean.data
        return np.tanh(pre)

    def _run_episode(self, rng, policy="actor", stochastic=True):
        """One full environment episode appended to the buffer."""
        spec = self.spec
        state, obs = envmod.env_reset(spec, rng)
        sems, diss, acts, rews = [obs.semantic], [obs.distractor], [], []
        if self.msae is not None:
            self._msae_window = [obs.semantic]
        h = self.wm.initial_hidden()
        done = False
        ret = 0.0
        while not done:
            if policy == "random":
                a = rng.uniform(-1.0, 1.0, size=spec.action_dim)
            else:
                q = wmmod.posterior(self.wm, h, obs.vector)
                z = Tensor(q.mean.data + np.exp(q.log_std.data)
                           * rng.standard_normal(size=q.mean.data.shape))
                a = self._policy_action(h, z, rng, stochastic=stochastic)
                h = self.wm.advance_hidden(h, z, a).detach()
            state, obs, r, done = envmod.env_step(spec, state, a, rng)
            sems.append(obs.semantic)
            diss.append(obs.distractor)
            acts.append(np.asarray(a, dtype=np.float64).reshape(spec.action_dim))
            rews.append(r)
            ret += r
            if self.msae is not None:
                self._msae_window.append(obs.semantic)
        self.buffer.add_episode(sems, diss, acts, rews)
        self.env_steps += len(acts)
        self._last_return = ret
        return len(acts)

    def collect(self, n_steps, rng):
        steps = 0
        returns = []
        while steps < n_steps:
            steps += self._run_episode(rng, policy="actor")
            returns.append(self._last_return)
        return float(np.mean(returns))

    def evaluate(self, n_episodes=None, seed_tag="eval"):
        """Mean episodic return of the deterministic policy."""
        n = n_episodes or self.cfg.eval_episodes
        returns = []
        for i in range(n):
            rng = rngmod.stream(self.seed, seed_tag, self.iteration, i)
            spec = self.spec
            state, obs = envmod.env_reset(spec, rng)
            h = self.wm.initial_hidden()
            done = False
            ret = 0.0
            while not done:
                q = wmmod.posterior(self.wm, h, obs.vector)
                z = Tensor(q.mean.data.copy())
                a = self._policy_action(h, z, rng, stochastic=False)
                h = self.wm.advance_hidden(h, z, a).detach()
                state, obs, r, done = envmod.env_step(spec, state, a, rng)
                ret += r
            returns.append(ret)
        return float(np.mean(returns))

    # -- the filter over a replay batch --

    def filter_batch(self, sems, diss, actions, rewards, noise_rng):
        """Posterior filtering with loss bookkeeping over (B, L) sequences."""
        cfg = self.cfg
        batch, seq_len = rewards.shape
        obs_full = np.concatenate([sems, diss], axis=-1) if diss.shape[-1] else sems
        h = self.wm.initial_hidden(batch)
        log_obs_terms, log_rew_terms, drift_terms = [], [], []
        cm_total = Tensor(0.0)
        psi_total = Tensor(0.0)
        snapshots = []   # per t: dict of numpy posteriors / priors / states
        for t in range(seq_len + 1):
            o_t = obs_full[:, t]
            c_t = self.model_grounding(sems[:, t], diss[:, t], o_t)
            q_t = wmmod.posterior(self.wm, h, o_t)
            noise = noise_rng.standard_normal(size=q_t.mean.data.shape)
            z_t = q_t.sample(noise)
            priors = [wmmod.prior(self.wm, k, h, c_t) for k in range(self.wm.k)]
            dr = Tensor(np.zeros(batch))
            for p in priors:
                dr = dr + kl_diag_rows_t(q_t, p)
            dr = dr * (1.0 / self.wm.k)
            drift_terms.append(dr.sum() * (1.0 / batch))
            lo = gaussian_log_prob_unit_t(self.wm.decoder(z_t), o_t) * (1.0 / batch)
            log_obs_terms.append(lo)
            if t >= 1:
                pred_r = self.wm.reward_head(z_t).reshape(batch)
                lr_t = gaussian_log_prob_unit_t(pred_r, rewards[:, t - 1]) * (1.0 / batch)
                log_rew_terms.append(lr_t)
            else:
                log_rew_terms.append(Tensor(0.0))
            cm_total = cm_total + wmmod.consistency_loss(self.wm, z_t, c_t)
            # imagined-grounding head trained on real (h, c) pairs
            chat = wmmod.predict_grounding(self.wm, h)
            target_c = c_t.detach()
            psi_resid = chat - target_c
            psi_total = psi_total + (psi_resid * psi_resid).sum(axis=1).mean()
            snapshots.append({
                "h": h.data.copy(),
                "z": z_t.data.copy(),
                "post": (q_t.mean.data.copy(), q_t.log_std.data.copy()),
                "priors": [(p.mean.data.copy(), p.log_std.data.copy())
                           for p in priors],
            })
            if t < seq_len:
                h = self.wm.advance_hidden(h, z_t, actions[:, t])
        cm_mean = cm_total * (1.0 / (seq_len + 1))
        psi_mean = psi_total * (1.0 / (seq_len + 1))
        return {
            "log_obs": log_obs_terms,
            "log_rew": log_rew_terms,
            "drifts": drift_terms,
            "cm": cm_mean,
            "psi": psi_mean,
            "snapshots": snapshots,
        }

    def _controller_signals(self, snapshots, iter_seed):
        """Batch-mean EIG/RPL at sampled positions plus batch-mean drift."""
        cfg = self.cfg
        rng = rngmod.stream(self.seed, "controller-positions", self.iteration)
        batch = snapshots[0]["h"].shape[0]
        n_t = len(snapshots)
        eigs, rpls = [], []
        for i in range(cfg.eig_positions):
            t = int(rng.integers(1, n_t))
            b = int(rng.integers(batch))
            snap = snapshots[t]
            mix = GaussianMixture([GaussianDiag(m[b], s[b])
                                   for m, s in snap["priors"]])
            post = GaussianDiag(snap["post"][0][b], snap["post"][1][b])
            eigs.append(trmod.eig(mix, cfg.mc_samples_train,
                                  rngmod.derive_seed(iter_seed, "eig", i)))
            rpls.append(trmod.rpl(post, mix, cfg.mc_samples_train,
                                  rngmod.derive_seed(iter_seed, "rpl", i)))
        drifts = []
        for snap in snapshots:
            for b in range(batch):
                post = GaussianDiag(snap["post"][0][b], snap["post"][1][b])
                kls = [kl_diag(post, GaussianDiag(m[b], s[b]))
                       for m, s in snap["priors"]]
                drifts.append(np.mean(kls))
        return float(np.mean(eigs)), float(np.mean(rpls)), float(np.mean(drifts))

    # -- one full Algorithm-style iteration --

    def train_iteration(self):
        cfg = self.cfg
        it = self.iteration
        iter_seed = rngmod.derive_seed(self.seed, "iteration", it)
        collect_rng = rngmod.stream(self.seed, "collect", it)
        ep_return = self.collect(cfg.env_steps_per_iter, collect_rng)

        batch_rng = rngmod.stream(self.seed, "batch", it)
        sems, diss, actions, rewards = self.buffer.sample_sequences(
            batch_rng, cfg.batch_sequences, cfg.batch_length)
        noise_rng = rngmod.stream(self.seed, "posterior-noise", it)
        out = self.filter_batch(sems, diss, actions, rewards, noise_rng)

        mean_eig, mean_rpl, mean_drift = self._controller_signals(
            out["snapshots"], iter_seed)
        if not self._delta_warm_started:
            self.tr = trmod.TrustRegionState(
                delta=mean_drift, beta=self.tr.beta,
                delta_min=self.tr.delta_min, delta_max=self.tr.delta_max,
                beta_min=self.tr.beta_min, beta_max=self.tr.beta_max,
                eta_delta=self.tr.eta_delta, eta_beta=self.tr.eta_beta,
                tau_eig=self.tr.tau_eig, tau_rpl=self.tr.tau_rpl)
            self._delta_warm_started = True
        self.tr = trmod.update_delta(self.tr, mean_eig, mean_rpl)
        if not cfg.fixed_beta:
            self.tr = trmod.update_beta(self.tr, mean_drift)

        elbo = trmod.i_elbo(out["log_obs"], out["log_rew"], out["drifts"],
                            self.tr.beta)
        objective = trmod.girl_objective(elbo, out["cm"], cfg.mu_consistency)
        loss = (-1.0) * objective + out["psi"]
        self.wm.params.zero_grad()
        loss.backward()
        self.wm_opt.step()
        wm_loss = float((-1.0) * objective.data)

        if self.distill is not None and not self.distill.retired \
                and it >= cfg.distill_start_iter:
            self._distill_iteration(it)

        actor_loss = critic_loss = 0.0
        starts = self._imagination_starts(out["snapshots"])
        for m in range(cfg.imagination_phases):
            rng = rngmod.stream(self.seed, "imagine", it, m)
            h0, z0 = starts(rng)
            traj = imagine_rollout(
                self.wm, self.ac, z0, h0, cfg.imagination_horizon, rng,
                intrinsic_alpha=0.0 if cfg.no_intrinsic else cfg.intrinsic_alpha,
                eig_samples=cfg.imag_eig_samples)
            actor_loss, critic_loss = actor_critic_update(
                self.ac, self.wm, traj, self.actor_opt, self.critic_opt,
                cfg.gamma, cfg.lambda_return,
                entropy_coef=cfg.entropy_coef,
                target_rate=cfg.target_critic_rate)

        self.iteration += 1
        row = IterationMetrics(
            step=self.env_steps, episodic_return=ep_return,
            mean_drift=mean_drift, delta=self.tr.delta, beta=self.tr.beta,
            eig=mean_eig, rpl=mean_rpl, wm_loss=wm_loss,
            actor_loss=actor_loss, critic_loss=critic_loss)
        self.metrics.append(row)
        return row

    def _imagination_starts(self, snapshots):
        hs = np.concatenate([s["h"] for s in snapshots])
        zs = np.concatenate([s["z"] for s in snapshots])
        batch = self.cfg.batch_sequences

        def pick(rng):
            idx = rng.integers(len(hs), size=batch)
            return Tensor(hs[idx].copy()), Tensor(zs[idx].copy())

        return pick

    def _distill_iteration(self, it):
        cfg = self.cfg
        rng = rngmod.stream(self.seed, "distill", it)
        sems, diss, _, _ = self.buffer.sample_sequences(rng, cfg.distill_batch, 1)
        sem = sems[:, 0]
        dis = diss[:, 0]
        obs = np.concatenate([sem, dis], axis=-1) if dis.shape[-1] else sem
        raw = self._raw_grounding_batch(sem, dis)
        wmmod.distill_step(self.distill, self.wm, obs, raw)

    def train(self, iterations=None):
        for _ in range(iterations or self.cfg.iterations):
            self.train_iteration()
        return self.metrics
