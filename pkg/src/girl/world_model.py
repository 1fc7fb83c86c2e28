"""Generative latent world model.

Posterior encoder, an ensemble of gated grounded transition priors,
decoder and reward heads, the cross-modal consistency loss, the
imagined-grounding head, a masked state autoencoder fallback for
proprioceptive grounding, and the distilled semantic prior that can
retire the grounding oracle mid-run.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng as rngmod
from .autodiff import Adam, GruCell, Mlp, Params, Tensor
from .gaussian import (LOG_STD_MAX, LOG_STD_MIN, GaussianDiagT,
                       gaussian_log_prob_unit_t)

LN_EPS = 1e-5


def layer_norm_t(v, gain, bias):
    """Differentiable layer norm over the last axis of a 1-D or 2-D Tensor."""
    if v.data.ndim == 1:
        mu = v.mean()
        var = ((v - mu) ** 2).mean()
        return (v - mu) * (var + LN_EPS) ** -0.5 * gain + bias
    b = v.data.shape[0]
    mu = v.mean(axis=1).reshape(b, 1)
    var = ((v - mu) ** 2).mean(axis=1).reshape(b, 1)
    return (v - mu) * (var + LN_EPS) ** -0.5 * gain + bias


class WorldModel:
    """All learned pieces of the generative model, one flat Params map."""

    def __init__(self, obs_dim, action_dim, latent_dim=32, hidden_dim=512,
                 ground_dim=128, ensemble_size=5, width=64, seed=0,
                 vae_ground=False):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.d = latent_dim
        self.hidden_dim = hidden_dim
        self.d_g = ground_dim
        self.k = ensemble_size
        g = rngmod.stream(seed, "world-model-init")

        self.encoder = Mlp([hidden_dim + obs_dim, width, 2 * latent_dim],
                           rng=g, prefix="enc")
        self.gru = GruCell(latent_dim + action_dim, hidden_dim, rng=g, prefix="gru")
        self.members = []
        for k in range(ensemble_size):
            member = {
                "mu0": Mlp([hidden_dim, width, latent_dim], rng=g, prefix=f"prior{k}.mu0"),
                "log_std": Mlp([hidden_dim, width, latent_dim], rng=g, prefix=f"prior{k}.std"),
                "w_c": Tensor(g.normal(0.0, 1.0 / np.sqrt(ground_dim), size=(ground_dim, ground_dim))),
                "b_c": Tensor(np.zeros(ground_dim)),
                "w_g": Tensor(g.normal(0.0, 0.1 / np.sqrt(ground_dim), size=(ground_dim, latent_dim))),
            }
            self.members.append(member)
        self.decoder = Mlp([latent_dim, width, obs_dim], rng=g, prefix="dec")
        self.reward_head = Mlp([latent_dim, width, 1], rng=g, prefix="rew")
        self.f_psi = Mlp([latent_dim, 128, ground_dim], hidden_act="relu", rng=g, prefix="fpsi")
        self.psi = Mlp([hidden_dim, width, ground_dim], rng=g, prefix="psi")
        self.w_proj = Tensor(np.eye(ground_dim))
        self.b_proj = Tensor(np.zeros(ground_dim))
        self.ln_gain = Tensor(np.ones(ground_dim))
        self.ln_bias = Tensor(np.zeros(ground_dim))
        self.const_ground = Tensor(np.zeros(ground_dim))
        # learned (non-frozen) grounding encoder for the vae-style ablation:
        # sees the full observation, distractors included
        self.vae_encoder = None
        if vae_ground:
            self.vae_encoder = Mlp([obs_dim, width, ground_dim], rng=g, prefix="vae")

        self.params = Params()
        self.params.update(self.encoder.params)
        self.params.update(self.gru.params)
        for k, member in enumerate(self.members):
            self.params.update(member["mu0"].params)
            self.params.update(member["log_std"].params)
            self.params[f"prior{k}.w_c"] = member["w_c"]
            self.params[f"prior{k}.b_c"] = member["b_c"]
            self.params[f"prior{k}.w_g"] = member["w_g"]
        self.params.update(self.decoder.params)
        self.params.update(self.reward_head.params)
        self.params.update(self.f_psi.params)
        self.params.update(self.psi.params)
        self.params["ground.w_proj"] = self.w_proj
        self.params["ground.b_proj"] = self.b_proj
        self.params["ground.ln_gain"] = self.ln_gain
        self.params["ground.ln_bias"] = self.ln_bias
        self.params["ground.const"] = self.const_ground
        if self.vae_encoder is not None:
            self.params.update(self.vae_encoder.params)

    def initial_hidden(self, batch=None):
        shape = (self.hidden_dim,) if batch is None else (batch, self.hidden_dim)
        return Tensor(np.zeros(shape))

    def project_grounding(self, raw):
        """c = LN(W_proj raw + b_proj) with a learned projection."""
        v = ad._as_tensor(raw)
        return layer_norm_t(v @ self.w_proj + self.b_proj, self.ln_gain, self.ln_bias)

    def constant_grounding(self, batch=None):
        """Learned constant embedding used by the no-ground ablation."""
        if batch is None:
            return self.const_ground + Tensor(np.zeros(self.d_g))
        return self.const_ground + Tensor(np.zeros((batch, self.d_g)))

    def advance_hidden(self, h, z, a):
        x = ad.concat([z, ad._as_tensor(a)], axis=-1)
        return self.gru(h, x)


@dataclass
class LatentState:
    h: Tensor
    z: Tensor
    c: Tensor


def posterior(wm, h, o):
    """q(z | h, o) as a differentiable diagonal Gaussian."""
    o = ad._as_tensor(o)
    if o.data.shape[-1] != wm.obs_dim:
        raise ValueError("observation dim mismatch")
    out = wm.encoder(ad.concat([h, o], axis=-1))
    mu = out[..., : wm.d]
    log_std = ad.clamp(out[..., wm.d:], LOG_STD_MIN, LOG_STD_MAX)
    return GaussianDiagT(mu, log_std)


def prior(wm, member_k, h, c):
    """p_k(z | h, c): base head plus a sigmoid-gated grounding residual."""
    if not 0 <= member_k < wm.k:
        raise IndexError(f"ensemble member {member_k} out of range")
    m = wm.members[member_k]
    c = ad._as_tensor(c)
    mu0 = m["mu0"](h)
    gate = ad.sigmoid(c @ m["w_c"] + m["b_c"])
    mu = mu0 + gate @ m["w_g"]
    log_std = ad.clamp(m["log_std"](h), LOG_STD_MIN, LOG_STD_MAX)
    return GaussianDiagT(mu, log_std)


def prior_base_mean(wm, member_k, h):
    """Base dynamics mean with the grounding pathway removed."""
    return wm.members[member_k]["mu0"](h)


def log_likelihoods(wm, z, o, r):
    """(log p(o|z), log p(r|z)) under unit-variance Gaussian heads."""
    o = np.asarray(o, dtype=np.float64)
    if o.shape[-1] != wm.obs_dim:
        raise ValueError("observation dim mismatch")
    log_obs = gaussian_log_prob_unit_t(wm.decoder(z), o)
    log_rew = gaussian_log_prob_unit_t(wm.reward_head(z),
                                       np.asarray(r, dtype=np.float64).reshape(-1))
    return log_obs, log_rew


def predict_reward(wm, z):
    return wm.reward_head(z)


def consistency_loss(wm, z_batch, c_batch):
    """Mean over the batch of ||f_psi(z) - sg(c)||^2 (summed over d_g)."""
    if isinstance(c_batch, Tensor):
        c_batch = c_batch.detach()
    else:
        c_batch = Tensor(np.asarray(c_batch, dtype=np.float64))
    pred = wm.f_psi(z_batch)
    if pred.data.shape != c_batch.data.shape:
        raise ValueError("z/c batch shape mismatch")
    resid = pred - c_batch
    sq = (resid * resid)
    if sq.data.ndim == 1:
        return sq.sum()
    return sq.sum(axis=1).mean()


def predict_grounding(wm, h):
    """Imagined grounding c-hat = Psi(h); trained on real (h, c) pairs."""
    return wm.psi(h)


# ---- masked state autoencoder (proprioceptive grounding fallback) ----

class MsaeParams:
    """MLP masked autoencoder over a flattened window of W states.

    Masked rows are replaced by a learned mask token before encoding; the
    reconstruction loss covers masked positions only.
    """

    def __init__(self, state_dim, window=16, mask_rate=0.4, d_model=64,
                 ground_dim=128, width=64, seed=0):
        if window < 1:
            raise ValueError("window must be >= 1")
        if not 0.0 <= mask_rate < 1.0:
            raise ValueError("mask rate must lie in [0, 1)")
        self.state_dim = state_dim
        self.window = window
        self.mask_rate = mask_rate
        self.d_model = d_model
        self.d_g = ground_dim
        g = rngmod.stream(seed, "msae-init")
        self.mask_token = Tensor(g.normal(0.0, 0.1, size=state_dim))
        self.encoder = Mlp([window * state_dim, width, d_model], rng=g, prefix="msae.enc")
        self.recon = Mlp([d_model, width, window * state_dim], rng=g, prefix="msae.rec")
        self.out_proj = Tensor(g.normal(0.0, 1.0 / np.sqrt(d_model), size=(d_model, ground_dim)))
        self.params = Params()
        self.params["msae.mask_token"] = self.mask_token
        self.params.update(self.encoder.params)
        self.params.update(self.recon.params)
        self.params["msae.out_proj"] = self.out_proj


def sample_mask(msae, rng):
    return rng.random(msae.window) < msae.mask_rate


def _encode_masked(msae, window, mask):
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (msae.window, msae.state_dim):
        raise ValueError("window shape mismatch")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (msae.window,):
        raise ValueError("mask length mismatch")
    rows = []
    for t in range(msae.window):
        rows.append(msae.mask_token if mask[t] else Tensor(window[t]))
    flat = ad.concat(rows, axis=-1)
    return msae.encoder(flat), mask


def msae_embed(msae, window, mask=None, rng=None):
    """Embedding of the (possibly masked) window, projected to d_g."""
    if mask is None:
        mask = sample_mask(msae, rng)
    code, _ = _encode_masked(msae, window, mask)
    return code @ msae.out_proj


def msae_loss(msae, window, mask):
    """MSE over masked positions only; 0 by convention for an empty mask."""
    code, mask = _encode_masked(msae, window, mask)
    if not mask.any():
        return Tensor(0.0)
    recon = msae.recon(code)
    target = np.asarray(window, dtype=np.float64).reshape(-1)
    resid = recon - Tensor(target)
    weights = np.repeat(mask.astype(np.float64), msae.state_dim)
    return (resid * resid * Tensor(weights)).sum() * (1.0 / weights.sum())


# ---- distilled semantic prior ----

class TeacherRetiredError(RuntimeError):
    pass


@dataclass
class DistillParams:
    """Student network plus retirement bookkeeping for the teacher oracle."""

    student: Mlp
    tau_distill: float = 0.05
    retired: bool = False
    running_loss: float = field(default=np.inf)
    ema_rate: float = 0.1
    optimizer: Adam = None

    @classmethod
    def create(cls, obs_dim, ground_dim, width=64, tau_distill=0.05, lr=1e-3, seed=0):
        g = rngmod.stream(seed, "distill-init")
        student = Mlp([obs_dim, width, width, ground_dim], rng=g, prefix="student")
        return cls(student=student, tau_distill=tau_distill,
                   optimizer=Adam(student.params, lr=lr))


def distill_teacher_target(wm, raw_groundings):
    """sg(W_proj raw + b_proj): the projected teacher embedding, pre-norm."""
    raw = np.asarray(raw_groundings, dtype=np.float64)
    return raw @ wm.w_proj.data + wm.b_proj.data


def distill_step(dp, wm, obs_batch, raw_groundings):
    """One student regression step toward the projected teacher embedding.

    Retires the teacher once the running-mean loss drops below tau.
    """
    if dp.retired:
        raise TeacherRetiredError("teacher already retired; distill_step is invalid")
    obs = np.asarray(obs_batch, dtype=np.float64)
    target = distill_teacher_target(wm, raw_groundings)
    dp.student.params.zero_grad()
    pred = dp.student(Tensor(obs))
    resid = pred - Tensor(target)
    loss = (resid * resid).sum(axis=1).mean() if obs.ndim == 2 else (resid * resid).sum()
    loss.backward()
    dp.optimizer.step()
    val = float(loss.data)
    if np.isinf(dp.running_loss):
        dp.running_loss = val
    else:
        dp.running_loss = (1.0 - dp.ema_rate) * dp.running_loss + dp.ema_rate * val
    if dp.running_loss < dp.tau_distill:
        dp.retired = True
    return val, dp


def student_grounding(dp, obs_vector):
    """Post-retirement replacement for the projected teacher embedding."""
    return dp.student(Tensor(np.asarray(obs_vector, dtype=np.float64))).data
