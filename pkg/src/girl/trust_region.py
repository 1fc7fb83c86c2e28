"""Constrained-imagination controller.

Per-step drift, ensemble disagreement (EIG), posterior-vs-ensemble
miscalibration (RPL), the trust-radius and dual-variable updates, and
assembly of the bottlenecked training objective.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .gaussian import (entropy_diag, kl_diag, mc_kl_to_mixture,
                       mc_mixture_entropy)


@dataclass(frozen=True)
class TrustRegionState:
    delta: float = 1.0
    beta: float = 1.0
    delta_min: float = 0.01
    delta_max: float = 2.0
    beta_min: float = 0.01
    beta_max: float = 10.0
    eta_delta: float = 3e-4
    eta_beta: float = 1e-3
    tau_eig: float = 0.5
    tau_rpl: float = 1.5

    def __post_init__(self):
        if min(self.eta_delta, self.eta_beta, self.tau_eig, self.tau_rpl) <= 0:
            raise ValueError("step sizes and gains must be strictly positive")
        object.__setattr__(self, "delta",
                           float(np.clip(self.delta, self.delta_min, self.delta_max)))
        object.__setattr__(self, "beta",
                           float(np.clip(self.beta, self.beta_min, self.beta_max)))


def drift(post, prior):
    """Per-step imagination drift: KL(posterior || prior), in nats."""
    return kl_diag(post, prior)


def eig(members, n_samples=256, seed=0):
    """Mixture entropy minus mean member entropy (epistemic disagreement)."""
    mix_h = mc_mixture_entropy(members, n_samples, seed)
    mean_h = np.mean([entropy_diag(c) for c in members.components])
    return mix_h - mean_h


def rpl(post_next, members, n_samples=256, seed=0):
    """KL from the next-step posterior to the ensemble-averaged prior."""
    return mc_kl_to_mixture(post_next, members, n_samples, seed)


def update_delta(tr, eig_t, rpl_t):
    new = tr.delta + tr.eta_delta * (tr.tau_eig * eig_t - tr.tau_rpl * rpl_t)
    return replace(tr, delta=float(np.clip(new, tr.delta_min, tr.delta_max)))


def update_beta(tr, mean_drift):
    if mean_drift < 0:
        raise ValueError("mean drift must be non-negative")
    new = tr.beta + tr.eta_beta * (mean_drift - tr.delta)
    return replace(tr, beta=float(np.clip(new, tr.beta_min, tr.beta_max)))


def i_elbo(log_obs, log_rew, drifts, beta):
    """sum_t [log p(o) + log p(r) - beta * drift].

    beta enters as a plain constant: the dual variable is updated only by
    `update_beta`, never by gradient flow.  Accepts floats or autodiff
    Tensors elementwise.
    """
    if not (len(log_obs) == len(log_rew) == len(drifts)):
        raise ValueError("sequence length mismatch")
    beta = float(beta)
    total = ad.Tensor(0.0)
    for lo, lr, dr in zip(log_obs, log_rew, drifts):
        total = total + lo + lr + (-beta) * dr
    return total


def girl_objective(i_elbo_val, cm_loss, mu):
    """Full training objective: I-ELBO minus the consistency penalty."""
    if mu < 0:
        raise ValueError("mu must be non-negative")
    return i_elbo_val + (-mu) * cm_loss
