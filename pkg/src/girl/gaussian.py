"""Diagonal Gaussians and uniform mixtures.

Closed-form KL and entropy, reparameterized sampling, and Monte-Carlo
estimators for mixture entropy and KL-to-mixture.  Two parallel surfaces:
a plain numpy one (GaussianDiag) used by estimators and controllers, and
differentiable helpers operating on autodiff Tensors used inside losses.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

LOG_STD_MIN = -8.0
LOG_STD_MAX = 4.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_HALF_LOG_2PIE = 0.5 * np.log(2.0 * np.pi * np.e)


@dataclass
class GaussianDiag:
    """Diagonal Gaussian: mean and log-std vectors of equal dimension."""

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_std = np.asarray(self.log_std, dtype=np.float64)
        if self.mean.shape != self.log_std.shape:
            raise ValueError("mean and log_std must have the same shape")
        if not np.all(np.isfinite(self.log_std)):
            raise ValueError("log_std must be finite")

    @property
    def dim(self):
        return self.mean.shape[-1]

    @property
    def std(self):
        return np.exp(self.log_std)

    def log_prob(self, x):
        z = (np.asarray(x) - self.mean) / self.std
        return float(np.sum(-0.5 * z ** 2 - self.log_std - _HALF_LOG_2PI))


@dataclass
class GaussianMixture:
    """Uniform-weight mixture of same-dimension diagonal Gaussians."""

    components: list

    def __post_init__(self):
        if len(self.components) < 1:
            raise ValueError("mixture needs at least one component")
        d = self.components[0].dim
        if any(c.dim != d for c in self.components):
            raise ValueError("mixture components must share dimension")

    @property
    def k(self):
        return len(self.components)

    @property
    def dim(self):
        return self.components[0].dim


def kl_diag(p, q):
    """KL(p || q) in nats, closed form."""
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    var_ratio = np.exp(2.0 * (p.log_std - q.log_std))
    t = (p.mean - q.mean) ** 2 * np.exp(-2.0 * q.log_std)
    return float(np.sum(0.5 * (var_ratio + t - 1.0) - (p.log_std - q.log_std)))


def entropy_diag(p):
    """Differential entropy in nats."""
    return float(np.sum(_HALF_LOG_2PIE + p.log_std))


def sample_reparam(p, noise):
    """mean + std * noise.  Works on numpy arrays or autodiff Tensors."""
    if isinstance(p.mean, ad.Tensor):
        return p.mean + ad.exp(p.log_std) * noise
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != p.mean.shape:
        raise ValueError("noise shape mismatch")
    return p.mean + p.std * noise


def mixture_log_prob(m, x):
    """log((1/K) sum_k N(x; k)) via log-sum-exp."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != m.dim:
        raise ValueError("dimension mismatch")
    logs = np.array([c.log_prob(x) for c in m.components])
    hi = logs.max()
    return float(hi + np.log(np.mean(np.exp(logs - hi))))


def _mixture_log_prob_batch(m, xs):
    """log mixture density at each row of xs, vectorized over samples."""
    means = np.stack([c.mean for c in m.components])        # (K, d)
    log_stds = np.stack([c.log_std for c in m.components])  # (K, d)
    z = (xs[:, None, :] - means[None]) / np.exp(log_stds)[None]
    logs = np.sum(-0.5 * z ** 2 - log_stds[None] - _HALF_LOG_2PI, axis=2)  # (n, K)
    hi = logs.max(axis=1, keepdims=True)
    return (hi + np.log(np.mean(np.exp(logs - hi), axis=1, keepdims=True)))[:, 0]


def mc_mixture_entropy(m, n_samples, seed):
    """Monte-Carlo entropy of a uniform mixture; deterministic given seed.

    Samples are drawn component-then-noise.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    comps = rng.integers(0, m.k, size=n_samples)
    noise = rng.standard_normal(size=(n_samples, m.dim))
    means = np.stack([c.mean for c in m.components])
    stds = np.stack([c.std for c in m.components])
    xs = means[comps] + stds[comps] * noise
    return float(-np.mean(_mixture_log_prob_batch(m, xs)))


def mc_kl_to_mixture(q, m, n_samples, seed):
    """Monte-Carlo KL(q || mixture); samples drawn from q."""
    if q.dim != m.dim:
        raise ValueError("dimension mismatch")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    noise = rng.standard_normal(size=(n_samples, q.dim))
    xs = q.mean + q.std * noise
    zq = (xs - q.mean) / q.std
    log_q = np.sum(-0.5 * zq ** 2 - q.log_std - _HALF_LOG_2PI, axis=1)
    return float(np.mean(log_q - _mixture_log_prob_batch(m, xs)))


# ---- differentiable pieces (Tensor mean / log_std) ----

@dataclass
class GaussianDiagT:
    """Differentiable diagonal Gaussian over autodiff Tensors."""

    mean: ad.Tensor
    log_std: ad.Tensor

    def to_numpy(self):
        return GaussianDiag(self.mean.data.copy(), self.log_std.data.copy())

    def sample(self, noise):
        return self.mean + ad.exp(self.log_std) * ad.Tensor(noise)


def kl_diag_t(p, q):
    """Differentiable KL(p || q) summed over the last axis; scalar output
    for vector inputs, per-row vector for batched inputs is then summed by
    the caller."""
    dls = p.log_std - q.log_std
    var_ratio = ad.exp(dls * 2.0)
    t = (p.mean - q.mean) ** 2 * ad.exp(q.log_std * -2.0)
    return ((var_ratio + t) * 0.5 - dls - 0.5).sum()


def kl_diag_rows_t(p, q):
    """Differentiable per-row KL for batched (B, d) Gaussians -> Tensor (B,)."""
    dls = p.log_std - q.log_std
    var_ratio = ad.exp(dls * 2.0)
    t = (p.mean - q.mean) ** 2 * ad.exp(q.log_std * -2.0)
    return ((var_ratio + t) * 0.5 - dls - 0.5).sum(axis=1)


def gaussian_log_prob_unit_t(pred, target):
    """Differentiable log N(target; pred, I) summed over all entries."""
    resid = pred - ad.Tensor(np.asarray(target, dtype=np.float64))
    n = resid.data.size
    return (resid * resid).sum() * -0.5 - n * _HALF_LOG_2PI
