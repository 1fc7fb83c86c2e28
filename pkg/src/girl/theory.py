"""Exact tabular-MDP machinery for numerically verifying the value-gap
theory: occupancy measures, the performance-difference identity, the
bounded-function IPM, the Bellman-operator gap lemma, the regret bound
with its decomposition, and the Pinsker-chain surrogate for Gaussian
transitions.

Everything here is an exact linear solve or a quadrature; no sampling
except where an oracle explicitly calls for it.
"""

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import rng as rngmod


@dataclass
class TabularMDP:
    transitions: np.ndarray  # (S, A, S)
    rewards: np.ndarray      # (S, A)
    gamma: float
    rho0: np.ndarray         # (S,)

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.rho0 = np.asarray(self.rho0, dtype=np.float64)
        s, a, s2 = self.transitions.shape
        if s != s2 or self.rewards.shape != (s, a):
            raise ValueError("inconsistent MDP shapes")
        if np.any(self.transitions < -1e-15):
            raise ValueError("negative transition probability")
        if np.max(np.abs(self.transitions.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to 1")
        if abs(self.rho0.sum() - 1.0) > 1e-12:
            raise ValueError("rho0 must sum to 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")

    @property
    def n_states(self):
        return self.transitions.shape[0]

    @property
    def n_actions(self):
        return self.transitions.shape[1]

    @property
    def r_max(self):
        return float(np.max(np.abs(self.rewards)))


@dataclass
class PolicyTable:
    probs: np.ndarray  # (S, A)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if np.max(np.abs(self.probs.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("policy rows must sum to 1")


def deterministic_policy(actions, n_actions):
    p = np.zeros((len(actions), n_actions))
    p[np.arange(len(actions)), actions] = 1.0
    return PolicyTable(p)


def _p_pi(mdp, pi):
    """State-to-state transition matrix under pi."""
    return np.einsum("sa,sat->st", pi.probs, mdp.transitions)


def policy_evaluation(mdp, pi):
    """Exact V and Q from the linear Bellman system."""
    p_pi = _p_pi(mdp, pi)
    r_pi = np.sum(pi.probs * mdp.rewards, axis=1)
    n = mdp.n_states
    v = np.linalg.solve(np.eye(n) - mdp.gamma * p_pi, r_pi)
    q = mdp.rewards + mdp.gamma * np.einsum("sat,t->sa", mdp.transitions, v)
    resid = np.max(np.abs(v - (r_pi + mdp.gamma * p_pi @ v)))
    assert resid < 1e-10, f"Bellman residual {resid:.2e}"
    return v, q


def value_iteration(mdp, tol=1e-12, max_iter=1_000_000):
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        q = mdp.rewards + mdp.gamma * np.einsum("sat,t->sa", mdp.transitions, v)
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) < tol:
            return v_new, q
        v = v_new
    raise RuntimeError("value iteration failed to converge")


def optimal_policy(mdp):
    """Greedy deterministic policy; ties broken by lowest action index."""
    _, q = value_iteration(mdp)
    # argmax picks the first maximal index, which is the tie-break rule
    greedy = np.argmax(np.isclose(q, q.max(axis=1, keepdims=True), atol=1e-10),
                       axis=1)
    return deterministic_policy(greedy, mdp.n_actions)


def occupancy(mdp, pi):
    """Discounted normalized state-action occupancy, exact linear solve."""
    p_pi = _p_pi(mdp, pi)
    n = mdp.n_states
    d = np.linalg.solve(np.eye(n) - mdp.gamma * p_pi.T, (1.0 - mdp.gamma) * mdp.rho0)
    rho = d[:, None] * pi.probs
    assert abs(rho.sum() - 1.0) < 1e-10
    return rho


def pdl_check(mdp, pi, pi_prime):
    """Both sides of the performance-difference identity at rho0."""
    v_pi, _ = policy_evaluation(mdp, pi)
    v_pp, q_pp = policy_evaluation(mdp, pi_prime)
    adv = q_pp - np.sum(pi_prime.probs * q_pp, axis=1, keepdims=True)
    lhs = float(mdp.rho0 @ v_pi - mdp.rho0 @ v_pp)
    rho = occupancy(mdp, pi)
    rhs = float(np.sum(rho * adv) / (1.0 - mdp.gamma))
    return lhs, rhs


def ipm_bounded(p, q):
    """sup over |f| <= 1 of |E_p f - E_q f| = the L1 distance."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("support mismatch")
    return float(np.sum(np.abs(p - q)))


def max_ipm(mdp, mdp_hat):
    return max(ipm_bounded(mdp.transitions[s, a], mdp_hat.transitions[s, a])
               for s in range(mdp.n_states) for a in range(mdp.n_actions))


def _apply_bellman(mdp, pi, v):
    p_pi = _p_pi(mdp, pi)
    r_pi = np.sum(pi.probs * mdp.rewards, axis=1)
    return r_pi + mdp.gamma * p_pi @ v


def lemma1_check(mdp, mdp_hat, pi, v):
    """sup-norm Bellman-operator gap vs the uniform IPM bound."""
    v = np.asarray(v, dtype=np.float64)
    v_cap = mdp.r_max / (1.0 - mdp.gamma)
    if np.max(np.abs(v)) > v_cap + 1e-12:
        raise ValueError("V exceeds R_max / (1 - gamma)")
    lhs = float(np.max(np.abs(_apply_bellman(mdp, pi, v)
                              - _apply_bellman(mdp_hat, pi, v))))
    bound = mdp.gamma * v_cap * max_ipm(mdp, mdp_hat)
    assert lhs <= bound + 1e-12, f"Bellman gap {lhs} > bound {bound}"
    return lhs, bound


def theorem1_check(mdp, mdp_hat):
    """Regret of planning in the learned model vs the printed bound.

    Returns (regret, bound, decomposition) where decomposition carries the
    three-way split; the middle term must be non-positive by optimality.
    """
    gamma = mdp.gamma
    pi_star = optimal_policy(mdp)
    pi_hat = optimal_policy(mdp_hat)
    v_star_m, _ = policy_evaluation(mdp, pi_star)
    v_hat_m, _ = policy_evaluation(mdp, pi_hat)
    v_star_mh, _ = policy_evaluation(mdp_hat, pi_star)
    v_hat_mh, _ = policy_evaluation(mdp_hat, pi_hat)
    at0 = lambda v: float(mdp.rho0 @ v)
    regret = at0(v_star_m) - at0(v_hat_m)
    term_i = at0(v_star_m) - at0(v_star_mh)
    middle = at0(v_star_mh) - at0(v_hat_mh)
    term_ii = at0(v_hat_mh) - at0(v_hat_m)
    eps = max_ipm(mdp, mdp_hat)
    rho_hat_in_m = occupancy(mdp, pi_hat)
    ipm_sa = np.array([[ipm_bounded(mdp.transitions[s, a], mdp_hat.transitions[s, a])
                        for a in range(mdp.n_actions)] for s in range(mdp.n_states)])
    occ_term = float(np.sum(rho_hat_in_m * ipm_sa))
    bound = (2.0 * gamma * mdp.r_max / (1.0 - gamma) ** 2 * eps
             + 2.0 / (1.0 - gamma) * occ_term)
    assert regret >= -1e-10, "regret must be non-negative by optimality"
    assert middle <= 1e-12, "middle decomposition term must be non-positive"
    assert regret <= bound + 1e-10, f"regret {regret} > bound {bound}"
    decomposition = {"term_i": term_i, "middle": middle, "term_ii": term_ii}
    return regret, bound, decomposition


# ---- Gaussian Pinsker-chain surrogate ----

def tv_gaussians_1d(mu1, mu2, sigma):
    """Total variation between two 1-D Gaussians with shared sigma,
    by numerical quadrature."""
    lo = min(mu1, mu2) - 10 * sigma
    hi = max(mu1, mu2) + 10 * sigma

    def integrand(x):
        a = np.exp(-0.5 * ((x - mu1) / sigma) ** 2)
        b = np.exp(-0.5 * ((x - mu2) / sigma) ** 2)
        return abs(a - b) / (sigma * np.sqrt(2 * np.pi))

    val, _ = integrate.quad(integrand, lo, hi, limit=200)
    return 0.5 * val


def prop1_check(gaussian_pairs, sigma):
    """Pinsker-chain check for shared-sigma 1-D Gaussian pairs.

    lhs: expectation of the numerically integrated bounded-class IPM
    (2 x TV).  rhs: sqrt(sigma^2 / 2) * sqrt(mean KL).  The bounded-class
    IPM is twice the TV distance, so the verified inequality carries an
    explicit factor 2 on the right-hand side.
    """
    ipms, kls = [], []
    for mu1, mu2 in gaussian_pairs:
        ipms.append(2.0 * tv_gaussians_1d(mu1, mu2, sigma))
        kls.append((mu1 - mu2) ** 2 / (2.0 * sigma ** 2))
    lhs = float(np.mean(ipms))
    rhs = float(np.sqrt(sigma ** 2 / 2.0) * np.sqrt(np.mean(kls)))
    assert lhs <= 2.0 * rhs + 1e-8, f"Pinsker chain violated: {lhs} > 2*{rhs}"
    return lhs, rhs


# ---- randomized trial machinery ----

def random_mdp(rng, n_states=5, n_actions=3, gamma=0.9):
    """Dirichlet(1) transition rows, uniform rewards in [-1, 1]."""
    p = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    rho0 = rng.dirichlet(np.ones(n_states))
    return TabularMDP(p, r, gamma, rho0)


def random_policy(rng, n_states, n_actions):
    return PolicyTable(rng.dirichlet(np.ones(n_actions), size=n_states))


def perturb_mdp(mdp, rng, eps):
    """Mix each transition row with an independent Dirichlet draw at rate eps."""
    noise = rng.dirichlet(np.ones(mdp.n_states),
                          size=(mdp.n_states, mdp.n_actions))
    p = (1.0 - eps) * mdp.transitions + eps * noise
    return TabularMDP(p, mdp.rewards.copy(), mdp.gamma, mdp.rho0.copy())


def run_verification(trials=100, seed=0, pdl_trials=None):
    """Full numeric verification suite; returns a report dict.

    Raises AssertionError on any inequality violation.
    """
    pdl_trials = pdl_trials or trials
    report = {"trials": trials, "seed": seed, "violations": 0}
    g = rngmod.stream(seed, "theory")

    max_pdl_gap = 0.0
    for _ in range(pdl_trials):
        mdp = random_mdp(g, n_states=int(g.integers(2, 7)),
                         n_actions=int(g.integers(2, 4)),
                         gamma=float(g.choice([0.9, 0.99])))
        pi = random_policy(g, mdp.n_states, mdp.n_actions)
        pi2 = random_policy(g, mdp.n_states, mdp.n_actions)
        lhs, rhs = pdl_check(mdp, pi, pi2)
        gap = abs(lhs - rhs)
        max_pdl_gap = max(max_pdl_gap, gap)
        assert gap < 1e-10, f"performance-difference identity broken: {gap:.2e}"
    report["max_pdl_gap"] = max_pdl_gap

    min_lemma_slack = np.inf
    min_thm_slack = np.inf
    max_middle = -np.inf
    n_each = max(1, trials // 3 + (1 if trials % 3 else 0))
    count = 0
    for eps in (0.01, 0.05, 0.1):
        for _ in range(n_each):
            if count >= trials:
                break
            mdp = random_mdp(g, n_states=int(g.integers(2, 7)),
                             n_actions=int(g.integers(2, 4)),
                             gamma=float(g.choice([0.9, 0.99])))
            mdp_hat = perturb_mdp(mdp, g, eps)
            pi = random_policy(g, mdp.n_states, mdp.n_actions)
            v_cap = mdp.r_max / (1.0 - mdp.gamma)
            v = g.uniform(-v_cap, v_cap, size=mdp.n_states)
            lhs, bound = lemma1_check(mdp, mdp_hat, pi, v)
            min_lemma_slack = min(min_lemma_slack, bound - lhs)
            regret, rbound, decomp = theorem1_check(mdp, mdp_hat)
            min_thm_slack = min(min_thm_slack, rbound - regret)
            max_middle = max(max_middle, decomp["middle"])
            count += 1
    report["lemma1_min_slack"] = float(min_lemma_slack)
    report["theorem1_min_slack"] = float(min_thm_slack)
    report["max_middle_term"] = float(max_middle)

    pairs = [(g.uniform(-2, 2), g.uniform(-2, 2)) for _ in range(20)]
    lhs, rhs = prop1_check(pairs, sigma=1.0)
    report["prop1_lhs"] = lhs
    report["prop1_rhs"] = rhs
    report["prop1_unfactored_holds"] = bool(lhs <= rhs)
    return report
