import numpy as np
import pytest

from girl import autodiff as ad
from girl import config as cfgmod
from girl import imagination as imag
from girl.autodiff import Adam, Tensor
from girl.imagination import (ActorCritic, ReplayBuffer, Trainer,
                              imagine_rollout, intrinsic_bonus,
                              lambda_returns)
from girl.world_model import WorldModel

from conftest import max_rel_err


def tiny_cfg(**overrides):
    base = {
        "latent_dim": 4, "recurrent_dim": 8, "ground_dim": 6,
        "ensemble_size": 2, "net_width": 12, "imagination_horizon": 3,
        "prefill_steps": 60, "iterations": 1, "env_steps_per_iter": 30,
        "imagination_phases": 1, "batch_sequences": 3, "batch_length": 6,
        "mc_samples_train": 32, "eig_positions": 2, "imag_eig_samples": 8,
        "eval_episodes": 1, "msae_pretrain_steps": 50,
        "env": {"kind": "linear-gaussian", "state_dim": 3, "action_dim": 1,
                "horizon": 15, "distractor_dim": 2, "env_seed": 0},
    }
    env_over = overrides.pop("env", {})
    base.update(overrides)
    base["env"].update(env_over)
    return cfgmod.config_from_dict(base)


# ---- replay buffer ----

def test_replay_fifo_capacity():
    buf = ReplayBuffer(capacity=10)
    for i in range(5):
        buf.add_episode(np.zeros((5, 2)), np.zeros((5, 0)),
                        np.zeros((4, 1)), np.zeros(4))
    assert buf.size <= 10
    assert len(buf.episodes) == 2  # oldest episodes evicted


def test_replay_empty_episode_ignored():
    buf = ReplayBuffer(capacity=10)
    buf.add_episode(np.zeros((1, 2)), np.zeros((1, 0)), np.zeros((0, 1)),
                    np.zeros(0))
    assert buf.size == 0


def test_replay_sample_shapes():
    buf = ReplayBuffer(capacity=100)
    buf.add_episode(np.arange(12).reshape(6, 2), np.zeros((6, 1)),
                    np.ones((5, 1)), np.arange(5.0))
    rng = np.random.default_rng(0)
    sems, diss, acts, rews = buf.sample_sequences(rng, 4, 3)
    assert sems.shape == (4, 4, 2)
    assert diss.shape == (4, 4, 1)
    assert acts.shape == (4, 3, 1)
    assert rews.shape == (4, 3)


def test_replay_underflow_raises():
    buf = ReplayBuffer(capacity=100)
    buf.add_episode(np.zeros((3, 2)), np.zeros((3, 0)), np.zeros((2, 1)),
                    np.zeros(2))
    with pytest.raises(RuntimeError):
        buf.sample_sequences(np.random.default_rng(0), 1, 5)


# ---- lambda returns ----

def test_lambda_returns_one_step_case():
    rewards = [1.0, 2.0, 3.0]
    values = [0.5, 0.6, 0.7]
    out = lambda_returns(rewards, values, bootstrap=0.9, gamma=0.9, lam=0.0)
    assert out[0] == pytest.approx(1.0 + 0.9 * 0.6)
    assert out[1] == pytest.approx(2.0 + 0.9 * 0.7)
    assert out[2] == pytest.approx(3.0 + 0.9 * 0.9)


def test_lambda_returns_monte_carlo_limit():
    rewards = [1.0, 2.0, 3.0]
    values = [5.0, 5.0, 5.0]  # ignored at lam=1
    out = lambda_returns(rewards, values, bootstrap=4.0, gamma=0.5, lam=1.0)
    assert out[0] == pytest.approx(1 + 0.5 * 2 + 0.25 * 3 + 0.125 * 4)


def test_lambda_returns_hand_case():
    g, lam = 0.9, 0.95
    rewards = [1.0, -0.5, 2.0]
    values = [0.2, 0.4, -0.1]
    bootstrap = 0.3
    g2 = 2.0 + g * bootstrap
    g1 = -0.5 + g * ((1 - lam) * (-0.1) + lam * g2)
    g0 = 1.0 + g * ((1 - lam) * 0.4 + lam * g1)
    out = lambda_returns(rewards, values, bootstrap, g, lam)
    assert out == pytest.approx([g0, g1, g2])


def test_lambda_returns_all_zero():
    out = lambda_returns([0.0] * 4, [0.0] * 4, 0.0, 0.99, 0.95)
    assert out == [0.0] * 4


def test_lambda_returns_length_mismatch():
    with pytest.raises(ValueError):
        lambda_returns([1.0], [1.0, 2.0], 0.0, 0.9, 0.9)


# ---- intrinsic bonus ----

def test_intrinsic_bonus():
    assert intrinsic_bonus(0.5, 0.0) == 0.0
    assert intrinsic_bonus(0.5, 0.01) == pytest.approx(0.005)
    with pytest.raises(ValueError):
        intrinsic_bonus(0.5, -0.1)


# ---- imagined rollouts ----

def _rollout_fixture(seed=0):
    wm = WorldModel(5, 1, latent_dim=4, hidden_dim=8, ground_dim=6,
                    ensemble_size=2, width=12, seed=seed)
    ac = ActorCritic(12, 1, width=12, seed=seed)
    z0 = Tensor(np.zeros((3, 4)))
    h0 = Tensor(np.zeros((3, 8)))
    return wm, ac, z0, h0


def test_imagine_rollout_empty_horizon():
    wm, ac, z0, h0 = _rollout_fixture()
    traj = imagine_rollout(wm, ac, z0, h0, 0, np.random.default_rng(0))
    assert len(traj) == 0


def test_imagine_rollout_shapes_and_determinism():
    wm, ac, z0, h0 = _rollout_fixture(seed=1)
    a = imagine_rollout(wm, ac, z0, h0, 4, np.random.default_rng(5))
    b = imagine_rollout(wm, ac, z0, h0, 4, np.random.default_rng(5))
    assert len(a) == 4
    for t in range(4):
        assert a.zs[t].data.shape == (3, 4)
        assert a.hs[t].data.shape == (3, 8)
        assert a.actions[t].data.shape == (3, 1)
        assert a.rewards[t].data.shape == (3,)
        assert a.groundings[t].data.shape == (3, 6)
        np.testing.assert_array_equal(a.zs[t].data, b.zs[t].data)
    assert np.all(np.abs(a.actions[0].data) <= 1.0)  # tanh squashing


def test_imagine_rollout_bonus_matches_flag():
    wm, ac, z0, h0 = _rollout_fixture(seed=2)
    off = imagine_rollout(wm, ac, z0, h0, 3, np.random.default_rng(7),
                          intrinsic_alpha=0.0)
    on = imagine_rollout(wm, ac, z0, h0, 3, np.random.default_rng(7),
                         intrinsic_alpha=0.01, eig_samples=16)
    # first step draws match before the bonus path consumes extra randomness
    np.testing.assert_array_equal(off.rewards[0].data, on.rewards[0].data)
    for t in range(3):
        assert np.all(off.bonuses[t] == 0.0)
        # MC estimate can dip slightly negative for near-identical members
        assert np.any(on.bonuses[t] != 0.0)
        assert np.all(np.isfinite(on.bonuses[t]))


def test_actor_gradient_check():
    """Pathwise actor loss vs finite differences through the rollout."""
    wm = WorldModel(5, 1, latent_dim=3, hidden_dim=6, ground_dim=4,
                    ensemble_size=2, width=8, seed=3)
    ac = ActorCritic(9, 1, width=8, seed=3)
    z0 = np.zeros((2, 3))
    h0 = np.zeros((2, 6))

    def actor_loss():
        traj = imagine_rollout(wm, ac, Tensor(z0), Tensor(h0), 2,
                               np.random.default_rng(11))
        feats = [ad.concat([h, z], axis=-1) for h, z in
                 zip(traj.hs, traj.zs)]
        values = [ac.value(f) for f in feats]
        # fixed bootstrap: the slow critic is a stop-gradient in training,
        # and finite differences would see through it otherwise
        returns = lambda_returns(traj.rewards, values, Tensor(np.zeros(2)),
                                 0.9, 0.95)
        total = Tensor(0.0)
        for g in returns:
            total = total + g.mean()
        return (-1.0 / len(returns)) * total

    ac.actor.params.zero_grad()
    actor_loss().backward()
    analytic = {k: ac.actor.params[k].grad.copy() for k in ac.actor.params}
    numeric = ad.finite_difference_grad(lambda: float(actor_loss().data),
                                        ac.actor.params)
    # slightly looser than the single-network checks: two recurrent steps
    # of composition amplify finite-difference truncation error
    assert max_rel_err(analytic, numeric) < 1e-5


def test_critic_converges_to_constant_reward_fixed_point():
    gamma = 0.9
    ac = ActorCritic(4, 1, width=16, seed=4)
    opt = Adam(ac.critic.params, lr=3e-3)
    feats = np.random.default_rng(0).standard_normal((8, 4))
    target = 1.0 / (1.0 - gamma)
    for _ in range(5000):
        ac.critic.params.zero_grad()
        v = ac.value(Tensor(feats))
        # bellman-style regression toward r + gamma * sg(v)
        tgt = 1.0 + gamma * v.data
        ((v - Tensor(tgt)) ** 2).mean().backward()
        opt.step()
    v = ac.value(Tensor(feats)).data
    assert np.all(np.abs(v - target) / target < 0.05)


def test_target_critic_ema():
    ac = ActorCritic(4, 1, width=8, seed=5)
    before = {k: v.copy() for k, v in ac.target_critic.items()}
    for k in ac.critic.params:
        ac.critic.params[k].data = ac.critic.params[k].data + 1.0
    ac.update_target(0.5)
    for k in before:
        np.testing.assert_allclose(
            ac.target_critic[k], 0.5 * before[k] + 0.5 * ac.critic.params[k].data)


# ---- trainer ----

def test_trainer_deterministic_metrics():
    rows1 = Trainer(tiny_cfg(), seed=11).train()
    rows2 = Trainer(tiny_cfg(), seed=11).train()
    assert [r.row() for r in rows1] == [r.row() for r in rows2]


def test_trainer_seed_changes_metrics():
    r1 = Trainer(tiny_cfg(), seed=1).train()[0].row()
    r2 = Trainer(tiny_cfg(), seed=2).train()[0].row()
    assert r1 != r2


def test_trainer_fixed_beta_flag():
    t = Trainer(tiny_cfg(fixed_beta=True, iterations=3), seed=3)
    rows = t.train()
    betas = {r.beta for r in rows}
    assert betas == {1.0}


def test_trainer_no_ground_runs():
    t = Trainer(tiny_cfg(no_ground=True), seed=4)
    row = t.train_iteration()
    assert np.isfinite(row.wm_loss)


def test_trainer_msae_path_runs():
    t = Trainer(tiny_cfg(proprio_msae=True, msae_window=4,
                         msae_pretrain_steps=30), seed=5)
    row = t.train_iteration()
    assert np.isfinite(row.wm_loss)


def test_trainer_vae_ground_path_runs():
    t = Trainer(tiny_cfg(vae_ground=True), seed=6)
    row = t.train_iteration()
    assert np.isfinite(row.wm_loss)


def test_trainer_zero_lr_keeps_model_params():
    cfg = tiny_cfg(learning_rate=0.0, actor_critic_lr=0.0)
    t = Trainer(cfg, seed=7)
    before = {k: v.data.copy() for k, v in t.wm.params.items()}
    actor_before = {k: v.data.copy() for k, v in t.ac.actor.params.items()}
    t.train_iteration()
    for k in before:
        np.testing.assert_array_equal(t.wm.params[k].data, before[k])
    for k in actor_before:
        np.testing.assert_array_equal(t.ac.actor.params[k].data,
                                      actor_before[k])


def test_trainer_delta_warm_start():
    cfg = tiny_cfg()
    t = Trainer(cfg, seed=8)
    assert not t._delta_warm_started
    row = t.train_iteration()
    # after the first iteration delta equals clip(warm start + one update)
    assert t._delta_warm_started
    assert cfg.delta_min <= row.delta <= cfg.delta_max


def test_trainer_wm_loss_decreases():
    cfg = tiny_cfg(iterations=25, env_steps_per_iter=15)
    t = Trainer(cfg, seed=9)
    rows = t.train()
    early = np.mean([r.wm_loss for r in rows[:5]])
    late = np.mean([r.wm_loss for r in rows[-5:]])
    assert late < 0.8 * early


def test_metrics_row_format():
    row = imag.IterationMetrics(step=10, episodic_return=-1.25, mean_drift=0.5,
                                delta=1.0, beta=1.0, eig=0.1, rpl=0.2,
                                wm_loss=3.0, actor_loss=0.0, critic_loss=0.0)
    text = row.row()
    assert text.split(",")[0] == "10"
    assert len(text.split(",")) == len(imag.METRIC_COLUMNS)
