import math

import numpy as np
import pytest

import arise


def test_gae_matches_forward_sum():
    rng = np.random.default_rng(3)
    rewards = rng.normal(size=12).tolist()
    values = rng.normal(size=12).tolist()
    dones = [False] * 5 + [True] + [False] * 6
    gamma, lam = 0.99, 0.95
    adv = arise.compute_gae(rewards, values, dones, 0.7, gamma, lam)
    nxt = values[1:] + [0.7]
    deltas = [r + gamma * (1 - d) * v1 - v for r, v, v1, d in zip(rewards, values, nxt, dones)]
    for t in range(12):
        total, coef = 0.0, 1.0
        for k in range(t, 12):
            total += coef * deltas[k]
            if dones[k]:
                break
            coef *= gamma * lam
        assert adv[t] == pytest.approx(total, abs=1e-10)


def test_empty_buffer_raises():
    with pytest.raises(arise.EmptyBufferError):
        arise.compute_gae([], [], [])


def test_surrogate_unclipped_ratio_one():
    assert arise.surrogate_objective([0.0, 0.0], [0.0, 0.0], [1.0, -2.0], 0.2) == pytest.approx(-0.5)


def test_selection_distribution():
    p = arise.selection_distribution(3)
    assert p == pytest.approx([0.7 + 0.1 / 3, 0.2 + 0.1 / 3, 0.1 / 3])


def test_novelty_bounds():
    pos = [np.zeros(2), np.ones(2) * 100.0]
    assert arise.novelty_bonus(np.zeros(2), pos, 1) == 0.0
    far = arise.novelty_bonus(np.ones(2) * 100.0, pos, 1)
    assert 0.0 <= far < 1.0


def test_cartpole_reference_step():
    env = arise.make_env("cartpole", 0)
    env.reset()
    obs, reward, terminated, truncated = env.step(1)
    assert reward == 1.0
    assert obs.shape == (4,)
    assert not truncated


def test_unknown_env_is_config_error():
    with pytest.raises(arise.ConfigError):
        arise.make_env("lunarlander", 0)


def test_trainer_checkpoint_roundtrip(tmp_path):
    cfg = arise.AriseConfig()
    cfg.horizon = 128
    cfg.total_iterations = 4
    cfg.hidden = [8, 8]
    cfg.eval_episodes = 2
    ppo = arise.PPOConfig()
    ppo.epochs = 2
    a = arise.Trainer(cfg, ppo, "cartpole")
    a.train_iteration()
    a.save_checkpoint(tmp_path / "ck")
    b = arise.Trainer.load_checkpoint(tmp_path / "ck")
    ra, rb = a.train_iteration(), b.train_iteration()
    assert ra["fitness"] == rb["fitness"]
    assert np.array_equal(a.agent_parameters(0), b.agent_parameters(0))


def test_grid_and_summary(tmp_path):
    text = f"""
env = cartpole
variant = arise, ppo
seeds = 1
out = {tmp_path}
arise.horizon = 64
arise.total_iterations = 2
arise.hidden = 8
ppo.epochs = 1
eval.episodes = 1
"""
    assert arise.run_grid(text) == []
    summary = arise.summarize(tmp_path)
    assert {g["variant"] for g in summary["groups"]} == {"arise", "ppo"}
    header = (tmp_path / "metrics" / "ppo__cartpole__seed1.csv").read_text().splitlines()[0]
    assert header == arise.csv_header()


def test_bad_config_key():
    with pytest.raises(arise.ConfigError, match="arise.bogus"):
        arise.run_grid("env = cartpole\narise.bogus = 1\n")
