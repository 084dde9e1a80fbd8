import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alpe_lob.agent import (AlpeAgent, AlpeConfig, compute_reward, decay_epsilon, epsilon_at,
                            policy_target, run_online, signed_policy_target)
from alpe_lob.features import simple_features
from alpe_lob.lob_ingest import LobEvent, SyntheticStreamConfig, generate_synthetic_stream, mid_price

SMALL = dict(hidden_layers=2, hidden_width=8)


def stream(n=300, seed=0, **kw):
    return generate_synthetic_stream(SyntheticStreamConfig(n_events=n, seed=seed, **kw))


def constant_stream(n, mid=100.0):
    return [LobEvent(i, mid + 0.01, 500.0, mid - 0.01, 500.0) for i in range(n)]


# -- schedule -------------------------------------------------------------------------------------

def test_decay_examples():
    assert decay_epsilon(1.0) == 0.999
    assert decay_epsilon(1e-4) == 1e-4


def test_first_floor_step():
    t = next(t for t in range(20_000) if epsilon_at(t) == 1e-4)
    assert t == 9206 == math.ceil(math.log(1e-4) / math.log(0.999))


def test_iterative_and_closed_form_agree():
    eps = 1.0
    for t in range(1, 12_000):
        eps = decay_epsilon(eps)
        assert eps == pytest.approx(epsilon_at(t), rel=1e-9, abs=0)


def test_agent_epsilon_follows_closed_form():
    agent = AlpeAgent(AlpeConfig(**SMALL), 4)
    for k, e in enumerate(stream(50)):
        rec = agent.step(e)
        assert rec.epsilon == max(1e-4, 0.999 ** (k + 1))
        assert 1e-4 <= agent.epsilon <= 1.0


@pytest.mark.parametrize("kw", [dict(a_min=0.1, a_max=0.1), dict(eps_min=0.5, eps0=0.2), dict(eps_decay=0.0),
                                dict(gamma=0.9), dict(epochs_per_event=0), dict(policy="greedy"),
                                dict(horizon="later")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        AlpeConfig(**kw)


# -- reward and target ---------------------------------------------------------------------------

def test_reward_examples():
    assert compute_reward(100.0, 100.0, 0.3) == 0
    assert compute_reward(105.0, 100.0, 1.0) == 0
    assert compute_reward(100.1, 100.0, 0.0) == pytest.approx(-0.1, abs=1e-12)


def test_policy_target_examples():
    assert policy_target(-0.3, 100.0, 100.0, 0.2) == -0.3
    assert policy_target(-0.3, 100.5, 100.0, 1.0) == -0.3
    assert policy_target(-0.1, 100.1, 100.0, 0.0) == pytest.approx(-0.2, abs=1e-12)


fin = st.floats(-1e3, 1e3)


@given(fin, fin, st.floats(0, 1))
def test_reward_nonpositive_and_zero_iff(a, p, eps):
    r = compute_reward(a, p, eps)
    assert r <= 0
    assert (r == 0) == (a == p or eps == 1.0 or abs(a - p) * (1 - eps) == 0)


@given(fin, fin, st.floats(-0.1, 0.1), fin, st.floats(0, 1))
def test_signed_target_reduces_to_blend(f, mid, alpha, p, eps):
    a = mid + alpha
    got = signed_policy_target(f, a, alpha, p, eps)
    assert got == pytest.approx(f + (1 - eps) * ((p - mid) - f), abs=1e-9)


# -- action selection ------------------------------------------------------------------------------

def test_greedy_literal_action_is_network_output():
    agent = AlpeAgent(AlpeConfig(eps0=0.0, eps_min=0.0, policy="literal", **SMALL), 4)
    state = np.array([0.2, 0.4, 0.6, 0.8])
    for _ in range(5):
        action, _, explored = agent.select_action(state, 100.0)
        assert not explored and action == agent.net.forward(state)


def test_greedy_signed_action_is_mid_plus_output():
    agent = AlpeAgent(AlpeConfig(eps0=0.0, eps_min=0.0, **SMALL), 4)
    state = np.array([0.2, 0.4, 0.6, 0.8])
    action, adj, explored = agent.select_action(state, 100.0)
    assert not explored and adj == agent.net.forward(state) and action == 100.0 + adj


def test_full_exploration_band_and_reproducible():
    def actions(seed):
        agent = AlpeAgent(AlpeConfig(eps_decay=1.0, seed=seed, **SMALL), 4)
        return [agent.select_action(np.zeros(4), 100.0) for _ in range(500)]
    a = actions(3)
    assert all(99.9 <= act <= 100.1 and explored for act, _, explored in a)
    assert a == actions(3)
    assert a != actions(4)


# -- online loop ------------------------------------------------------------------------------------

def test_first_event_has_no_reward_phase():
    agent = AlpeAgent(AlpeConfig(**SMALL), 4)
    rec = agent.step(stream(1)[0])
    assert rec.realized is None and rec.reward is None
    assert agent.pending is not None


def test_second_event_realizes_first_forecast():
    evs = stream(2)
    agent = AlpeAgent(AlpeConfig(**SMALL), 4)
    first = agent.step(evs[0])
    second = agent.step(evs[1])
    assert second.realized == mid_price(evs[1])
    assert second.reward == pytest.approx(compute_reward(first.prediction, mid_price(evs[1]), first.epsilon))
    assert agent.net.adam_t == 2  # two epochs on the single pair


def test_out_of_order_rejected():
    agent = AlpeAgent(AlpeConfig(**SMALL), 4)
    agent.step(LobEvent(5, 10.0, 1, 9.0, 1))
    with pytest.raises(ValueError, match="out-of-order"):
        agent.step(LobEvent(5, 10.0, 1, 9.0, 1))


def test_same_seed_same_records():
    evs = stream(200)
    a = run_online(AlpeAgent(AlpeConfig(seed=7, **SMALL), 4), evs)
    b = run_online(AlpeAgent(AlpeConfig(seed=7, **SMALL), 4), evs)
    assert a == b
    assert run_online(AlpeAgent(AlpeConfig(**SMALL), 4), []) == []


def test_truncation_never_changes_earlier_records():
    evs = stream(150, seed=2)
    full = run_online(AlpeAgent(AlpeConfig(seed=1, **SMALL), 4), evs)
    for t in (1, 40, 149):
        part = run_online(AlpeAgent(AlpeConfig(seed=1, **SMALL), 4), evs[:t])
        assert part == full[:t]


def test_exploration_actions_within_band():
    agent = AlpeAgent(AlpeConfig(**SMALL), 4)
    for e in stream(300, volatility=0.3):
        rec = agent.step(e)
        if rec.explored:
            assert mid_price(e) - 0.1 <= rec.prediction <= mid_price(e) + 0.1
        if rec.reward is not None:
            assert rec.reward <= 0


def test_learning_progress_on_constant_stream():
    cfg = AlpeConfig(eps_decay=0.995, seed=0)
    agent = AlpeAgent(cfg, 4)
    recs = run_online(agent, constant_stream(2000))
    err = np.array([abs(r.prediction - 100.0) for r in recs])
    start = next(i for i, r in enumerate(recs) if r.epsilon < 0.01)
    assert recs[-1].epsilon < 0.01
    assert err[-200:].mean() < err[start:start + 200].mean()


def test_nowcast_horizon_learns_on_the_same_event():
    agent = AlpeAgent(AlpeConfig(horizon="same", **SMALL), 4)
    e = stream(1)[0]
    rec = agent.step(e)
    assert rec.realized == mid_price(e)
    assert rec.reward is not None and agent.pending is None


def test_literal_policy_runs():
    recs = run_online(AlpeAgent(AlpeConfig(policy="literal", **SMALL), 4), stream(30))
    assert all(math.isfinite(r.prediction) for r in recs)


def test_importance_weights_validation_and_use():
    with pytest.raises(ValueError):
        AlpeAgent(AlpeConfig(**SMALL), 4, weights=np.ones(3))
    agent = AlpeAgent(AlpeConfig(**SMALL), 4, weights=np.array([2.0, 1.0, 1.0, 0.001]))
    e = stream(1)[0]
    agent.scaler.update(simple_features(e))
    raw = simple_features(e) + 1
    np.testing.assert_array_equal(agent.state_of(raw), agent.scaler.transform(raw) * agent.weights)


def test_checkpoint_resume_is_exact(tmp_path):
    evs = stream(120, seed=5)
    ref = run_online(AlpeAgent(AlpeConfig(seed=2, **SMALL), 4), evs)
    agent = AlpeAgent(AlpeConfig(seed=2, **SMALL), 4)
    head = run_online(agent, evs[:70])
    path = tmp_path / "agent.json"
    agent.save(path)
    json.loads(path.read_text())
    resumed = AlpeAgent.load(path)
    tail = run_online(resumed, evs[70:])
    assert head + tail == ref
