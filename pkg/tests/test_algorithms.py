import numpy as np
import pytest

from macac.algorithms import EnvInfo, LearnerConfig, actor_loss, local_input, make_learner, n_step_targets
from macac.algorithms.learners import DECENTRALIZED_SIZES
from macac.core import ConfigurationError, EpisodeLog, ScriptedPolicy, UniformPolicy, run_episode
from macac.envs.boxpushing import BoxPushing
from macac.envs.toy import (
    ToyEnv,
    ToySpec,
    enumerate_trajectories,
    exact_policy_gradient,
    history_values,
    random_spec,
)
from macac.envs.warehouse import Warehouse
from macac.nn.network import PARAM_NAMES

HP = dict(actor_lr=0.001, critic_lr=0.003, train_freq=4, target_update=8, gamma=0.95)


def _cfg(algorithm, n_step=0, **kw):
    return LearnerConfig(algorithm, n_step=n_step, **{**HP, **kw})


def _logs(env, n, seed, version=None):
    policy = UniformPolicy([env.n_macros(i) for i in range(env.n_agents)])
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        log = EpisodeLog(env.n_agents, policy_version=version)
        run_episode(env, policy, 1.0, log, rng=rng, env_seed=k)
        out.append(log)
    return out


def _max_param_gap(a, b):
    gap = 0.0
    for name, net in a.named_nets().items():
        other = b.named_nets()[name]
        for k in PARAM_NAMES:
            gap = max(gap, float(np.max(np.abs(net.params[k].astype(np.float64) - other.params[k]))))
    return gap


# -- targets -----------------------------------------------------------------

def test_two_row_hand_example():
    y = n_step_targets([1.0, 2.0], [2, 3], [False, True], [0.0, 10.0], 0.9, 3)
    assert y[0] == pytest.approx(2.62, abs=1e-12)
    assert y[1] == pytest.approx(2.0, abs=1e-12)


def test_zero_bootstrap_one_step_gives_rewards():
    rc = [1.5, -2.0, 3.0]
    y = n_step_targets(rc, [1, 4, 2], [False, False, False], np.zeros(3), 0.9, 0)
    np.testing.assert_allclose(y, rc)


def test_one_step_undiscounted_td0():
    y = n_step_targets([1.0, 2.0, 3.0], [1, 1, 1], [False, False, True], [5.0, 6.0, 7.0], 1.0, 0)
    np.testing.assert_allclose(y, [6.0, 8.0, 3.0])


def test_n_step_uses_segment_durations():
    g = 0.9
    y = n_step_targets([1.0, 2.0, 3.0], [2, 1, 3], [False] * 3, [4.0, 5.0, 6.0], g, 2)
    assert y[0] == pytest.approx(1.0 + g**2 * 2.0 + g**3 * 5.0)
    assert y[1] == pytest.approx(2.0 + g * 3.0 + g**4 * 6.0)
    assert y[2] == pytest.approx(3.0 + g**3 * 6.0)


def test_negative_horizon_rejected():
    with pytest.raises(ValueError):
        n_step_targets([1.0], [1], [True], [0.0], 0.9, -1)


# -- actor loss ----------------------------------------------------------------

def test_zero_advantage_zero_gradient():
    probs = np.array([[0.2, 0.5, 0.3], [0.6, 0.3, 0.1]])
    loss, grad = actor_loss(probs, [0, 2], [0.0, 0.0])
    assert loss == 0.0
    assert not np.any(grad)


def test_uniform_single_row_score():
    _, grad = actor_loss(np.full((1, 3), 1 / 3), [2], [1.0])
    # descent direction on the loss is the score of the chosen macro
    np.testing.assert_allclose(-grad[0], [-1 / 3, -1 / 3, 2 / 3])


def test_actor_loss_row_mismatch():
    with pytest.raises(ValueError):
        actor_loss(np.full((2, 3), 1 / 3), [0], [1.0, 1.0])


@pytest.mark.parametrize("seed", range(5))
def test_enumerated_actor_gradient_matches_finite_differences(seed):
    spec = random_spec(seed, horizon=3)
    table = enumerate_trajectories(spec)
    params = table.random_params(seed + 100)
    fd, _ = exact_policy_gradient(table, params)
    from macac.envs.toy import _leaf_probs
    probs = _leaf_probs(table, params)
    values = history_values(table, params, probs)
    g = spec.gamma
    for i, (dec, theta) in enumerate(zip(table.decisions, params)):
        pi = np.exp(theta - theta.max(axis=1, keepdims=True))
        pi /= pi.sum(axis=1, keepdims=True)
        v = values[i]
        v_next = np.where(dec.next_row >= 0, v[np.maximum(dec.next_row, 0)], 0.0)
        adv = dec.cum_reward + g**dec.duration * v_next - v[dec.row]
        weighted = probs[dec.leaf] * g**dec.t * adv
        _, dlogits = actor_loss(pi[dec.row], dec.macro, weighted)
        grad = np.zeros_like(theta)
        np.add.at(grad, dec.row, -dlogits * len(dec.macro))
        scale = np.max(np.abs(fd[i]))
        assert np.max(np.abs(grad - fd[i])) <= 1e-6 * max(scale, 1e-8)


# -- learners ------------------------------------------------------------------

@pytest.mark.parametrize("n_step", [0, 3])
def test_mac_iac_degenerates_to_primitive_iac(n_step):
    env = BoxPushing(6, primitive=True)
    info = EnvInfo.from_env(env)
    mac = make_learner(info, _cfg("mac-iac", n_step), seed=3)
    prim = make_learner(info, _cfg("primitive-iac", n_step), seed=3)
    assert _max_param_gap(mac, prim) == 0.0
    for r in range(3):
        logs = _logs(env, 4, r)
        mac.train_round(logs)
        prim.train_round(logs)
        assert _max_param_gap(mac, prim) <= 1e-6


def _one_agent_spec(seed):
    return random_spec(seed, n_agents=1, n_states=3, n_macros=(3,), n_obs=2, horizon=6)


@pytest.mark.parametrize("seed", [0, 1])
def test_single_agent_iaicc_matches_iac(seed):
    env = ToyEnv(_one_agent_spec(seed))
    info = EnvInfo.from_env(env)
    sizes = dict(actor_sizes=DECENTRALIZED_SIZES, critic_sizes=DECENTRALIZED_SIZES)
    iac = make_learner(info, _cfg("mac-iac", 2, **sizes), seed=seed)
    iaicc = make_learner(info, _cfg("mac-iaicc", 2, critic_input="joint-history", **sizes), seed=seed)
    for r in range(3):
        logs = _logs(env, 5, r)
        d1 = iac.train_round(logs)
        d2 = iaicc.train_round(logs)
        assert _max_param_gap(iac, iaicc) <= 1e-6
        assert d1["td_abs/0"] == pytest.approx(d2["td_abs/0"], abs=1e-6)


def test_off_policy_episodes_rejected():
    env = BoxPushing(6)
    learner = make_learner(EnvInfo.from_env(env), _cfg("mac-iac"), seed=0)
    learner.train_round(_logs(env, 2, 0, version=0))
    with pytest.raises(ConfigurationError, match="off-policy"):
        learner.train_round(_logs(env, 2, 1, version=0))


@pytest.mark.parametrize("algorithm,critic_input", [("mac-iac", "state"), ("mac-cac", "state"),
                                                     ("mac-iaicc", "local"), ("naive-mac-iacc", "bogus")])
def test_critic_input_mismatch(algorithm, critic_input):
    with pytest.raises(ConfigurationError):
        make_learner(EnvInfo.from_env(BoxPushing(6)), _cfg(algorithm, critic_input=critic_input))


def test_unknown_algorithm():
    with pytest.raises(ConfigurationError):
        make_learner(EnvInfo.from_env(BoxPushing(6)), _cfg("mac-dqn"))


def _bandit():
    return ToySpec(
        initial_state=np.array([1.0]),
        initial_obs=[np.array([[1.0]])],
        transition=np.ones((1, 2, 1)),
        reward=np.array([[5.0, 0.0]]),
        observation=[np.ones((2, 1, 1))],
        durations=[[1, 1]],
        horizon=1,
        gamma=0.9,
    )


@pytest.mark.parametrize("algorithm", ["mac-iac", "mac-iaicc", "naive-mac-iacc", "mac-cac"])
def test_positive_advantage_raises_chosen_probability(algorithm):
    env = ToyEnv(_bandit())
    info = EnvInfo.from_env(env)
    ci = None if algorithm in ("mac-iac", "mac-cac") else "joint-history"
    learner = make_learner(info, _cfg(algorithm, critic_input=ci), seed=0)
    logs = []
    for k in range(4):
        log = EpisodeLog(1)
        run_episode(env, ScriptedPolicy([[0]]), 0.0, log, rng=k)
        logs.append(log)
    env.reset(0)
    x = local_input(env.macro_observation(0), None, 2)
    actor = learner.actors[0]
    before = actor.step(x, actor.initial_state())[0][0]
    learner.train_round(logs)
    after = actor.step(x, actor.initial_state())[0][0]
    assert after > before


ALL = [("mac-iac", None), ("mac-cac", None), ("naive-mac-iacc", "state"),
       ("naive-mac-iacc", "both"), ("mac-iaicc", "joint-history"), ("mac-iaicc", "state")]


@pytest.mark.parametrize("algorithm,critic_input", ALL)
@pytest.mark.parametrize("env_name", ["boxpushing", "warehouse"])
def test_diagnostics_and_version(algorithm, critic_input, env_name):
    env = BoxPushing(6) if env_name == "boxpushing" else Warehouse()
    learner = make_learner(EnvInfo.from_env(env), _cfg(algorithm, 3, critic_input=critic_input), seed=1)
    diag = learner.train_round(_logs(env, 3, 0, version=0))
    assert learner.version == 1
    base = ("critic_loss", "td_abs", "critic_grad_norm", "entropy", "actor_grad_norm")
    if algorithm == "mac-cac":
        expected = set(base)
    elif algorithm == "naive-mac-iacc":
        expected = set(base[:3]) | {f"{k}/{i}" for k in base[3:] for i in range(env.n_agents)}
    else:
        expected = {f"{k}/{i}" for k in base for i in range(env.n_agents)}
    assert set(diag) == expected
    assert all(np.isfinite(v) for v in diag.values())


def _capture_rows(learner):
    seen = {}
    original = learner._actor_step

    def spy(k, seqs, rows):
        seen[k] = [[(t, head, m) for t, head, m, _ in rs] for rs in rows]
        return original(k, seqs, rows)

    learner._actor_step = spy
    return seen


def test_naive_and_iaicc_share_actor_rows():
    env = Warehouse()
    info = EnvInfo.from_env(env)
    logs = _logs(env, 3, 7)
    a = make_learner(info, _cfg("naive-mac-iacc", critic_input="joint-history"), seed=0)
    b = make_learner(info, _cfg("mac-iaicc", critic_input="joint-history"), seed=0)
    ra, rb = _capture_rows(a), _capture_rows(b)
    a.train_round(logs)
    b.train_round(logs)
    assert ra.keys() == rb.keys() == {0, 1, 2}
    for k in ra:
        assert [set(x) for x in ra[k]] == [set(x) for x in rb[k]]


def test_cac_only_reselecting_heads_contribute():
    env = BoxPushing(8)
    learner = make_learner(EnvInfo.from_env(env), _cfg("mac-cac"), seed=0)
    logs = _logs(env, 2, 3)
    rows = _capture_rows(learner)
    learner.train_round(logs)
    from macac.buffers import squeeze_joint
    for log, rs in zip(logs, rows[0]):
        joint = squeeze_joint(log.steps, 0.95, log.terminal, log.final_state)
        expected = {(k, i, tr.m[i]) for k, tr in enumerate(joint) for i in range(2) if tr.starting[i]}
        assert set(rs) == expected
        assert all(any(tr.starting) for tr in joint)
