import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from macac.core import EpisodeLog, ScriptedPolicy, UniformPolicy, run_episode
from macac.envs import warehouse as wh
from macac.envs.warehouse import Warehouse

IDLE = [wh.WAIT_M, wh.WAIT_FOR_TOOL, wh.WAIT_FOR_TOOL]


def test_constants():
    assert wh.DELIVERY_REWARD == 100.0
    assert wh.DELAY_PENALTY == -20.0
    assert wh.MISSED_PASS_PENALTY == -10.0
    assert wh.STEP_COST == -1.0
    assert wh.SEARCH_STEPS == 6
    assert wh.PASS_STEPS == 4
    assert wh.GET_TOOL_WAIT_CAP == 10
    assert wh.STAGING_CAPACITY == 2
    assert wh.SPEED == 0.8
    assert wh.HORIZON == 200


def test_initial_state():
    env = Warehouse()
    for h in env.humans:
        assert h.durations == (27, 20, 20, 20)
        assert h.subtask == 0
    assert env.staging == []
    assert [env.tool_counts(k)["table"] for k in range(3)] == [2, 2, 2]


def test_reset_is_deterministic():
    a, b = Warehouse(), Warehouse()
    run_episode(a, UniformPolicy([6, 4, 4]), 1.0, rng=1)
    a.reset(5)
    b.reset(5)
    assert np.array_equal(a.state_vector(), b.state_vector())


def test_macro_names():
    env = Warehouse()
    assert [m.name for m in env.macro_actions(0)] == [
        "Search-Tool(0)", "Search-Tool(1)", "Search-Tool(2)", "Pass-to-M(0)", "Pass-to-M(1)", "Wait-M"]
    assert [m.name for m in env.macro_actions(1)] == ["Go-W(0)", "Go-W(1)", "Go-TR", "Get-Tool"]


def test_idle_step_costs_one():
    env = Warehouse()
    env.start_macro(0, wh.WAIT_M)
    assert env.step(IDLE) == (-1.0, False)


def test_in_time_delivery():
    env = Warehouse()
    env.table[0] -= 1
    env.mobiles[0].location = "W-0"
    env.mobiles[0].carrying = 0
    env.start_macro(0, wh.WAIT_M)
    reward, _ = env.step(IDLE)
    assert reward == 99.0
    assert env.tool_counts(0)["delivered"] == 1


def test_late_delivery_penalized():
    env = Warehouse()
    env.start_macro(0, wh.WAIT_M)
    for _ in range(27):
        env.step(IDLE)
    assert env.humans[0].paused
    env.table[0] -= 1
    env.mobiles[0].location = "W-0"
    env.mobiles[0].carrying = 0
    reward, _ = env.step(IDLE)
    assert reward == 100.0 - 20.0 - 1.0
    assert env.humans[0].subtask == 1 and not env.humans[0].paused


def test_missed_pass():
    env = Warehouse()
    env.start_macro(0, wh.PASS_TO_M[0])
    rewards = [env.step([wh.PASS_TO_M[0], wh.WAIT_FOR_TOOL, wh.WAIT_FOR_TOOL])[0] for _ in range(4)]
    assert rewards == [-1.0, -1.0, -1.0, -11.0]


def _search(env, tool):
    env.start_macro(0, tool)
    for _ in range(wh.SEARCH_STEPS):
        env.step([tool, wh.WAIT_FOR_TOOL, wh.WAIT_FOR_TOOL])


def test_search_appends_to_staging():
    env = Warehouse()
    _search(env, 1)
    _search(env, 0)
    assert env.staging == [1, 0]


def test_search_with_full_staging_does_nothing():
    env = Warehouse()
    _search(env, 0)
    _search(env, 1)
    before = (list(env.staging), list(env.table))
    _search(env, 2)
    assert (env.staging, env.table) == before


def test_pass_is_first_in_first_out():
    env = Warehouse()
    _search(env, 2)
    _search(env, 0)
    env.mobiles[0].location = "A-0"
    env.start_macro(0, wh.PASS_TO_M[0])
    for _ in range(wh.PASS_STEPS):
        env.step([wh.PASS_TO_M[0], wh.WAIT_FOR_TOOL, wh.WAIT_FOR_TOOL])
    assert env.mobiles[0].carrying == 2
    assert env.staging == [0]


def test_get_tool_gives_up_after_cap():
    env = Warehouse()
    log = EpisodeLog(3)
    policy = ScriptedPolicy([[wh.WAIT_M], [wh.GET_TOOL, wh.GO_TR], [wh.GO_TR]])
    run_episode(env, policy, 0.0, log, rng=0)
    first = next(r.t for r in log.agent_steps[1] if r.terminated) + 1
    assert first == wh.travel_steps("TR", "A-0") + wh.GET_TOOL_WAIT_CAP


def test_humans_pause_without_tools():
    env = Warehouse()
    env.start_macro(0, wh.WAIT_M)
    for t in range(26):
        env.step(IDLE)
        assert not env.humans[0].paused
    env.step(IDLE)
    assert all(h.paused for h in env.humans)


def test_travel_table():
    rows = list(csv.DictReader(io.StringIO(wh.travel_table_csv())))
    assert len(rows) == len(wh.WAYPOINT_NAMES) ** 2
    for r in rows:
        assert int(r["steps"]) == wh.travel_steps(r["from"], r["to"]) >= 1


def test_malformed_action():
    env = Warehouse()
    with pytest.raises(ValueError):
        env.step([9, 0, 0])
    with pytest.raises(ValueError):
        env.step([0, 0])


def test_heuristic_team_finishes():
    env = Warehouse()

    class Heuristic:
        order = [0, 0, 1, 1, 2, 2]

        def reset(self):
            self.k = 0

        def select(self, deciding, z, prev, eps, rng):
            out = {}
            for i in deciding:
                if i == 0:
                    waiting = [j for j, w in enumerate(env.waiting_robots()) if w
                               and env.mobiles[j].carrying is None]
                    if env.staging and waiting:
                        out[0] = wh.PASS_TO_M[waiting[0]]
                    elif self.k < 6 and len(env.staging) < 2:
                        out[0] = self.order[self.k]
                        self.k += 1
                    else:
                        out[0] = wh.WAIT_M
                else:
                    j = i - 1
                    out[i] = wh.GO_W[j] if env.mobiles[j].carrying is not None else wh.GET_TOOL
            return out

    s = run_episode(env, Heuristic(), 0.0, rng=0)
    assert s.terminal
    assert sum(env.delivered) == 6


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_random_rollout_invariants(seed):
    env = Warehouse()
    policy = UniformPolicy([6, 4, 4])
    rng = np.random.default_rng(seed)
    log = EpisodeLog(3)

    class Checked:
        def add(self, agent_records, joint):
            log.add(agent_records, joint)
            assert len(env.staging) <= wh.STAGING_CAPACITY
            for k in range(wh.N_TOOLS):
                assert sum(env.tool_counts(k).values()) == wh.TOOLS_PER_TYPE
            for h in env.humans:
                if h.paused:
                    assert h.progress >= h.durations[h.subtask]
                    assert h.subtask not in h.received

        def finish(self, summary, final_state):
            log.finish(summary, final_state)

    s = run_episode(env, policy, 1.0, Checked(), rng=rng, env_seed=seed)
    n = s.length
    assert n <= wh.HORIZON
    misses = sum(1 for r in log.rewards if r <= -11.0)
    assert s.total_reward >= -n - 3 * 20 * 2 - 10 * misses
    assert s.total_reward <= 6 * 100 - n
