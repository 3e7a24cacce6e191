import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from difftune.diffusion import DenoiseChain, make_schedule, predictor_in_dim
from difftune.env import (LEFT, RIGHT, UNDEFINED, EnvConfig, Trajectory, TrajStep,
                          classify_mode, env_reset, env_step, is_success,
                          load_trajectories, rollout, rollout_policy,
                          save_trajectories)
from difftune.nn import ConfigError, init_mlp
from difftune.seeding import rng_for

CFG = EnvConfig()


def test_reset_without_jitter_hits_start_exactly():
    cfg = EnvConfig(reset_jitter_std=0.0)
    s = env_reset(cfg, np.random.default_rng(0))
    assert np.array_equal(s[:2], cfg.start)
    assert np.array_equal(s[2:], cfg.goal_point)


def test_reset_is_seed_deterministic():
    a = env_reset(CFG, np.random.default_rng(5))
    b = env_reset(CFG, np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_reset_jitter_std_matches_config():
    rng = np.random.default_rng(1)
    pts = np.stack([env_reset(CFG, rng)[:2] for _ in range(10_000)])
    emp = pts.std(axis=0)
    assert np.all(np.abs(emp / CFG.reset_jitter_std - 1.0) < 0.05)


def test_zero_action_no_movement_no_flags():
    s = env_reset(CFG, np.random.default_rng(2))
    nxt, collided, reached = env_step(s, np.zeros(2), CFG)
    assert np.array_equal(nxt, s)
    assert not collided and not reached


def test_step_into_obstacle_collides():
    # Hand-checked: from just below the first-row center disk, a full
    # upward step lands 0.1 from its center, well inside radius 0.7.
    cx, cy, r = CFG.obstacles[1]
    state = np.concatenate([[cx, cy - r - 0.2], CFG.goal_point])
    _, collided, _ = env_step(state, np.array([0.0, 1.0]), CFG)
    assert collided


def test_goal_line_is_inclusive():
    state = np.concatenate([[5.0, CFG.goal_line_y - 1.0], CFG.goal_point])
    _, _, reached = env_step(state, np.array([0.0, 1.0]), CFG)
    assert reached


def test_actions_clamped_and_bounded():
    state = np.concatenate([[9.9, 1.8], CFG.goal_point])
    nxt, _, _ = env_step(state, np.array([55.0, -55.0]), CFG)
    assert nxt[0] == CFG.bounds[2]  # clipped to the workspace edge
    assert nxt[1] == pytest.approx(1.8 - CFG.action_clamp)  # delta clamped


def _chain_stub(action):
    def policy(s, rng):
        return DenoiseChain(states=[np.zeros(2), np.asarray(action, float)],
                            s=s, log_prob=0.0)
    return policy


def test_rollout_single_step_cap():
    cfg = EnvConfig(max_steps=1)
    traj = rollout_policy(_chain_stub([0.0, 0.1]), cfg, np.random.default_rng(0))
    assert len(traj) == 1
    assert traj.timeout


def test_scripted_left_stub_classifies_left():
    traj = rollout_policy(_chain_stub([-0.3, 1.0]), CFG, np.random.default_rng(3))
    assert traj.mode == LEFT
    assert traj.success


def test_rollout_determinism():
    params = init_mlp((predictor_in_dim(2, 4), 8, 2), np.random.default_rng(4))
    sched = make_schedule(5, 0.02, 0.2)
    t1 = rollout(params, CFG, sched, rng_for(9, "roll"))
    t2 = rollout(params, CFG, sched, rng_for(9, "roll"))
    assert len(t1) == len(t2)
    for a, b in zip(t1.steps, t2.steps):
        assert np.array_equal(a.state, b.state)
        assert np.array_equal(a.next_state, b.next_state)
        assert all(np.array_equal(x, y) for x, y in zip(a.chain.states, b.chain.states))


def test_rollout_chains_step_consistency():
    params = init_mlp((predictor_in_dim(2, 4), 8, 2), np.random.default_rng(5))
    sched = make_schedule(5, 0.02, 0.2)
    traj = rollout(params, CFG, sched, rng_for(10, "roll"))
    for step in traj.steps:
        expected, _, _ = env_step(step.state, step.chain.a0, CFG)
        assert np.array_equal(step.next_state, expected)
    for prev, nxt in zip(traj.steps, traj.steps[1:]):
        assert np.array_equal(prev.next_state, nxt.state)


def _traj_at_offsets(xs, y_top):
    steps = []
    y = 0.5
    states = [np.array([x, y + i, 5.0, 9.0]) for i, x in enumerate(xs)]
    for i in range(len(states) - 1):
        chain = DenoiseChain(states=[states[i + 1][:2] - states[i][:2]],
                             s=states[i], log_prob=0.0)
        steps.append(TrajStep(states[i], chain, states[i + 1]))
    t = Trajectory(steps=steps)
    t.steps[-1].next_state[1] = y_top
    return t


def test_classifier_straight_offset_paths():
    left = _traj_at_offsets([4.7] * 8, 8.0)
    right = _traj_at_offsets([5.3] * 8, 8.0)
    assert classify_mode(left, CFG) == LEFT
    assert classify_mode(right, CFG) == RIGHT


def test_classifier_undefined_before_first_row():
    stub = _traj_at_offsets([4.0, 4.0, 4.0], 2.0)
    stub.steps = stub.steps[:1]  # never climbs to the obstacle rows
    assert classify_mode(stub, CFG) == UNDEFINED


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(min_value=0.2, max_value=9.8), min_size=2, max_size=30),
       st.floats(min_value=0.0, max_value=9.5))
def test_classifier_mirror_antisymmetry(xs, y_top):
    traj = _traj_at_offsets(xs, y_top)
    mirrored = _traj_at_offsets([2 * CFG.center_x - x for x in xs], y_top)
    got, got_m = classify_mode(traj, CFG), classify_mode(mirrored, CFG)
    off = np.mean([x - CFG.center_x for x in xs])
    if abs(off) < 1e-9:  # boundary ties are not mirror-stable in float
        return
    assert {got, got_m} in ({LEFT, RIGHT}, {UNDEFINED})


def test_success_semantics():
    t = Trajectory(steps=[], reached=True, collision=False)
    assert is_success(t)
    assert not is_success(Trajectory(steps=[], reached=True, collision=True))
    assert not is_success(Trajectory(steps=[], reached=False, timeout=True))


def test_config_validation_rejects_bad_layouts():
    with pytest.raises(ConfigError):
        EnvConfig(obstacles=((5.0, 9.9, 0.5),)).validate()  # pokes out of bounds
    with pytest.raises(ConfigError):
        EnvConfig(obstacles=((5.0, 0.6, 0.5),)).validate()  # swallows the start
    with pytest.raises(ConfigError):
        EnvConfig(max_steps=0).validate()


def test_trajectory_log_round_trip(tmp_path):
    params = init_mlp((predictor_in_dim(2, 4), 8, 2), np.random.default_rng(6))
    sched = make_schedule(4, 0.02, 0.2)
    trajs = {f"t{i}": rollout(params, CFG, sched, rng_for(20, "log", i))
             for i in range(3)}
    path = tmp_path / "trajs.json"
    save_trajectories(path, trajs)
    loaded = load_trajectories(path)
    assert loaded.keys() == trajs.keys()
    for tid in trajs:
        a, b = trajs[tid], loaded[tid]
        assert (a.reached, a.collision, a.timeout, a.mode) == \
               (b.reached, b.collision, b.timeout, b.mode)
        assert len(a) == len(b)
        for sa, sb in zip(a.steps, b.steps):
            assert np.array_equal(sa.state, sb.state)
            assert np.array_equal(sa.next_state, sb.next_state)
            assert sa.chain.log_prob == sb.chain.log_prob
            assert all(np.array_equal(x, y)
                       for x, y in zip(sa.chain.states, sb.chain.states))


def test_trajectory_log_rejects_unknown_format(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "other", "version": 1}')
    with pytest.raises(ConfigError):
        load_trajectories(path)
