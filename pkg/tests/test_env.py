import math

import numpy as np
import pytest

from dpgo.env import Action, AlreadyProcessedEdge, Observation, PoseGraphEnv, RewardConfig
from dpgo.geometry import Pose2, compose, se2_exp
from dpgo.graph import EdgeMeasurement, EdgeOrigin, GraphError, PoseGraph
from dpgo.synth import GenSpec, generate


def two_pose_graph(meas_x=2.0):
    """Truth: v1 one meter ahead of v0. One odometry edge measured at meas_x."""
    g = PoseGraph()
    g.add_vertex(0, timestep=0, estimate=Pose2(0, 0, 0), truth=Pose2(0, 0, 0))
    g.add_vertex(1, timestep=1, estimate=Pose2(1, 0, 0), truth=Pose2(1, 0, 0))
    g.add_edge(EdgeMeasurement(0, 1, Pose2(meas_x, 0, 0), np.eye(3), EdgeOrigin.ODOMETRY))
    return g


def first_unprocessed_actions(obs_list, delta=None):
    actions = []
    for obs in obs_list:
        if obs.mask.any():
            actions.append(Action(int(np.flatnonzero(obs.mask)[0]), np.zeros(3) if delta is None else delta))
        else:
            actions.append(None)
    return actions


def test_reset_single_robot_covers_graph():
    g = generate(GenSpec(n_robots=2, poses_per_robot=15, seed=0))
    env = PoseGraphEnv(g, 1)
    obs = env.reset()
    assert len(obs) == 1
    assert obs[0].mask.sum() == g.num_edges


def test_reset_three_robots_edge_counts_sum():
    g = generate(GenSpec(n_robots=3, poses_per_robot=20, seed=1))
    env = PoseGraphEnv(g, 3)
    obs = env.reset()
    assert sum(o.mask.sum() for o in obs) == g.num_edges
    assert env.horizon == max(o.mask.shape[0] for o in obs)


def test_zero_action_gives_zero_prebonus_reward():
    env = PoseGraphEnv(two_pose_graph(), 1, reward=RewardConfig(bonus_scale=0.0))
    obs = env.reset()
    _, rewards, done, _ = env.step(first_unprocessed_actions(obs))
    assert done
    assert rewards[0] == 0.0


def test_reward_matches_tanh_of_normalized_gain():
    # L goes 1.0 -> 0.5; reward is tanh(0.5 / (1 + eps)) before the bonus
    env = PoseGraphEnv(
        two_pose_graph(meas_x=2.0), 1, reward=RewardConfig(bonus_scale=0.0), delta_max_t=2.0
    )
    obs = env.reset()
    assert abs(env.local_errors()[0] - 1.0) < 1e-12
    delta = np.array([math.sqrt(0.5) - 1.0, 0.0, 0.0])
    _, rewards, _, info = env.step([Action(0, delta)])
    expect = math.tanh(0.5 / (1.0 + 1e-8))
    assert abs(rewards[0] - expect) < 1e-9
    assert abs(expect - 0.4621171572600098) < 1e-9


def test_terminal_bonus_value():
    env = PoseGraphEnv(two_pose_graph(meas_x=2.0), 1, delta_max_t=2.0)
    env.reset()
    _, rewards, done, info = env.step([Action(0, np.array([math.sqrt(0.5) - 1.0, 0.0, 0.0]))])
    assert done
    want_bonus = math.log(1.0 / (0.5 + 1e-8))
    assert abs(info["terminal_bonus"] - want_bonus) < 1e-9
    assert abs(rewards[0] - (math.tanh(0.5 / 1.00000001) + want_bonus)) < 1e-9


def test_exact_restore_gives_positive_reward():
    env = PoseGraphEnv(two_pose_graph(meas_x=2.0), 1, delta_max_t=2.0, reward=RewardConfig(bonus_scale=0.0))
    env.reset()
    # measurement composed with delta must equal the truth relative (1, 0, 0)
    _, rewards, _, _ = env.step([Action(0, np.array([-1.0, 0.0, 0.0]))])
    assert rewards[0] > 0.0
    assert env.local_errors()[0] < 1e-20


def test_delta_clamping():
    env = PoseGraphEnv(two_pose_graph(), 1)
    d = env.clamp_delta(np.array([10.0, 10.0, 3.0]))
    assert abs(math.hypot(d[0], d[1]) - env.delta_max_t) < 1e-12
    assert d[2] == env.delta_max_theta
    # direction is preserved by the norm clamp
    assert abs(d[0] - d[1]) < 1e-12


def test_measurement_update_is_right_composition():
    env = PoseGraphEnv(two_pose_graph(meas_x=2.0), 1, reward=RewardConfig(bonus_scale=0.0))
    env.reset()
    delta = np.array([0.1, -0.05, 0.02])
    env.step([Action(0, delta)])
    want = compose(Pose2(2.0, 0.0, 0.0), se2_exp(delta))
    assert np.abs(env.meas[0][0] - want.as_vector()).max() < 1e-12


def test_already_processed_edge_raises():
    g = generate(GenSpec(n_robots=1, poses_per_robot=6, seed=2))
    env = PoseGraphEnv(g, 1)
    env.reset()
    env.step([Action(0, np.zeros(3))])
    with pytest.raises(AlreadyProcessedEdge):
        env.step([Action(0, np.zeros(3))])


def test_noop_rules():
    g = two_pose_graph()
    env = PoseGraphEnv(g, 1)
    env.reset()
    with pytest.raises(ValueError):
        env.step([None])  # robot still has work; None not allowed


def test_episode_lengths_equal_local_edge_counts():
    rng = np.random.default_rng(5)
    for seed in range(4):
        g = generate(GenSpec(n_robots=3, poses_per_robot=12, seed=seed))
        env = PoseGraphEnv(g, 3)
        obs = env.reset()
        counts = [int(o.mask.sum()) for o in obs]
        acted = [0, 0, 0]
        done = False
        steps = 0
        while not done:
            actions = first_unprocessed_actions(obs, delta=rng.normal(0, 0.05, 3))
            for b, a in enumerate(actions):
                if a is not None:
                    acted[b] += 1
            obs, _, done, _ = env.step(actions)
            steps += 1
        assert acted == counts
        assert steps == env.horizon == max(counts)


def test_telescoping_identity():
    g = generate(GenSpec(n_robots=2, poses_per_robot=15, seed=3))
    env = PoseGraphEnv(g, 2, record_trace=True)
    obs = env.reset()
    l0 = env.local_errors()
    rng = np.random.default_rng(0)
    done = False
    while not done:
        obs, _, done, _ = env.step(first_unprocessed_actions(obs, delta=rng.normal(0, 0.1, 3)))
    lt = env.local_errors()
    prods = np.ones(2)
    for row in env.trace:
        if "robot" in row:
            prods[row["robot"]] *= 1.0 - row["raw_gain"]
    for b in range(2):
        want = lt[b] / l0[b]
        assert abs(prods[b] - want) <= 1e-6 * max(1.0, abs(want))


def test_environment_transition_deterministic():
    g = generate(GenSpec(n_robots=2, poses_per_robot=10, seed=4))
    envs = [PoseGraphEnv(g, 2) for _ in range(2)]
    rng = np.random.default_rng(9)
    deltas = rng.normal(0, 0.1, size=(50, 3))
    results = []
    for env in envs:
        obs = env.reset()
        rewards_log = []
        done, k = False, 0
        while not done:
            obs, r, done, _ = env.step(first_unprocessed_actions(obs, delta=deltas[k]))
            rewards_log.append(r.copy())
            k += 1
        results.append((np.concatenate([m for m in env.meas]), np.array(rewards_log)))
    assert np.array_equal(results[0][0], results[1][0])
    assert np.array_equal(results[0][1], results[1][1])


def test_reward_free_mode_without_truth():
    g = generate(GenSpec(n_robots=2, poses_per_robot=10, seed=6))
    for v in g.vertices.values():
        v.truth = None
    env = PoseGraphEnv(g, 2)
    obs = env.reset()
    assert env.reward_free
    _, rewards, _, info = env.step(first_unprocessed_actions(obs))
    assert info["reward_free"]
    assert np.all(rewards == 0.0)


def test_current_graph_carries_corrections():
    env = PoseGraphEnv(two_pose_graph(meas_x=2.0), 1, reward=RewardConfig(bonus_scale=0.0))
    env.reset()
    env.step([Action(0, np.array([0.1, 0.0, 0.0]))])
    g = env.current_graph()
    assert abs(g.edges[0].rel.x - 2.1) < 1e-12


def test_selector_capacity_enforced():
    g = generate(GenSpec(n_robots=1, poses_per_robot=10, seed=7))
    with pytest.raises(GraphError):
        PoseGraphEnv(g, 1, selector_capacity=3)
