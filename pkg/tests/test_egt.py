"""Policies, fitness estimation, the replicator step, and the training loop."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evomapf.automaton import SUM, RewardParams, reach_avoid_machine
from evomapf.egt import (
    EpisodeBatch,
    FitnessTable,
    TabularPolicy,
    TrainConfig,
    estimate_fitness,
    expected_return,
    load_policy,
    mix_with_uniform,
    replicator_update,
    sample_batch,
    save_policy,
    train,
)
from evomapf.gridworld import (
    Action,
    AgentTrajectory,
    Cell,
    ConfigError,
    EnvConfig,
    EpisodeRollout,
    GridEnv,
    StepEvent,
    parse_map,
    run_episode,
)


STRIP = parse_map("....G\n")


def single_action_policy(grid, action: Action) -> TabularPolicy:
    policy = TabularPolicy.uniform(grid)
    probs = np.zeros_like(policy.probs)
    probs[:, :, action] = 1.0
    return TabularPolicy(policy.width, policy.height, probs, policy.cells)


def fitness_with(grid, observations) -> FitnessTable:
    """Fitness table holding exactly the given {(cell, action): value} scores."""
    table = FitnessTable.zeros(grid)
    for (cell, action), value in observations.items():
        table.action_sums[cell.y, cell.x, action] = value
        table.action_counts[cell.y, cell.x, action] = 1
        table.state_sums[cell.y, cell.x] += value
        table.state_counts[cell.y, cell.x] += 1
    return table


# ---------------------------------------------------------------------------
# policies


def test_uniform_policy_rows_are_uniform():
    policy = TabularPolicy.uniform(STRIP)
    for cell in policy.cells:
        assert np.allclose(policy.action_probs(cell), 0.2)


def test_greedy_puts_all_mass_on_the_argmax():
    policy = TabularPolicy.uniform(STRIP)
    probs = policy.probs.copy()
    probs[0, 1] = [0.1, 0.1, 0.1, 0.6, 0.1]
    greedy = TabularPolicy(policy.width, policy.height, probs, policy.cells).greedy()
    assert list(greedy.action_probs(Cell(1, 0))) == [0.0, 0.0, 0.0, 1.0, 0.0]
    # Ties resolve to the first action index.
    assert list(greedy.action_probs(Cell(0, 0))) == [1.0, 0.0, 0.0, 0.0, 0.0]


def test_sample_action_is_seed_deterministic():
    policy = TabularPolicy.uniform(STRIP)
    a = [policy.sample_action(Cell(0, 0), np.random.default_rng(4)) for _ in range(5)]
    b = [policy.sample_action(Cell(0, 0), np.random.default_rng(4)) for _ in range(5)]
    assert a == b


def test_copy_is_independent():
    policy = TabularPolicy.uniform(STRIP)
    clone = policy.copy()
    clone.probs[0, 0, 0] = 0.9
    assert policy.probs[0, 0, 0] == 0.2


# ---------------------------------------------------------------------------
# fitness estimation


def _batch_of(trajectories_and_returns) -> EpisodeBatch:
    rollouts = []
    returns = []
    for traj, ret in trajectories_and_returns:
        rollouts.append(EpisodeRollout(trajectories=[traj], steps=len(traj.actions)))
        returns.append([ret])
    return EpisodeBatch(rollouts=rollouts, weight_sequences=[[[]]] * len(returns), returns=returns)


def test_estimate_fitness_scores_pairs_by_trajectory_return():
    traj = AgentTrajectory(
        cells=[Cell(0, 0), Cell(1, 0)],
        actions=[Action.RIGHT],
        events=[StepEvent.MOVED],
    )
    table = estimate_fitness(_batch_of([(traj, 7.0)]), STRIP)
    assert table.action_fitness(Cell(0, 0), Action.RIGHT) == 7.0
    assert table.state_fitness(Cell(0, 0)) == 7.0
    assert table.state_fitness(Cell(1, 0)) == 7.0


def test_estimate_fitness_averages_across_trajectories():
    mk = lambda: AgentTrajectory(
        cells=[Cell(0, 0), Cell(1, 0)], actions=[Action.RIGHT], events=[StepEvent.MOVED]
    )
    table = estimate_fitness(_batch_of([(mk(), 4.0), (mk(), 10.0)]), STRIP)
    assert table.action_fitness(Cell(0, 0), Action.RIGHT) == 7.0


def test_estimate_fitness_counts_each_pair_once_per_trajectory():
    loop = AgentTrajectory(
        cells=[Cell(0, 0), Cell(1, 0), Cell(0, 0), Cell(1, 0)],
        actions=[Action.RIGHT, Action.LEFT, Action.RIGHT],
        events=[StepEvent.MOVED] * 3,
    )
    table = estimate_fitness(_batch_of([(loop, 6.0)]), STRIP)
    assert table.action_counts[0, 0, Action.RIGHT] == 1
    assert table.action_fitness(Cell(0, 0), Action.RIGHT) == 6.0


def test_unobserved_pairs_have_no_fitness():
    table = FitnessTable.zeros(STRIP)
    with pytest.raises(ValueError, match="no observation of action"):
        table.action_fitness(Cell(0, 0), Action.UP)
    with pytest.raises(ValueError, match="no observation of state"):
        table.state_fitness(Cell(0, 0))


# ---------------------------------------------------------------------------
# replicator update


def test_replicator_worked_example():
    policy = TabularPolicy.uniform(STRIP)
    probs = policy.probs.copy()
    probs[0, 0] = [0.5, 0.5, 0.0, 0.0, 0.0]
    policy = TabularPolicy(policy.width, policy.height, probs, policy.cells)
    table = fitness_with(STRIP, {(Cell(0, 0), Action.UP): 3.0, (Cell(0, 0), Action.DOWN): 1.0})

    full = replicator_update(policy, table, alpha=1.0)
    assert np.allclose(full.action_probs(Cell(0, 0)), [0.75, 0.25, 0, 0, 0])

    half = replicator_update(policy, table, alpha=0.5)
    assert np.allclose(half.action_probs(Cell(0, 0)), [0.625, 0.375, 0, 0, 0])


def test_replicator_alpha_zero_is_the_identity():
    policy = TabularPolicy.uniform(STRIP)
    table = fitness_with(STRIP, {(Cell(0, 0), Action.UP): 3.0, (Cell(0, 0), Action.DOWN): 1.0})
    updated = replicator_update(policy, table, alpha=0.0)
    assert np.array_equal(updated.probs, policy.probs)


def test_replicator_uniform_fitness_is_a_fixed_point():
    policy = TabularPolicy.uniform(STRIP)
    table = fitness_with(
        STRIP, {(Cell(x, 0), a): 2.5 for x in range(4) for a in Action}
    )
    updated = replicator_update(policy, table, alpha=1.0)
    assert np.max(np.abs(updated.probs - policy.probs)) < 1e-12


def test_replicator_leaves_unobserved_rows_alone():
    policy = TabularPolicy.uniform(STRIP)
    table = fitness_with(STRIP, {(Cell(0, 0), Action.RIGHT): 9.0})
    updated = replicator_update(policy, table, alpha=1.0)
    assert np.array_equal(updated.probs[0, 1], policy.probs[0, 1])
    # A single observed action keeps exactly its prior mass.
    assert updated.probs[0, 0, Action.RIGHT] == pytest.approx(0.2)


def test_replicator_rejects_alpha_outside_unit_interval():
    policy = TabularPolicy.uniform(STRIP)
    table = FitnessTable.zeros(STRIP)
    with pytest.raises(ConfigError, match="alpha"):
        replicator_update(policy, table, alpha=1.5)


@given(
    values=st.lists(
        st.floats(min_value=-100, max_value=100, allow_nan=False), min_size=5, max_size=5
    ),
    alpha=st.floats(min_value=0.01, max_value=1.0),
)
@settings(max_examples=100)
def test_replicator_rows_stay_on_the_simplex(values, alpha):
    policy = TabularPolicy.uniform(STRIP)
    table = fitness_with(STRIP, {(Cell(0, 0), a): v for a, v in zip(Action, values)})
    updated = replicator_update(policy, table, alpha=alpha)
    row = updated.probs[0, 0]
    assert abs(row.sum() - 1.0) < 1e-9
    assert (row >= -1e-12).all()


@given(
    values=st.lists(
        st.floats(min_value=-100, max_value=100, allow_nan=False), min_size=5, max_size=5
    ),
    alpha=st.floats(min_value=0.01, max_value=1.0),
)
@settings(max_examples=100)
def test_replicator_preserves_fitness_order_from_a_uniform_prior(values, alpha):
    policy = TabularPolicy.uniform(STRIP)
    table = fitness_with(STRIP, {(Cell(0, 0), a): v for a, v in zip(Action, values)})
    row = replicator_update(policy, table, alpha=alpha).probs[0, 0]
    for i in range(5):
        for j in range(5):
            if values[i] >= values[j]:
                assert row[i] >= row[j] - 1e-12


# ---------------------------------------------------------------------------
# uniform mixing


def test_mix_with_uniform_endpoints():
    policy = single_action_policy(STRIP, Action.UP)
    assert np.allclose(mix_with_uniform(policy, 1.0).probs, 0.2)
    assert np.array_equal(mix_with_uniform(policy, 0.0).probs, policy.probs)


def test_mix_with_uniform_halfway():
    policy = single_action_policy(STRIP, Action.UP)
    mixed = mix_with_uniform(policy, 0.5)
    assert np.allclose(mixed.probs[0, 0], [0.6, 0.1, 0.1, 0.1, 0.1])


def test_mix_with_uniform_rejects_bad_weight():
    with pytest.raises(ConfigError, match="mixing weight"):
        mix_with_uniform(TabularPolicy.uniform(STRIP), 1.2)


# ---------------------------------------------------------------------------
# batches


def _strip_env(num_agents=1, horizon=6):
    return GridEnv(EnvConfig(grid=STRIP, num_agents=num_agents, horizon=horizon))


STRIP_REWARDS = RewardParams(step_penalty=1.0, goal_reward=60.0, collision_penalty=60.0, horizon=6)


def test_sample_batch_of_one_equals_a_single_episode():
    env = _strip_env()
    machine = reach_avoid_machine(STRIP_REWARDS)
    policy = TabularPolicy.uniform(STRIP)
    batch = sample_batch(policy, env, machine, SUM, 1, np.random.default_rng(9))
    seed = int(np.random.default_rng(9).integers(0, 2**63 - 1, size=1)[0])
    rollout = run_episode(env, policy, np.random.default_rng(seed))
    assert batch.rollouts[0].trajectories[0].cells == rollout.trajectories[0].cells


def test_sample_batch_is_seed_deterministic():
    env = _strip_env()
    machine = reach_avoid_machine(STRIP_REWARDS)
    policy = TabularPolicy.uniform(STRIP)
    a = sample_batch(policy, env, machine, SUM, 16, np.random.default_rng(3))
    b = sample_batch(policy, env, machine, SUM, 16, np.random.default_rng(3))
    assert a.returns == b.returns


def test_batch_returns_follow_the_reward_machine():
    env = _strip_env()
    machine = reach_avoid_machine(STRIP_REWARDS)
    policy = TabularPolicy.uniform(STRIP)
    batch = sample_batch(policy, env, machine, SUM, 8, np.random.default_rng(1))
    for rollout, weights, returns in zip(batch.rollouts, batch.weight_sequences, batch.returns):
        for traj, w, r in zip(rollout.trajectories, weights, returns):
            assert w == machine.weights(traj.observations())
            assert r == sum(w)
    assert batch.expected_return == pytest.approx(
        np.mean([sum(r) for r in batch.returns])
    )


def test_batch_size_must_be_positive():
    env = _strip_env()
    machine = reach_avoid_machine(STRIP_REWARDS)
    with pytest.raises(ConfigError, match="batch_size"):
        sample_batch(TabularPolicy.uniform(STRIP), env, machine, SUM, 0, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# expected return


def test_stay_forever_pays_a_step_penalty_per_timestep():
    policy = single_action_policy(STRIP, Action.STAY)
    value = expected_return(
        policy, EnvConfig(grid=STRIP, horizon=6), STRIP_REWARDS, SUM, 4, np.random.default_rng(0)
    )
    assert value == -6.0


def test_starting_on_the_goal_pays_the_goal_reward():
    grid = parse_map("G\n")
    rewards = RewardParams(step_penalty=1.0, goal_reward=40.0, collision_penalty=40.0, horizon=4)
    value = expected_return(
        TabularPolicy.uniform(grid), EnvConfig(grid=grid), rewards, SUM, 3, np.random.default_rng(0)
    )
    assert value == 40.0


def test_two_agents_on_goals_pay_twice_the_goal_reward():
    grid = parse_map("GG\n")
    rewards = RewardParams(step_penalty=1.0, goal_reward=40.0, collision_penalty=40.0, horizon=8)
    value = expected_return(
        TabularPolicy.uniform(grid),
        EnvConfig(grid=grid, num_agents=2),
        rewards,
        SUM,
        3,
        np.random.default_rng(0),
    )
    assert value == 80.0


# ---------------------------------------------------------------------------
# training loop


def test_train_config_validation():
    env = EnvConfig(grid=STRIP, horizon=6)
    with pytest.raises(ConfigError, match="alpha"):
        TrainConfig(env=env, alpha=0.0)
    with pytest.raises(ConfigError, match="nu"):
        TrainConfig(env=env, nu=0.0)
    with pytest.raises(ConfigError, match="patience"):
        TrainConfig(env=env, patience=0)
    with pytest.raises(ConfigError, match="delta"):
        TrainConfig(env=env, delta=-1.0)


def test_train_config_defaults_resolve_from_the_environment():
    config = TrainConfig(env=EnvConfig(grid=STRIP, horizon=6))
    rewards = config.resolved_rewards()
    assert rewards.goal_reward == rewards.collision_penalty == 60.0
    assert config.resolved_delta() == pytest.approx(0.01 * 1 * 60.0)
    assert TrainConfig(env=EnvConfig(grid=STRIP, horizon=6), delta=2.0).resolved_delta() == 2.0


def test_train_stops_quickly_when_everyone_starts_on_a_goal():
    grid = parse_map("G\n")
    config = TrainConfig(env=EnvConfig(grid=grid), batch_size=4, patience=3)
    report = train(config, np.random.default_rng(0))
    assert report.termination == "converged"
    assert report.iterations == 1 + config.patience
    assert all(r == report.batch_returns[0] for r in report.batch_returns)
    # Nothing was ever observed, so the policy is still uniform.
    assert np.allclose(report.policy.probs, 0.2)


def test_train_report_is_seed_deterministic():
    config = TrainConfig(
        env=EnvConfig(grid=STRIP, horizon=6),
        batch_size=8,
        max_iterations=5,
        patience=10,
    )
    a = train(config, np.random.default_rng(42))
    b = train(config, np.random.default_rng(42))
    assert a.batch_returns == b.batch_returns
    assert a.iterations == b.iterations == 5
    assert a.termination == b.termination == "iteration_cap"
    assert a.final_mix_weight == b.final_mix_weight
    assert np.array_equal(a.policy.probs, b.policy.probs)


def test_train_learns_to_walk_the_strip():
    """With the exploration floor nearly off, training sharpens onto Right.

    Early stopping is disabled (patience past the cap) so the uniform
    mixture has fully decayed by the time we inspect the policy.
    """
    config = TrainConfig(
        env=EnvConfig(grid=STRIP, horizon=6),
        batch_size=32,
        epsilon=0.001,
        alpha=0.5,
        patience=101,
        max_iterations=100,
    )
    for seed in (0, 1, 2):
        report = train(config, np.random.default_rng(seed))
        w = report.final_mix_weight
        # Remove the residual uniform mixture before inspecting the policy.
        sharpened = (report.policy.probs - w / 5.0) / (1.0 - w)
        for x in range(4):
            row = sharpened[0, x]
            assert int(np.argmax(row)) == Action.RIGHT, (seed, x)
            assert row[Action.RIGHT] > 0.7, (seed, x, row)
        # Batch returns climb from the uniform policy's level to near optimal.
        assert np.mean(report.batch_returns[:3]) < 0.0
        assert np.mean(report.batch_returns[-10:]) > 40.0


# ---------------------------------------------------------------------------
# serialization


def test_policy_round_trips_through_a_file(tmp_path):
    policy = mix_with_uniform(single_action_policy(STRIP, Action.RIGHT), 0.3)
    path = str(tmp_path / "policy.txt")
    save_policy(policy, path, {"note": "round-trip"})
    loaded, meta = load_policy(path)
    assert np.array_equal(loaded.probs, policy.probs)
    assert (loaded.width, loaded.height) == (policy.width, policy.height)
    assert meta["note"] == "round-trip"
    assert meta["width"] == "5" and meta["height"] == "1"


def test_load_policy_rejects_other_files(tmp_path):
    path = tmp_path / "nope.txt"
    path.write_text("just some text\n")
    with pytest.raises(ConfigError, match="not a policy file"):
        load_policy(str(path))


def test_load_policy_rejects_short_rows(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("# evomapf policy v1\n# width = 2\n# height = 1\n0,0 0.5 0.5\n")
    with pytest.raises(ConfigError, match="has 2 probabilities, expected 5"):
        load_policy(str(path))


def test_load_policy_rejects_out_of_range_cells(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("# evomapf policy v1\n# width = 1\n# height = 1\n3,0 0.2 0.2 0.2 0.2 0.2\n")
    with pytest.raises(ConfigError, match="outside the declared 1x1 grid"):
        load_policy(str(path))


def test_load_policy_requires_dimensions(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("# evomapf policy v1\n0,0 0.2 0.2 0.2 0.2 0.2\n")
    with pytest.raises(ConfigError, match="policy header lacks"):
        load_policy(str(path))
