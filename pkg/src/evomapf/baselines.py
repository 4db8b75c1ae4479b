"""Classical baselines: A* planning plus tabular Q-learning and Monte-Carlo control.

The two learners share the reward shape and the single shared policy
table with the replicator trainer, so benchmark comparisons differ only
in the training rule.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .automaton import RewardParams, reach_avoid_machine, SEEKING
from .egt import NUM_ACTIONS, TabularPolicy
from .gridworld import (
    Action,
    AgentStatus,
    Cell,
    COLLISION_EVENTS,
    EnvConfig,
    GridEnv,
    GridMap,
    StepEvent,
)


def manhattan(a: Cell, b: Cell) -> int:
    return abs(a.x - b.x) + abs(a.y - b.y)


def astar(grid: GridMap, start: Cell) -> list[Cell] | None:
    """Shortest 4-connected path from start to the nearest goal, or None.

    The heuristic is the minimum Manhattan distance over all goals; ties
    in f are broken by the smaller (y, x) of the expanded cell, which
    makes the search fully deterministic.
    """
    if not grid.passable(start):
        return None
    goals = sorted(grid.goals)

    def h(cell: Cell) -> int:
        return min(manhattan(cell, g) for g in goals)

    open_heap: list[tuple[int, int, int]] = [(h(start), start.y, start.x)]
    g_score: dict[Cell, int] = {start: 0}
    came_from: dict[Cell, Cell] = {}
    closed: set[Cell] = set()
    while open_heap:
        _, y, x = heapq.heappop(open_heap)
        current = Cell(x, y)
        if current in closed:
            continue
        closed.add(current)
        if current in grid.goals:
            path = [current]
            while current in came_from:
                current = came_from[current]
                path.append(current)
            path.reverse()
            return path
        base = g_score[current]
        for dx, dy in ((0, -1), (0, 1), (-1, 0), (1, 0)):
            neighbor = Cell(x + dx, y + dy)
            if not grid.passable(neighbor) or neighbor in closed:
                continue
            tentative = base + 1
            if tentative < g_score.get(neighbor, np.inf):
                g_score[neighbor] = tentative
                came_from[neighbor] = current
                heapq.heappush(open_heap, (tentative + h(neighbor), neighbor.y, neighbor.x))
    return None


@dataclass(frozen=True)
class LearnerParams:
    """Shared hyperparameters for the tabular learners."""

    episodes: int = 2000
    learning_rate: float = 0.1  # Q-learning only
    gamma: float = 0.99
    epsilon: float = 0.2
    epsilon_decay: float = 0.995
    epsilon_min: float = 0.02
    mc_batch: int = 50  # Monte-Carlo: episodes per policy-improvement batch


def _greedy_policy_from_q(q: np.ndarray, grid: GridMap) -> TabularPolicy:
    probs = np.zeros_like(q)
    best = np.argmax(q, axis=2)
    h, w = q.shape[:2]
    probs[np.arange(h)[:, None], np.arange(w)[None, :], best] = 1.0
    return TabularPolicy(grid.width, grid.height, probs, grid.free_cells())


def _pick_epsilon_greedy(q_row: np.ndarray, epsilon: float, rng: np.random.Generator) -> Action:
    if rng.random() < epsilon:
        return Action(int(rng.integers(NUM_ACTIONS)))
    return Action(int(np.argmax(q_row)))


def _settle_initial(state, goals):
    """Despawn agents that start on a goal, mirroring run_episode."""
    settled = []
    for st in state:
        if st.active and st.cell in goals:
            settled.append(AgentStatus(st.cell, reached=True, active=False))
        else:
            settled.append(st)
    return tuple(settled)


def qlearning_table(
    env_config: EnvConfig,
    rewards: RewardParams,
    params: LearnerParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Tabular Q-learning on the shared table; returns the (H, W, A) Q-values.

    Every agent feeds transitions into one Q-table keyed by its own cell.
    Step rewards come from the reach-avoid machine, with the arrival
    bonus folded into the arriving transition, which is treated as
    terminal for bootstrapping.
    """
    env = GridEnv(env_config)
    grid = env_config.grid
    machine = reach_avoid_machine(rewards)
    penalty_plain = machine.step_reward(SEEKING, (False, False))[1]
    penalty_collision = machine.step_reward(SEEKING, (False, True))[1]
    arrival_bonus = machine.step_reward(SEEKING, (True, False))[1]
    q = np.zeros((grid.height, grid.width, NUM_ACTIONS))
    epsilon = params.epsilon
    lr = params.learning_rate
    gamma = params.gamma

    for _ in range(params.episodes):
        state = _settle_initial(env.reset(rng), grid.goals)
        for _ in range(env_config.horizon):
            if not any(st.active for st in state):
                break
            actions = [
                _pick_epsilon_greedy(q[st.cell.y, st.cell.x], epsilon, rng)
                if st.active
                else Action.STAY
                for st in state
            ]
            was = state
            state, events = env.step(state, actions, rng)
            for i, st in enumerate(was):
                if not st.active:
                    continue
                ev = events[i]
                reward = penalty_collision if ev in COLLISION_EVENTS else penalty_plain
                terminal = ev is StepEvent.REACHED_GOAL
                if terminal:
                    reward += arrival_bonus
                nxt = state[i].cell
                target = reward if terminal else reward + gamma * q[nxt.y, nxt.x].max()
                sy, sx = st.cell.y, st.cell.x
                q[sy, sx, actions[i]] += lr * (target - q[sy, sx, actions[i]])
        epsilon = max(params.epsilon_min, epsilon * params.epsilon_decay)
    return q


def qlearning_train(
    env_config: EnvConfig,
    rewards: RewardParams,
    params: LearnerParams,
    rng: np.random.Generator,
) -> TabularPolicy:
    """Greedy policy over the learned Q-table."""
    return _greedy_policy_from_q(qlearning_table(env_config, rewards, params, rng), env_config.grid)


def monte_carlo_table(
    env_config: EnvConfig,
    rewards: RewardParams,
    params: LearnerParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """First-visit Monte-Carlo control on the shared table; returns the (H, W, A) Q-values.

    Rolls episodes with an epsilon-greedy behavior policy, averages
    first-visit discounted returns-to-go per (cell, action) across the
    trajectories of every agent, and acts greedily on the running means.
    """
    env = GridEnv(env_config)
    grid = env_config.grid
    machine = reach_avoid_machine(rewards)
    penalty_plain = machine.step_reward(SEEKING, (False, False))[1]
    penalty_collision = machine.step_reward(SEEKING, (False, True))[1]
    arrival_bonus = machine.step_reward(SEEKING, (True, False))[1]
    sums = np.zeros((grid.height, grid.width, NUM_ACTIONS))
    counts = np.zeros((grid.height, grid.width, NUM_ACTIONS), dtype=np.int64)
    q = np.zeros_like(sums)
    epsilon = params.epsilon
    gamma = params.gamma

    done = 0
    while done < params.episodes:
        batch = min(params.mc_batch, params.episodes - done)
        for _ in range(batch):
            state = _settle_initial(env.reset(rng), grid.goals)
            steps: list[list[tuple[Cell, Action, float]]] = [[] for _ in state]
            for _ in range(env_config.horizon):
                if not any(st.active for st in state):
                    break
                actions = [
                    _pick_epsilon_greedy(q[st.cell.y, st.cell.x], epsilon, rng)
                    if st.active
                    else Action.STAY
                    for st in state
                ]
                was = state
                state, events = env.step(state, actions, rng)
                for i, st in enumerate(was):
                    if not st.active:
                        continue
                    ev = events[i]
                    reward = penalty_collision if ev in COLLISION_EVENTS else penalty_plain
                    if ev is StepEvent.REACHED_GOAL:
                        reward += arrival_bonus
                    steps[i].append((st.cell, actions[i], reward))
            for agent_steps in steps:
                ret = 0.0
                returns = [0.0] * len(agent_steps)
                for t in range(len(agent_steps) - 1, -1, -1):
                    ret = agent_steps[t][2] + gamma * ret
                    returns[t] = ret
                first_visit: dict[tuple[Cell, Action], int] = {}
                for t, (cell, action, _) in enumerate(agent_steps):
                    first_visit.setdefault((cell, action), t)
                for (cell, action), t in first_visit.items():
                    sums[cell.y, cell.x, action] += returns[t]
                    counts[cell.y, cell.x, action] += 1
            epsilon = max(params.epsilon_min, epsilon * params.epsilon_decay)
            done += 1
        nonzero = counts > 0
        q[nonzero] = sums[nonzero] / counts[nonzero]
    return q


def monte_carlo_train(
    env_config: EnvConfig,
    rewards: RewardParams,
    params: LearnerParams,
    rng: np.random.Generator,
) -> TabularPolicy:
    """Greedy policy over the Monte-Carlo value estimates."""
    return _greedy_policy_from_q(monte_carlo_table(env_config, rewards, params, rng), env_config.grid)
