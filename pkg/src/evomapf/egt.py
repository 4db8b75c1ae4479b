"""Shared tabular policy trained with replicator dynamics over batch fitness estimates.

All agents sample actions from one policy table indexed by their own
cell.  Each training iteration rolls a batch of episodes, scores every
visited (cell, action) pair by the mean return of the trajectories that
contain it, pulls the policy toward the replicator-weighted distribution
on the observed actions, and blends in a decaying amount of the uniform
policy for exploration.  Training stops when the batch return stops
improving or the iteration cap is hit.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .automaton import (
    RewardParams,
    Valuation,
    RewardMachine,
    discounted_sum,
    reach_avoid_machine,
    valuate,
)
from .gridworld import (
    Action,
    Cell,
    ConfigError,
    EnvConfig,
    EpisodeRollout,
    GridEnv,
    GridMap,
    run_episode,
)

NUM_ACTIONS = len(Action)


class TabularPolicy:
    """Probability table over actions, one row per cell the policy is defined on."""

    def __init__(self, width: int, height: int, probs: np.ndarray, cells: list[Cell]):
        if probs.shape != (height, width, NUM_ACTIONS):
            raise ValueError(f"policy table has shape {probs.shape}, expected "
                             f"({height}, {width}, {NUM_ACTIONS})")
        self.width = width
        self.height = height
        self.probs = probs
        self.cells = list(cells)
        self._cum: np.ndarray | None = None

    @classmethod
    def uniform(cls, grid: GridMap) -> "TabularPolicy":
        probs = np.full((grid.height, grid.width, NUM_ACTIONS), 1.0 / NUM_ACTIONS)
        return cls(grid.width, grid.height, probs, grid.free_cells())

    def _like(self, probs: np.ndarray) -> "TabularPolicy":
        return TabularPolicy(self.width, self.height, probs, self.cells)

    def action_probs(self, cell: Cell) -> np.ndarray:
        return self.probs[cell.y, cell.x]

    def sample_action(self, cell: Cell, rng: np.random.Generator) -> Action:
        if self._cum is None:
            self._cum = np.cumsum(self.probs, axis=2)
        row = self._cum[cell.y, cell.x]
        idx = int(np.searchsorted(row, rng.random(), side="right"))
        return Action(min(idx, NUM_ACTIONS - 1))

    def greedy(self) -> "TabularPolicy":
        """Deterministic policy: all mass on each row's argmax (first wins ties)."""
        best = np.argmax(self.probs, axis=2)
        probs = np.zeros_like(self.probs)
        h, w = self.height, self.width
        probs[np.arange(h)[:, None], np.arange(w)[None, :], best] = 1.0
        return self._like(probs)

    def copy(self) -> "TabularPolicy":
        return self._like(self.probs.copy())


@dataclass
class FitnessTable:
    """Batch fitness aggregates: mean trajectory return per visited cell and pair."""

    action_sums: np.ndarray  # (H, W, A)
    action_counts: np.ndarray  # (H, W, A) ints
    state_sums: np.ndarray  # (H, W)
    state_counts: np.ndarray  # (H, W) ints

    @classmethod
    def zeros(cls, grid: GridMap) -> "FitnessTable":
        shape = (grid.height, grid.width)
        return cls(
            action_sums=np.zeros(shape + (NUM_ACTIONS,)),
            action_counts=np.zeros(shape + (NUM_ACTIONS,), dtype=np.int64),
            state_sums=np.zeros(shape),
            state_counts=np.zeros(shape, dtype=np.int64),
        )

    def action_fitness(self, cell: Cell, action: Action) -> float:
        count = self.action_counts[cell.y, cell.x, action]
        if count == 0:
            raise ValueError(f"no observation of action {action.name} at {cell}")
        return float(self.action_sums[cell.y, cell.x, action] / count)

    def state_fitness(self, cell: Cell) -> float:
        count = self.state_counts[cell.y, cell.x]
        if count == 0:
            raise ValueError(f"no observation of state {cell}")
        return float(self.state_sums[cell.y, cell.x] / count)


@dataclass
class EpisodeBatch:
    """A batch of rollouts plus per-agent weight sequences and returns."""

    rollouts: list[EpisodeRollout]
    weight_sequences: list[list[list[float]]]  # [episode][agent][t]
    returns: list[list[float]]  # [episode][agent]

    @property
    def expected_return(self) -> float:
        """Mean over episodes of the summed agent returns."""
        return float(np.mean([sum(r) for r in self.returns]))


def sample_batch(
    policy: TabularPolicy,
    env: GridEnv,
    machine: RewardMachine,
    valuation: Valuation,
    batch_size: int,
    rng: np.random.Generator,
) -> EpisodeBatch:
    """Roll batch_size episodes, each on its own generator derived from rng."""
    if batch_size < 1:
        raise ConfigError("batch_size must be at least 1")
    rollouts = []
    weight_sequences = []
    returns = []
    seeds = rng.integers(0, 2**63 - 1, size=batch_size)
    for seed in seeds:
        episode_rng = np.random.default_rng(int(seed))
        rollout = run_episode(env, policy, episode_rng)
        weights = [machine.weights(t.observations()) for t in rollout.trajectories]
        rollouts.append(rollout)
        weight_sequences.append(weights)
        returns.append([valuate(w, valuation) for w in weights])
    return EpisodeBatch(rollouts, weight_sequences, returns)


def estimate_fitness(batch: EpisodeBatch, grid: GridMap) -> FitnessTable:
    """Score each visited cell and (cell, action) pair by mean trajectory return.

    A trajectory contributes its whole return once to every distinct pair
    it contains, regardless of how often the pair repeats within it.
    """
    table = FitnessTable.zeros(grid)
    for rollout, agent_returns in zip(batch.rollouts, batch.returns):
        for traj, ret in zip(rollout.trajectories, agent_returns):
            pairs = {(c, a) for c, a in zip(traj.cells, traj.actions)}
            cells = set(traj.cells)
            for cell, action in pairs:
                table.action_sums[cell.y, cell.x, action] += ret
                table.action_counts[cell.y, cell.x, action] += 1
            for cell in cells:
                table.state_sums[cell.y, cell.x] += ret
                table.state_counts[cell.y, cell.x] += 1
    return table


def replicator_update(
    policy: TabularPolicy, fitness: FitnessTable, alpha: float
) -> TabularPolicy:
    """One replicator step toward fitness-proportional mass on observed actions.

    Per cell with at least one observed action: shift the observed
    fitness values to be positive, weight the current probabilities by
    them, renormalise to the prior mass of the observed actions, and step
    with size alpha.  Unobserved actions keep their prior mass, so each
    row stays on the simplex.  alpha = 0 is the identity.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError("alpha must lie in [0, 1]")
    probs = policy.probs.copy()
    seen = np.argwhere(fitness.action_counts.sum(axis=2) > 0)
    for y, x in seen:
        counts = fitness.action_counts[y, x]
        mask = counts > 0
        f = fitness.action_sums[y, x, mask] / counts[mask]
        f = f - f.min() + 1.0
        prior = probs[y, x, mask]
        mass = prior.sum()
        if mass <= 0.0:
            continue
        weighted = prior * f
        target = weighted / weighted.sum() * mass
        probs[y, x, mask] = (1.0 - alpha) * prior + alpha * target
        probs[y, x] /= probs[y, x].sum()
    return policy._like(probs)


def mix_with_uniform(policy: TabularPolicy, weight: float) -> TabularPolicy:
    """Blend every row with the uniform distribution: w*uniform + (1-w)*row."""
    if not 0.0 <= weight <= 1.0:
        raise ConfigError("mixing weight must lie in [0, 1]")
    probs = weight / NUM_ACTIONS + (1.0 - weight) * policy.probs
    return policy._like(probs)


@dataclass(frozen=True)
class TrainConfig:
    env: EnvConfig
    rewards: RewardParams | None = None  # None: defaults derived from the horizon
    valuation: Valuation = discounted_sum(0.99)
    nu: float = 0.05  # uniform-mixing decay per iteration
    epsilon: float = 0.05  # uniform-mixing floor
    delta: float | None = None  # None: 1% of num_agents * goal_reward
    alpha: float = 0.5  # replicator step size
    batch_size: int = 64
    max_iterations: int = 500
    patience: int = 3  # non-improving iterations tolerated before stopping

    def __post_init__(self) -> None:
        if not 0.0 < self.nu <= 1.0:
            raise ConfigError("nu must lie in (0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha must lie in (0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.delta is not None and self.delta <= 0:
            raise ConfigError("delta must be positive")

    def resolved_rewards(self) -> RewardParams:
        if self.rewards is not None:
            return self.rewards
        return RewardParams.default_for(self.env.horizon)

    def resolved_delta(self) -> float:
        if self.delta is not None:
            return self.delta
        return 0.01 * self.env.num_agents * self.resolved_rewards().goal_reward


@dataclass
class TrainReport:
    policy: TabularPolicy
    batch_returns: list[float]  # one value per iteration
    iterations: int
    termination: str  # "converged" | "iteration_cap"
    wall_clock_seconds: float
    final_mix_weight: float
    config: TrainConfig


def train(config: TrainConfig, rng: np.random.Generator) -> TrainReport:
    """Replicator-dynamics training loop.

    Iterates batch sampling, fitness estimation, a replicator step, and
    decaying uniform mixing.  Stops once the batch return has failed to
    improve on its best value by at least delta for `patience`
    consecutive iterations, or at max_iterations.
    """
    started = time.perf_counter()
    env = GridEnv(config.env)
    machine = reach_avoid_machine(config.resolved_rewards())
    delta = config.resolved_delta()
    policy = TabularPolicy.uniform(config.env.grid)
    mix_weight = 1.0
    batch_returns: list[float] = []
    best = -np.inf
    strikes = 0
    termination = "iteration_cap"
    iterations = 0

    for _ in range(config.max_iterations):
        batch = sample_batch(policy, env, machine, config.valuation, config.batch_size, rng)
        eta = batch.expected_return
        batch_returns.append(eta)
        iterations += 1
        if eta - best >= delta:
            best = eta
            strikes = 0
        else:
            strikes += 1
            if strikes >= config.patience:
                termination = "converged"
                break
        fitness = estimate_fitness(batch, config.env.grid)
        policy = replicator_update(policy, fitness, config.alpha)
        mix_weight = max(config.epsilon, mix_weight - config.nu)
        policy = mix_with_uniform(policy, mix_weight)

    return TrainReport(
        policy=policy,
        batch_returns=batch_returns,
        iterations=iterations,
        termination=termination,
        wall_clock_seconds=time.perf_counter() - started,
        final_mix_weight=mix_weight,
        config=config,
    )


def expected_return(
    policy: TabularPolicy,
    env_config: EnvConfig,
    rewards: RewardParams,
    valuation: Valuation,
    episodes: int,
    rng: np.random.Generator,
) -> float:
    """Monte-Carlo estimate of the mean per-episode total return."""
    env = GridEnv(env_config)
    machine = reach_avoid_machine(rewards)
    batch = sample_batch(policy, env, machine, valuation, episodes, rng)
    return batch.expected_return


POLICY_MAGIC = "# evomapf policy v1"
_ACTION_COLUMNS = "p_up p_down p_left p_right p_stay"


def save_policy(policy: TabularPolicy, path: str, header: dict[str, str] | None = None) -> None:
    """Write the policy as one `x,y p_up p_down p_left p_right p_stay` line per cell."""
    lines = [POLICY_MAGIC]
    meta = dict(header or {})
    meta.setdefault("width", str(policy.width))
    meta.setdefault("height", str(policy.height))
    for key in sorted(meta):
        lines.append(f"# {key} = {meta[key]}")
    lines.append(f"# columns: x,y {_ACTION_COLUMNS}")
    for cell in sorted(policy.cells, key=lambda c: (c.y, c.x)):
        row = policy.action_probs(cell)
        lines.append(f"{cell.x},{cell.y} " + " ".join(repr(float(p)) for p in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_policy(path: str) -> tuple[TabularPolicy, dict[str, str]]:
    """Read a policy file back; returns the policy and its header metadata."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != POLICY_MAGIC:
        raise ConfigError(f"{path}: not a policy file (missing {POLICY_MAGIC!r} header)")
    meta: dict[str, str] = {}
    rows: list[tuple[Cell, list[float]]] = []
    for line in lines[1:]:
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                meta[key.strip()] = value.strip()
            continue
        coords, _, rest = line.partition(" ")
        x_text, _, y_text = coords.partition(",")
        values = [float(v) for v in rest.split()]
        if len(values) != NUM_ACTIONS:
            raise ConfigError(f"{path}: row {coords!r} has {len(values)} probabilities, expected {NUM_ACTIONS}")
        rows.append((Cell(int(x_text), int(y_text)), values))
    try:
        width = int(meta["width"])
        height = int(meta["height"])
    except KeyError as missing:
        raise ConfigError(f"{path}: policy header lacks {missing} entry") from None
    probs = np.full((height, width, NUM_ACTIONS), 1.0 / NUM_ACTIONS)
    for cell, values in rows:
        if not (0 <= cell.x < width and 0 <= cell.y < height):
            raise ConfigError(f"{path}: cell {cell} lies outside the declared {width}x{height} grid")
        probs[cell.y, cell.x] = values
    return TabularPolicy(width, height, probs, [cell for cell, _ in rows]), meta
