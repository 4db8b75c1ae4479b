"""Multi-agent grid world with simultaneous moves and conflict-revert collision rules.

Maps are rectangular character grids ('.' free, '#' obstacle, 'G' goal,
'S' start candidate).  All agents move at once; moves into walls or
obstacles are blocked in place, and agents that end up sharing a cell or
swapping cells are reverted to where they stood.  An agent that enters a
goal cell despawns at the end of that step.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import NamedTuple

import numpy as np


class Cell(NamedTuple):
    x: int
    y: int


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    STAY = 4


# (dx, dy) per action; y grows downward, matching the row order of map text.
ACTION_DELTAS: dict[Action, tuple[int, int]] = {
    Action.UP: (0, -1),
    Action.DOWN: (0, 1),
    Action.LEFT: (-1, 0),
    Action.RIGHT: (1, 0),
    Action.STAY: (0, 0),
}

MOVE_ACTIONS: tuple[Action, ...] = (Action.UP, Action.DOWN, Action.LEFT, Action.RIGHT)

ACTION_NAMES: dict[Action, str] = {
    Action.UP: "up",
    Action.DOWN: "down",
    Action.LEFT: "left",
    Action.RIGHT: "right",
    Action.STAY: "stay",
}


class StepEvent(Enum):
    MOVED = "moved"
    BLOCKED_BY_OBSTACLE = "blocked_by_obstacle"
    VERTEX_CONFLICT = "vertex_conflict"
    SWAP_CONFLICT = "swap_conflict"
    REACHED_GOAL = "reached_goal"
    INACTIVE = "inactive"


# Events that read as a collision in the reward observation stream.
COLLISION_EVENTS = frozenset(
    {StepEvent.BLOCKED_BY_OBSTACLE, StepEvent.VERTEX_CONFLICT, StepEvent.SWAP_CONFLICT}
)

# Agent-agent conflicts only; this is what the benchmark counts as collisions.
CONFLICT_EVENTS = frozenset({StepEvent.VERTEX_CONFLICT, StepEvent.SWAP_CONFLICT})


class MapParseError(ValueError):
    """Raised for malformed map text."""


class ConfigError(ValueError):
    """Raised for invalid environment or run configuration."""


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    obstacles: frozenset[Cell]
    goals: frozenset[Cell]
    starts: frozenset[Cell]

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ConfigError("map must have positive width and height")
        for name in ("obstacles", "goals", "starts"):
            for cell in getattr(self, name):
                if not self.in_bounds(cell):
                    raise ConfigError(f"{name} cell {cell} lies outside the {self.width}x{self.height} grid")
        if not self.goals:
            raise ConfigError("map must contain at least one goal cell")
        if self.obstacles & self.goals:
            raise ConfigError("obstacles and goals must be disjoint")
        if self.starts & self.obstacles:
            raise ConfigError("start cells must not sit on obstacles")
        if not self.starts:
            raise ConfigError("map must contain at least one start cell")

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell.x < self.width and 0 <= cell.y < self.height

    def passable(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and cell not in self.obstacles

    def free_cells(self) -> list[Cell]:
        """All non-obstacle cells in (y, x) order."""
        return [
            Cell(x, y)
            for y in range(self.height)
            for x in range(self.width)
            if Cell(x, y) not in self.obstacles
        ]


_CHAR_MEANING = {".": "free", "#": "obstacle", "G": "goal", "S": "start"}


def parse_map(text: str) -> GridMap:
    """Parse map text into a GridMap.

    Rows must have equal length and use only '.', '#', 'G', 'S'.  When no
    'S' appears, every free non-goal cell is a start candidate; if the map
    consists of goals only, the goals themselves are the start candidates.
    """
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MapParseError("map text is empty")
    width = len(lines[0])
    obstacles: set[Cell] = set()
    goals: set[Cell] = set()
    starts: set[Cell] = set()
    for y, line in enumerate(lines):
        if len(line) != width:
            raise MapParseError(f"row {y}: expected {width} characters, got {len(line)}")
        for x, ch in enumerate(line):
            if ch not in _CHAR_MEANING:
                raise MapParseError(f"row {y}, column {x}: unknown character {ch!r}")
            if ch == "#":
                obstacles.add(Cell(x, y))
            elif ch == "G":
                goals.add(Cell(x, y))
            elif ch == "S":
                starts.add(Cell(x, y))
    if not goals:
        raise MapParseError("map has no goal cell ('G')")
    if not starts:
        starts = {
            Cell(x, y)
            for y in range(len(lines))
            for x in range(width)
            if Cell(x, y) not in obstacles and Cell(x, y) not in goals
        }
        if not starts:
            # Degenerate all-goal map: agents may start on goals.
            starts = set(goals)
    return GridMap(
        width=width,
        height=len(lines),
        obstacles=frozenset(obstacles),
        goals=frozenset(goals),
        starts=frozenset(starts),
    )


def format_map(grid: GridMap) -> str:
    """Inverse of parse_map; emits 'S' only where starts differ from the implicit rule."""
    implicit = {
        Cell(x, y)
        for y in range(grid.height)
        for x in range(grid.width)
        if Cell(x, y) not in grid.obstacles and Cell(x, y) not in grid.goals
    }
    if not implicit:
        implicit = set(grid.goals)
    mark_starts = grid.starts != frozenset(implicit)
    rows = []
    for y in range(grid.height):
        row = []
        for x in range(grid.width):
            cell = Cell(x, y)
            if cell in grid.obstacles:
                row.append("#")
            elif cell in grid.goals:
                row.append("G")
            elif mark_starts and cell in grid.starts:
                row.append("S")
            else:
                row.append(".")
        rows.append("".join(row))
    return "\n".join(rows) + "\n"


def default_horizon(grid: GridMap) -> int:
    return 2 * (grid.width + grid.height)


@dataclass(frozen=True)
class EnvConfig:
    grid: GridMap
    num_agents: int = 1
    horizon: int = 0  # 0 means 2 * (width + height)
    slip_probability: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.horizon == 0:
            object.__setattr__(self, "horizon", default_horizon(self.grid))
        if self.num_agents < 1:
            raise ConfigError("num_agents must be at least 1")
        if self.num_agents > len(self.grid.starts):
            raise ConfigError(
                f"num_agents={self.num_agents} exceeds the {len(self.grid.starts)} available start cells"
            )
        if self.horizon < 1:
            raise ConfigError("horizon must be positive")
        if not 0.0 <= self.slip_probability <= 1.0:
            raise ConfigError("slip_probability must lie in [0, 1]")


@dataclass(frozen=True)
class AgentStatus:
    cell: Cell
    reached: bool = False
    active: bool = True


JointState = tuple[AgentStatus, ...]


class GridEnv:
    """Stateless stepper over a fixed EnvConfig; the joint state is a value."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.grid = config.grid

    def reset(self, rng: np.random.Generator) -> JointState:
        """Place agents uniformly at random on distinct start cells."""
        starts = sorted(self.grid.starts)
        picks = rng.choice(len(starts), size=self.config.num_agents, replace=False)
        return tuple(AgentStatus(starts[int(i)]) for i in picks)

    def step(
        self, state: JointState, actions: list[Action], rng: np.random.Generator
    ) -> tuple[JointState, list[StepEvent]]:
        """Advance all agents one step; returns the new state and one event per agent."""
        n = self.config.num_agents
        if len(state) != n or len(actions) != n:
            raise ConfigError(f"expected {n} agents, got state={len(state)} actions={len(actions)}")
        grid = self.grid
        slip = self.config.slip_probability
        pre = [st.cell for st in state]
        final = list(pre)
        events = [StepEvent.INACTIVE] * n

        for i, st in enumerate(state):
            if not st.active:
                continue
            act = actions[i]
            if slip > 0.0 and rng.random() < slip:
                act = MOVE_ACTIONS[int(rng.integers(4))]
            dx, dy = ACTION_DELTAS[act]
            target = Cell(st.cell.x + dx, st.cell.y + dy)
            if target == st.cell:
                events[i] = StepEvent.MOVED
            elif grid.passable(target):
                events[i] = StepEvent.MOVED
                final[i] = target
            else:
                # Off-grid counts as an obstacle.
                events[i] = StepEvent.BLOCKED_BY_OBSTACLE

        # Conflict resolution: revert movers until no cell is shared and no
        # pair has swapped.  Reverting can push an agent back into the path
        # of another mover, so iterate to a fixed point; each round reverts
        # at least one mover, so the loop is bounded by the agent count.
        while True:
            reverted: set[int] = set()
            occupied: dict[Cell, list[int]] = {}
            for i in range(n):
                if state[i].active:
                    occupied.setdefault(final[i], []).append(i)
            for members in occupied.values():
                if len(members) < 2:
                    continue
                for i in members:
                    if events[i] not in CONFLICT_EVENTS:
                        events[i] = StepEvent.VERTEX_CONFLICT
                    if final[i] != pre[i]:
                        reverted.add(i)
            origin = {pre[i]: i for i in range(n) if state[i].active}
            for i in range(n):
                if not state[i].active or final[i] == pre[i]:
                    continue
                j = origin.get(final[i])
                if j is not None and j != i and final[j] == pre[i] and final[j] != pre[j]:
                    for k in (i, j):
                        if events[k] not in CONFLICT_EVENTS:
                            events[k] = StepEvent.SWAP_CONFLICT
                        reverted.add(k)
            if not reverted:
                break
            for i in reverted:
                final[i] = pre[i]

        new_state = []
        for i, st in enumerate(state):
            if not st.active:
                new_state.append(st)
            elif final[i] in grid.goals and not st.reached:
                events[i] = StepEvent.REACHED_GOAL
                new_state.append(AgentStatus(final[i], reached=True, active=False))
            else:
                new_state.append(AgentStatus(final[i], st.reached, True))
        return tuple(new_state), events


@dataclass
class AgentTrajectory:
    """One agent's view of an episode.

    cells holds the visited cells (length = steps taken + 1), actions and
    events hold one entry per executed step.  Recording stops once the
    agent reaches a goal.
    """

    cells: list[Cell]
    actions: list[Action] = field(default_factory=list)
    events: list[StepEvent] = field(default_factory=list)
    reached: bool = False

    @property
    def arrival_time(self) -> int | None:
        return len(self.cells) - 1 if self.reached else None

    def observations(self) -> list[tuple[bool, bool]]:
        """Reward observations: one (in_goal, collision) pair per timestep.

        Every step before arrival yields (False, collided); reaching a goal
        appends a final (True, False).  An agent that times out therefore
        emits exactly horizon-many pairs, and one that starts on a goal
        emits the single pair (True, False).
        """
        obs = [(False, ev in COLLISION_EVENTS) for ev in self.events]
        if self.reached:
            return obs[: len(self.cells) - 1] + [(True, False)]
        return obs


@dataclass
class EpisodeRollout:
    trajectories: list[AgentTrajectory]
    steps: int

    @property
    def all_reached(self) -> bool:
        return all(t.reached for t in self.trajectories)


class PolicyLike:
    """Anything usable by run_episode: maps a cell to an action sample."""

    def sample_action(self, cell: Cell, rng: np.random.Generator) -> Action:
        raise NotImplementedError


def run_episode(
    env: GridEnv,
    policy: PolicyLike,
    rng: np.random.Generator,
    initial_state: JointState | None = None,
) -> EpisodeRollout:
    """Roll one episode; ends at the horizon or once every agent has reached a goal."""
    state = env.reset(rng) if initial_state is None else initial_state
    trajs = [AgentTrajectory(cells=[st.cell]) for st in state]

    # Agents placed on a goal are done at t = 0 without taking a step.
    settled = []
    for i, st in enumerate(state):
        if st.active and st.cell in env.grid.goals:
            trajs[i].reached = True
            settled.append(AgentStatus(st.cell, reached=True, active=False))
        else:
            settled.append(st)
    state = tuple(settled)

    steps = 0
    for _ in range(env.config.horizon):
        if not any(st.active for st in state):
            break
        actions = [
            policy.sample_action(st.cell, rng) if st.active else Action.STAY
            for st in state
        ]
        was_active = [st.active for st in state]
        state, events = env.step(state, actions, rng)
        steps += 1
        for i, traj in enumerate(trajs):
            if not was_active[i]:
                continue
            traj.actions.append(actions[i])
            traj.events.append(events[i])
            traj.cells.append(state[i].cell)
            if state[i].reached:
                traj.reached = True
    return EpisodeRollout(trajectories=trajs, steps=steps)
