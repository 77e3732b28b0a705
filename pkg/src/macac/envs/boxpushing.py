"""Cooperative Box Pushing on an N x N grid.

Row 0 is the goal row (north). Two robots can push two small boxes alone, or
push the big box together for a much larger reward.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..core import ConfigurationError, LowLevelHistory, MacroActionDef, MacroEnv, one_step_macro

NORTH, EAST, SOUTH, WEST = range(4)
DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1))
ARROWS = "^>v<"

FORWARD, TURN_LEFT, TURN_RIGHT, STAY = range(4)
PRIMITIVE_NAMES = ("Move-forward", "Turn-left", "Turn-right", "Stay")

EMPTY, TEAMMATE, BOUNDARY, SMALL_BOX, BIG_BOX = range(5)
CELL_NAMES = ("empty", "teammate", "boundary", "small_box", "big_box")

BIG_BOX_REWARD = 300.0
SMALL_BOX_REWARD = 20.0
PENALTY = -10.0
HORIZON = 100

# macro ids
MOVE_TO_SMALL_BOX, MOVE_TO_BIG_BOX, PUSH, MACRO_TURN_LEFT, MACRO_TURN_RIGHT, MACRO_STAY = range(6)


@dataclass(frozen=True)
class LowObs:
    """What an agent's low-level controllers can sense after a step."""

    pose: tuple[int, int, int]
    teammate: tuple[int, int]
    small_boxes: tuple[tuple[int, int], ...]
    big_box: tuple[int, int]
    front: int
    event: str


@lru_cache(maxsize=4096)
def _distance_table(n: int, goal: tuple[int, int, int], obstacles: frozenset) -> np.ndarray:
    """Steps-to-goal over poses (row, col, orientation), via reverse BFS."""
    inf = np.iinfo(np.int32).max
    dist = np.full((n, n, 4), inf, dtype=np.int64)
    gr, gc, go = goal
    if not (0 <= gr < n and 0 <= gc < n) or (gr, gc) in obstacles:
        return dist
    dist[gr, gc, go] = 0
    queue = deque([goal])
    while queue:
        r, c, o = queue.popleft()
        d = dist[r, c, o] + 1
        # predecessors by turning: a left turn from (o+1) or a right turn from (o-1) lands on o
        for po in ((o + 1) % 4, (o + 3) % 4):
            if dist[r, c, po] == inf:
                dist[r, c, po] = d
                queue.append((r, c, po))
        dr, dc = DELTAS[o]
        pr, pc = r - dr, c - dc
        if 0 <= pr < n and 0 <= pc < n and (pr, pc) not in obstacles and dist[pr, pc, o] == inf:
            dist[pr, pc, o] = d
            queue.append((pr, pc, o))
    return dist


def _next_pose(n, pose, action, obstacles):
    r, c, o = pose
    if action == TURN_LEFT:
        return (r, c, (o + 3) % 4)
    if action == TURN_RIGHT:
        return (r, c, (o + 1) % 4)
    dr, dc = DELTAS[o]
    nr, nc = r + dr, c + dc
    if 0 <= nr < n and 0 <= nc < n and (nr, nc) not in obstacles:
        return (nr, nc, o)
    return None


def plan_action(n: int, pose, goal, obstacles: frozenset) -> int | None:
    """First primitive of a shortest path from ``pose`` to ``goal``.

    Returns STAY at the goal and None when the goal is unreachable. Among
    equally short paths the one that fixes the column first is preferred.
    """
    if pose == goal:
        return STAY
    dist = _distance_table(n, goal, obstacles)
    here = dist[pose]
    if here >= np.iinfo(np.int32).max:
        return None
    best = None
    for action in (FORWARD, TURN_LEFT, TURN_RIGHT):
        nxt = _next_pose(n, pose, action, obstacles)
        if nxt is None or dist[nxt] != here - 1:
            continue
        dc = goal[1] - nxt[1]
        facing_goal_col = (dc > 0 and nxt[2] == EAST) or (dc < 0 and nxt[2] == WEST)
        key = (abs(dc), not facing_goal_col, action)
        if best is None or key < best[0]:
            best = (key, action)
    return best[1]


class BoxPushing(MacroEnv):
    """Deterministic two-robot Box Pushing.

    With ``primitive=True`` the macro set is the four primitive actions as
    one-step macros, which gives the primitive-action baselines.
    """

    n_agents = 2

    def __init__(self, size: int = 8, gamma: float = 0.95, horizon: int = HORIZON,
                 primitive: bool = False):
        if size < 6 or size % 2:
            raise ConfigurationError(f"grid size must be an even number >= 6, got {size}")
        self.size = size
        self.gamma = gamma
        self.horizon = horizon
        self.primitive = primitive
        self._macros = [self._build_macros(i) for i in range(2)]
        self.reset()

    # -- layout ---------------------------------------------------------
    @property
    def box_row(self) -> int:
        return -(-self.size // 2)

    def reset(self, seed=None):
        n = self.size
        row = self.box_row
        self.small_boxes = [(row, 1), (row, n - 2)]
        self.big_box = (row, n // 2 - 1)  # occupies this cell and the one to its east
        self.agents = [[n - 1, 1, NORTH], [n - 1, n - 2, NORTH]]
        self.events = ["none", "none"]
        self._t = 0
        self._done = False

    def big_cells(self):
        r, c = self.big_box
        return ((r, c), (r, c + 1))

    def small_waypoint(self, agent: int):
        r, c = self.small_boxes[agent]
        return (r + 1, c, NORTH)

    def big_waypoint(self, agent: int):
        r, c = self.big_cells()[agent]
        return (r + 1, c, NORTH)

    def obstacles(self) -> frozenset:
        return frozenset(self.small_boxes) | frozenset(self.big_cells())

    # -- sensing --------------------------------------------------------
    def front_cell(self, agent: int) -> int:
        r, c, o = self.agents[agent]
        dr, dc = DELTAS[o]
        fr, fc = r + dr, c + dc
        n = self.size
        if not (0 <= fr < n and 0 <= fc < n):
            return BOUNDARY
        other = self.agents[1 - agent]
        if (fr, fc) == (other[0], other[1]):
            return TEAMMATE
        if (fr, fc) in self.small_boxes:
            return SMALL_BOX
        if (fr, fc) in self.big_cells():
            return BIG_BOX
        return EMPTY

    def macro_observation(self, agent):
        z = np.zeros(5, dtype=np.float32)
        z[self.front_cell(agent)] = 1.0
        return z

    def low_level_observation(self, agent):
        r, c, o = self.agents[agent]
        other = self.agents[1 - agent]
        return LowObs(
            pose=(r, c, o),
            teammate=(other[0], other[1]),
            small_boxes=tuple(self.small_boxes),
            big_box=self.big_box,
            front=self.front_cell(agent),
            event=self.events[agent],
        )

    def state_vector(self):
        n = float(self.size)
        parts = []
        for r, c, o in self.agents:
            onehot = [0.0] * 4
            onehot[o] = 1.0
            parts += [r / n, c / n] + onehot
        for r, c in self.small_boxes:
            parts += [r / n, c / n]
        parts += [self.big_box[0] / n, self.big_box[1] / n]
        return np.array(parts, dtype=np.float32)

    # -- macro-actions --------------------------------------------------
    def n_primitive_actions(self, agent):
        return 4

    def macro_actions(self, agent):
        return self._macros[agent]

    def _build_macros(self, agent: int) -> list[MacroActionDef]:
        if self.primitive:
            return [one_step_macro(a, PRIMITIVE_NAMES[a], a) for a in range(4)]
        n = self.size

        def small_goal(obs: LowObs):
            r, c = obs.small_boxes[agent]
            return (r + 1, c, NORTH)

        def big_goal(obs: LowObs):
            r, c = obs.big_box
            return (r + 1, c + agent, NORTH)

        def obstacles(obs: LowObs):
            r, c = obs.big_box
            return frozenset(obs.small_boxes) | {(r, c), (r, c + 1)}

        def navigator(goal_fn):
            def controller(hist: LowLevelHistory) -> int:
                obs = hist.last
                a = plan_action(n, obs.pose, goal_fn(obs), obstacles(obs))
                return STAY if a is None else a

            def termination(hist: LowLevelHistory) -> bool:
                obs = hist.last
                goal = goal_fn(obs)
                return obs.pose == goal or plan_action(n, obs.pose, goal, obstacles(obs)) is None

            return controller, termination

        def push_done(hist: LowLevelHistory) -> bool:
            obs = hist.last
            return obs.event in ("boundary", "big_alone", "blocked", "small_goal") or obs.front == BOUNDARY

        small_ctrl, small_term = navigator(small_goal)
        big_ctrl, big_term = navigator(big_goal)
        return [
            MacroActionDef(MOVE_TO_SMALL_BOX, f"Move-to-small-box({agent})", small_ctrl, small_term),
            MacroActionDef(MOVE_TO_BIG_BOX, f"Move-to-big-box({agent})", big_ctrl, big_term),
            MacroActionDef(PUSH, "Push", lambda hist: FORWARD, push_done),
            one_step_macro(MACRO_TURN_LEFT, "Turn-left", TURN_LEFT),
            one_step_macro(MACRO_TURN_RIGHT, "Turn-right", TURN_RIGHT),
            one_step_macro(MACRO_STAY, "Stay", STAY),
        ]

    # -- dynamics -------------------------------------------------------
    def step(self, actions):
        if len(actions) != 2:
            raise ValueError(f"expected 2 actions, got {len(actions)}")
        for a in actions:
            if not (isinstance(a, (int, np.integer)) and 0 <= a < 4):
                raise ValueError(f"malformed action {a!r}")
        n = self.size
        events = ["none", "none"]
        reward = 0.0

        for i, a in enumerate(actions):
            if a == TURN_LEFT:
                self.agents[i][2] = (self.agents[i][2] + 3) % 4
            elif a == TURN_RIGHT:
                self.agents[i][2] = (self.agents[i][2] + 1) % 4

        big = self.big_cells()
        occupied_by_agent = [(ag[0], ag[1]) for ag in self.agents]
        moves: dict[int, tuple[int, int]] = {}
        small_push: dict[int, tuple[int, tuple[int, int]]] = {}
        big_attempt: dict[int, tuple[int, int]] = {}
        for i, a in enumerate(actions):
            if a != FORWARD:
                continue
            r, c, o = self.agents[i]
            dr, dc = DELTAS[o]
            target = (r + dr, c + dc)
            if not (0 <= target[0] < n and 0 <= target[1] < n):
                events[i] = "boundary"
                reward += PENALTY
            elif target in big:
                big_attempt[i] = target
            elif target in self.small_boxes:
                if o != NORTH:
                    events[i] = "blocked"
                    continue
                b = self.small_boxes.index(target)
                small_push[i] = (b, (target[0] - 1, target[1]))
                moves[i] = target
            elif target == occupied_by_agent[1 - i]:
                events[i] = "blocked"
            else:
                moves[i] = target

        if big_attempt:
            together = (
                len(big_attempt) == 2
                and all(self.agents[i][2] == NORTH for i in big_attempt)
                and big_attempt[0] != big_attempt[1]
            )
            if together:
                br, bc = self.big_box
                ahead = {(br - 1, bc), (br - 1, bc + 1)}
                if br - 1 >= 0 and not ahead & set(self.small_boxes):
                    self.big_box = (br - 1, bc)
                    for i, cell in big_attempt.items():
                        moves[i] = cell
                        events[i] = "pushed_big"
                else:
                    for i in big_attempt:
                        events[i] = "blocked"
            else:
                for i in big_attempt:
                    events[i] = "big_alone"
                    reward += PENALTY

        # two agents heading for the same cell: neither moves
        if len(moves) == 2 and moves[0] == moves[1]:
            for i in (0, 1):
                if events[i] == "pushed_big":
                    continue
                events[i] = "blocked"
                small_push.pop(i, None)
            moves = {i: m for i, m in moves.items() if events[i] == "pushed_big"}

        for i, (b, new_cell) in list(small_push.items()):
            blockers = set(self.small_boxes) | set(self.big_cells())
            blockers |= {(ag[0], ag[1]) for j, ag in enumerate(self.agents) if j != i}
            blockers |= {m for j, m in moves.items() if j != i}
            if new_cell[0] < 0 or new_cell in blockers:
                small_push.pop(i)
                moves.pop(i, None)
                events[i] = "blocked"

        for i, (b, new_cell) in small_push.items():
            self.small_boxes[b] = new_cell
            events[i] = "small_goal" if new_cell[0] == 0 else "pushed_small"
        for i, cell in moves.items():
            self.agents[i][0], self.agents[i][1] = cell
            if events[i] == "none":
                events[i] = "moved"

        if self.big_box[0] == 0:
            reward += BIG_BOX_REWARD
        for r, _ in self.small_boxes:
            if r == 0:
                reward += SMALL_BOX_REWARD
        self.events = events
        self._t += 1
        self._done = self.big_box[0] == 0 or any(r == 0 for r, _ in self.small_boxes)
        return reward, self._done

    def is_terminal(self) -> bool:
        return self._done

    def render(self) -> str:
        n = self.size
        grid = [["." for _ in range(n)] for _ in range(n)]
        for r, c in self.small_boxes:
            grid[r][c] = "b"
        for r, c in self.big_cells():
            grid[r][c] = "B"
        for r, c, o in self.agents:
            grid[r][c] = ARROWS[o]
        return "\n".join("".join(row) for row in grid)

    # -- reference behaviour --------------------------------------------
    def optimal_script(self):
        """Both robots go under the big box and push it together."""
        return [[MOVE_TO_BIG_BOX, PUSH], [MOVE_TO_BIG_BOX, PUSH]]
