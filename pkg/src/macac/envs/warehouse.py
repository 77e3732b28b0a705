"""Warehouse Tool Delivery, scenario A.

One arm robot finds tools and passes them to two mobile robots, who carry
them to two humans working through four subtasks each. Agent 0 is the arm,
agents 1 and 2 are mobile robots 0 and 1.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from ..core import LowLevelHistory, MacroActionDef, MacroEnv

SPEED = 0.8
HORIZON = 200
N_TOOLS = 3
TOOLS_PER_TYPE = 2
STAGING_CAPACITY = 2
SEARCH_STEPS = 6
PASS_STEPS = 4
WAIT_STEPS = 1
GET_TOOL_WAIT_CAP = 10
HUMAN_DURATIONS = ((27, 20, 20, 20), (27, 20, 20, 20))

DELIVERY_REWARD = 100.0
DELAY_PENALTY = -20.0
MISSED_PASS_PENALTY = -10.0
STEP_COST = -1.0

ARM_POSITION = (1.0, 2.5)
WAYPOINTS = {
    "A-0": (1.5, 1.5),  # arm-side wait spot for mobile robot 0
    "A-1": (1.5, 3.5),  # arm-side wait spot for mobile robot 1
    "TR": (2.5, 2.5),
    "W-0": (5.5, 1.0),
    "W-1": (5.5, 4.0),
}
WAYPOINT_NAMES = tuple(WAYPOINTS)
TOOL_ROOM = ("A-0", "A-1", "TR")
START_WAYPOINT = "TR"

# arm macro ids
SEARCH_TOOL = (0, 1, 2)
PASS_TO_M = (3, 4)
WAIT_M = 5
# mobile macro ids
GO_W = (0, 1)
GO_TR = 2
GET_TOOL = 3

# mobile primitive actions: travel one step toward a waypoint, or wait for a tool
MOBILE_TOWARD = {"W-0": 0, "W-1": 1, "TR": 2, "A-0": 3, "A-1": 3}
WAIT_FOR_TOOL = 4
_TOWARD_NAME = ("W-0", "W-1", "TR", None)


def travel_steps(a: str, b: str) -> int:
    """Primitive steps to travel between two waypoints (at least 1)."""
    (x0, y0), (x1, y1) = WAYPOINTS[a], WAYPOINTS[b]
    return max(1, math.ceil(math.hypot(x1 - x0, y1 - y0) / SPEED - 1e-9))


def travel_table_csv() -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["from", "to", "steps"])
    for a in WAYPOINT_NAMES:
        for b in WAYPOINT_NAMES:
            w.writerow([a, b, travel_steps(a, b)])
    return buf.getvalue()


@dataclass
class MobileRobot:
    location: str | None  # None while in transit
    destination: str | None = None
    remaining: int = 0
    carrying: int | None = None
    waited: int = 0


@dataclass
class Human:
    durations: tuple[int, ...]
    subtask: int = 0
    progress: int = 0
    paused: bool = False
    finished: bool = False
    received: tuple[int, ...] = ()

    @property
    def needed_tool(self) -> int | None:
        """Tool for the next subtask, while it has not been handed over yet."""
        if self.subtask >= len(self.durations) - 1 or self.subtask in self.received:
            return None
        return self.subtask


@dataclass(frozen=True)
class ArmLowObs:
    ticks: int
    staging: tuple[int, ...]


@dataclass(frozen=True)
class MobileLowObs:
    location: str | None
    carrying: int | None
    waited: int


class Warehouse(MacroEnv):
    n_agents = 3

    def __init__(self, gamma: float = 0.95, horizon: int = HORIZON,
                 human_durations=HUMAN_DURATIONS):
        self.gamma = gamma
        self.horizon = horizon
        self.human_durations = tuple(tuple(d) for d in human_durations)
        self._arm_macros = self._build_arm_macros()
        self._mobile_macros = [self._build_mobile_macros(j) for j in range(2)]
        self.reset()

    def reset(self, seed=None):
        self.table = [TOOLS_PER_TYPE] * N_TOOLS
        self.staging: list[int] = []
        self.mobiles = [MobileRobot(START_WAYPOINT) for _ in range(2)]
        self.humans = [Human(d) for d in self.human_durations]
        self.arm_macro: int | None = None
        self.arm_ticks = 0
        self.delivered = [0] * N_TOOLS
        self.events: list[str] = []
        self._t = 0
        self._done = False

    # -- bookkeeping ----------------------------------------------------
    def tool_counts(self, tool: int) -> dict[str, int]:
        return {
            "table": self.table[tool],
            "staging": self.staging.count(tool),
            "carried": sum(1 for m in self.mobiles if m.carrying == tool),
            "delivered": self.delivered[tool],
        }

    def waiting_robots(self) -> tuple[bool, bool]:
        return tuple(m.location == f"A-{j}" for j, m in enumerate(self.mobiles))

    # -- sensing --------------------------------------------------------
    def macro_observation(self, agent):
        if agent == 0:
            z = np.zeros(2 * N_TOOLS + 2, dtype=np.float32)
            for slot, tool in enumerate(self.staging):
                z[slot * N_TOOLS + tool] = 1.0
            for j, waiting in enumerate(self.waiting_robots()):
                z[2 * N_TOOLS + j] = float(waiting)
            return z
        m = self.mobiles[agent - 1]
        z = np.zeros(5 + 4 + 3 + 4, dtype=np.float32)
        if m.location is not None:
            z[WAYPOINT_NAMES.index(m.location)] = 1.0
        z[5 + (0 if m.carrying is None else m.carrying + 1)] = 1.0
        if m.location in TOOL_ROOM:
            z[9 + len(self.staging)] = 1.0
        elif m.location in ("W-0", "W-1"):
            human = self.humans[int(m.location[-1])]
            z[12 + human.subtask] = 1.0
        return z

    def low_level_observation(self, agent):
        if agent == 0:
            return ArmLowObs(self.arm_ticks, tuple(self.staging))
        m = self.mobiles[agent - 1]
        return MobileLowObs(m.location, m.carrying, m.waited)

    def state_vector(self):
        parts: list[float] = []
        for m in self.mobiles:
            if m.location is not None:
                x, y = WAYPOINTS[m.location]
            else:
                x, y = WAYPOINTS[m.destination]
            parts += [x / 5.0, y / 5.0, m.remaining / 10.0]
            onehot = [0.0] * (N_TOOLS + 1)
            onehot[0 if m.carrying is None else m.carrying + 1] = 1.0
            parts += onehot
        arm = [0.0] * 7
        arm[6 if self.arm_macro is None else self.arm_macro] = 1.0
        parts += arm + [self.arm_ticks / SEARCH_STEPS]
        for slot in range(STAGING_CAPACITY):
            onehot = [0.0] * N_TOOLS
            if slot < len(self.staging):
                onehot[self.staging[slot]] = 1.0
            parts += onehot
        for h in self.humans:
            onehot = [0.0] * 4
            onehot[h.subtask] = 1.0
            parts += onehot + [h.progress / h.durations[h.subtask], float(h.paused)]
        parts += [c / TOOLS_PER_TYPE for c in self.table]
        return np.array(parts, dtype=np.float32)

    # -- macro-actions --------------------------------------------------
    def n_primitive_actions(self, agent):
        return 6 if agent == 0 else 5

    def macro_actions(self, agent):
        return self._arm_macros if agent == 0 else self._mobile_macros[agent - 1]

    def _build_arm_macros(self):
        def ticking(macro_id, steps):
            return dict(controller=lambda hist: macro_id, termination=lambda hist: len(hist) >= steps)

        macros = [
            MacroActionDef(SEARCH_TOOL[i], f"Search-Tool({i})", **ticking(SEARCH_TOOL[i], SEARCH_STEPS))
            for i in range(N_TOOLS)
        ]
        macros += [
            MacroActionDef(PASS_TO_M[j], f"Pass-to-M({j})", **ticking(PASS_TO_M[j], PASS_STEPS))
            for j in range(2)
        ]
        macros.append(MacroActionDef(WAIT_M, "Wait-M", **ticking(WAIT_M, WAIT_STEPS)))
        return macros

    def _build_mobile_macros(self, j: int):
        def go(target):
            return dict(
                controller=lambda hist: MOBILE_TOWARD[target],
                termination=lambda hist: hist.last.location == target,
            )

        side = f"A-{j}"

        def get_tool_ctrl(hist: LowLevelHistory) -> int:
            return WAIT_FOR_TOOL if hist.last.location == side else MOBILE_TOWARD[side]

        def get_tool_done(hist: LowLevelHistory) -> bool:
            start, now = hist.observations[0], hist.last
            if now.carrying is not None and start.carrying is None:
                return True
            return now.waited >= GET_TOOL_WAIT_CAP

        return [
            MacroActionDef(GO_W[0], "Go-W(0)", **go("W-0")),
            MacroActionDef(GO_W[1], "Go-W(1)", **go("W-1")),
            MacroActionDef(GO_TR, "Go-TR", **go("TR")),
            MacroActionDef(GET_TOOL, "Get-Tool", get_tool_ctrl, get_tool_done),
        ]

    def start_macro(self, agent, macro_id):
        if agent == 0:
            self.arm_macro = macro_id
            self.arm_ticks = 0
        else:
            self.mobiles[agent - 1].waited = 0

    # -- dynamics -------------------------------------------------------
    def step(self, actions):
        if len(actions) != 3:
            raise ValueError(f"expected 3 actions, got {len(actions)}")
        arm_a, *mobile_a = actions
        if not (isinstance(arm_a, (int, np.integer)) and 0 <= arm_a < 6):
            raise ValueError(f"malformed arm action {arm_a!r}")
        for a in mobile_a:
            if not (isinstance(a, (int, np.integer)) and 0 <= a < 5):
                raise ValueError(f"malformed mobile action {a!r}")

        reward = STEP_COST
        events = []
        for j, a in enumerate(mobile_a):
            self._move(j, int(a))
        reward += self._arm_tick(int(arm_a), events)

        # deliveries happen before humans progress, so a hand-over on the
        # step a subtask ends is still in time
        for j, m in enumerate(self.mobiles):
            if m.carrying is None or m.location not in ("W-0", "W-1"):
                continue
            h = self.humans[int(m.location[-1])]
            if h.needed_tool == m.carrying:
                reward += DELIVERY_REWARD
                if h.paused:
                    reward += DELAY_PENALTY
                    h.paused = False
                    h.subtask += 1
                    h.progress = 0
                h.received = h.received + (m.carrying,)
                self.delivered[m.carrying] += 1
                events.append(f"M{j} delivers tool {m.carrying} to human {m.location[-1]}")
                m.carrying = None

        for h in self.humans:
            if h.paused or h.finished:
                continue
            h.progress += 1
            if h.progress >= h.durations[h.subtask]:
                if h.subtask == len(h.durations) - 1:
                    h.finished = True
                elif h.subtask in h.received:
                    h.subtask += 1
                    h.progress = 0
                else:
                    h.paused = True

        self.events = events
        self._t += 1
        self._done = all(len(h.received) == N_TOOLS for h in self.humans)
        return reward, self._done

    def _move(self, j: int, a: int) -> None:
        m = self.mobiles[j]
        if a == WAIT_FOR_TOOL:
            m.waited += 1
            return
        target = _TOWARD_NAME[a] or f"A-{j}"
        if m.location is not None:
            m.destination = target
            m.remaining = travel_steps(m.location, target)
            m.location = None
        elif m.destination != target:
            raise RuntimeError("mobile robot changed destination mid-transit")
        m.remaining -= 1
        if m.remaining == 0:
            m.location = m.destination
            m.destination = None

    def _arm_tick(self, a: int, events: list[str]) -> float:
        if a != self.arm_macro:
            self.arm_macro = a
            self.arm_ticks = 0
        self.arm_ticks += 1
        if a in SEARCH_TOOL and self.arm_ticks == SEARCH_STEPS:
            if len(self.staging) < STAGING_CAPACITY and self.table[a] > 0:
                self.table[a] -= 1
                self.staging.append(a)
                events.append(f"arm stages tool {a}")
        elif a in PASS_TO_M and self.arm_ticks == PASS_STEPS:
            j = a - PASS_TO_M[0]
            m = self.mobiles[j]
            if m.location != f"A-{j}":
                events.append(f"arm passes to absent M{j}")
                return MISSED_PASS_PENALTY
            if self.staging and m.carrying is None:
                m.carrying = self.staging.pop(0)
                events.append(f"arm passes tool {m.carrying} to M{j}")
        return 0.0

    def is_terminal(self) -> bool:
        return self._done

    def render(self) -> str:
        lines = [f"t={self._t} staging={self.staging} table={self.table}"]
        for j, m in enumerate(self.mobiles):
            where = m.location or f"->{m.destination}({m.remaining})"
            lines.append(f"M{j}: {where} carrying={m.carrying}")
        for k, h in enumerate(self.humans):
            state = "done" if h.finished else ("paused" if h.paused else "working")
            lines.append(f"H{k}: subtask={h.subtask} progress={h.progress} {state} received={list(h.received)}")
        return "\n".join(lines)
