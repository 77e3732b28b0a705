"""Experience stores and the squeezing transforms.

Episodes are logged at the primitive timescale (one record per agent per
step plus one joint record). Squeezing collapses each macro execution, or
each joint macro segment, into one transition carrying the discounted
cumulative reward and the segment duration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from .core import EpisodeLog, EpisodeSummary, JointStepRecord, StepRecord


class SqueezeError(ValueError):
    """Raised on malformed episode logs."""


def cumulative_reward(rewards: Sequence[float], gamma: float) -> float:
    """Sum of gamma**k * r_k."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise ValueError("cumulative_reward needs at least one reward")
    return float(np.sum(r * gamma ** np.arange(r.size)))


@dataclass
class SqueezedTransition:
    """One macro-level transition.

    ``done`` marks a segment ending in a terminal state; ``truncated`` marks a
    final segment whose macro was still running when the horizon cut it.
    The joint-only fields are ``None`` for per-agent transitions.
    """

    t_start: int
    z: object
    m: object
    z_next: object
    rc: float
    tau: int
    done: bool = False
    truncated: bool = False
    state: np.ndarray | None = None
    next_state: np.ndarray | None = None
    starting: tuple | None = None
    ending: tuple | None = None


@dataclass
class IaiccRow:
    """A joint-squeezed critic row annotated for one agent.

    ``mask`` is set when the agent's macro terminates at the end of this row;
    then ``rc`` / ``tau`` cover that whole macro, which began at joint row
    ``start``.
    """

    joint: SqueezedTransition
    mask: bool
    rc: float = 0.0
    tau: int = 0
    start: int = -1


def _check_contiguous(ts: Iterable[int]) -> None:
    expected = 0
    for t in ts:
        if t != expected:
            raise SqueezeError(f"gap in primitive timesteps: expected t={expected}, found t={t}")
        expected += 1
    if expected == 0:
        raise SqueezeError("empty episode")


def _segments(ends: Sequence[bool]) -> list[tuple[int, int]]:
    """[start, stop) index pairs closed at every flagged step and at the end."""
    segs = []
    start = 0
    for k, end in enumerate(ends):
        if end:
            segs.append((start, k + 1))
            start = k + 1
    if start < len(ends):
        segs.append((start, len(ends)))
    return segs


def squeeze_agent(records: Sequence[StepRecord], gamma: float,
                  terminal: bool = False) -> list[SqueezedTransition]:
    """One transition per macro execution of a single agent.

    ``terminal`` says whether the episode ended in a terminal state; without
    it the last transition is bootstrapped.
    """
    _check_contiguous(r.t for r in records)
    rewards = np.array([r.r for r in records], dtype=np.float64)
    segs = _segments([r.terminated for r in records])
    out = []
    for k, (a, b) in enumerate(segs):
        first, last = records[a], records[b - 1]
        final = k == len(segs) - 1
        out.append(SqueezedTransition(
            t_start=first.t,
            z=first.z,
            m=first.m,
            z_next=last.z_next,
            rc=cumulative_reward(rewards[a:b], gamma),
            tau=b - a,
            done=final and terminal,
            truncated=final and not last.terminated,
        ))
    return out


def squeeze_joint(records: Sequence[JointStepRecord], gamma: float, terminal: bool = False,
                  final_state: np.ndarray | None = None) -> list[SqueezedTransition]:
    """One transition per joint macro segment (any agent terminating closes it)."""
    _check_contiguous(r.t for r in records)
    rewards = np.array([r.r for r in records], dtype=np.float64)
    segs = _segments([r.joint_terminated for r in records])
    n = len(records[0].m)
    out = []
    prev_end = (True,) * n
    for k, (a, b) in enumerate(segs):
        first, last = records[a], records[b - 1]
        final = k == len(segs) - 1
        next_state = final_state if final else records[b].state
        out.append(SqueezedTransition(
            t_start=first.t,
            z=first.z,
            m=first.m,
            z_next=last.z_next,
            rc=cumulative_reward(rewards[a:b], gamma),
            tau=b - a,
            done=final and terminal,
            truncated=final and not last.joint_terminated,
            state=first.state,
            next_state=next_state,
            starting=prev_end,
            ending=tuple(last.terminated),
        ))
        prev_end = tuple(last.terminated)
    return out


def agent_records(records: Sequence[JointStepRecord], agent: int) -> list[StepRecord]:
    """Project joint records onto one agent."""
    return [
        StepRecord(r.t, agent, r.z[agent], r.m[agent], r.r, r.terminated[agent], r.z_next[agent])
        for r in records
    ]


def squeeze_iaicc(records: Sequence[JointStepRecord], agent: int, gamma: float,
                  rewards: Sequence[float] | None = None, terminal: bool = False,
                  final_state: np.ndarray | None = None):
    """Critic rows at joint boundaries plus the agent's own actor transitions.

    ``rewards`` is the reward stream accumulated into the agent's r^c (the
    shared reward by default). Returns ``(critic_rows, actor_transitions)``.
    """
    if rewards is None:
        rewards = [r.r for r in records]
    if len(rewards) != len(records):
        raise SqueezeError(f"reward stream has {len(rewards)} entries for {len(records)} steps")
    joint = squeeze_joint(records, gamma, terminal, final_state)
    own = [
        StepRecord(r.t, agent, r.z[agent], r.m[agent], float(rw), r.terminated[agent], r.z_next[agent])
        for r, rw in zip(records, rewards)
    ]
    actor = squeeze_agent(own, gamma, terminal)
    rows = []
    start = 0
    for k, tr in enumerate(joint):
        final = k == len(joint) - 1
        if tr.ending[agent] or final:
            t0 = joint[start].t_start
            t1 = tr.t_start + tr.tau
            rows.append(IaiccRow(tr, True, cumulative_reward(rewards[t0:t1], gamma), t1 - t0, start))
            start = k + 1
        else:
            rows.append(IaiccRow(tr, False))
    return rows, actor


# ---------------------------------------------------------------------------
# storage


class TrajectoryBuffer:
    """On-policy episode store, emptied after every training round."""

    def __init__(self):
        self.episodes: list[EpisodeLog] = []

    def add(self, episode: EpisodeLog) -> None:
        self.episodes.append(episode)

    def reset(self) -> None:
        self.episodes = []

    def __len__(self) -> int:
        return len(self.episodes)

    def __iter__(self):
        return iter(self.episodes)


def pad_sequences(seqs: Sequence[np.ndarray], dtype=np.float32):
    """Stack variable-length (L_b, ...) arrays into (L_max, B, ...) plus a validity mask."""
    if not seqs:
        raise ValueError("no sequences to pad")
    L = max(len(s) for s in seqs)
    tail = np.asarray(seqs[0]).shape[1:]
    out = np.zeros((L, len(seqs)) + tail, dtype=dtype)
    mask = np.zeros((L, len(seqs)), dtype=bool)
    for b, s in enumerate(seqs):
        out[: len(s), b] = s
        mask[: len(s), b] = True
    return out, mask


# ---------------------------------------------------------------------------
# line-delimited logs


def _vec(x):
    return None if x is None else [float(v) for v in np.asarray(x).ravel()]


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def write_episode(log: EpisodeLog, fp: IO[str]) -> None:
    """Write one episode: per step, each agent's record then the joint record; then a footer."""
    for t, joint in enumerate(log.steps):
        for i in range(log.n_agents):
            rec = log.agent_steps[i][t]
            fp.write(_dump({
                "t": rec.t, "agent": rec.agent, "z": _vec(rec.z), "m": rec.m, "r": rec.r,
                "terminated": rec.terminated, "z_next": _vec(rec.z_next),
            }) + "\n")
        fp.write(_dump({
            "t": joint.t, "agent": None, "z": [_vec(z) for z in joint.z], "m": list(joint.m),
            "r": joint.r, "terminated": list(joint.terminated),
            "z_next": [_vec(z) for z in joint.z_next], "state": _vec(joint.state),
        }) + "\n")
    s = log.summary
    fp.write(_dump({
        "end": True,
        "n_agents": log.n_agents,
        "summary": None if s is None else [s.total_reward, s.discounted_return, s.length, s.terminal],
        "final_state": _vec(log.final_state),
        "policy_version": log.policy_version,
    }) + "\n")


def _arr(x):
    return None if x is None else np.array(x, dtype=np.float32)


def read_episodes(fp: IO[str]) -> list[EpisodeLog]:
    """Parse a file written by :func:`write_episode` (any number of episodes)."""
    episodes = []
    agent_rows: list[StepRecord] = []
    joint_rows: list[JointStepRecord] = []
    for line in fp:
        if not line.strip():
            continue
        d = json.loads(line)
        if d.get("end"):
            log = EpisodeLog(d["n_agents"], policy_version=d["policy_version"])
            for rec in agent_rows:
                log.agent_steps[rec.agent].append(rec)
            log.steps = joint_rows
            if d["summary"] is not None:
                tr, dr, length, term = d["summary"]
                log.summary = EpisodeSummary(tr, dr, length, term)
            log.final_state = _arr(d["final_state"])
            episodes.append(log)
            agent_rows, joint_rows = [], []
        elif d["agent"] is None:
            joint_rows.append(JointStepRecord(
                d["t"], tuple(_arr(z) for z in d["z"]), tuple(d["m"]), d["r"],
                tuple(d["terminated"]), tuple(_arr(z) for z in d["z_next"]), _arr(d["state"]),
            ))
        else:
            agent_rows.append(StepRecord(
                d["t"], d["agent"], _arr(d["z"]), d["m"], d["r"], d["terminated"], _arr(d["z_next"]),
            ))
    return episodes
