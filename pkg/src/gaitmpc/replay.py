"""Trajectory storage, n-step segment extraction and on-disk persistence.

An episode is a sequence of (state, action, reward, control-step index)
tuples plus the terminal state and metadata. The buffer is append-only;
training reads immutable array snapshots extracted from it.

On-disk ``.traj`` layout (little-endian):

    bytes 0..7    magic b"GMPCTRAJ"
    bytes 8..11   uint32 format version (currently 1)
    bytes 12..19  uint64 JSON header length
    ...           UTF-8 JSON header: state/action dims and, per episode,
                  length, start index, seed, config hash, termination cause
    ...           per episode, raw float64 blobs in order:
                  states (L x 18), actions (L x 12), rewards (L),
                  final_state (18)

The raw blobs round-trip bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .state import ACTION_DIM, PHASE_START, STATE_DIM, TWO_PI

TRAJ_MAGIC = b"GMPCTRAJ"
TRAJ_VERSION = 1


@dataclass
class TrajectoryLog:
    """One recorded episode."""

    states: np.ndarray        # (L, 18) state at each control step
    actions: np.ndarray       # (L, 12)
    rewards: np.ndarray       # (L,)
    final_state: np.ndarray   # (18,) state after the last step
    indices: np.ndarray | None = None   # control-step indices, default arange
    seed: int = 0
    config_hash: str = ""
    termination: str = "completed"

    def __post_init__(self):
        self.states = np.ascontiguousarray(self.states, dtype=np.float64)
        self.actions = np.ascontiguousarray(self.actions, dtype=np.float64)
        self.rewards = np.ascontiguousarray(self.rewards, dtype=np.float64)
        self.final_state = np.ascontiguousarray(self.final_state, dtype=np.float64)
        L = len(self.states)
        if L == 0:
            raise ValueError("empty trajectory log")
        if self.states.shape != (L, STATE_DIM):
            raise ValueError(f"states must be (L, {STATE_DIM}), got {self.states.shape}")
        if self.actions.shape != (L, ACTION_DIM):
            raise ValueError(f"actions must be (L, {ACTION_DIM}), got {self.actions.shape}")
        if self.rewards.shape != (L,):
            raise ValueError(f"rewards must be (L,), got {self.rewards.shape}")
        if self.final_state.shape != (STATE_DIM,):
            raise ValueError("final_state must be a single state vector")
        if self.indices is None:
            self.indices = np.arange(L, dtype=np.int64)
        else:
            self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
            if self.indices.shape != (L,):
                raise ValueError("indices must match the number of steps")
            if L > 1 and not np.all(np.diff(self.indices) == 1):
                raise ValueError("control-step indices must increase strictly by 1")
        for name, arr in (("states", self.states), ("actions", self.actions),
                          ("rewards", self.rewards), ("final_state", self.final_state)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contain non-finite values")

    @property
    def length(self) -> int:
        return len(self.states)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())

    def state_with_final(self) -> np.ndarray:
        """All L+1 states including the terminal one."""
        return np.vstack([self.states, self.final_state[None, :]])


@dataclass(frozen=True)
class SegmentView:
    """An n-step window fully contained in one episode."""

    episode: int
    start: int
    n: int


@dataclass
class SegmentDataset:
    """Array snapshot of extracted segments, ready for training kernels.

    history0[b] is the 4-frame observation window at the segment's first
    state (padded by repeating the episode's initial state near episode
    start); deltas hold per-step state differences with the TG-phase
    entries reduced modulo 2pi into [-pi, pi).
    """

    n: int
    history0: np.ndarray   # (B, 4, 18)
    actions: np.ndarray    # (B, n, 12)
    deltas: np.ndarray     # (B, n, 18)

    def __len__(self) -> int:
        return len(self.history0)


def circular_state_delta(s_next: np.ndarray, s_prev: np.ndarray) -> np.ndarray:
    """State difference with phase entries wrapped into [-pi, pi)."""
    d = s_next - s_prev
    ph = d[..., PHASE_START:]
    d[..., PHASE_START:] = np.mod(ph + np.pi, TWO_PI) - np.pi
    return d


class ReplayBuffer:
    """Append-only store of all collected trajectories."""

    def __init__(self):
        self.episodes: list[TrajectoryLog] = []

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def total_steps(self) -> int:
        return sum(ep.length for ep in self.episodes)

    def append_episode(self, log: TrajectoryLog):
        if not isinstance(log, TrajectoryLog):
            raise TypeError("append_episode expects a TrajectoryLog")
        self.episodes.append(log)

    def extract_segments(self, n: int) -> list[SegmentView]:
        """All stride-1 windows of n+1 states (n actions) per episode.

        Episodes shorter than n+1 contribute nothing; windows never cross
        episode boundaries. Deterministic episode-major order.
        """
        if n < 1:
            raise ValueError("n must be >= 1")
        views = []
        for e, ep in enumerate(self.episodes):
            for start in range(max(0, ep.length - n)):
                views.append(SegmentView(episode=e, start=start, n=n))
        return views

    def history_at(self, episode: int, t: int) -> np.ndarray:
        """Observation window (4, 18) at step t, oldest frame first."""
        ep = self.episodes[episode]
        frames = [ep.states[max(0, t - j)] for j in range(3, -1, -1)]
        return np.array(frames)

    def segment_dataset(self, n: int) -> SegmentDataset:
        views = self.extract_segments(n)
        B = len(views)
        history0 = np.empty((B, 4, STATE_DIM))
        actions = np.empty((B, n, ACTION_DIM))
        deltas = np.empty((B, n, STATE_DIM))
        for i, v in enumerate(views):
            ep = self.episodes[v.episode]
            t = v.start
            history0[i] = self.history_at(v.episode, t)
            actions[i] = ep.actions[t:t + n]
            deltas[i] = circular_state_delta(ep.states[t + 1:t + n + 1].copy(),
                                             ep.states[t:t + n])
        return SegmentDataset(n=n, history0=history0, actions=actions, deltas=deltas)

    def all_states(self) -> np.ndarray:
        return np.concatenate([ep.states for ep in self.episodes], axis=0)

    def all_actions(self) -> np.ndarray:
        return np.concatenate([ep.actions for ep in self.episodes], axis=0)

    def all_step_deltas(self) -> np.ndarray:
        outs = []
        for ep in self.episodes:
            if ep.length >= 2:
                outs.append(circular_state_delta(ep.states[1:].copy(), ep.states[:-1]))
        if not outs:
            raise ValueError("buffer holds no transitions")
        return np.concatenate(outs, axis=0)

    # ------------------------------------------------------------------ io

    def save(self, path: str | Path):
        path = Path(path)
        header = {
            "state_dim": STATE_DIM,
            "action_dim": ACTION_DIM,
            "episodes": [
                {
                    "length": ep.length,
                    "start_index": int(ep.indices[0]),
                    "seed": int(ep.seed),
                    "config_hash": ep.config_hash,
                    "termination": ep.termination,
                }
                for ep in self.episodes
            ],
        }
        blob = json.dumps(header).encode("utf-8")
        with open(path, "wb") as f:
            f.write(TRAJ_MAGIC)
            f.write(np.uint32(TRAJ_VERSION).tobytes())
            f.write(np.uint64(len(blob)).tobytes())
            f.write(blob)
            for ep in self.episodes:
                for arr in (ep.states, ep.actions, ep.rewards, ep.final_state):
                    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "ReplayBuffer":
        path = Path(path)
        raw = path.read_bytes()

        def take(n: int, what: str) -> bytes:
            nonlocal off
            if off + n > len(raw):
                raise ValueError(f"truncated .traj file: missing {what}")
            out = raw[off:off + n]
            off += n
            return out

        off = 0
        if take(8, "magic") != TRAJ_MAGIC:
            raise ValueError(f"{path} is not a .traj file")
        version = int(np.frombuffer(take(4, "version"), dtype="<u4")[0])
        if version != TRAJ_VERSION:
            raise ValueError(
                f"unsupported .traj version {version} (expected {TRAJ_VERSION})")
        hlen = int(np.frombuffer(take(8, "header length"), dtype="<u8")[0])
        header = json.loads(take(hlen, "header").decode("utf-8"))
        if header["state_dim"] != STATE_DIM or header["action_dim"] != ACTION_DIM:
            raise ValueError("dimension mismatch in .traj header")

        buf = cls()
        for meta in header["episodes"]:
            L = int(meta["length"])
            states = np.frombuffer(take(8 * L * STATE_DIM, "states"),
                                   dtype="<f8").reshape(L, STATE_DIM).copy()
            acts = np.frombuffer(take(8 * L * ACTION_DIM, "actions"),
                                 dtype="<f8").reshape(L, ACTION_DIM).copy()
            rews = np.frombuffer(take(8 * L, "rewards"), dtype="<f8").copy()
            final = np.frombuffer(take(8 * STATE_DIM, "final state"), dtype="<f8").copy()
            start = int(meta.get("start_index", 0))
            buf.append_episode(TrajectoryLog(
                states=states, actions=acts, rewards=rews, final_state=final,
                indices=np.arange(start, start + L, dtype=np.int64),
                seed=int(meta.get("seed", 0)),
                config_hash=meta.get("config_hash", ""),
                termination=meta.get("termination", "completed"),
            ))
        if off != len(raw):
            raise ValueError(f"trailing bytes in {path}")
        return buf
