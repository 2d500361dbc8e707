"""Task environments, including ones that change their reward policy over time."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ledger import CostLedger

EPISODE_COLUMNS = ("step", "percept", "action", "reward", "internal_ops", "timed_out")


@dataclass(frozen=True)
class EnvironmentSpec:
    """Percept/action alphabet sizes and the reward policy.

    ``switch_period`` is the number of external steps between policy
    switches (0 keeps the policy fixed).  A switch applies the next entry of
    ``schedule`` if one is given, otherwise a seeded random derangement of
    the actions.  ``time_budget`` caps the internal operations the
    environment waits for per decision (0 disables the cap).
    """

    percepts: int
    actions: int
    reward_map: tuple[int, ...]
    switch_period: int = 0
    time_budget: int = 0
    seed: int = 0
    percept_order: str = "cycle"
    schedule: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if len(self.reward_map) != self.percepts:
            raise ValueError("reward_map needs one rewarded action per percept")
        if any(not 0 <= a < self.actions for a in self.reward_map):
            raise ValueError("reward_map refers to an unknown action")
        if self.switch_period < 0 or self.time_budget < 0:
            raise ValueError("switch_period and time_budget must be >= 0")
        if self.percept_order not in ("cycle", "uniform"):
            raise ValueError("percept_order must be 'cycle' or 'uniform'")
        if self.schedule is not None:
            for perm in self.schedule:
                if sorted(perm) != list(range(self.actions)):
                    raise ValueError("schedule entries must be permutations of the actions")


def random_derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform permutation of ``range(n)`` without fixed points (``n >= 2``)."""
    if n < 2:
        raise ValueError("a derangement needs at least two elements")
    while True:
        perm = rng.permutation(n)
        if np.all(perm != np.arange(n)):
            return perm


class Environment:
    def __init__(self, spec: EnvironmentSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.reward_map = list(spec.reward_map)
        self.time = 0
        self.switches = 0
        self.percept = self._next_percept()

    def _next_percept(self) -> int:
        if self.spec.percept_order == "uniform":
            return int(self.rng.integers(self.spec.percepts))
        return self.time % self.spec.percepts

    def _switch(self) -> None:
        if self.spec.schedule:
            perm = self.spec.schedule[self.switches % len(self.spec.schedule)]
        else:
            perm = random_derangement(self.spec.actions, self.rng)
        self.reward_map = [int(perm[a]) for a in self.reward_map]
        self.switches += 1

    def rewarded_action(self, percept: int | None = None) -> int:
        return self.reward_map[self.percept if percept is None else percept]

    def step(self, action: int, *, forfeit: bool = False) -> tuple[int, int]:
        """Reward the current percept's action and advance one external step.

        ``forfeit`` forces a zero reward (used when the agent ran out of time).
        """
        if not 0 <= action < self.spec.actions:
            raise ValueError(f"action {action} out of range")
        reward = 0 if forfeit else int(action == self.reward_map[self.percept])
        self.time += 1
        if self.spec.switch_period and self.time % self.spec.switch_period == 0:
            self._switch()
        self.percept = self._next_percept()
        return reward, self.percept


@dataclass
class EpisodeRecord:
    percept: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    internal_ops: np.ndarray
    timed_out: np.ndarray
    ledger: CostLedger = field(default_factory=CostLedger)

    def __len__(self) -> int:
        return int(self.reward.size)

    @property
    def reward_rate(self) -> float:
        return float(self.reward.mean()) if len(self) else 0.0

    def window_rate(self, start: int, stop: int | None = None) -> float:
        return float(self.reward[start:stop].mean())

    def rows(self):
        for i in range(len(self)):
            yield (i, int(self.percept[i]), int(self.action[i]), int(self.reward[i]),
                   int(self.internal_ops[i]), int(bool(self.timed_out[i])))

    def to_csv(self, target=None, header_comment: str | None = None) -> str | None:
        """Write the per-step table; returns the text when ``target`` is None."""
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(EPISODE_COLUMNS)
        writer.writerows(self.rows())
        if target is None:
            return buf.getvalue()
        Path(target).write_text(buf.getvalue())
        return None


def run_episode(agent, env: Environment, steps: int) -> EpisodeRecord:
    """Drive ``steps`` percept-action-reward cycles.

    The agent must expose ``deliberate(percept, ledger) -> action`` and
    ``learn(percept, action, reward)``.  If a deliberation spends more
    internal operations than the environment's budget, a uniformly random
    action is recorded instead, the reward is forfeited, and the agent learns
    from that forfeited step.
    """
    budget = env.spec.time_budget
    percepts = np.empty(steps, dtype=int)
    actions = np.empty(steps, dtype=int)
    rewards = np.empty(steps, dtype=int)
    ops = np.empty(steps, dtype=np.int64)
    timed_out = np.zeros(steps, dtype=bool)
    total = CostLedger()
    for i in range(steps):
        percept = env.percept
        ledger = CostLedger()
        action = agent.deliberate(percept, ledger)
        ops[i] = ledger.internal_ops
        total.add(ledger)
        if budget and ledger.internal_ops > budget:
            timed_out[i] = True
            action = int(env.rng.integers(env.spec.actions))
        reward, _ = env.step(action, forfeit=bool(timed_out[i]))
        agent.learn(percept, action, reward)
        percepts[i], actions[i], rewards[i] = percept, action, reward
    return EpisodeRecord(percepts, actions, rewards, ops, timed_out, total)
