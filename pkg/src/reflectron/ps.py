"""Projective Simulation memory and the two classical deliberation procedures.

Clips are dense integers: percept clips ``0 .. m-1`` followed by action clips
``m .. m+n-1``.  ``h[i, j]`` is the weight of the edge from clip ``i`` to
clip ``j``; zero means the edge does not exist.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ActionNotFlagged, DanglingClip, RetryCapExceeded, ZeroFlagMass
from .ledger import CostLedger, DeliberationOutcome
from .markov import StochasticMatrix, mixing_time_upper_bound, rank_one_chain, stationary_distribution
from .tolerances import DEFAULT, Tolerances


@dataclass
class ClipNetwork:
    n_percepts: int
    n_actions: int
    h: np.ndarray
    subnetworks: dict[int, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        self.h = np.array(self.h, dtype=float)
        size = self.n_percepts + self.n_actions
        if self.h.shape != (size, size):
            raise ValueError(f"h must be {size}x{size}, got {self.h.shape}")
        if np.any((self.h != 0) & (self.h < 1)) or np.any(self.h < 0):
            raise ValueError("edge weights must be 0 (no edge) or >= 1")
        actions = tuple(range(self.n_percepts, size))
        subs = {}
        for p in range(self.n_percepts):
            clips = tuple(self.subnetworks.get(p, (p,) + actions))
            if not set(actions) <= set(clips):
                raise ValueError(f"subnetwork of percept {p} must contain every action clip")
            subs[p] = clips
        self.subnetworks = subs

    @classmethod
    def two_layer(cls, n_percepts: int, n_actions: int) -> ClipNetwork:
        """Every percept linked to every action with unit weight."""
        size = n_percepts + n_actions
        h = np.zeros((size, size))
        h[:n_percepts, n_percepts:] = 1.0
        return cls(n_percepts, n_actions, h)

    @property
    def n_clips(self) -> int:
        return self.n_percepts + self.n_actions

    def action_clip(self, action: int) -> int:
        return self.n_percepts + action

    def is_action_clip(self, clip: int) -> bool:
        return clip >= self.n_percepts

    def copy(self) -> ClipNetwork:
        return ClipNetwork(self.n_percepts, self.n_actions, self.h.copy(), dict(self.subnetworks))

    def percept_action_probs(self, percept: int) -> np.ndarray:
        """One-hop probabilities from a percept clip onto the action clips."""
        row = self.h[percept, self.n_percepts:]
        total = row.sum()
        if total <= 0:
            raise DanglingClip(f"percept clip {percept} has no edge to any action")
        return row / total


@dataclass(frozen=True)
class FlagSet:
    n_actions: int
    flags: dict[int, frozenset[int]]

    def __post_init__(self):
        for p, f in self.flags.items():
            if not f:
                raise ValueError(f"flag set of percept {p} is empty")
            if min(f) < 0 or max(f) >= self.n_actions:
                raise ValueError(f"flag set of percept {p} has an out-of-range action")

    @classmethod
    def full(cls, n_percepts: int, n_actions: int) -> FlagSet:
        every = frozenset(range(n_actions))
        return cls(n_actions, {p: every for p in range(n_percepts)})

    def __getitem__(self, percept: int) -> frozenset[int]:
        return self.flags[percept]


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.0
    lam: float = 1.0
    k1: int = 4
    # retry cap for a deliberation is ceil(k3 / eps)
    k3: int = 64
    rng_seed: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.k1 < 1 or self.k3 < 1:
            raise ValueError("k1 and k3 must be >= 1")


# ---------------------------------------------------------------------------
# memory updates

def damp_and_reinforce(h: np.ndarray, gamma, lam, reinforce) -> np.ndarray:
    """``h - gamma (h - 1) + lam * reinforce`` on existing edges (``h > 0``).

    Arguments broadcast, so a batch of weight vectors can carry its own
    ``gamma`` and ``lam`` as column arrays.
    """
    h = np.asarray(h, dtype=float)
    out = h - gamma * (h - 1.0) + np.where(reinforce, lam, 0.0)
    return np.where(h > 0, out, 0.0)


def update_h(net: ClipNetwork, traversed_edges, rewarded: bool, cfg: AgentConfig) -> ClipNetwork:
    """Dissipate every edge towards 1; add ``lam`` to traversed edges when rewarded."""
    mask = np.zeros_like(net.h, dtype=bool)
    for i, j in traversed_edges:
        if net.h[i, j] <= 0:
            raise ValueError(f"edge ({i}, {j}) does not exist")
        mask[i, j] = True
    out = net.copy()
    out.h = damp_and_reinforce(net.h, cfg.gamma, cfg.lam, mask & bool(rewarded))
    return out


def flag_update(flags: FlagSet, percept: int, action: int, rewarded: bool) -> FlagSet:
    current = flags[percept]
    if action not in current:
        raise ActionNotFlagged(f"action {action} is not flagged for percept {percept}")
    if rewarded:
        return flags
    remaining = current - {action}
    if not remaining:
        remaining = frozenset(range(flags.n_actions))
    new = dict(flags.flags)
    new[percept] = remaining
    return FlagSet(flags.n_actions, new)


# ---------------------------------------------------------------------------
# chains derived from the network

def transition_matrix_from_h(net: ClipNetwork, percept: int) -> StochasticMatrix:
    """Chain over the percept's subnetwork; column ``i`` is clip ``i``'s normalized row."""
    clips = np.asarray(net.subnetworks[percept])
    sub = net.h[np.ix_(clips, clips)]
    sums = sub.sum(axis=1)
    if np.any(sums <= 0):
        bad = clips[np.flatnonzero(sums <= 0)[0]]
        raise DanglingClip(f"clip {bad} has no outgoing edge inside the subnetwork of percept {percept}")
    return StochasticMatrix((sub / sums[:, None]).T)


def simple_rps_from_standard(net: ClipNetwork, percept: int) -> StochasticMatrix:
    """Rank-one chain over actions whose columns all equal the percept's action probabilities."""
    return rank_one_chain(net.percept_action_probs(percept))


def tailed_distribution(pi, flagged) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    idx = np.asarray(sorted(flagged), dtype=int)
    if idx.size == 0:
        raise ValueError("flag set must be non-empty")
    mass = pi[idx].sum()
    if mass <= 0:
        raise ZeroFlagMass("flagged entries carry no stationary mass")
    out = np.zeros_like(pi)
    out[idx] = pi[idx] / mass
    return out


# ---------------------------------------------------------------------------
# deliberation

def _flag_mask(n: int, flagged) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    idx = np.asarray(sorted(flagged), dtype=int)
    if idx.size == 0:
        raise ValueError("flag set must be non-empty")
    mask[idx] = True
    return mask


def _retry_cap(k3: int, eps: float) -> int:
    return math.ceil(k3 / eps)


def mixed_kernel(P: StochasticMatrix, k1: int) -> tuple[np.ndarray, int]:
    """``P^t`` with ``t`` the mixing bound for precision ``exp(-k1)``."""
    t = mixing_time_upper_bound(P, math.exp(-k1))
    return np.linalg.matrix_power(P.matrix, t), t


def classical_rps_deliberate(P: StochasticMatrix, flagged, cfg: AgentConfig, ledger: CostLedger | None = None,
                             rng: np.random.Generator | None = None, *, pi0=None,
                             tol: Tolerances = DEFAULT) -> DeliberationOutcome:
    """Mix from the last sample for ``t_mix`` steps, sample, stop on a flagged node."""
    ledger = CostLedger() if ledger is None else ledger
    rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng
    mask = _flag_mask(P.n, flagged)
    pi = stationary_distribution(P, tol)
    eps = pi[mask].sum()
    if eps <= 0:
        raise ZeroFlagMass("flagged nodes carry no stationary mass")
    kernel, t_mix = mixed_kernel(P, cfg.k1)
    start = np.full(P.n, 1.0 / P.n) if pi0 is None else np.asarray(pi0, dtype=float)
    y = int(rng.choice(P.n, p=start))
    for sample in range(1, _retry_cap(cfg.k3, eps) + 1):
        column = kernel[:, y]
        ledger.classical_diffusions += t_mix
        y = int(rng.choice(P.n, p=column / column.sum()))
        ledger.classical_checks += 1
        if mask[y]:
            return DeliberationOutcome(y, ledger, sample)
    raise RetryCapExceeded(f"no flagged node after {_retry_cap(cfg.k3, eps)} samples")


@dataclass
class BatchResult:
    """Outcomes and per-trial costs of many independent deliberations."""

    actions: np.ndarray
    samples: np.ndarray
    ledger: CostLedger  # summed over trials
    per_trial: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def trials(self) -> int:
        return int(self.actions.size)

    def mean(self, counter: str) -> float:
        return getattr(self.ledger, counter) / self.trials

    def frequencies(self, n: int) -> np.ndarray:
        return np.bincount(self.actions, minlength=n) / self.trials


def _sample_columns(cdf: np.ndarray, cols: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one index from each selected column of a column-cumulative matrix."""
    u = rng.random(cols.size)
    c = cdf[:, cols]
    out = (c < u[None, :] * c[-1][None, :]).sum(axis=0)
    return np.minimum(out, cdf.shape[0] - 1)


def classical_rps_batch(P: StochasticMatrix, flagged, cfg: AgentConfig, rng: np.random.Generator,
                        trials: int, *, pi0=None, tol: Tolerances = DEFAULT) -> BatchResult:
    """``trials`` independent runs of :func:`classical_rps_deliberate`, vectorized."""
    mask = _flag_mask(P.n, flagged)
    pi = stationary_distribution(P, tol)
    eps = pi[mask].sum()
    if eps <= 0:
        raise ZeroFlagMass("flagged nodes carry no stationary mass")
    kernel, t_mix = mixed_kernel(P, cfg.k1)
    cdf = np.cumsum(kernel, axis=0)
    start = np.full(P.n, 1.0 / P.n) if pi0 is None else np.asarray(pi0, dtype=float)
    y = rng.choice(P.n, size=trials, p=start)
    actions = np.full(trials, -1)
    samples = np.zeros(trials, dtype=np.int64)
    active = np.arange(trials)
    cap = _retry_cap(cfg.k3, eps)
    for _ in range(cap):
        if active.size == 0:
            break
        y_new = _sample_columns(cdf, y[active], rng)
        y[active] = y_new
        samples[active] += 1
        hit = mask[y_new]
        actions[active[hit]] = y_new[hit]
        active = active[~hit]
    if active.size:
        raise RetryCapExceeded(f"{active.size} trials found no flagged node after {cap} samples")
    total = int(samples.sum())
    ledger = CostLedger(classical_diffusions=t_mix * total, classical_checks=total)
    return BatchResult(actions, samples, ledger,
                       {"classical_diffusions": t_mix * samples, "classical_checks": samples.copy()})


def standard_ps_deliberate(net: ClipNetwork, percept: int, flags, rng: np.random.Generator,
                           ledger: CostLedger | None = None, *, retry_cap: int = 100_000,
                           path: list | None = None) -> DeliberationOutcome:
    """Random walk on the clip network from the percept clip.

    The first action clip reached is emitted when flagged; otherwise the walk
    restarts from the percept.  If ``path`` is given it receives the edges of
    the successful walk.
    """
    ledger = CostLedger() if ledger is None else ledger
    flagged = flags[percept] if isinstance(flags, FlagSet) else frozenset(flags)
    h = net.h
    for attempt in range(1, retry_cap + 1):
        clip = percept
        edges = []
        while True:
            row = h[clip]
            total = row.sum()
            if total <= 0:
                raise DanglingClip(f"clip {clip} has no outgoing edge")
            nxt = int(rng.choice(row.size, p=row / total))
            ledger.classical_diffusions += 1
            edges.append((clip, nxt))
            clip = nxt
            if net.is_action_clip(clip):
                break
        ledger.classical_checks += 1
        action = clip - net.n_percepts
        if action in flagged:
            if path is not None:
                path[:] = edges
            return DeliberationOutcome(action, ledger, attempt)
    raise RetryCapExceeded(f"no flagged action after {retry_cap} walks")


def standard_ps_batch(net: ClipNetwork, percept: int, flagged, rng: np.random.Generator,
                      trials: int, *, retry_cap: int = 100_000) -> BatchResult:
    """Vectorized :func:`standard_ps_deliberate` for two-layer networks (one hop per walk)."""
    probs = net.percept_action_probs(percept)
    if np.any(net.h[percept, :net.n_percepts] > 0):
        raise ValueError("batched sampling needs a two-layer network")
    mask = _flag_mask(net.n_actions, flagged)
    cdf = np.cumsum(probs)[:, None]
    actions = np.full(trials, -1)
    samples = np.zeros(trials, dtype=np.int64)
    active = np.arange(trials)
    for _ in range(retry_cap):
        if active.size == 0:
            break
        a = _sample_columns(cdf, np.zeros(active.size, dtype=int), rng)
        samples[active] += 1
        hit = mask[a]
        actions[active[hit]] = a[hit]
        active = active[~hit]
    if active.size:
        raise RetryCapExceeded(f"{active.size} trials found no flagged action after {retry_cap} walks")
    total = int(samples.sum())
    return BatchResult(actions, samples, CostLedger(classical_diffusions=total, classical_checks=total),
                       {"classical_diffusions": samples.copy(), "classical_checks": samples.copy()})


# ---------------------------------------------------------------------------
# serialization

def ecm_to_dict(net: ClipNetwork, flags: FlagSet | None = None) -> dict:
    rows, cols = np.nonzero(net.h)
    data = {
        "percepts": list(range(net.n_percepts)),
        "actions": list(range(net.n_percepts, net.n_clips)),
        "h": [[int(i), int(j), float(net.h[i, j])] for i, j in zip(rows, cols)],
        "flags": {str(p): sorted(int(a) for a in f) for p, f in (flags.flags.items() if flags else [])},
    }
    default = ClipNetwork(net.n_percepts, net.n_actions, net.h).subnetworks
    if net.subnetworks != default:
        data["subnetworks"] = {str(p): list(c) for p, c in net.subnetworks.items()}
    return data


def ecm_to_json(net: ClipNetwork, flags: FlagSet | None = None) -> str:
    return json.dumps(ecm_to_dict(net, flags))


def ecm_from_json(text: str) -> tuple[ClipNetwork, FlagSet]:
    data = json.loads(text)
    m, n = len(data["percepts"]), len(data["actions"])
    h = np.zeros((m + n, m + n))
    for i, j, w in data["h"]:
        h[int(i), int(j)] = float(w)
    subs = {int(p): tuple(c) for p, c in data.get("subnetworks", {}).items()}
    net = ClipNetwork(m, n, h, subs)
    raw = data.get("flags") or {}
    flags = FlagSet(n, {int(p): frozenset(a) for p, a in raw.items()}) if raw else FlagSet.full(m, n)
    return net, flags
