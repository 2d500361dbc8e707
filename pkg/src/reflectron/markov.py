"""Finite Markov chains in the column-stochastic convention.

``P[j, i]`` is the probability of moving from node ``i`` to node ``j``, so
every column sums to one and distributions evolve as ``pi -> P @ pi``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from math import gcd

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import (
    DimensionMismatch,
    GapUnreachable,
    InvalidChain,
    NoConvergence,
    NonErgodic,
    NumericalFailure,
    ZeroStationaryMass,
)
from .tolerances import DEFAULT, Tolerances

CONVENTION = "column-stochastic"


class StochasticMatrix:
    """Immutable column-stochastic transition matrix."""

    def __init__(self, entries, tol: Tolerances = DEFAULT):
        m = np.array(entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise InvalidChain(f"transition matrix must be square and non-empty, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidChain("transition matrix has non-finite entries")
        if m.min() < 0.0 or m.max() > 1.0:
            raise InvalidChain("transition probabilities must lie in [0, 1]")
        colsum = m.sum(axis=0)
        bad = np.flatnonzero(np.abs(colsum - 1.0) > tol.column_sum)
        if bad.size:
            raise InvalidChain(f"column {bad[0]} sums to {colsum[bad[0]]!r}, not 1")
        m.setflags(write=False)
        self._m = m

    @property
    def matrix(self) -> np.ndarray:
        return self._m

    @property
    def n(self) -> int:
        return self._m.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self._m if dtype is None else self._m.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, StochasticMatrix):
            return NotImplemented
        return np.array_equal(self._m, other._m)

    def __hash__(self):
        return hash(self._m.tobytes())

    def __repr__(self):
        return f"StochasticMatrix(n={self.n})"

    @cached_property
    def is_irreducible(self) -> bool:
        n_comp, _ = connected_components(self._m.T > 0, directed=True, connection="strong")
        return n_comp == 1

    @cached_property
    def period(self) -> int:
        """Period of node 0: gcd of the lengths of cycles through it.

        Computed from BFS levels on the support graph, which is exact for an
        irreducible chain.
        """
        adj = self._m.T > 0  # adj[i, j]: edge i -> j
        level = np.full(self.n, -1)
        level[0] = 0
        frontier = [0]
        while frontier:
            nxt = []
            for i in frontier:
                for j in np.flatnonzero(adj[i]):
                    if level[j] < 0:
                        level[j] = level[i] + 1
                        nxt.append(int(j))
            frontier = nxt
        g = 0
        for i, j in zip(*np.nonzero(adj)):
            if level[i] >= 0 and level[j] >= 0:
                g = gcd(g, int(level[i] + 1 - level[j]))
        return g if g > 0 else 1

    @property
    def is_ergodic(self) -> bool:
        return self.is_irreducible and self.period == 1

    def to_dict(self) -> dict:
        return {"n": self.n, "columns": self._m.T.tolist(), "convention": CONVENTION}

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, data: dict) -> StochasticMatrix:
        try:
            n = int(data["n"])
            columns = data["columns"]
            convention = data.get("convention", CONVENTION)
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidChain(f"malformed chain document: {exc}") from exc
        if convention != CONVENTION:
            raise InvalidChain(f"unsupported convention {convention!r}")
        try:
            cols = np.array(columns, dtype=float)
        except (TypeError, ValueError) as exc:
            raise InvalidChain(f"malformed columns: {exc}") from exc
        if cols.shape != (n, n):
            raise InvalidChain(f"expected {n} columns of length {n}, got shape {cols.shape}")
        return cls(cols.T)

    @classmethod
    def from_json(cls, text: str) -> StochasticMatrix:
        return cls.from_dict(json.loads(text))


def _as_matrix(P) -> np.ndarray:
    return P.matrix if isinstance(P, StochasticMatrix) else np.asarray(P, dtype=float)


def as_distribution(mass, tol: Tolerances = DEFAULT) -> np.ndarray:
    """Validate and return ``mass`` as a float vector summing to one."""
    v = np.asarray(mass, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("a distribution is a non-empty 1-D vector")
    if np.any(v < 0):
        raise ValueError("a distribution has nonnegative entries")
    if abs(v.sum() - 1.0) > tol.distribution_sum:
        raise ValueError(f"distribution sums to {v.sum()!r}")
    return v


@dataclass(frozen=True)
class SpectralInfo:
    eigenvalues: np.ndarray  # sorted by descending modulus
    gap: float
    stationary: np.ndarray

    @property
    def second_modulus(self) -> float:
        return float(abs(self.eigenvalues[1])) if self.eigenvalues.size > 1 else 0.0


def _require_ergodic(P: StochasticMatrix) -> None:
    if not P.is_irreducible:
        raise NonErgodic("chain is reducible")
    if P.period != 1:
        raise NonErgodic(f"chain is periodic with period {P.period}")


def stationary_distribution(P: StochasticMatrix, tol: Tolerances = DEFAULT) -> np.ndarray:
    """Stationary distribution ``pi`` with ``P @ pi = pi``.

    Dense eigendecomposition up to ``tol.dense_stationary_max_n`` nodes, power
    iteration above that.
    """
    _require_ergodic(P)
    m = P.matrix
    n = P.n
    if n <= tol.dense_stationary_max_n:
        try:
            w, v = np.linalg.eig(m)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(str(exc)) from exc
        idx = int(np.argmin(np.abs(w - 1.0)))
        pi = np.real(v[:, idx])
        pi = pi / pi.sum()
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
    else:
        pi = np.full(n, 1.0 / n)
        for _ in range(tol.power_iteration_cap):
            nxt = m @ pi
            if 0.5 * np.abs(nxt - pi).sum() <= tol.stationary_residual * 1e-2:
                pi = nxt / nxt.sum()
                break
            pi = nxt
        else:
            raise NoConvergence(f"power iteration did not converge in {tol.power_iteration_cap} steps")
    if variational_distance(m @ pi, pi) > tol.stationary_residual:
        raise NumericalFailure("stationary vector failed the residual check")
    return pi


def spectral_info(P: StochasticMatrix, tol: Tolerances = DEFAULT) -> SpectralInfo:
    try:
        w = np.linalg.eigvals(P.matrix)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(str(exc)) from exc
    order = np.lexsort((-w.imag, -w.real, -np.abs(w)))
    w = w[order]
    if abs(w[0] - 1.0) > tol.leading_eigenvalue:
        raise NumericalFailure(f"leading eigenvalue {w[0]!r} is not 1")
    w[0] = 1.0
    gap = 1.0 - float(abs(w[1])) if w.size > 1 else 1.0
    return SpectralInfo(eigenvalues=w, gap=gap, stationary=stationary_distribution(P, tol))


def is_reversible(P: StochasticMatrix, pi, tol: Tolerances = DEFAULT) -> bool:
    flow = _as_matrix(P) * np.asarray(pi)[None, :]  # flow[j, i] = pi_i P[j, i]
    return bool(np.max(np.abs(flow - flow.T)) <= tol.reversibility)


def time_reversal(P: StochasticMatrix, pi, tol: Tolerances = DEFAULT) -> StochasticMatrix:
    """Time-reversed chain ``P*`` with ``P*[i, j] = pi_i P[j, i] / pi_j``."""
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0):
        raise ZeroStationaryMass("time reversal needs strictly positive stationary mass")
    flow = P.matrix * pi[None, :]
    rev = flow.T / pi[None, :]
    # renormalize away roundoff before validation
    rev = rev / rev.sum(axis=0, keepdims=True)
    return StochasticMatrix(rev, tol)


def mix(P: StochasticMatrix, pi0, t: int, ledger=None) -> np.ndarray:
    """Apply the chain ``t`` times to ``pi0``; charges ``t`` classical diffusions."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    out = np.linalg.matrix_power(P.matrix, t) @ np.asarray(pi0, dtype=float)
    if ledger is not None:
        ledger.classical_diffusions += t
    return out


def mixing_time_upper_bound(P: StochasticMatrix, eps: float, tol: Tolerances = DEFAULT) -> int:
    """Reversible-chain mixing-time bound ``ceil((max_i ln(1/pi_i) + ln(1/eps)) / gap)``.

    ``eps = 1`` is accepted as the degenerate limit.
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError("eps must lie in (0, 1]")
    info = spectral_info(P, tol)
    pi = info.stationary
    if np.any(pi <= 0):
        raise ZeroStationaryMass("mixing bound needs strictly positive stationary mass")
    value = (float(np.max(-np.log(pi))) + math.log(1.0 / eps)) / info.gap
    # absorb roundoff that would push an exact integer to the next one
    return max(0, math.ceil(value - 1e-9))


def variational_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"support sizes differ: {a.shape} vs {b.shape}")
    return 0.5 * float(np.abs(a - b).sum())


def rank_one_chain(column) -> StochasticMatrix:
    """Column-constant chain whose every column is ``column``."""
    c = as_distribution(column)
    return StochasticMatrix(np.repeat(c[:, None], c.size, axis=1))


def _tune_gap(m: np.ndarray, pi: np.ndarray, target_gap: float) -> np.ndarray:
    """Set the spectral gap of a reversible chain to ``target_gap`` exactly.

    The chain is first made lazy so that its spectrum lies in [0, 1].  A
    second eigenvalue above ``1 - target_gap`` is scaled down by convex
    mixing with the rank-1 chain built from ``pi`` (which shares ``pi`` and
    annihilates every other eigenvector); a second eigenvalue below it is
    raised by mixing with the identity.
    """
    n = m.shape[0]
    lazy = 0.5 * (np.eye(n) + m)
    sym = np.sqrt(pi)[:, None] ** -1 * lazy * np.sqrt(pi)[None, :]
    mu = np.sort(np.linalg.eigvalsh(0.5 * (sym + sym.T)))[::-1]
    mu2 = float(mu[1]) if n > 1 else 0.0
    goal = 1.0 - target_gap
    if mu2 >= goal:
        alpha = goal / mu2 if mu2 > 0 else 0.0
        rank1 = np.repeat(pi[:, None], n, axis=1)
        out = alpha * lazy + (1.0 - alpha) * rank1
    else:
        beta = (goal - mu2) / (1.0 - mu2)
        out = beta * np.eye(n) + (1.0 - beta) * lazy
    return out / out.sum(axis=0, keepdims=True)


def reversible_chain_with_stationary(pi, seed: int | np.random.Generator,
                                     target_gap: float | None = None) -> StochasticMatrix:
    """Random Metropolis chain reversible with respect to ``pi``."""
    pi = as_distribution(pi)
    if np.any(pi <= 0):
        raise ZeroStationaryMass("target stationary distribution must be positive")
    rng = np.random.default_rng(seed)
    n = pi.size
    w = rng.random((n, n)) + 0.05
    w = 0.5 * (w + w.T)
    np.fill_diagonal(w, 0.0)
    q = w / max(w.sum(axis=1).max(), 1e-300)
    m = q.T * np.minimum(1.0, pi[:, None] / pi[None, :])  # m[j, i] = q_ij min(1, pi_j / pi_i)
    np.fill_diagonal(m, 0.0)
    m[np.diag_indices(n)] = 1.0 - m.sum(axis=0)
    return _finish_chain(m, pi, target_gap)


def random_reversible_chain(n: int, seed: int, target_gap: float | None = None) -> StochasticMatrix:
    """Random dense reversible chain, deterministic per ``seed``.

    Edge weights are a random positive symmetric matrix, so the chain is
    irreducible and aperiodic with stationary mass proportional to weighted
    degree.  With ``target_gap`` the spectrum is rescaled to hit the gap.
    """
    if n < 2:
        raise ValueError("need at least two nodes")
    rng = np.random.default_rng(seed)
    w = rng.random((n, n)) + 0.01
    w = 0.5 * (w + w.T)
    deg = w.sum(axis=1)
    m = (w / deg[:, None]).T
    pi = deg / deg.sum()
    return _finish_chain(m, pi, target_gap)


def _finish_chain(m: np.ndarray, pi: np.ndarray, target_gap: float | None) -> StochasticMatrix:
    if target_gap is not None:
        if not 0.0 < target_gap <= 1.0:
            raise GapUnreachable(f"target gap {target_gap} outside (0, 1]")
        m = _tune_gap(m, pi, target_gap)
    m = m / m.sum(axis=0, keepdims=True)
    P = StochasticMatrix(m)
    if target_gap is not None:
        gap = spectral_info(P).gap
        if abs(gap - target_gap) > 0.1 * target_gap:
            raise GapUnreachable(f"achieved gap {gap:.4g} misses target {target_gap:.4g}")
    return P
