"""State-vector simulation of the quantum reflecting agent.

The walk lives on two node registers, indexed ``i * n + j`` for ``|i>|j>``,
plus ``k`` phase-estimation rounds of ``s`` ancilla qubits each.

Ancilla handling
----------------
The approximate reflection acts on a ``W`` eigenvector with eigenphase
``phi`` as ``|e> (x) (2 |u(phi)><u(phi)| - I)`` on the ancillas, where
``|u(phi)> = PE(phi)^dagger |0...0>`` is a product of ``k`` identical
``s``-qubit vectors.  Starting from ``|0...0> = |u(0)>``, the ancillas
therefore never leave ``span{|u(phi)> : phi an eigenphase of W}``, which
has at most ``n**2`` members.  :class:`QuantumState` stores coefficients over
that (non-orthogonal) family and evaluates inner products through the closed
form Gram matrix, so the simulation is exact without materialising
``2**(k*s)`` ancilla amplitudes.  :meth:`QuantumState.to_dense` expands to the
full vector when needed, and :func:`dense_aro_circuit` builds the textbook
circuit as an independent check.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import AncillaNotClean, DegenerateBranch, RetryCapExceeded, ZeroFlagMass
from .ledger import CostLedger, DeliberationOutcome
from .markov import StochasticMatrix, spectral_info, time_reversal
from .ps import BatchResult, _sample_columns
from .tolerances import DEFAULT, Tolerances

REFLECTION_MODES = ("ideal", "approximate")
RETRY_MODES = ("reprepare", "povm")


# ---------------------------------------------------------------------------
# diffusion operators and the walk

def householder_completion(p: np.ndarray) -> np.ndarray:
    """Real orthogonal matrix whose first column is the unit vector ``p``."""
    n = p.size
    e0 = np.zeros(n)
    e0[0] = 1.0
    v = e0 - p
    nv = v @ v
    if nv < 1e-30:
        return np.eye(n)
    return np.eye(n) - 2.0 * np.outer(v, v) / nv


def diffusion_U_matrix(P: StochasticMatrix) -> np.ndarray:
    """``U_P |i>|0> = |i>|p_i>``, completed blockwise by Householder reflections."""
    n = P.n
    U = np.zeros((n * n, n * n))
    for i in range(n):
        U[i * n:(i + 1) * n, i * n:(i + 1) * n] = householder_completion(np.sqrt(P.matrix[:, i]))
    return U


def diffusion_V_matrix(P_star: StochasticMatrix) -> np.ndarray:
    """``V_P |0>|j> = |p*_j>|j>`` with ``|p*_j> = sum_i sqrt(P*[i, j]) |i>``."""
    n = P_star.n
    V = np.zeros((n * n, n * n))
    rows = np.arange(n) * n
    for j in range(n):
        B = householder_completion(np.sqrt(P_star.matrix[:, j]))
        V[np.ix_(rows + j, rows + j)] = B
    return V


def swap_matrix(n: int) -> np.ndarray:
    idx = np.arange(n * n)
    i, j = divmod(idx, n)
    S = np.zeros((n * n, n * n))
    S[j * n + i, idx] = 1.0
    return S


def walk_vectors(P: StochasticMatrix, P_star: StochasticMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Columns ``|i>|p_i>`` and ``|p*_j>|j>``, each an orthonormal family."""
    n = P.n
    A = np.zeros((n * n, n))
    B = np.zeros((n * n, n))
    for i in range(n):
        A[i * n:(i + 1) * n, i] = np.sqrt(P.matrix[:, i])
        B[np.arange(n) * n + i, i] = np.sqrt(P_star.matrix[:, i])
    return A, B


def _phase_groups(eigvals: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Cluster unit-modulus eigenvalues; group 0 is the exact phase 0."""
    reps = [1.0 + 0.0j]
    labels = np.empty(eigvals.size, dtype=int)
    for e, lam in enumerate(eigvals):
        d = np.abs(np.asarray(reps) - lam)
        g = int(np.argmin(d))
        if d[g] < tol:
            labels[e] = g
        else:
            reps.append(lam / abs(lam))
            labels[e] = len(reps) - 1
    phases = np.angle(np.asarray(reps))
    phases[0] = 0.0
    return phases, labels


class WalkSpec:
    """Everything the quantum agent needs about one chain ``P``.

    Holds ``P``, its time reversal, the stationary distribution, the spectral
    gap ``delta`` and the phase gap of the walk operator, together with the
    dense ``U``, ``V`` and ``W`` matrices and the eigendecomposition of ``W``.
    """

    def __init__(self, P: StochasticMatrix, tol: Tolerances = DEFAULT):
        info = spectral_info(P, tol)
        self.P = P
        self.pi = info.stationary
        self.P_star = time_reversal(P, self.pi, tol)
        self.delta = info.gap
        self.lambda2 = info.second_modulus
        self.eigenvalues_P = info.eigenvalues
        self.tol = tol
        n = P.n
        self.n = n
        self.U = diffusion_U_matrix(P)
        self.V = diffusion_V_matrix(self.P_star)
        ref0_second = np.tile(np.r_[1.0, -np.ones(n - 1)], n)  # 2 (I (x) |0><0|) - I
        ref0_first = np.repeat(np.r_[1.0, -np.ones(n - 1)], n)  # 2 (|0><0| (x) I) - I
        R1 = (self.U * ref0_second[None, :]) @ self.U.T
        R2 = (self.V * ref0_first[None, :]) @ self.V.T
        self.W = R2 @ R1
        T, Z = scipy.linalg.schur(self.W.astype(complex), output="complex")
        self.eigvals_W = np.diag(T).copy()
        self.Z = Z
        self.group_phases, self.group_of = _phase_groups(self.eigvals_W, tol.phase_merge)
        self._gram_cache: dict[tuple[int, int], np.ndarray] = {}

    @classmethod
    def from_chain(cls, P: StochasticMatrix, tol: Tolerances = DEFAULT) -> WalkSpec:
        return cls(P, tol)

    @cached_property
    def pi_init(self) -> np.ndarray:
        """``sum_i sqrt(pi_i) |i>|p_i>``."""
        return (np.sqrt(self.pi)[:, None] * np.sqrt(self.P.matrix.T)).reshape(-1)

    @cached_property
    def span_basis(self) -> np.ndarray:
        """Orthonormal basis of ``Span{|i>|p_i>} + Span{|p*_j>|j>}``."""
        A, B = walk_vectors(self.P, self.P_star)
        u, sv, _ = np.linalg.svd(np.hstack([A, B]), full_matrices=False)
        return u[:, sv > 1e-10 * sv[0]]

    @cached_property
    def span_phases(self) -> np.ndarray:
        """Eigenphases of ``W`` restricted to the walk span."""
        Q = self.span_basis
        return np.angle(np.linalg.eigvals(Q.T @ self.W @ Q))

    @property
    def phase_gap(self) -> float:
        return phase_gap(self)

    def gram(self, k: int, s: int) -> np.ndarray:
        key = (k, s)
        if key not in self._gram_cache:
            self._gram_cache[key] = ancilla_gram(self.group_phases, k, s)
        return self._gram_cache[key]


def phase_gap(spec: WalkSpec) -> float:
    """Minimum nonzero eigenphase magnitude of ``W`` on the walk span.

    For reversible chains this equals ``2 * arccos(|lambda_2|)``.
    """
    ph = np.abs(spec.span_phases)
    nonzero = ph[ph > 1e-7]
    if nonzero.size == 0:
        return math.pi
    return float(nonzero.min())


def walk_operator(spec: WalkSpec, state: QuantumState, ledger: CostLedger | None = None) -> QuantumState:
    """One application of ``W(P)``; four diffusion-operator calls."""
    if ledger is not None:
        ledger.quantum_diffusion_calls += 4
    return state._with(spec.W @ state.coeffs)


def apply_diffusion_U(P_or_spec, state: QuantumState, ledger: CostLedger | None = None) -> QuantumState:
    U = P_or_spec.U if isinstance(P_or_spec, WalkSpec) else diffusion_U_matrix(P_or_spec)
    if ledger is not None:
        ledger.quantum_diffusion_calls += 1
    return state._with(U @ state.coeffs)


def apply_diffusion_V(P_star_or_spec, state: QuantumState, ledger: CostLedger | None = None) -> QuantumState:
    V = P_star_or_spec.V if isinstance(P_star_or_spec, WalkSpec) else diffusion_V_matrix(P_star_or_spec)
    if ledger is not None:
        ledger.quantum_diffusion_calls += 1
    return state._with(V @ state.coeffs)


# ---------------------------------------------------------------------------
# ancilla algebra

def round_vector(phi: float, s: int) -> np.ndarray:
    """``PE(phi)^dagger |0>`` for one ``s``-qubit round: ``H^(x)s`` of ``exp(-i x phi)/sqrt(N)``."""
    N = 2 ** s
    x = np.arange(N)
    had = scipy.linalg.hadamard(N) / math.sqrt(N)
    return had @ (np.exp(-1j * x * phi) / math.sqrt(N))


def zero_amplitude(phi, s: int) -> np.ndarray:
    """``<0|PE(phi)^dagger|0>`` for one round, i.e. ``mean_x exp(-i x phi)``."""
    N = 2 ** s
    x = np.arange(N)
    return np.exp(-1j * np.multiply.outer(np.asarray(phi), x)).mean(axis=-1)


def ancilla_gram(phases: np.ndarray, k: int, s: int) -> np.ndarray:
    """Gram matrix of ``|u(phi_a)>^(x)k`` over the given phases."""
    if k == 0 or s == 0:
        return np.ones((phases.size, phases.size), dtype=complex)
    N = 2 ** s
    x = np.arange(N)
    # one round: <u_a|u_b> = (1/N) sum_x exp(i x (phi_a - phi_b))
    diff = phases[:, None] - phases[None, :]
    g = np.exp(1j * np.multiply.outer(diff, x)).mean(axis=-1)
    return g ** k


@dataclass
class QuantumState:
    """Walk registers plus ``k`` rounds of ``s`` ancilla qubits.

    ``coeffs[r, b]`` is the coefficient of ``|r> (x) |u(phases[b])>^(x)k``
    where ``r = i * n + j`` indexes the two node registers.
    """

    n: int
    k: int
    s: int
    coeffs: np.ndarray
    phases: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.ndim == 1:
            self.coeffs = self.coeffs[:, None]
        self.phases = np.asarray(self.phases, dtype=float)
        if self.coeffs.shape != (self.n * self.n, self.phases.size):
            raise ValueError(f"coefficient shape {self.coeffs.shape} does not match n={self.n}, "
                             f"{self.phases.size} ancilla basis vectors")

    @classmethod
    def from_system(cls, vec, n: int, k: int = 0, s: int = 0) -> QuantumState:
        """State ``|vec> (x) |0...0>``."""
        return cls(n, k, s, np.asarray(vec, dtype=complex).reshape(-1, 1), np.zeros(1))

    def _with(self, coeffs: np.ndarray) -> QuantumState:
        out = QuantumState.__new__(QuantumState)
        out.n, out.k, out.s, out.phases = self.n, self.k, self.s, self.phases
        out.coeffs = coeffs
        if "gram" in self.__dict__:
            out.__dict__["gram"] = self.__dict__["gram"]
        return out

    def copy(self) -> QuantumState:
        return self._with(self.coeffs.copy())

    @cached_property
    def gram(self) -> np.ndarray:
        return ancilla_gram(self.phases, self.k, self.s)

    @property
    def dim(self) -> int:
        return self.n * self.n * 2 ** (self.k * self.s)

    def row_weights(self) -> np.ndarray:
        """Squared norm of each two-register basis component."""
        c = self.coeffs
        return np.einsum("ra,ab,rb->r", c.conj(), self.gram, c).real

    def norm(self) -> float:
        return math.sqrt(max(self.row_weights().sum(), 0.0))

    def first_register_probs(self) -> np.ndarray:
        w = np.clip(self.row_weights(), 0.0, None).reshape(self.n, self.n).sum(axis=1)
        return w / w.sum()

    def ancilla_zero_weight(self) -> float:
        """Squared norm of the component with every ancilla in ``|0>``."""
        z = zero_amplitude(self.phases, self.s) ** self.k if self.k and self.s else np.ones(self.phases.size)
        amp = self.coeffs @ z
        return float(np.vdot(amp, amp).real)

    def system_vector(self) -> np.ndarray:
        """Two-register amplitudes of the ancilla-``|0>`` component."""
        z = zero_amplitude(self.phases, self.s) ** self.k if self.k and self.s else np.ones(self.phases.size)
        return self.coeffs @ z

    def to_dense(self) -> np.ndarray:
        """Full amplitude vector, index ``(i * n + j) * 2**(k*s) + ancilla``."""
        if self.k == 0 or self.s == 0:
            return self.coeffs.sum(axis=1)
        rows = []
        for phi in self.phases:
            u1 = round_vector(phi, self.s)
            u = u1
            for _ in range(self.k - 1):
                u = np.kron(u, u1)
            rows.append(u)
        return (self.coeffs @ np.asarray(rows)).reshape(-1)

    def in_basis(self, phases: np.ndarray) -> QuantumState:
        """Re-express over ``phases``, which must contain every current basis phase."""
        if self.phases.size == phases.size and np.array_equal(self.phases, phases):
            return self
        idx = []
        for phi in self.phases:
            hit = np.flatnonzero(np.abs(np.exp(1j * phases) - np.exp(1j * phi)) < 1e-12)
            if hit.size == 0:
                raise ValueError(f"ancilla phase {phi!r} missing from target basis")
            idx.append(hit[0])
        coeffs = np.zeros((self.coeffs.shape[0], phases.size), dtype=complex)
        np.add.at(coeffs, (slice(None), np.asarray(idx)), self.coeffs)
        return QuantumState(self.n, self.k, self.s, coeffs, phases)

    def combine(self, a: complex, other: QuantumState, b: complex) -> QuantumState:
        """``a * self + b * other`` (not normalized)."""
        phases = self.phases
        extra = [p for p in other.phases if not np.any(np.abs(np.exp(1j * phases) - np.exp(1j * p)) < 1e-12)]
        if extra:
            phases = np.concatenate([phases, extra])
        x = self.in_basis(phases)
        y = other.in_basis(phases)
        return QuantumState(self.n, self.k, self.s, a * x.coeffs + b * y.coeffs, phases)

    def inner(self, other: QuantumState) -> complex:
        """``<self|other>``."""
        both = self.combine(1.0, other, 0.0)
        x = self.in_basis(both.phases)
        y = other.in_basis(both.phases)
        return complex(np.einsum("ra,ab,rb->", x.coeffs.conj(), x.gram, y.coeffs))


# ---------------------------------------------------------------------------
# reflections

def check_reflection(flagged, state: QuantumState, ledger: CostLedger | None = None) -> QuantumState:
    """Phase ``-1`` on every component whose first register is flagged."""
    n = state.n
    sign = np.ones(n)
    sign[np.asarray(sorted(flagged), dtype=int)] = -1.0
    if ledger is not None:
        ledger.quantum_check_reflections += 1
    return state._with(state.coeffs * np.repeat(sign, n)[:, None])


def ideal_reflection(pi_state: np.ndarray, state: QuantumState) -> QuantumState:
    """Exact ``2|pi><pi| - I`` on the node registers (test oracle, not charged)."""
    v = np.asarray(pi_state, dtype=complex)
    c = state.coeffs
    return state._with(2.0 * np.outer(v, v.conj() @ c) - c)


@dataclass(frozen=True)
class QuantumParams:
    s: int = 1
    k: int = 1
    check_cap: int = 1
    retry_cap: int = 64
    reflection_mode: str = "approximate"
    retry_mode: str = "reprepare"
    adaptive: bool = False
    preparation: str = "encoded"

    def __post_init__(self):
        if self.s < 1 or self.k < 1 or self.check_cap < 1 or self.retry_cap < 1:
            raise ValueError("s, k, check_cap and retry_cap must all be >= 1")
        if self.reflection_mode not in REFLECTION_MODES:
            raise ValueError(f"reflection_mode must be one of {REFLECTION_MODES}")
        if self.retry_mode not in RETRY_MODES:
            raise ValueError(f"retry_mode must be one of {RETRY_MODES}")

    @classmethod
    def for_walk(cls, spec: WalkSpec, flagged, *, k_base: int = 2, s_margin: int = 2,
                 check_constant: float = math.pi / 4, k_log_boost: bool = True, **kw) -> QuantumParams:
        """Parameters scaled to the chain and flag set.

        ``s = ceil(log2(1/Delta)) + s_margin``, ``T = ceil(check_constant / sqrt(eps))``
        and ``k = k_base``, plus ``ceil(log2(1/sqrt(eps)))`` when ``k_log_boost``.
        """
        eps = flagged_mass(spec.pi, flagged)
        s = max(1, math.ceil(math.log2(1.0 / spec.phase_gap) - 1e-12) + s_margin)
        boost = max(0, math.ceil(math.log2(1.0 / math.sqrt(eps)) - 1e-12)) if k_log_boost else 0
        T = max(1, math.ceil(check_constant / math.sqrt(eps) - 1e-12))
        return cls(s=s, k=k_base + boost, check_cap=T, **kw)

    @property
    def controlled_walk_calls(self) -> int:
        """Controlled ``W`` / ``W^dagger`` applications per reflection: ``2 k (2^s - 1)``."""
        return 2 * self.k * (2 ** self.s - 1)


def approximate_reflection(spec: WalkSpec, params: QuantumParams, state: QuantumState,
                           ledger: CostLedger | None = None, *, require_clean: bool = True) -> QuantumState:
    """Phase-estimation reflection about ``|pi_init>``.

    Runs ``k`` independent ``s``-qubit phase-estimation rounds on ``W``,
    flips the sign unless every round reads zero, and uncomputes the rounds.
    ``require_clean=False`` lets a deliberation reuse ancillas that carry the
    residue of earlier reflections.
    """
    k, s = params.k, params.s
    if state.k != k or state.s != s:
        if np.any(state.phases != 0.0) or state.phases.size != 1:
            raise ValueError("state ancilla layout does not match params")
        state = QuantumState(state.n, k, s, state.coeffs, state.phases)
    if require_clean:
        total = state.norm() ** 2
        if total - state.ancilla_zero_weight() > spec.tol.ancilla_clean * max(total, 1.0):
            raise AncillaNotClean("ancilla register is not in |0...0>")
    phases = spec.group_phases
    if state.phases.size != phases.size or not np.array_equal(state.phases, phases):
        st = state.in_basis(_merge_phases(phases, state.phases))
    else:
        st = state
    basis = st.phases
    # ancilla basis index of each W eigenvector's group
    col_of_group = np.array([_phase_index(basis, p) for p in phases])
    idx = col_of_group[spec.group_of]
    G = st.gram
    Ce = spec.Z.conj().T @ st.coeffs
    inner = np.einsum("eb,eb->e", G[idx, :], Ce)
    out = -Ce
    out[np.arange(Ce.shape[0]), idx] += 2.0 * inner
    if ledger is not None:
        ledger.aro_invocations += 1
        ledger.quantum_diffusion_calls += 4 * params.controlled_walk_calls
    return st._with(spec.Z @ out)


def _merge_phases(base: np.ndarray, extra: np.ndarray) -> np.ndarray:
    add = [p for p in extra if not np.any(np.abs(np.exp(1j * base) - np.exp(1j * p)) < 1e-12)]
    return np.concatenate([base, add]) if add else base


def _phase_index(basis: np.ndarray, phi: float) -> int:
    return int(np.flatnonzero(np.abs(np.exp(1j * basis) - np.exp(1j * phi)) < 1e-12)[0])


def dense_aro_circuit(W: np.ndarray, s: int, k: int) -> tuple[np.ndarray, int]:
    """Textbook circuit for the approximate reflection as a dense matrix.

    Each round applies Hadamards, controlled ``W^(2^t)`` on bit ``t`` and an
    inverse QFT; the phase flip marks every nonzero ancilla string; the
    rounds are then undone.  Returns the matrix and the number of
    controlled-``W`` applications it uses.  Only feasible for tiny sizes.
    """
    d = W.shape[0]
    N = 2 ** s
    A = N ** k
    D = d * A
    had = scipy.linalg.hadamard(N) / math.sqrt(N)
    y, x = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    qft = np.exp(2j * math.pi * x * y / N) / math.sqrt(N)
    anc = np.arange(A)

    def on_round(r, M):
        return np.kron(np.eye(d), np.kron(np.eye(N ** r), np.kron(M, np.eye(N ** (k - r - 1)))))

    PE = np.eye(D, dtype=complex)
    calls = 0
    for r in range(k):
        PE = on_round(r, had) @ PE
        digit = (anc // N ** (k - r - 1)) % N
        for t in range(s):
            mask = ((digit >> t) & 1).astype(float)
            Wp = np.linalg.matrix_power(W, 2 ** t)
            CW = np.kron(Wp, np.diag(mask)) + np.kron(np.eye(d), np.diag(1.0 - mask))
            PE = CW @ PE
            calls += 2 ** t
        PE = on_round(r, qft.conj().T) @ PE
    flip = np.kron(np.eye(d), np.diag(np.where(anc == 0, 1.0, -1.0)))
    return PE.conj().T @ flip @ PE, 2 * calls


# ---------------------------------------------------------------------------
# preparation, measurement, deliberation

def flagged_mass(pi, flagged) -> float:
    idx = np.asarray(sorted(flagged), dtype=int)
    if idx.size == 0:
        raise ValueError("flag set must be non-empty")
    return float(np.asarray(pi)[idx].sum())


def _column_constant(P: StochasticMatrix) -> bool:
    m = P.matrix
    return bool(np.max(np.abs(m - m[:, :1])) <= 1e-12)


def prepare_initial_state(spec: WalkSpec, ledger: CostLedger | None = None, *, k: int = 0, s: int = 0,
                          method: str = "encoded") -> QuantumState:
    """``|pi_init> = U_P |pi>|0>`` with clean ancillas.

    ``encoded`` assumes ``|pi> = sum_i sqrt(pi_i)|i>`` is available and
    spends one ``U_P`` call.  ``rank1`` (column-constant chains only) first
    makes ``|pi>`` itself with one ``U_P`` call on ``|0>|0>``, swaps it into the
    first register and applies ``U_P`` again.
    """
    n = spec.n
    if method == "encoded":
        start = np.zeros(n * n)
        start[::n] = np.sqrt(spec.pi)
        vec = spec.U @ start
        calls = 1
    elif method == "rank1":
        if not _column_constant(spec.P):
            raise ValueError("rank1 preparation needs a column-constant chain")
        e00 = np.zeros(n * n)
        e00[0] = 1.0
        vec = spec.U @ (swap_matrix(n) @ (spec.U @ e00))
        calls = 2
    else:
        raise ValueError(f"unknown preparation method {method!r}")
    if ledger is not None:
        ledger.state_preparations += 1
        ledger.quantum_diffusion_calls += calls
    return QuantumState.from_system(vec, n, k, s)


def measure_first_register(state: QuantumState, rng: np.random.Generator,
                           ledger: CostLedger | None = None) -> int:
    probs = state.first_register_probs()
    if ledger is not None:
        ledger.measurements += 1
    return int(rng.choice(state.n, p=probs))


def povm_flag_projection(state: QuantumState, flagged, rng: np.random.Generator, *,
                         tol: Tolerances = DEFAULT, force: str | None = None) -> tuple[str, QuantumState]:
    """Two-outcome measurement onto flagged / unflagged first-register subspaces."""
    n = state.n
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(sorted(flagged), dtype=int)] = True
    rows = np.repeat(mask, n)
    w = np.clip(state.row_weights(), 0.0, None)
    total = w.sum()
    p_flag = w[rows].sum() / total
    if force is None:
        branch = "flagged" if rng.random() < p_flag else "unflagged"
    else:
        branch = force
    p = p_flag if branch == "flagged" else 1.0 - p_flag
    if p < tol.degenerate_branch:
        raise DegenerateBranch(f"{branch} branch has probability {p:.3g}")
    keep = rows if branch == "flagged" else ~rows
    coeffs = np.where(keep[:, None], state.coeffs, 0.0) / math.sqrt(p * total)
    return branch, state._with(coeffs)


class TrajectoryCache:
    """First-register distributions after ``t`` Grover-like rounds from a fresh start.

    With re-preparation after every failed measurement, each attempt starts
    from the same state, so the outcome law depends only on ``t``.  The
    cache replays the exact same ledger charges as a direct simulation.
    """

    def __init__(self, spec: WalkSpec, flagged, params: QuantumParams):
        self.spec = spec
        self.flagged = tuple(sorted(flagged))
        self.params = params
        self.prep_cost = CostLedger()
        self._state = prepare_initial_state(spec, self.prep_cost, k=params.k, s=params.s,
                                            method=params.preparation)
        self.round_cost = CostLedger()
        self._probs: list[np.ndarray] = [self._state.first_register_probs()]
        self._first = True

    def probs(self, t: int) -> np.ndarray:
        while len(self._probs) <= t:
            cost = CostLedger() if self._first else None
            self._state = _grover_round(self.spec, self.flagged, self.params, self._state, cost)
            if self._first:
                self.round_cost = cost
                self._first = False
            self._probs.append(self._state.first_register_probs())
        return self._probs[t]

    def round_ledger(self) -> CostLedger:
        if self._first:
            cost = CostLedger()
            probe = prepare_initial_state(self.spec, None, k=self.params.k, s=self.params.s,
                                          method=self.params.preparation)
            _grover_round(self.spec, self.flagged, self.params, probe, cost)
            self.round_cost = cost
        return self.round_cost


def _grover_round(spec, flagged, params, state, ledger):
    state = check_reflection(flagged, state, ledger)
    if params.reflection_mode == "ideal":
        return ideal_reflection(spec.pi_init, state)
    return approximate_reflection(spec, params, state, ledger, require_clean=False)


def quantum_rps_deliberate(spec: WalkSpec, flagged, params: QuantumParams, rng: np.random.Generator,
                           ledger: CostLedger | None = None, *, cache: TrajectoryCache | None = None,
                           t_override: int | None = None, trace=None) -> DeliberationOutcome:
    """Randomized Grover-like deliberation of the quantum reflecting agent.

    Prepare ``|pi_init>``, draw ``t`` uniformly from ``{0, ..., T}``, apply ``t``
    rounds of (check reflection, reflection about ``|pi_init>``), measure the
    first register.  A flagged outcome is emitted; otherwise the attempt is
    repeated from a fresh state or, in ``povm`` mode, from the projected
    unflagged residue.  ``trace`` (a callable) receives every intermediate
    state; it disables the cache.
    """
    ledger = CostLedger() if ledger is None else ledger
    flagged = frozenset(int(a) for a in flagged)
    if not flagged:
        raise ValueError("flag set must be non-empty")
    if flagged_mass(spec.pi, flagged) <= 0:
        raise ZeroFlagMass("flagged nodes carry no stationary mass")
    use_cache = params.retry_mode == "reprepare" and trace is None
    if use_cache and cache is None:
        cache = TrajectoryCache(spec, flagged, params)
    schedule = 1.0
    state = None
    for attempt in range(1, params.retry_cap + 1):
        if params.adaptive:
            T = max(1, math.ceil(schedule))
            upper = T - 1
        else:
            upper = params.check_cap
        t = int(rng.integers(0, upper + 1)) if t_override is None else int(t_override)
        if use_cache:
            ledger.add(cache.prep_cost)
            probs = cache.probs(t)
            if t:
                round_cost = cache.round_ledger()
                for _ in range(t):
                    ledger.add(round_cost)
            ledger.measurements += 1
            outcome = int(rng.choice(spec.n, p=probs))
            if outcome in flagged:
                return DeliberationOutcome(outcome, ledger, attempt)
        else:
            if state is None:
                state = prepare_initial_state(spec, ledger, k=params.k, s=params.s, method=params.preparation)
            if trace is not None:
                trace(state)
            for _ in range(t):
                state = _grover_round(spec, flagged, params, state, ledger)
                if trace is not None:
                    trace(state)
            if params.retry_mode == "povm":
                ledger.measurements += 1
                branch, post = povm_flag_projection(state, flagged, rng)
                if branch == "flagged":
                    outcome = measure_first_register(post, rng, ledger)
                    return DeliberationOutcome(outcome, ledger, attempt)
                state = post
            else:
                outcome = measure_first_register(state, rng, ledger)
                if outcome in flagged:
                    return DeliberationOutcome(outcome, ledger, attempt)
                state = None
        if params.adaptive:
            schedule = min(1.2 * schedule, float(params.check_cap))
    raise RetryCapExceeded(f"no flagged outcome after {params.retry_cap} attempts")


def quantum_rps_batch(spec: WalkSpec, flagged, params: QuantumParams, rng: np.random.Generator,
                      trials: int, *, cache: TrajectoryCache | None = None) -> BatchResult:
    """``trials`` independent re-preparing deliberations, vectorized over trials."""
    if params.retry_mode != "reprepare":
        raise ValueError("batched sampling needs retry_mode='reprepare'")
    flagged = frozenset(int(a) for a in flagged)
    if flagged_mass(spec.pi, flagged) <= 0:
        raise ZeroFlagMass("flagged nodes carry no stationary mass")
    cache = TrajectoryCache(spec, flagged, params) if cache is None else cache
    mask = np.zeros(spec.n, dtype=bool)
    mask[list(flagged)] = True
    cdf = np.cumsum(np.column_stack([cache.probs(t) for t in range(params.check_cap + 1)]), axis=0)
    round_cost = cache.round_ledger()
    actions = np.full(trials, -1)
    attempts = np.zeros(trials, dtype=np.int64)
    rounds = np.zeros(trials, dtype=np.int64)
    active = np.arange(trials)
    schedule = 1.0
    for _ in range(params.retry_cap):
        if active.size == 0:
            break
        upper = max(1, math.ceil(schedule)) - 1 if params.adaptive else params.check_cap
        t = rng.integers(0, upper + 1, size=active.size)
        outcome = _sample_columns(cdf, t, rng)
        attempts[active] += 1
        rounds[active] += t
        hit = mask[outcome]
        actions[active[hit]] = outcome[hit]
        active = active[~hit]
        if params.adaptive:
            schedule = min(1.2 * schedule, float(params.check_cap))
    if active.size:
        raise RetryCapExceeded(f"{active.size} trials found no flagged outcome after {params.retry_cap} attempts")
    per_trial = {}
    for name in ("quantum_diffusion_calls", "quantum_check_reflections", "aro_invocations",
                 "state_preparations"):
        per_trial[name] = attempts * getattr(cache.prep_cost, name) + rounds * getattr(round_cost, name)
    per_trial["measurements"] = attempts.copy()
    ledger = CostLedger(**{name: int(v.sum()) for name, v in per_trial.items()})
    return BatchResult(actions, attempts, ledger, per_trial)


# ---------------------------------------------------------------------------
# serialization

def chain_hash(P: StochasticMatrix) -> str:
    return hashlib.sha256(P.to_json().encode()).hexdigest()


def write_state(path, state: QuantumState, *, chain: StochasticMatrix | None = None,
                seed: int | None = None) -> Path:
    """Binary dump: ``<III`` header (n, k, s) then complex128 amplitudes.

    A JSON sidecar ``<path>.json`` records the chain hash and seed.
    """
    path = Path(path)
    amps = np.ascontiguousarray(state.to_dense(), dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", state.n, state.k, state.s))
        fh.write(amps.tobytes())
    meta = {"n": state.n, "k": state.k, "s": state.s, "amplitudes": int(amps.size),
            "chain_sha256": chain_hash(chain) if chain is not None else None, "seed": seed}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))
    return path


def read_state(path) -> tuple[int, int, int, np.ndarray, dict | None]:
    path = Path(path)
    raw = path.read_bytes()
    n, k, s = struct.unpack("<III", raw[:12])
    amps = np.frombuffer(raw[12:], dtype="<c16").copy()
    if amps.size != n * n * 2 ** (k * s):
        raise ValueError(f"expected {n * n * 2 ** (k * s)} amplitudes, found {amps.size}")
    side = Path(str(path) + ".json")
    meta = json.loads(side.read_text()) if side.exists() else None
    return n, k, s, amps, meta
