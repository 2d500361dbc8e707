"""Numerical tolerances, collected in one place.

Every module reads its thresholds from :data:`DEFAULT`; tests that need a
different setting build their own :class:`Tolerances` with
``dataclasses.replace``.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    column_sum: float = 1e-12
    distribution_sum: float = 1e-12
    stationary_residual: float = 1e-10
    leading_eigenvalue: float = 1e-10
    reversibility: float = 1e-10
    state_norm: float = 1e-10
    # eigenvalues of W closer than this on the unit circle share one ancilla vector
    phase_merge: float = 1e-11
    ancilla_clean: float = 1e-9
    degenerate_branch: float = 1e-14
    dense_stationary_max_n: int = 64
    power_iteration_cap: int = 1_000_000


DEFAULT = Tolerances()
