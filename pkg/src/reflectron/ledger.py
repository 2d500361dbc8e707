"""Counters for the primitive operations an agent spends while deliberating."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields


@dataclass
class CostLedger:
    """Running tally of primitive operations.

    One classical diffusion (one application of the transition matrix) and
    one quantum diffusion-operator call (``U_P`` or ``V_P``) are treated as
    equally expensive.  Checks and reflections are counted separately.
    """

    classical_diffusions: int = 0
    classical_checks: int = 0
    quantum_diffusion_calls: int = 0
    quantum_check_reflections: int = 0
    aro_invocations: int = 0
    measurements: int = 0
    state_preparations: int = 0

    @property
    def internal_ops(self) -> int:
        """Diffusions plus checks, the quantity an impatient environment waits on."""
        return (self.classical_diffusions + self.classical_checks
                + self.quantum_diffusion_calls + self.quantum_check_reflections)

    def add(self, other: CostLedger) -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    def __add__(self, other: CostLedger) -> CostLedger:
        out = CostLedger(**asdict(self))
        out.add(other)
        return out

    def copy(self) -> CostLedger:
        return CostLedger(**asdict(self))

    def to_dict(self) -> dict[str, int]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> CostLedger:
        data = json.loads(text)
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown ledger fields: {sorted(unknown)}")
        return cls(**{k: int(v) for k, v in data.items()})


COUNTER_NAMES = tuple(f.name for f in fields(CostLedger))


@dataclass
class DeliberationOutcome:
    action: int
    ledger: CostLedger
    samples_drawn: int
