"""Learning agents built on a two-layer clip network.

All three agents share the same memory (percept-to-action weights plus
per-percept flags) and the same learning rule; they differ only in how an
action is drawn.  The reflecting agents use, for each percept, the rank-one
chain over actions whose columns are the percept's action probabilities.
"""

from __future__ import annotations

import numpy as np

from .ledger import CostLedger
from .ps import (AgentConfig, ClipNetwork, FlagSet, classical_rps_deliberate, flag_update,
                 simple_rps_from_standard, standard_ps_deliberate, update_h)
from .szegedy import QuantumParams, WalkSpec, quantum_rps_deliberate


class PSAgent:
    """Two-layer projective-simulation agent with flags.

    ``kind`` selects the deliberation: ``standard`` hops from the percept
    clip, ``classical`` and ``quantum`` run the reflecting procedures on the
    percept's rank-one chain.  ``quantum_options`` is forwarded to
    :meth:`QuantumParams.for_walk`.
    """

    KINDS = ("standard", "classical", "quantum")

    def __init__(self, n_percepts: int, n_actions: int, cfg: AgentConfig, *, kind: str = "standard",
                 seed: int | None = None, quantum_options: dict | None = None):
        if kind not in self.KINDS:
            raise ValueError(f"kind must be one of {self.KINDS}")
        self.kind = kind
        self.cfg = cfg
        self.net = ClipNetwork.two_layer(n_percepts, n_actions)
        self.flags = FlagSet.full(n_percepts, n_actions)
        self.rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
        self.quantum_options = dict(quantum_options or {})
        self.last_params: QuantumParams | None = None

    @property
    def n_actions(self) -> int:
        return self.net.n_actions

    def action_probs(self, percept: int) -> np.ndarray:
        return self.net.percept_action_probs(percept)

    def deliberate(self, percept: int, ledger: CostLedger | None = None) -> int:
        ledger = CostLedger() if ledger is None else ledger
        flagged = self.flags[percept]
        if self.kind == "standard":
            return standard_ps_deliberate(self.net, percept, flagged, self.rng, ledger).action
        chain = simple_rps_from_standard(self.net, percept)
        if self.kind == "classical":
            return classical_rps_deliberate(chain, flagged, self.cfg, ledger, self.rng).action
        spec = WalkSpec(chain)
        params = QuantumParams.for_walk(spec, flagged, **self.quantum_options)
        self.last_params = params
        return quantum_rps_deliberate(spec, flagged, params, self.rng, ledger).action

    def learn(self, percept: int, action: int, reward: int) -> None:
        edge = (percept, self.net.action_clip(action))
        self.net = update_h(self.net, [edge], bool(reward), self.cfg)
        if action in self.flags[percept]:
            self.flags = flag_update(self.flags, percept, action, bool(reward))
