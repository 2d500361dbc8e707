"""End-to-end acceptance checks; each prints one PASS/FAIL line (run with ``-s`` to see them inline)."""

import json
import math
import time

import numpy as np

from reflectron.bench import QuantumOptions, binomial_tv_radius, octave_ensemble, scaling_experiment, scaling_fits
from reflectron.cli import main as cli_main
from reflectron.ledger import CostLedger
from reflectron.markov import random_reversible_chain, spectral_info, variational_distance
from reflectron.ps import (AgentConfig, ClipNetwork, classical_rps_batch, damp_and_reinforce,
                           simple_rps_from_standard, standard_ps_batch, tailed_distribution, update_h)
from reflectron.szegedy import (QuantumParams, QuantumState, WalkSpec, approximate_reflection,
                                prepare_initial_state, quantum_rps_batch)

TRIALS = 100_000


def ensemble():
    """Fifty seeded reversible chains with n cycling through 2..8."""
    for seed in range(50):
        yield seed, random_reversible_chain(2 + seed % 7, seed)


def test_walk_spectrum_matches_chain(report):
    start = time.perf_counter()
    worst_phase = worst_fix = worst_invariance = 0.0
    for _, P in ensemble():
        spec = WalkSpec(P)
        Q = spec.span_basis
        W_span = Q.conj().T @ spec.W @ Q
        worst_invariance = max(worst_invariance, np.abs(spec.W @ Q - Q @ W_span).max())
        # half of each walk eigenphase is arccos|lambda| for some chain eigenvalue
        half = np.abs(np.angle(np.linalg.eigvals(W_span))) / 2
        targets = np.arccos(np.clip(np.abs(spec.eigenvalues_P), 0.0, 1.0))
        worst_phase = max(worst_phase, np.abs(half[:, None] - targets[None, :]).min(axis=1).max())
        worst_fix = max(worst_fix, np.linalg.norm(spec.W @ spec.pi_init - spec.pi_init))
    elapsed = time.perf_counter() - start
    ok = worst_phase <= 1e-8 and worst_fix <= 1e-9 and worst_invariance <= 1e-9 and elapsed < 60
    report(1, "walk spectrum", ok,
           f"max phase err {worst_phase:.1e} (tol 1e-8), |W pi_init - pi_init| {worst_fix:.1e} (tol 1e-9), "
           f"{elapsed:.1f}s")


def test_phase_gap_bound(report):
    margins = []
    for _, P in ensemble():
        spec = WalkSpec(P)
        margins.append(spec.phase_gap - 2 * math.sqrt(spec.delta))
    worst = min(margins)
    report(2, "phase gap >= 2 sqrt(gap)", worst >= -1e-9, f"min margin {worst:.3e} (tol -1e-9)")


def test_approximate_reflection_error(report):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_ratio, worst_fid, worst_calls = 0.0, 1.0, 0.0
    for _, P in ensemble():
        spec = WalkSpec(P)
        s = math.ceil(math.log2(1 / spec.phase_gap)) + 2
        Q = spec.span_basis
        states = []
        for _ in range(20):
            v = Q @ (rng.normal(size=Q.shape[1]) + 1j * rng.normal(size=Q.shape[1]))
            v -= spec.pi_init * np.vdot(spec.pi_init, v)
            states.append(v / np.linalg.norm(v))
        for k in (1, 2, 3, 4):
            params = QuantumParams(s=s, k=k)
            for v in states:
                st = QuantumState.from_system(v, spec.n, k, s)
                err = approximate_reflection(spec, params, st).combine(1.0, st, 1.0).norm()
                worst_ratio = max(worst_ratio, err / 2 ** (1 - k))
            fixed = prepare_initial_state(spec, k=k, s=s)
            ledger = CostLedger()
            out = approximate_reflection(spec, params, fixed, ledger)
            worst_fid = min(worst_fid, abs(out.inner(fixed)) ** 2)
            calls = ledger.quantum_diffusion_calls / 4  # each controlled walk is four diffusion calls
            worst_calls = max(worst_calls, calls / (k * 2 ** (s + 1)))
    elapsed = time.perf_counter() - start
    ok = worst_ratio <= 1.0 and worst_fid >= 1 - 1e-9 and worst_calls <= 1.0 and elapsed < 300
    report(3, "reflection error", ok,
           f"max err/2^(1-k) {worst_ratio:.3f} (<= 1), min fixed-point fidelity {worst_fid:.12f} (>= 1-1e-9), "
           f"max calls/(k 2^(s+1)) {worst_calls:.3f} (<= 1), {elapsed:.1f}s")


def test_classical_output_law(report, chain6):
    P, flags = chain6
    target = tailed_distribution(WalkSpec(P).pi, flags)
    eps = float(WalkSpec(P).pi[sorted(flags)].sum())
    radius = binomial_tv_radius(target, TRIALS)
    parts, ok = [], True
    for k1 in (2, 4, 6):
        res = classical_rps_batch(P, flags, AgentConfig(k1=k1), np.random.default_rng(k1), TRIALS)
        tv = variational_distance(res.frequencies(P.n), target)
        bound = 2 * math.exp(-k1) / eps + radius
        ok &= tv <= bound
        parts.append(f"k1={k1}: TV {tv:.4f} <= {bound:.4f}")
    report(4, "classical output law", ok, f"eps={eps:.3f}; " + "; ".join(parts))


def test_quantum_output_law(report, chain6):
    P, flags = chain6
    spec = WalkSpec(P)
    target = tailed_distribution(spec.pi, flags)
    radius = binomial_tv_radius(target, TRIALS)
    ideal = QuantumParams.for_walk(spec, flags, reflection_mode="ideal")
    tv = variational_distance(quantum_rps_batch(spec, flags, ideal, np.random.default_rng(11), TRIALS)
                              .frequencies(P.n), target)
    ok = tv <= radius
    parts = [f"ideal TV {tv:.4f} <= {radius:.4f}"]
    for c in (3, 5):
        params = QuantumParams.for_walk(spec, flags, k_base=c, k_log_boost=False)
        res = quantum_rps_batch(spec, flags, params, np.random.default_rng(c), TRIALS)
        tv = variational_distance(res.frequencies(P.n), target)
        bound = 4 * 2 ** (1 - c) + radius
        ok &= tv <= bound
        parts.append(f"c={c}: TV {tv:.4f} <= {bound:.4f}")
    report(5, "quantum output law", ok, "; ".join(parts))


def test_quadratic_speedup_scaling(report):
    # bundled speedup.ini settings
    start = time.perf_counter()
    records = scaling_experiment(octave_ensemble(8, range(1, 7), (0, 2, 4, 6)), 5000, cfg=AgentConfig(k1=4),
                                 quantum=QuantumOptions(k_base=2, s_margin=3, check_constant=2.0,
                                                        k_log_boost=False),
                                 seed=0, workers=1)
    fits = scaling_fits(records)
    elapsed = time.perf_counter() - start
    names = ("classical_diffusions_vs_inv_eps_delta", "quantum_diffusion_calls_vs_inv_sqrt_eps_delta",
             "classical_checks_vs_inv_eps", "quantum_check_reflections_vs_inv_sqrt_eps")
    ok = elapsed < 1800
    parts = []
    for name in names:
        fit = fits[name]
        good = fit.within(1.0, 0.2) and fit.r_squared >= 0.95
        ok &= good
        parts.append(f"{name} slope {fit.slope:.3f} r2 {fit.r_squared:.3f}")
    eps = sorted({r.eps for r in records})
    deltas = sorted({r.delta for r in records})
    ok &= eps[0] <= 1 / 64 * 1.25 and eps[-1] >= 0.5 * 0.8 and deltas[0] <= 1 / 64 * 1.05 and deltas[-1] >= 0.95
    report(6, "quadratic speedup scaling", ok, "; ".join(parts) + f"; {elapsed:.0f}s")


def test_standard_matches_rank_one_reflecting(report):
    rng = np.random.default_rng(5)
    n_percepts, n_actions = 3, 5
    net = ClipNetwork.two_layer(n_percepts, n_actions)
    net.h[:n_percepts, n_percepts:] = 1 + rng.exponential(2.0, size=(n_percepts, n_actions))
    flag_sets = [frozenset({0, 2, 4}), frozenset({1}), frozenset(range(n_actions))]
    worst_tv = worst_gap = 0.0
    for p, flags in enumerate(flag_sets):
        standard = standard_ps_batch(net, p, flags, np.random.default_rng(100 + p), TRIALS)
        chain = simple_rps_from_standard(net, p)
        reflecting = classical_rps_batch(chain, flags, AgentConfig(), np.random.default_rng(200 + p), TRIALS)
        worst_tv = max(worst_tv, variational_distance(standard.frequencies(n_actions),
                                                      reflecting.frequencies(n_actions)))
        worst_gap = max(worst_gap, abs(spectral_info(chain).gap - 1.0))
    ok = worst_tv <= 0.02 and worst_gap <= 1e-12
    report(7, "standard vs rank-one reflecting", ok,
           f"max per-percept TV {worst_tv:.4f} (<= 0.02), max |gap - 1| {worst_gap:.1e} (<= 1e-12)")


def test_active_scenario(report, tmp_path):
    def run(budget):
        out = tmp_path / f"budget{budget}"
        assert cli_main(["episodes", "--config", "bundled:active.ini", "--budget", str(budget),
                         "--out", str(out), "--format", "json"]) == 0
        return json.loads((out / "episodes-summary.json").read_text())

    free = run(0)["agents"]
    budget = 60  # value fixed in active.ini
    c_cost = free["classical"]["mean_internal_ops"]
    q_cost = free["quantum"]["mean_internal_ops"]
    limited = run(budget)["agents"]
    c_rate = limited["classical"]["steady_state_rate"]
    q_rate = limited["quantum"]["steady_state_rate"]
    ok = q_cost <= budget < c_cost and q_rate - c_rate >= 0.2
    report(8, "active scenario", ok,
           f"unbudgeted mean ops quantum {q_cost:.1f} <= {budget} < classical {c_cost:.1f}; steady-state rate "
           f"quantum {q_rate:.3f} vs classical {c_rate:.3f} (diff {q_rate - c_rate:.3f} >= 0.2)")


def test_update_rule(report):
    one = ClipNetwork.two_layer(1, 1)
    five = ClipNetwork.two_layer(1, 1)
    five.h[0, 1] = 5.0
    examples = [
        update_h(one, [(0, 1)], True, AgentConfig(gamma=0.0, lam=1.0)).h[0, 1] == 2.0,
        update_h(five, [(0, 1)], False, AgentConfig(gamma=0.5, lam=1.0)).h[0, 1] == 3.0,
        all(update_h(one, [(0, 1)], False, AgentConfig(gamma=g)).h[0, 1] == 1.0 for g in (0.0, 0.37, 1.0)),
    ]
    rng = np.random.default_rng(9)
    sequences, length = 1_000_000, 20
    h = np.ones(sequences)
    gamma = rng.uniform(0, 1, sequences)
    lam = rng.uniform(1e-6, 5, sequences)
    low = np.inf
    for _ in range(length):
        h = damp_and_reinforce(h, gamma, lam, rng.random(sequences) < 0.5)
        low = min(low, h.min())
    ok = all(examples) and low >= 1.0
    report(9, "update rule", ok, f"examples {sum(examples)}/3 exact; min h over {sequences} sequences of "
                                 f"{length} updates {low:.6f} (>= 1)")
