import json

import numpy as np
import pytest

from reflectron.bench import (SCALING_COLUMNS, EnsemblePoint, QuantumOptions, behavior_experiment,
                              binomial_tv_radius, choose_flags, config_hash, designed_stationary,
                              ensemble_chain, fit_loglog, octave_ensemble, records_from_csv,
                              records_to_csv, scaling_experiment, scaling_fits, write_scaling_outputs)
from reflectron.errors import DegenerateData
from reflectron.markov import is_reversible, rank_one_chain
from reflectron.ps import AgentConfig, classical_rps_batch
from reflectron.szegedy import QuantumParams, WalkSpec, quantum_rps_batch


def test_fit_identity():
    fit = fit_loglog([1, 2, 4, 8], [1, 2, 4, 8])
    assert fit.slope == pytest.approx(1.0, abs=1e-12)
    assert fit.intercept == pytest.approx(0.0, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0)


def test_fit_quadratic():
    fit = fit_loglog([1, 2, 4, 8], [3, 12, 48, 192])
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert np.exp(fit.intercept) == pytest.approx(3.0)


def test_fit_noisy_linear():
    rng = np.random.default_rng(0)
    x = np.geomspace(1, 1e4, 20)
    y = x * np.exp(rng.normal(0, 0.05, x.size))
    fit = fit_loglog(x, y)
    assert 0.9 <= fit.slope <= 1.1
    assert fit.r_squared > 0.99


@pytest.mark.parametrize("xs, ys", [
    ([1, 2], [1, 2]),
    ([2, 2, 2], [1, 2, 3]),
    ([1, 2, 3], [1, 0, 3]),
    ([1, 2, 3], [1, np.nan, 3]),
    ([1, 2, 3], [1, 2]),
])
def test_fit_rejects_degenerate_data(xs, ys):
    with pytest.raises(DegenerateData):
        fit_loglog(xs, ys)


def test_choose_flags_hits_target_mass():
    pi = np.array([0.05, 0.4, 0.3, 0.15, 0.1])
    flags = choose_flags(pi, 0.25)
    assert abs(pi[sorted(flags)].sum() - 0.25) <= 0.05
    with pytest.raises(ValueError):
        choose_flags(np.array([0.9, 0.1]), 0.5)


def test_designed_stationary_puts_eps_on_node_zero():
    pi = designed_stationary(6, 0.01, np.random.default_rng(1))
    assert pi[0] == 0.01 and pi.sum() == pytest.approx(1.0)


def test_ensemble_chain_has_requested_gap_and_mass():
    for point in octave_ensemble(n=6, eps_exponents=(1, 4), gap_exponents=(0, 4)):
        P, flags = ensemble_chain(point, 3)
        spec = WalkSpec(P)
        assert is_reversible(P, spec.pi)
        assert abs(spec.pi[sorted(flags)].sum() - point.flag_fraction) <= 0.2 * point.flag_fraction
        assert spec.delta == pytest.approx(point.target_gap, rel=0.05)


def test_octave_grid():
    grid = octave_ensemble()
    assert len(grid) == 24
    assert {p.flag_fraction for p in grid} == {2.0 ** -a for a in range(1, 7)}
    assert {p.target_gap for p in grid} == {1.0, 2.0 ** -2, 2.0 ** -4, 2.0 ** -6}


def test_rank_one_eps_sweep_slopes():
    """Checks grow like 1/eps classically and like 1/sqrt(eps) for the quantum agent."""
    epss = [2.0 ** -a for a in range(4, 12)]
    checks, reflections = [], []
    for i, eps in enumerate(epss):
        P = rank_one_chain(np.array([eps] + [(1 - eps) / 3] * 3))
        spec = WalkSpec(P)
        flags = frozenset({0})
        c = classical_rps_batch(P, flags, AgentConfig(), np.random.default_rng(i), 2000)
        params = QuantumParams.for_walk(spec, flags, k_base=1, k_log_boost=False, check_constant=2.0)
        q = quantum_rps_batch(spec, flags, params, np.random.default_rng(100 + i), 2000)
        checks.append(c.mean("classical_checks"))
        reflections.append(q.mean("quantum_check_reflections"))
    assert fit_loglog([1 / e for e in epss], checks).within(1.0, 0.1)
    assert fit_loglog([1 / np.sqrt(e) for e in epss], reflections).within(1.0, 0.15)


def test_scaling_is_deterministic_and_worker_independent():
    grid = octave_ensemble(n=5, eps_exponents=(1, 2), gap_exponents=(0, 2))
    a = scaling_experiment(grid, 1, seed=4, workers=1)
    b = scaling_experiment(grid, 1, seed=4, workers=1)
    c = scaling_experiment(grid, 1, seed=4, workers=2)
    assert a == b == c
    assert [r.chain_id for r in a] == [0, 1, 2, 3]


def test_thread_env_var_does_not_change_results(monkeypatch):
    grid = [(5, 0.5, 0.25), (5, 0.25, 0.125), (5, 1.0, 0.5)]
    monkeypatch.setenv("REFLECTRON_THREADS", "1")
    a = scaling_experiment(grid, 3, seed=2)
    monkeypatch.setenv("REFLECTRON_THREADS", "3")
    b = scaling_experiment(grid, 3, seed=2)
    assert a == b


def test_scaling_rejects_bad_input():
    with pytest.raises(ValueError):
        scaling_experiment([], 10)
    with pytest.raises(ValueError):
        scaling_experiment([(4, 0.5, 0.25)], 0)


def test_scaling_fits_keys_and_speedup():
    grid = octave_ensemble(n=5, eps_exponents=(1, 2, 3), gap_exponents=(0, 2))
    records = scaling_experiment(grid, 20, seed=0)
    fits = scaling_fits(records)
    assert set(fits) == {
        "classical_diffusions_vs_inv_eps_delta",
        "quantum_diffusion_calls_vs_inv_sqrt_eps_delta",
        "classical_checks_vs_inv_eps",
        "quantum_check_reflections_vs_inv_sqrt_eps",
        "speedup_vs_inv_sqrt_eps_delta",
    }
    r = records[0]
    assert r.speedup == r.classical_diffusions / r.quantum_diffusion_calls


def test_records_csv_round_trip(tmp_path):
    grid = octave_ensemble(n=4, eps_exponents=(1, 2), gap_exponents=(0,))
    records = scaling_experiment(grid, 5, seed=1)
    text = records_to_csv(records, "f" * 64)
    assert text.splitlines()[0] == "# config_sha256=" + "f" * 64
    assert text.splitlines()[1] == ",".join(SCALING_COLUMNS)
    assert records_from_csv(text) == records

    digest = config_hash({"trials": 5, "grid": grid})
    csv_path, json_path = write_scaling_outputs(tmp_path, records, scaling_fits(records + records[:1]), digest)
    assert csv_path.name == f"scaling-{digest[:12]}.csv"
    assert json.loads(json_path.read_text())["config_sha256"] == digest
    before = csv_path.read_bytes()
    write_scaling_outputs(tmp_path, records, {}, digest)
    assert csv_path.read_bytes() == before


def test_config_hash_is_order_insensitive():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_binomial_radius():
    p = np.array([0.5, 0.5])
    assert binomial_tv_radius(p, 100) == pytest.approx(0.5 * 3 * 2 * 0.05)


def test_behavior_experiment_matches_target(chain6):
    P, flags = chain6
    spec = WalkSpec(P)
    params = QuantumParams.for_walk(spec, flags, reflection_mode="ideal")
    res = behavior_experiment(P, flags, 20_000, cfg=AgentConfig(k1=6), params=params, seed=3)
    assert res.eps == pytest.approx(0.1)
    assert res.tv_quantum <= res.radius
    assert res.tv_classical <= 2 * np.exp(-6) / res.eps + res.radius
    assert res.classical_freq[[2, 3, 4, 5]].sum() == 0
    assert res.quantum_freq[[2, 3, 4, 5]].sum() == 0


def test_quantum_options_forward_to_params(chain6):
    P, flags = chain6
    spec = WalkSpec(P)
    params = QuantumOptions(k_base=3, s_margin=1, k_log_boost=False).params(spec, flags)
    assert params.k == 3
    assert params.s == max(1, int(np.ceil(np.log2(1 / spec.phase_gap))) + 1)


def test_ensemble_point_tuple_form():
    records = scaling_experiment([(4, 1.0, 0.25)], 2, seed=0)
    assert records[0].n == 4 and records[0].delta == pytest.approx(1.0, rel=0.05)
    assert isinstance(EnsemblePoint(4, 1.0, 0.25), EnsemblePoint)
