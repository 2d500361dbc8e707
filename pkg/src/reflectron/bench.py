"""Ensemble experiments: cost scaling, output-distribution checks and log-log fits."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import DegenerateData
from .markov import StochasticMatrix, reversible_chain_with_stationary, variational_distance
from .ps import AgentConfig, classical_rps_batch, tailed_distribution
from .szegedy import QuantumParams, WalkSpec, quantum_rps_batch


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    points: int

    def within(self, target: float, tol: float) -> bool:
        return abs(self.slope - target) <= tol


def fit_loglog(xs, ys) -> FitResult:
    """Least squares line through ``(log x, log y)``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise DegenerateData("need at least three paired points")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(x * y)):
        raise DegenerateData("log-log fit needs positive finite data")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise DegenerateData("all x values are equal")
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return FitResult(float(slope), float(intercept), min(max(r2, 0.0), 1.0), int(x.size))


# ---------------------------------------------------------------------------
# chain construction

@dataclass(frozen=True)
class EnsemblePoint:
    n: int
    target_gap: float
    flag_fraction: float


def designed_stationary(n: int, eps: float, rng: np.random.Generator) -> np.ndarray:
    """Node 0 carries mass ``eps``; the rest is a Dirichlet split of ``1 - eps``."""
    rest = rng.dirichlet(np.full(n - 1, 4.0))
    return np.concatenate([[eps], (1.0 - eps) * rest])


def choose_flags(pi, target: float, rel_tol: float = 0.2) -> frozenset[int]:
    """Greedily flag the heaviest nodes that keep the flagged mass below ``target (1 + rel_tol)``."""
    pi = np.asarray(pi)
    chosen, mass = [], 0.0
    for i in np.argsort(-pi, kind="stable"):
        if mass + pi[i] <= target * (1 + rel_tol):
            chosen.append(int(i))
            mass += pi[i]
        if abs(mass - target) <= rel_tol * target:
            return frozenset(chosen)
    raise ValueError(f"no flag set reaches mass {target} within {rel_tol:.0%}")


def ensemble_chain(point: EnsemblePoint, seed) -> tuple[StochasticMatrix, frozenset[int]]:
    rng = np.random.default_rng(seed)
    pi = designed_stationary(point.n, point.flag_fraction, rng)
    P = reversible_chain_with_stationary(pi, rng, point.target_gap)
    return P, choose_flags(pi, point.flag_fraction)


def octave_ensemble(n: int = 8, eps_exponents=range(1, 7), gap_exponents=(0, 2, 4, 6)) -> list[EnsemblePoint]:
    """Grid ``eps = 2^-a``, ``delta = 2^-b``."""
    return [EnsemblePoint(n, 2.0 ** -b, 2.0 ** -a) for b in gap_exponents for a in eps_exponents]


# ---------------------------------------------------------------------------
# scaling

@dataclass
class ScalingRecord:
    chain_id: int
    n: int
    eps: float
    delta: float
    phase_gap: float
    s: int
    k: int
    check_cap: int
    classical_diffusions: float
    quantum_diffusion_calls: float
    classical_checks: float
    quantum_check_reflections: float
    trials: int

    @property
    def speedup(self) -> float:
        return self.classical_diffusions / self.quantum_diffusion_calls


SCALING_COLUMNS = tuple(f.name for f in fields(ScalingRecord))


@dataclass(frozen=True)
class QuantumOptions:
    """How :meth:`QuantumParams.for_walk` scales the quantum agent to each chain."""

    k_base: int = 2
    s_margin: int = 2
    check_constant: float = math.pi / 4
    k_log_boost: bool = True
    reflection_mode: str = "approximate"
    retry_cap: int = 64

    def params(self, spec: WalkSpec, flags) -> QuantumParams:
        return QuantumParams.for_walk(spec, flags, k_base=self.k_base, s_margin=self.s_margin,
                                      check_constant=self.check_constant, k_log_boost=self.k_log_boost,
                                      reflection_mode=self.reflection_mode, retry_cap=self.retry_cap)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("REFLECTRON_THREADS", "1")))
    except ValueError:
        return 1


def _scaling_one(args) -> ScalingRecord:
    idx, point, trials, cfg, qopts, seed = args
    chain_seed, classical_seed, quantum_seed = np.random.SeedSequence([seed, idx]).spawn(3)
    P, flags = ensemble_chain(point, chain_seed)
    spec = WalkSpec(P)
    eps = float(spec.pi[sorted(flags)].sum())
    classical = classical_rps_batch(P, flags, cfg, np.random.default_rng(classical_seed), trials)
    params = qopts.params(spec, flags)
    quantum = quantum_rps_batch(spec, flags, params, np.random.default_rng(quantum_seed), trials)
    return ScalingRecord(idx, P.n, eps, float(spec.delta), float(spec.phase_gap), params.s, params.k,
                         params.check_cap, classical.mean("classical_diffusions"),
                         quantum.mean("quantum_diffusion_calls"), classical.mean("classical_checks"),
                         quantum.mean("quantum_check_reflections"), trials)


def scaling_experiment(ensemble, trials: int, *, cfg: AgentConfig | None = None,
                       quantum: QuantumOptions | None = None, seed: int = 0,
                       workers: int | None = None) -> list[ScalingRecord]:
    """Run both reflecting deliberators ``trials`` times on every ensemble chain.

    Ensemble entries are :class:`EnsemblePoint` or ``(n, target_gap, flag_fraction)``
    tuples.  Each chain and each agent draws from its own stream derived from
    ``(seed, chain index)``, so results do not depend on ``workers``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    points = [p if isinstance(p, EnsemblePoint) else EnsemblePoint(*p) for p in ensemble]
    if not points:
        raise ValueError("ensemble is empty")
    cfg = AgentConfig() if cfg is None else cfg
    quantum = QuantumOptions() if quantum is None else quantum
    jobs = [(i, p, trials, cfg, quantum, seed) for i, p in enumerate(points)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_scaling_one, jobs))
    return [_scaling_one(j) for j in jobs]


def scaling_fits(records: list[ScalingRecord]) -> dict[str, FitResult]:
    eps = np.array([r.eps for r in records])
    delta = np.array([r.delta for r in records])
    col = {name: np.array([getattr(r, name) for r in records]) for name in SCALING_COLUMNS}
    fits = {
        "classical_diffusions_vs_inv_eps_delta": (1 / (eps * delta), col["classical_diffusions"]),
        "quantum_diffusion_calls_vs_inv_sqrt_eps_delta": (1 / np.sqrt(eps * delta), col["quantum_diffusion_calls"]),
        "classical_checks_vs_inv_eps": (1 / eps, col["classical_checks"]),
        "quantum_check_reflections_vs_inv_sqrt_eps": (1 / np.sqrt(eps), col["quantum_check_reflections"]),
        "speedup_vs_inv_sqrt_eps_delta": (1 / np.sqrt(eps * delta),
                                          col["classical_diffusions"] / col["quantum_diffusion_calls"]),
    }
    out = {}
    for name, (x, y) in fits.items():
        try:
            out[name] = fit_loglog(x, y)
        except DegenerateData:
            continue
    return out


# ---------------------------------------------------------------------------
# behaviour

def binomial_tv_radius(p, trials: int, sigmas: float = 3.0) -> float:
    """``sigmas``-sigma radius of the TV distance between an empirical histogram and ``p``."""
    p = np.asarray(p, dtype=float)
    return 0.5 * sigmas * float(np.sqrt(p * (1 - p) / trials).sum())


@dataclass
class BehaviorResult:
    tv_classical: float
    tv_quantum: float
    tv_between: float
    radius: float
    radius_between: float
    target: np.ndarray
    classical_freq: np.ndarray
    quantum_freq: np.ndarray
    trials: int
    eps: float
    ledgers: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.tv_classical, self.tv_quantum, self.tv_between))


def behavior_experiment(P: StochasticMatrix, flags, trials: int, *, cfg: AgentConfig | None = None,
                        params: QuantumParams | None = None, seed: int = 0) -> BehaviorResult:
    """Empirical output laws of both reflecting agents against the exact tailed distribution."""
    cfg = AgentConfig() if cfg is None else cfg
    spec = WalkSpec(P)
    flags = frozenset(int(f) for f in flags)
    params = QuantumParams.for_walk(spec, flags) if params is None else params
    target = tailed_distribution(spec.pi, flags)
    c_seed, q_seed = np.random.SeedSequence(seed).spawn(2)
    classical = classical_rps_batch(P, flags, cfg, np.random.default_rng(c_seed), trials)
    quantum = quantum_rps_batch(spec, flags, params, np.random.default_rng(q_seed), trials)
    cf = classical.frequencies(P.n)
    qf = quantum.frequencies(P.n)
    return BehaviorResult(
        variational_distance(cf, target), variational_distance(qf, target), variational_distance(cf, qf),
        binomial_tv_radius(target, trials), binomial_tv_radius(target, trials) * math.sqrt(2.0),
        target, cf, qf, trials, float(spec.pi[sorted(flags)].sum()),
        {"classical": classical.ledger.to_dict(), "quantum": quantum.ledger.to_dict()},
    )


# ---------------------------------------------------------------------------
# output

def config_hash(config) -> str:
    """SHA-256 of a canonical JSON rendering of ``config``."""
    text = json.dumps(config, sort_keys=True, default=_jsonable)
    return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def records_to_csv(records: list[ScalingRecord], digest: str) -> str:
    buf = io.StringIO()
    buf.write(f"# config_sha256={digest}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCALING_COLUMNS)
    for r in records:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, c) for c in SCALING_COLUMNS)])
    return buf.getvalue()


def records_from_csv(text: str) -> list[ScalingRecord]:
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    reader = csv.DictReader(lines)
    types = {f.name: f.type for f in fields(ScalingRecord)}
    out = []
    for row in reader:
        out.append(ScalingRecord(**{k: (int(v) if types[k] in ("int", int) else float(v)) for k, v in row.items()}))
    return out


def fits_summary(fits: dict[str, FitResult], digest: str, **extra) -> dict:
    return {"config_sha256": digest, "fits": {k: asdict(v) for k, v in fits.items()}, **extra}


def write_scaling_outputs(out_dir, records: list[ScalingRecord], fits: dict[str, FitResult], digest: str,
                          **extra) -> tuple[Path, Path]:
    """Write ``scaling-<hash>.csv`` and ``scaling-<hash>.json``; rerunning overwrites identically."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"scaling-{digest[:12]}"
    csv_path = out_dir / f"{stem}.csv"
    json_path = out_dir / f"{stem}.json"
    csv_path.write_text(records_to_csv(records, digest))
    json_path.write_text(json.dumps(fits_summary(fits, digest, **extra), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path
