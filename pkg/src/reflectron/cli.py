"""Command-line entry point: ``reflectron {spectra,deliberate,bench,episodes}``.

Configuration is an INI file (see README for the schema); command-line flags
override file values.  Every output file carries the SHA-256 of the resolved
configuration so results can be matched to the settings that produced them.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .agents import PSAgent
from .bench import (EnsemblePoint, QuantumOptions, binomial_tv_radius, config_hash,
                    scaling_experiment, scaling_fits, write_scaling_outputs)
from .environments import EnvironmentSpec, Environment, run_episode
from .errors import DimensionMismatch, InvalidChain, ReflectronError
from .ledger import CostLedger
from .markov import StochasticMatrix, random_reversible_chain, variational_distance
from .ps import AgentConfig, classical_rps_batch, tailed_distribution
from .szegedy import QuantumParams, WalkSpec, quantum_rps_batch, quantum_rps_deliberate

EXIT_OK, EXIT_INPUT, EXIT_AGENT = 0, 2, 3


class InputError(Exception):
    """Bad configuration or input file; maps to exit code 2."""


# ---------------------------------------------------------------------------
# configuration

def bundled_path(name: str) -> Path:
    return Path(str(resources.files("reflectron") / "data" / name))


def resolve_path(value: str, base: Path | None) -> Path:
    if value.startswith("bundled:"):
        return bundled_path(value.split(":", 1)[1])
    path = Path(value)
    if not path.is_absolute() and base is not None and not path.exists():
        path = base / path
    return path


def load_config(path: str | None) -> tuple[configparser.ConfigParser, Path | None]:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is None:
        return cp, None
    p = resolve_path(path, None)
    if not p.exists():
        raise InputError(f"config file not found: {path}")
    try:
        cp.read_string(p.read_text(), source=str(p))
    except configparser.Error as exc:
        raise InputError(f"cannot parse config {path}: {exc}") from exc
    return cp, p.parent


def _get(cp, section, key, kind=str, default=None):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        if kind is bool:
            return cp.getboolean(section, key)
        if kind is list:
            return [int(x) for x in raw.replace(",", " ").split()]
        return kind(raw)
    except ValueError as exc:
        raise InputError(f"[{section}] {key} = {raw!r}: {exc}") from exc


def resolved_config(cp: configparser.ConfigParser, args) -> dict:
    out = {s: dict(cp.items(s)) for s in cp.sections()}
    out["_command"] = args.command
    out["_seed"] = args.seed
    for key in ("agent", "trials", "mode", "retry_mode", "steps", "budget", "episodes", "chain"):
        val = getattr(args, key, None)
        if val is not None:
            out[f"_{key}"] = val
    return out


def load_chain(cp, base, args) -> tuple[StochasticMatrix, frozenset[int] | None]:
    source = getattr(args, "chain", None) or _get(cp, "chain", "file")
    flags = _get(cp, "chain", "flags", list)
    if getattr(args, "flags", None):
        flags = [int(x) for x in args.flags.replace(",", " ").split()]
    if source:
        path = resolve_path(source, base)
        try:
            text = path.read_text()
        except OSError as exc:
            raise InputError(f"cannot read chain file {source}: {exc}") from exc
        try:
            P = StochasticMatrix.from_json(text)
        except (json.JSONDecodeError, InvalidChain, KeyError, TypeError, ValueError) as exc:
            raise InputError(f"invalid chain file {source}: {exc}") from exc
    else:
        n = _get(cp, "chain", "random_n", int)
        if n is None:
            raise InputError("no chain given: set [chain] file or random_n, or pass --chain")
        P = random_reversible_chain(n, _get(cp, "chain", "random_seed", int, args.seed),
                                    _get(cp, "chain", "random_gap", float))
    if flags is not None:
        if not flags or min(flags) < 0 or max(flags) >= P.n:
            raise InputError(f"flags {flags} out of range for a {P.n}-node chain")
        flags = frozenset(flags)
    return P, flags


def agent_config(cp, seed) -> AgentConfig:
    try:
        return AgentConfig(gamma=_get(cp, "agent", "gamma", float, 0.0), lam=_get(cp, "agent", "lam", float, 1.0),
                           k1=_get(cp, "agent", "k1", int, 4), k3=_get(cp, "agent", "k3", int, 64),
                           rng_seed=seed)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def quantum_options(cp, args=None) -> QuantumOptions:
    mode = getattr(args, "mode", None) or _get(cp, "quantum", "reflection_mode", str, "approximate")
    try:
        return QuantumOptions(k_base=_get(cp, "quantum", "k_base", int, 2),
                              s_margin=_get(cp, "quantum", "s_margin", int, 2),
                              check_constant=_get(cp, "quantum", "check_constant", float, math.pi / 4),
                              k_log_boost=_get(cp, "quantum", "k_log_boost", bool, True),
                              reflection_mode=mode, retry_cap=_get(cp, "quantum", "retry_cap", int, 64))
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def quantum_params(cp, spec, flags, args) -> QuantumParams:
    opts = quantum_options(cp, args)
    params = opts.params(spec, flags)
    overrides = {}
    for key in ("s", "k", "check_cap"):
        val = _get(cp, "quantum", key, int)
        if val is not None:
            overrides[key] = val
    overrides["retry_mode"] = getattr(args, "retry_mode", None) or _get(cp, "quantum", "retry_mode", str, "reprepare")
    overrides["adaptive"] = _get(cp, "quantum", "adaptive", bool, False)
    try:
        return QuantumParams(**{**params.__dict__, **overrides})
    except ValueError as exc:
        raise InputError(str(exc)) from exc


# ---------------------------------------------------------------------------
# output helpers

def _write_csv(path: Path, digest: str, header, rows) -> Path:
    buf = io.StringIO()
    buf.write(f"# config_sha256={digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())
    return path


def _write_json(path: Path, digest: str, payload: dict) -> Path:
    path.write_text(json.dumps({"config_sha256": digest, **payload}, indent=2, sort_keys=True) + "\n")
    return path


def _num(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# subcommands

def cmd_spectra(args, cp, base, out: Path, digest: str) -> list[Path]:
    P, _ = load_chain(cp, base, args)
    spec = WalkSpec(P)
    lam = spec.eigenvalues_P
    phases = np.sort(spec.span_phases)
    delta, gap = float(spec.delta), float(spec.phase_gap)
    summary = {"n": P.n, "spectral_gap": delta, "phase_gap": gap, "two_sqrt_gap": 2 * math.sqrt(delta),
               "phase_gap_bound_holds": bool(gap >= 2 * math.sqrt(delta) - 1e-9),
               "second_modulus": float(spec.lambda2)}
    if args.format == "json":
        payload = {**summary, "chain_eigenvalues": [[float(z.real), float(z.imag)] for z in lam],
                   "walk_span_eigenphases": [float(p) for p in phases]}
        return [_write_json(out / "spectra.json", digest, payload)]
    rows = [("scalar", k, 0, _num(v) if isinstance(v, float) else int(v), "") for k, v in summary.items()]
    rows += [("chain_eigenvalue", "", i, _num(z.real), _num(z.imag)) for i, z in enumerate(lam)]
    rows += [("walk_span_eigenphase", "", i, _num(p), "") for i, p in enumerate(phases)]
    return [_write_csv(out / "spectra.csv", digest, ("kind", "name", "index", "value", "imag"), rows)]


def cmd_deliberate(args, cp, base, out: Path, digest: str) -> list[Path]:
    P, flags = load_chain(cp, base, args)
    if flags is None:
        raise InputError("deliberate needs a flag set ([chain] flags or --flags)")
    trials = args.trials or _get(cp, "deliberate", "trials", int, 10_000)
    which = args.agent or _get(cp, "deliberate", "agent", str, "both")
    if which not in ("classical", "quantum", "both"):
        raise InputError(f"unknown agent {which!r}")
    if trials < 1:
        raise InputError("trials must be >= 1")
    cfg = agent_config(cp, args.seed)
    spec = WalkSpec(P)
    target = tailed_distribution(spec.pi, flags)
    seeds = np.random.SeedSequence(args.seed).spawn(2)
    results = {}
    if which in ("classical", "both"):
        res = classical_rps_batch(P, flags, cfg, np.random.default_rng(seeds[0]), trials)
        results["classical"] = (res.frequencies(P.n), res.ledger, {})
    if which in ("quantum", "both"):
        params = quantum_params(cp, spec, flags, args)
        rng = np.random.default_rng(seeds[1])
        if params.retry_mode == "reprepare":
            res = quantum_rps_batch(spec, flags, params, rng, trials)
            freq, ledger = res.frequencies(P.n), res.ledger
        else:
            ledger = CostLedger()
            counts = np.zeros(P.n)
            for _ in range(trials):
                counts[quantum_rps_deliberate(spec, flags, params, rng, ledger).action] += 1
            freq = counts / trials
        results["quantum"] = (freq, ledger, {"s": params.s, "k": params.k, "check_cap": params.check_cap,
                                             "reflection_mode": params.reflection_mode,
                                             "retry_mode": params.retry_mode})
    radius = binomial_tv_radius(target, trials)
    written = []
    for name, (freq, ledger, extra) in results.items():
        tv = variational_distance(freq, target)
        means = {k: v / trials for k, v in ledger.to_dict().items()}
        if args.format == "json":
            payload = {"agent": name, "trials": trials, "flags": sorted(flags), "frequencies": freq.tolist(),
                       "tailed_target": target.tolist(), "tv_to_target": tv, "tv_radius_3sigma": radius,
                       "ledger_mean": means, **extra}
            written.append(_write_json(out / f"deliberate-{name}.json", digest, payload))
        else:
            rows = [(i, _num(f), _num(t)) for i, (f, t) in enumerate(zip(freq, target))]
            written.append(_write_csv(out / f"deliberate-{name}.csv", digest,
                                      ("node", "frequency", "tailed_target"), rows))
            lrows = [(k, _num(v)) for k, v in means.items()]
            lrows += [("tv_to_target", _num(tv)), ("tv_radius_3sigma", _num(radius)), ("trials", trials)]
            lrows += [(k, v) for k, v in extra.items()]
            written.append(_write_csv(out / f"deliberate-{name}-summary.csv", digest, ("quantity", "value"), lrows))
    return written


def _ensemble(cp) -> list[EnsemblePoint]:
    n = _get(cp, "bench", "n", int, 8)
    eps_exp = _get(cp, "bench", "eps_exponents", list, [])
    gap_exp = _get(cp, "bench", "gap_exponents", list, [])
    return [EnsemblePoint(n, 2.0 ** -b, 2.0 ** -a) for b in gap_exp for a in eps_exp]


def cmd_bench(args, cp, base, out: Path, digest: str) -> list[Path]:
    points = _ensemble(cp)
    if not points:
        raise InputError("empty ensemble: set [bench] eps_exponents and gap_exponents")
    trials = args.trials or _get(cp, "bench", "trials", int, 2000)
    records = scaling_experiment(points, trials, cfg=agent_config(cp, args.seed), quantum=quantum_options(cp, args),
                                 seed=args.seed)
    fits = scaling_fits(records)
    if not fits:
        raise InputError("no fit could be computed from this ensemble")
    csv_path, json_path = write_scaling_outputs(out, records, fits, digest)
    written = [csv_path, json_path]
    if args.figures:
        from .plotting import plot_scaling
        written.append(plot_scaling(records, fits, out / f"{csv_path.stem}.png"))
    if args.episodes:
        written += cmd_episodes(args, cp, base, out, digest)
    return written


def episode_setup(cp, args):
    sec = "episodes"
    percepts = _get(cp, sec, "percepts", int, 1)
    actions = _get(cp, sec, "actions", int, 2)
    budget = args.budget if getattr(args, "budget", None) is not None else _get(cp, sec, "budget", int, 0)
    try:
        env_spec = EnvironmentSpec(percepts, actions, tuple(range(percepts)) if actions >= percepts
                                   else tuple(p % actions for p in range(percepts)),
                                   switch_period=_get(cp, sec, "switch_period", int, 0), time_budget=budget,
                                   seed=_get(cp, sec, "env_seed", int, args.seed),
                                   percept_order=_get(cp, sec, "percept_order", str, "cycle"))
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    steps = getattr(args, "steps", None) or _get(cp, sec, "steps", int, 1000)
    kinds = [k.strip() for k in _get(cp, sec, "agents", str, "classical, quantum").split(",") if k.strip()]
    for k in kinds:
        if k not in PSAgent.KINDS:
            raise InputError(f"unknown agent kind {k!r}")
    return env_spec, steps, kinds


def cmd_episodes(args, cp, base, out: Path, digest: str) -> list[Path]:
    env_spec, steps, kinds = episode_setup(cp, args)
    cfg = agent_config(cp, args.seed)
    qopts = quantum_options(cp, args)
    qdict = {"k_base": qopts.k_base, "s_margin": qopts.s_margin, "check_constant": qopts.check_constant,
             "k_log_boost": qopts.k_log_boost, "reflection_mode": qopts.reflection_mode}
    agent_seed = _get(cp, "episodes", "agent_seed", int, args.seed)
    written, summary, records = [], {}, {}
    for kind in kinds:
        agent = PSAgent(env_spec.percepts, env_spec.actions, cfg, kind=kind, seed=agent_seed,
                        quantum_options=qdict)
        rec = run_episode(agent, Environment(env_spec), steps)
        records[kind] = rec
        path = out / f"episodes-{kind}.csv"
        rec.to_csv(path, header_comment=f"config_sha256={digest}")
        written.append(path)
        summary[kind] = {"reward_rate": rec.reward_rate, "steady_state_rate": rec.window_rate(steps // 2),
                         "mean_internal_ops": float(rec.internal_ops.mean()),
                         "timed_out_fraction": float(rec.timed_out.mean())}
    written.append(_write_json(out / "episodes-summary.json", digest,
                               {"steps": steps, "time_budget": env_spec.time_budget,
                                "switch_period": env_spec.switch_period, "agents": summary}))
    if args.figures:
        from .plotting import plot_episodes
        written.append(plot_episodes(records, out / "episodes.png"))
    return written


COMMANDS = {"spectra": cmd_spectra, "deliberate": cmd_deliberate, "bench": cmd_bench, "episodes": cmd_episodes}


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI file; 'bundled:<name>' selects a shipped one")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default=argparse.SUPPRESS)
    common.add_argument("--figures", action="store_true", default=argparse.SUPPRESS,
                        help="also render PNG figures (needs matplotlib)")

    parser = argparse.ArgumentParser(prog="reflectron", parents=[common],
                                     description="Simulate classical and quantum reflecting PS agents.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("spectra", parents=[common], help="spectra of P and of its walk operator")
    sp.add_argument("--chain", help="chain JSON file (overrides [chain] file)")

    dp = sub.add_parser("deliberate", parents=[common], help="sample many deliberations")
    dp.add_argument("--chain")
    dp.add_argument("--flags", help="comma-separated flagged nodes")
    dp.add_argument("--agent", choices=("classical", "quantum", "both"))
    dp.add_argument("--trials", type=int)
    dp.add_argument("--mode", choices=("ideal", "approximate"), help="reflection mode of the quantum agent")
    dp.add_argument("--retry-mode", dest="retry_mode", choices=("reprepare", "povm"))

    bp = sub.add_parser("bench", parents=[common], help="cost-scaling sweep with log-log fits")
    bp.add_argument("--trials", type=int)
    bp.add_argument("--episodes", action="store_true", help="also run the [episodes] sweep")

    ep = sub.add_parser("episodes", parents=[common], help="agents in a policy-switching environment")
    ep.add_argument("--steps", type=int)
    ep.add_argument("--budget", type=int, help="internal-operation budget per decision (0 = none)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, default in (("config", None), ("seed", 0), ("out", "."), ("format", "csv"), ("figures", False)):
        if not hasattr(args, key):
            setattr(args, key, default)
    for key in ("episodes", "trials", "agent", "mode", "retry_mode", "steps", "budget", "chain", "flags"):
        if not hasattr(args, key):
            setattr(args, key, None)
    try:
        cp, base = load_config(args.config)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise InputError(f"cannot create output directory {out}: {exc}") from exc
        digest = config_hash(resolved_config(cp, args))
        written = COMMANDS[args.command](args, cp, base, out, digest)
    except (InputError, DimensionMismatch) as exc:
        print(f"reflectron: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ImportError as exc:
        print(f"reflectron: error: {exc} (install the 'figures' extra)", file=sys.stderr)
        return EXIT_INPUT
    except ReflectronError as exc:
        print(f"reflectron: agent error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_AGENT
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
