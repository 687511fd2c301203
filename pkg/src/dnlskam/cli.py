"""Command-line driver: ``dnlskam {build,kam-run,solve,verify-fae,measure,oracle}``.

Reports are JSON (sorted keys, config hash embedded) plus CSV tables, written
under ``--out``. Logs go to standard error. Exit codes: 0 all budgets pass,
1 a budget failed, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

log = logging.getLogger("dnlskam")

EXIT_OK, EXIT_BUDGET, EXIT_USAGE = 0, 1, 2


@dataclass
class RunConfig:
    s0: float = 1.0
    eps0: float | None = None        # None: measured from the initial perturbation
    rho0: float = 0.5
    m0: float = 0.5
    alpha_exp: float = 1.0
    beta_exp: float = 1.0
    beta_scale: float = 1e-3
    jmax: int = 8
    degree_cap: int = 4
    harmonic_cap: int = 8
    r: float = 1.4e-3
    action_factor: float = 4.0      # I_1 = action_factor r^2
    action_ratio: float = 1.1       # I_-1 = action_ratio I_1
    p: float = 2.0
    a: float = 0.0
    sigma_seed: int = 1
    K_check: int = 2
    samples: int = 100_000
    lie_order: int = 8
    prune_relative: float = 1e-6
    fit_tol: float = 1e-8
    oracle_tol: float = 1e-8
    residual_tol: float = 1e-9
    envelope_factor: float = 10.0

    def hash(self) -> str:
        text = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def load_schema() -> dict:
    return json.loads(resources.files("dnlskam").joinpath("config_schema.json").read_text())


def resolve_config(path: str | None, overrides: dict) -> RunConfig:
    data = {}
    if path:
        data = json.loads(Path(path).read_text())
    data.update({k: v for k, v in overrides.items() if v is not None})
    jsonschema.validate(data, load_schema())
    return RunConfig(**data)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings, complex to pairs."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(obj, (complex, np.complexfloating)):
        return [_clean(obj.real), _clean(obj.imag)]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_report(out: Path, name: str, cfg: RunConfig, command: str, payload: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "config": asdict(cfg), "config_hash": cfg.hash(), "result": payload}
    path = out / name
    path.write_text(json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n")
    log.info("wrote %s", path)
    return path


def write_csv(out: Path, name: str, rows: list, header: list) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path


# --------------------------------------------------------------------------
# shared setup

def dnls_config(cfg: RunConfig, jmax: int | None = None):
    from .dnls import DnlsConfig
    from .hamiltonian import AnalyticityWindow
    from .measure import sample_sigma
    J = jmax or cfg.jmax
    I1 = cfg.action_factor * cfg.r ** 2
    return DnlsConfig(jmax=J, sigma=sample_sigma(cfg.sigma_seed, J), I1=I1, Im1=cfg.action_ratio * I1,
                      window=AnalyticityWindow(cfg.s0, cfg.r, cfg.a, cfg.p), degree_cap=cfg.degree_cap,
                      harmonic_cap=cfg.harmonic_cap)


def initial_state(cfg: RunConfig):
    from .dnls import build_hamiltonian, initial_action_angle
    from .hamiltonian import vf_majorant
    from .kam import KamSeeds
    dc = dnls_config(cfg)
    H = build_hamiltonian(dc)
    state = initial_action_angle(H, dc)
    eps = vf_majorant(state.P, state.window)
    seeds = KamSeeds(s0=cfg.s0, eps0=cfg.eps0 or min(eps, 0.5), rho0=cfg.rho0, m0=cfg.m0,
                     alpha_exp=cfg.alpha_exp, beta_exp=cfg.beta_exp, beta_scale=cfg.beta_scale,
                     r0=cfg.r, excite_factor=cfg.action_factor)
    return dc, H, state, seeds, eps


# --------------------------------------------------------------------------
# subcommands

def cmd_build(args, cfg: RunConfig) -> int:
    from .dnls import build_hamiltonian
    from .hamiltonian import check_momentum_mass
    dc = dnls_config(cfg)
    H = build_hamiltonian(dc)
    mom, mass, _ = check_momentum_mass(H)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "initial_hamiltonian.json").write_text(H.to_json() + "\n")
    write_report(out, "build.json", cfg, "build",
                 {"nterms": H.nterms, "momentum": mom, "mass": mass, "jmax": dc.jmax})
    return EXIT_OK if mom and mass else EXIT_BUDGET


def cmd_kam_run(args, cfg: RunConfig) -> int:
    from .hamiltonian import check_momentum_mass
    from .kam import KamConfig, kam_step, schedules
    from .structure import frequency_expansion
    dc, H, state, seeds, eps = initial_state(cfg)
    mom, mass, _ = check_momentum_mass(state.P)
    initial = {"eps": eps, "nterms": state.P.nterms, "momentum": mom, "mass": mass,
               "tangent": list(state.tangent), "window": {"s": state.window.s, "r": state.window.r}}
    kc = KamConfig(seeds=seeds, lie_order=cfg.lie_order, prune_relative=cfg.prune_relative)
    steps, rows, ok = [], [], mom and mass
    eps_sum = 0.0
    for v in range(args.steps):
        state, rep = kam_step(state, kc, schedules(v, seeds))
        eps_sum += rep.eps_in
        fit = frequency_expansion(state.N.frequencies(), dc.sigma_of,
                                  [j for j in dc.layout.modes if j not in state.tangent])
        envelope_ok = rep.eps_out <= cfg.envelope_factor * rep.eps_in ** 1.25
        freq_ok = fit.sup_weighted_hat <= cfg.envelope_factor * eps_sum
        step_ok = (envelope_ok and freq_ok and rep.momentum_ok and rep.mass_ok
                   and rep.max_block_residual <= cfg.residual_tol)
        ok = ok and step_ok
        d = rep.as_dict()
        d.update(frequency_fit=fit.as_dict(), envelope_ok=envelope_ok, frequency_ok=freq_ok, ok=step_ok)
        steps.append(d)
        rows.append({"v": v, "eps_in": rep.eps_in, "eps_out": rep.eps_out, "envelope": rep.eps_envelope,
                     "max_block_residual": rep.max_block_residual, "momentum": rep.momentum_ok,
                     "mass": rep.mass_ok, "sup_weighted_hat": fit.sup_weighted_hat, "nterms": rep.nterms})
    out = Path(args.out)
    write_report(out, "kam_run.json", cfg, "kam-run", {"initial": initial, "steps": steps, "passed": ok})
    write_csv(out, "kam_steps.csv", rows, ["v", "eps_in", "eps_out", "envelope", "max_block_residual",
                                           "momentum", "mass", "sup_weighted_hat", "nterms"])
    return EXIT_OK if ok else EXIT_BUDGET


def cmd_solve(args, cfg: RunConfig) -> int:
    from .instances import equation_residual, oracle_instance, random_instance, solve_instance
    from .homological import relative_l2_error
    rng = np.random.default_rng(args.seed)
    inst = random_instance(rng, args.n, args.K, args.solver)
    report: dict = {}
    u = solve_instance(inst, report)
    res = equation_residual(inst, u)
    dev = relative_l2_error(u, oracle_instance(inst))
    ok = res <= cfg.residual_tol and dev <= cfg.oracle_tol
    write_report(Path(args.out), "solve.json", cfg, "solve",
                 {"solver": args.solver, "n": args.n, "K": args.K, "seed": args.seed, "residual": res,
                  "oracle_deviation": dev, "sweeps": report.get("sweeps"), "passed": ok,
                  "solution": u.to_json_obj()})
    return EXIT_OK if ok else EXIT_BUDGET


def cmd_verify_fae(args, cfg: RunConfig) -> int:
    from .dnls import default_profile, quartic_part
    from .structure import verify_fae
    dc = dnls_config(cfg, args.jmax)
    P = quartic_part(dc)
    eps = args.eps if args.eps is not None else math.exp(2 * cfg.rho0) * (dc.I1 + dc.Im1) / math.pi
    rep = verify_fae(P, args.Lambda, eps, cfg.rho0, range(-args.mn, args.mn + 1),
                     profile=default_profile(dc), fit_tol=cfg.fit_tol)
    out = Path(args.out)
    d = rep.as_dict()
    d["eps"] = eps
    write_report(out, "verify_fae.json", cfg, "verify-fae", d)
    write_csv(out, "fae_bounds.csv", rep.rows, ["kind", "m", "n", "t", "value", "bound"])
    return EXIT_OK if rep.passed else EXIT_BUDGET


def parse_zone(text: str):
    """``k,i,j`` with ``k`` colon-separated over tangent modes ``-T..-1, 1..T``."""
    try:
        kpart, i, j = text.split(",")
        comps = [int(c) for c in kpart.split(":")]
        i, j = int(i), int(j)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"zone must look like 'k1:k2,i,j': {text!r}") from exc
    if len(comps) % 2:
        raise argparse.ArgumentTypeError("k needs an even number of components (modes -T..-1, 1..T)")
    T = len(comps) // 2
    modes = list(range(-T, 0)) + list(range(1, T + 1))
    return {m: c for m, c in zip(modes, comps) if c}, i, j


def cmd_measure(args, cfg: RunConfig) -> int:
    from .measure import ResonanceZone, classify_zone, zone_measure_mc
    k, i, j = args.zone
    zone = ResonanceZone.from_pair(k, i, j, args.beta, args.tau, kind=args.kind)
    case, cert = classify_zone(zone)
    est = zone_measure_mc(zone, samples=args.samples or cfg.samples, seed=args.seed)
    payload = {"estimate": est.estimate, "ci": list(est.ci), "envelope": est.envelope,
               "envelope_constant": est.envelope_constant, "measured_constant": est.measured_constant,
               "density_bound": est.density_bound, "verdict": est.verdict, "case": case,
               "certificate": cert, "zone": {"k": k, "i": i, "j": j, "tau": args.tau, "beta": args.beta}}
    if case == "case1":
        payload["verdict"] = est.hits == 0
    write_report(Path(args.out), "measure.json", cfg, "measure", payload)
    return EXIT_OK if payload["verdict"] else EXIT_BUDGET


def cmd_oracle(args, cfg: RunConfig) -> int:
    from .instances import compare_with_oracle
    summary = compare_with_oracle(args.n, args.K, args.cases, args.seed)
    ok = summary.worst() < cfg.oracle_tol and max(summary.max_residual.values()) < cfg.residual_tol
    d = summary.as_dict()
    d["passed"] = ok
    write_report(Path(args.out), "oracle.json", cfg, "oracle", d)
    log.info("oracle n=%d K=%d: max deviation %.3e (%.1fs)", args.n, args.K, summary.worst(), summary.seconds)
    return EXIT_OK if ok else EXIT_BUDGET


# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (validated against the schema)")
    common.add_argument("--out", default=".", help="directory for reports")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jmax", type=int, help="override jmax")
    common.add_argument("--r", type=float, help="override the radius r")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="dnlskam", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("build", parents=[common], help="emit the truncated initial Hamiltonian")

    k = sub.add_parser("kam-run", parents=[common], help="run KAM steps on truncated DNLS")
    k.add_argument("--steps", type=int, default=3)

    s = sub.add_parser("solve", parents=[common], help="solve one random homological instance")
    s.add_argument("--solver", choices=("shifted", "large_variable", "liu_yuan"), default="large_variable")
    s.add_argument("--n", type=int, default=2)
    s.add_argument("--K", type=int, default=8)

    f = sub.add_parser("verify-fae", parents=[common], help="check asymptotic expansions of the quartic part")
    f.add_argument("--Lambda", type=float, default=10.0)
    f.add_argument("--eps", type=float)
    f.add_argument("--mn", type=int, default=1, help="m, n range -mn..mn")

    m = sub.add_parser("measure", parents=[common], help="Monte-Carlo measure of one resonance zone")
    m.add_argument("--zone", type=parse_zone, required=True, help="k1:..:k2T,i,j (use --zone=... when it starts with -)")
    m.add_argument("--tau", type=float, default=2.0)
    m.add_argument("--beta", type=float, default=1e-2)
    m.add_argument("--samples", type=int)
    m.add_argument("--kind", choices=("diff", "sum"), default="diff")

    o = sub.add_parser("oracle", parents=[common], help="compare solvers with the dense oracle")
    o.add_argument("--n", type=int, default=1)
    o.add_argument("--K", type=int, default=8)
    o.add_argument("--cases", type=int, default=100)
    return p


COMMANDS = {"build": cmd_build, "kam-run": cmd_kam_run, "solve": cmd_solve, "verify-fae": cmd_verify_fae,
            "measure": cmd_measure, "oracle": cmd_oracle}


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.config, {"jmax": args.jmax, "r": args.r})
    except (OSError, json.JSONDecodeError, jsonschema.ValidationError, TypeError) as exc:
        print(f"dnlskam: configuration error: {getattr(exc, 'message', exc)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args, cfg)
    except ValueError as exc:
        print(f"dnlskam: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
