"""Command-line entry point: ``rydqca {evolve,atlas,optimize,validate}``.

Exit codes: 0 success, 1 usage or I/O error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import fullmodel, numerics, vqo
from .evolve import EvolutionSpec, Generator, propagate
from .model import OPEN, PERIODIC, Lattice, RuleSet, basis_density, digital_rules
from .observables import nn_covariance

log = logging.getLogger("rydqca")

CENTRAL = "central-superposition"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ parsing

def parse_vector(text: str, length: int = 6) -> list[float]:
    parts = [p for p in text.replace(",", " ").split() if p]
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise UsageError(f"not a list of numbers: {text!r}") from None
    if len(values) != length:
        raise UsageError(f"expected {length} values, got {len(values)} in {text!r}")
    return values


def read_rules_file(path) -> list[list[float]]:
    """One rule vector per line (commas or spaces); ``#`` starts a comment."""
    rules = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read rules file {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if line:
            try:
                rules.append(parse_vector(line))
            except UsageError as exc:
                raise UsageError(f"{path}:{lineno}: {exc}") from None
    return rules


def initial_state(spec: str, n: int) -> np.ndarray:
    """Density matrix for a bitstring or the named central superposition."""
    if spec == CENTRAL:
        if n % 2 == 0:
            raise UsageError(f"{CENTRAL} needs an odd number of sites")
        psi = np.zeros(2**n, dtype=complex)
        half = (n - 1) // 2
        psi[0] = psi[1 << half] = 1 / math.sqrt(2)
        return np.outer(psi, psi.conj())
    if len(spec) != n or set(spec) - {"0", "1"}:
        raise UsageError(f"initial state {spec!r} is not a bitstring of length {n}")
    return basis_density(spec)


def resolve_seed(seed) -> int:
    if seed is not None:
        return int(seed)
    env = os.environ.get("QCA_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"QCA_SEED must be an integer, got {env!r}") from None


# ------------------------------------------------------------------ outputs

def write_csv(path, times, mags, trace_res) -> None:
    n = mags.shape[1]
    with open(path, "w") as fh:
        fh.write(",".join(["t"] + [f"Z_{j}" for j in range(1, n + 1)] + ["trace_residual"]) + "\n")
        for t, z, r in zip(times, mags, trace_res):
            fh.write(",".join("%.17g" % v for v in (t, *z, r)) + "\n")


def pgm_bytes(mags: np.ndarray) -> bytes:
    """P5 greymap: one row per sample, one column per site, ``<Z> = +1`` white."""
    rows, cols = mags.shape
    px = np.clip(np.round(255 * (np.asarray(mags) + 1) / 2), 0, 255).astype(np.uint8)
    return f"P5\n{cols} {rows}\n255\n".encode() + px.tobytes()


def write_pgm(path, mags) -> None:
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(mags))


# ----------------------------------------------------------------- commands

def _rules_from_args(args) -> RuleSet:
    return RuleSet.from_vector(parse_vector(args.rules), args.units, args.gamma)


def _evolution_spec(rules, lattice, mode, t_max, dt=1.0) -> EvolutionSpec:
    return EvolutionSpec(mode, t_max, lattice, rules, dt=dt)


def cmd_evolve(args) -> int:
    rules = _rules_from_args(args)
    lattice = Lattice(args.n, args.boundary)
    rho0 = initial_state(args.init, args.n)
    t_max = args.steps if args.mode == "discrete" else args.tmax
    if args.mode == "discrete" and t_max is None:
        raise UsageError("discrete mode needs --steps")
    rec = propagate(rho0, _evolution_spec(rules, lattice, args.mode, t_max, args.dt))
    write_csv(args.out, rec.times, rec.magnetization, rec.trace_residual)
    if args.pgm:
        write_pgm(args.pgm, rec.magnetization)
    log.info("final <Z>: %s", np.array2string(rec.magnetization[-1], precision=4))
    return 0


def rule_code(values) -> str:
    return "".join(f"{v:g}" for v in values)


def _atlas_one(job):
    values, units, n, boundary, init, t_max, steps = job
    rules = RuleSet.from_vector(values, units)
    lattice = Lattice(n, boundary)
    rho0 = initial_state(init, n)
    out = {}
    for mode, span in (("discrete", steps), ("continuous", t_max)):
        rec = propagate(rho0, EvolutionSpec(mode, span, lattice, rules))
        out[mode] = rec
    res = Generator(rules, lattice).residual(out["continuous"].final_state)
    return out, res


def cmd_atlas(args) -> int:
    if args.all_digital:
        vectors = [list(v) for v in digital_rules()]
    elif args.rules_file:
        vectors = read_rules_file(args.rules_file)
    else:
        raise UsageError("atlas needs --rules-file or --all-digital")
    initial_state(args.init, args.n)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    jobs = [(v, args.units, args.n, args.boundary, args.init, args.tmax, args.steps) for v in vectors]
    workers = args.workers or os.cpu_count() or 1
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(_atlas_one, j) for j in jobs]
            results = [_safe_result(f.result, v) for f, v in zip(futures, vectors)]
    else:
        results = [_safe_result(lambda j=j: _atlas_one(j), j[0]) for j in jobs]
    failures = 0
    with open(outdir / "index.csv", "w") as idx:
        idx.write("rule,unitary,final_nn_cov_discrete,final_nn_cov_continuous,"
                  "mean_abs_z_continuous,steady_residual,discrete_pgm,continuous_pgm\n")
        for v, res in zip(vectors, results):
            code = rule_code(v)
            if res is None:
                failures += 1
                idx.write(f"{code},,,,,,failed,failed\n")
                continue
            recs, resid = res
            unitary = not any(v[3:])
            names = {}
            for mode, rec in recs.items():
                names[mode] = f"rule_{code}_{mode}.pgm"
                write_pgm(outdir / names[mode], rec.magnetization)
            cd = nn_covariance(recs["discrete"].final_state, args.boundary)
            cc = nn_covariance(recs["continuous"].final_state, args.boundary)
            mz = float(np.mean(np.abs(recs["continuous"].magnetization[-1])))
            idx.write(",".join([code, str(int(unitary))] + ["%.17g" % x for x in (cd, cc, mz, resid)]
                               + [names["discrete"], names["continuous"]]) + "\n")
    log.info("atlas: %d rules, %d failed", len(vectors), failures)
    return 0


def _safe_result(fetch, values):
    try:
        return fetch()
    except (numerics.IntegrationError, ValueError) as exc:
        log.error("rule %s failed: %s", rule_code(values), exc)
        return None


def cmd_optimize(args) -> int:
    objective = {"max-nn-cov": "maximize", "min-nn-cov": "minimize"}[args.objective]
    init = args.init or "0" * args.n
    ctx = vqo.CostContext(n_sites=args.n, boundary=args.boundary, init=init,
                          t_max=args.tmax, tol=args.tol, objective=objective)
    cfg = vqo.SwarmConfig(pop=args.pop, iters=args.iters, seed=resolve_seed(args.seed),
                          objective=objective)
    gammas = sorted({0.0, *args.gamma}) if args.gamma else vqo.DECAY_RATES
    workers = args.workers or os.cpu_count() or 1
    report = vqo.optimize_and_report(cfg, ctx, workers, gammas, args.tcurve)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    report.trace.write_csv(outdir / "trace.csv")
    (outdir / "report.json").write_text(report.to_json())
    with open(outdir / "fidelity.csv", "w") as fh:
        fh.write("gamma,t,fidelity_phase_optimized,fidelity_fixed_phase\n")
        for c in report.curves:
            for t, f, g in zip(c.times, c.fidelity, c.fidelity_fixed):
                fh.write(",".join("%.17g" % x for x in (c.gamma, t, f, g)) + "\n")
    print(f"best <C> = {report.best_cost:.6f}; phase-optimized fidelity "
          f"{report.fidelity_best:.6f} (phase {report.best_phase:.4f})")
    return 0


def cmd_validate(args) -> int:
    scale = math.pi if args.units == "pi" else 1.0
    theta = [scale * v for v in parse_vector(args.theta, 3)]
    phi = [scale * v for v in parse_vector(args.phi, 3)]
    init = args.init or "0" * args.n
    p = fullmodel.ThreeLevelParams(args.n, args.V, args.Gamma, theta, phi, args.boundary)
    trend = fullmodel.convergence_in_v(p, init, args.tmax, args.factors, args.dt)
    report = {
        "n_sites": args.n, "boundary": args.boundary, "init": init,
        "theta": theta, "phi": phi, "Gamma": args.Gamma, "t_max": args.tmax,
        "runs": [r.to_dict() for r in trend["reports"]],
        "strictly_decreasing": trend["strictly_decreasing"],
        "verdict": "converging" if trend["strictly_decreasing"] else "not monotone",
    }
    text = json.dumps(report, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rydqca", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def lattice_args(p, n=9, boundary=OPEN):
        p.add_argument("--n", type=int, default=n, help="number of sites")
        p.add_argument("--boundary", choices=(OPEN, PERIODIC), default=boundary)

    ev = sub.add_parser("evolve", help="time-evolve one rule set")
    lattice_args(ev)
    ev.add_argument("--rules", required=True, help="6 values theta0..2,phi0..2")
    ev.add_argument("--units", choices=("pi", "raw"), default="pi")
    ev.add_argument("--gamma", type=float, default=0.0, help="Rydberg decay rate (raw units)")
    ev.add_argument("--init", default="000010000", help=f"bitstring or {CENTRAL}")
    ev.add_argument("--mode", choices=("continuous", "discrete"), default="continuous")
    ev.add_argument("--tmax", type=float, default=20.0)
    ev.add_argument("--steps", type=int, default=None)
    ev.add_argument("--dt", type=float, default=1.0, help="sample interval")
    ev.add_argument("--out", default="trajectory.csv")
    ev.add_argument("--pgm", default=None, help="optional heatmap path")
    ev.set_defaults(func=cmd_evolve)

    at = sub.add_parser("atlas", help="heatmaps for a list of rule sets")
    lattice_args(at)
    at.add_argument("--rules-file", default=None)
    at.add_argument("--all-digital", action="store_true")
    at.add_argument("--units", choices=("pi", "raw"), default="pi")
    at.add_argument("--init", default="000010000")
    at.add_argument("--tmax", type=float, default=20.0)
    at.add_argument("--steps", type=int, default=20)
    at.add_argument("--outdir", default="atlas")
    at.add_argument("--workers", type=int, default=None)
    at.set_defaults(func=cmd_atlas)

    op = sub.add_parser("optimize", help="particle-swarm steering of the steady state")
    lattice_args(op, 6, PERIODIC)
    op.add_argument("--objective", choices=("max-nn-cov", "min-nn-cov"), default="max-nn-cov")
    op.add_argument("--init", default=None)
    op.add_argument("--pop", type=int, default=10)
    op.add_argument("--iters", type=int, default=100)
    op.add_argument("--seed", type=int, default=None, help="falls back to $QCA_SEED, then 0")
    op.add_argument("--gamma", type=float, nargs="*", default=None,
                    help="decay rates for the fidelity curves (0 is always included)")
    op.add_argument("--tmax", type=float, default=300.0, help="steady-state budget per cost call")
    op.add_argument("--tol", type=float, default=1e-6)
    op.add_argument("--tcurve", type=int, default=300)
    op.add_argument("--workers", type=int, default=None)
    op.add_argument("--outdir", default="optimize")
    op.set_defaults(func=cmd_optimize)

    va = sub.add_parser("validate", help="three-level model against the effective model")
    lattice_args(va, 3)
    va.add_argument("--theta", default="0,1,0")
    va.add_argument("--phi", default="0,0,0")
    va.add_argument("--units", choices=("pi", "raw"), default="pi")
    va.add_argument("--V", type=float, default=fullmodel.DEFAULT_V)
    va.add_argument("--Gamma", type=float, default=fullmodel.DEFAULT_GAMMA)
    va.add_argument("--init", default=None)
    va.add_argument("--tmax", type=float, default=5.0)
    va.add_argument("--dt", type=float, default=0.05)
    va.add_argument("--factors", type=float, nargs="+", default=[1, 2, 4])
    va.add_argument("--out", default=None)
    va.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rydqca: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        where = exc.filename if exc.filename else ""
        print(f"rydqca: I/O error {where}: {exc.strerror or exc}", file=sys.stderr)
        return 1
    except (numerics.IntegrationError, numerics.NoSteadyStateError, numerics.DimensionError) as exc:
        print(f"rydqca: numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"rydqca: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
