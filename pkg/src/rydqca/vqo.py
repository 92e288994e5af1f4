"""Variational steering of steady states with a particle swarm.

The figure of merit is the nearest-neighbour ``Z`` covariance of the state
reached from a fixed initial product state. For periodic chains with uniform
rules and a symmetric initial state the dynamics never leaves the operators
invariant under translations and reflections, so each cost call works in
that sector (about ``4^N / 2N`` dimensions) with one dense exponential and
repeated unit-time steps.
"""

from __future__ import annotations

import csv
import functools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import numerics
from .evolve import Generator, steady_state
from .model import PERIODIC, Lattice, RuleSet, basis_bits, basis_density
from .observables import (antiferro_pair, fidelity_cat_best, fidelity_pure, cat_state,
                          nn_covariance)

log = logging.getLogger(__name__)

TWO_PI = 2 * math.pi
DECAY_RATES = (0.0, 2.513e-3, 7.54e-3)
SECTOR_MAX_SITES = 7
# reports re-solve the winner more tightly than the optimizer's cost calls
REPORT_T_MAX = 5000.0
REPORT_TOL = 1e-8


# ------------------------------------------------------------ symmetric sector

class SymmetricSector:
    """Real orthonormal basis of Hermitian operators invariant under the dihedral group.

    Each orbit ``o`` of index pairs gives ``O_o``, the normalised sum of
    ``|b><b'|`` over the orbit. Orbits closed under transposition contribute
    ``O_o`` itself; every other pair of mutually transposed orbits
    contributes ``(O_o + O_o^T)/sqrt(2)`` and ``i(O_o - O_o^T)/sqrt(2)``. A
    Hermitian symmetric matrix has real coordinates in this basis and the
    coordinates are Frobenius-isometric.
    """

    def __init__(self, n_sites: int):
        n, dim = n_sites, 2**n_sites
        bits = basis_bits(n).astype(np.int64)
        weights = 1 << (n - 1 - np.arange(n))
        perms = [np.roll(np.arange(n), s) for s in range(n)]
        perms += [p[::-1] for p in perms]
        images = np.stack([bits[:, p] @ weights for p in perms])  # (group, dim)
        pair = np.arange(dim * dim)
        rows, cols = pair // dim, pair % dim
        canon = np.min(images[:, rows] * dim + images[:, cols], axis=0)
        reps, orbit = np.unique(canon, return_inverse=True)
        sizes = np.bincount(orbit)
        flipped = orbit[cols * dim + rows]
        partner = np.empty(reps.size, dtype=np.int64)
        partner[orbit] = flipped
        entries_r, entries_c, entries_v = [], [], []
        col = 0
        inv = np.sqrt(0.5)
        members = [[] for _ in range(reps.size)]
        for p_, o in zip(pair, orbit):
            members[o].append(p_)
        for o in range(reps.size):
            q = partner[o]
            w = 1.0 / math.sqrt(sizes[o])
            if q == o:
                entries_r += members[o]
                entries_c += [col] * sizes[o]
                entries_v += [w] * sizes[o]
                col += 1
            elif o < q:
                for phase, sign in ((1.0, 1.0), (1j, -1.0)):
                    entries_r += members[o] + members[q]
                    entries_c += [col] * (2 * sizes[o])
                    entries_v += [phase * w * inv] * sizes[o] + [sign * phase * w * inv] * sizes[o]
                    col += 1
        self.n_sites, self.dim, self.size = n, dim, col
        self.basis = sp.csr_matrix((np.array(entries_v, dtype=complex), (entries_r, entries_c)),
                                   shape=(dim * dim, col))
        self._basis_h = self.basis.conj().T.tocsr()

    def project(self, rho: np.ndarray) -> np.ndarray:
        """Real coordinates of the symmetric Hermitian part of ``rho``."""
        return np.real(self._basis_h @ np.asarray(rho, dtype=complex).ravel())

    def lift(self, x: np.ndarray) -> np.ndarray:
        return (self.basis @ x).reshape(self.dim, self.dim)

    def is_member(self, rho: np.ndarray, tol: float = 1e-12) -> bool:
        return float(np.linalg.norm(self.lift(self.project(rho)) - rho)) < tol


@functools.lru_cache(maxsize=4)
def _sector_model(n_sites: int):
    """Sector basis and the seven generator components (theta, phi, gamma)."""
    sector = SymmetricSector(n_sites)
    lattice = Lattice(n_sites, PERIODIC)
    comps = []
    for i in range(7):
        unit = np.zeros(6)
        if i < 6:
            unit[i] = 1.0
        rules = RuleSet.from_vector(unit, "raw", gamma=1.0 if i == 6 else 0.0)
        gen = Generator(rules, lattice, backend="numpy")
        a = np.empty((sector.size, sector.size))
        for o in range(sector.size):
            col = np.zeros(sector.size)
            col[o] = 1.0
            a[:, o] = sector.project(gen(sector.lift(col)))
        comps.append(a)
    return sector, np.stack(comps)


class ReducedEvolution:
    """Unit-time propagator of one rule set inside the symmetric sector."""

    def __init__(self, params: Sequence[float], n_sites: int, gamma: float = 0.0):
        self.sector, comps = _sector_model(n_sites)
        coeff = np.append(np.asarray(params, dtype=float), gamma)
        self.L = np.tensordot(coeff, comps, axes=1)
        self.step = numerics.expm(self.L)

    def residual(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(self.L @ x))

    def run(self, x0: np.ndarray, t_max: int, tol: Optional[float] = None):
        """Yield ``(t, x)`` at integer times, stopping early once the residual is below ``tol``."""
        x = x0
        yield 0, x
        for t in range(1, int(t_max) + 1):
            x = self.step @ x
            yield t, x
            if tol is not None and self.residual(x) < tol:
                return


# ------------------------------------------------------------------ cost

@dataclass(frozen=True)
class CostContext:
    """Where and how a rule vector is scored.

    ``params`` are raw model units ``[theta0..2, phi0..2]``. ``objective``
    only decides which value a failed evaluation receives.
    """

    n_sites: int = 6
    boundary: str = PERIODIC
    init: str = "000000"
    t_max: float = 300.0
    tol: float = 1e-6
    gamma: float = 0.0
    objective: str = "maximize"

    def __post_init__(self):
        if len(self.init) != self.n_sites:
            raise ValueError("initial bitstring length must equal n_sites")
        if self.objective not in ("maximize", "minimize"):
            raise ValueError("objective must be maximize or minimize")

    @property
    def worst(self) -> float:
        return -math.inf if self.objective == "maximize" else math.inf

    def __call__(self, params) -> float:
        return cost_steady_nn_covariance(params, self)


@dataclass
class SteadyEval:
    rho: np.ndarray
    cost: float
    converged: bool
    time: float
    residual: float


def _uses_sector(ctx: CostContext) -> bool:
    if ctx.boundary != PERIODIC or ctx.n_sites > SECTOR_MAX_SITES:
        return False
    sector, _ = _sector_model(ctx.n_sites)
    return sector.is_member(basis_density(ctx.init))


def evaluate_steady(params: Sequence[float], ctx: CostContext) -> SteadyEval:
    """Steady state reached from ``ctx.init`` and its nearest-neighbour covariance."""
    params = np.asarray(params, dtype=float)
    if params.shape != (6,):
        raise ValueError("params must have 6 entries")
    rho0 = basis_density(ctx.init)
    if _uses_sector(ctx):
        red = ReducedEvolution(params, ctx.n_sites, ctx.gamma)
        x0 = red.sector.project(rho0)
        t, x = 0, x0
        for t, x in red.run(x0, int(ctx.t_max), ctx.tol):
            pass
        res = red.residual(x)
        rho = red.sector.lift(x)
        rho = 0.5 * (rho + rho.conj().T)
        return SteadyEval(rho, nn_covariance(rho, ctx.boundary), res < ctx.tol, float(t), res)
    rules = RuleSet.from_vector(params, "raw", ctx.gamma)
    ss = steady_state(rho0, Generator(rules, Lattice(ctx.n_sites, ctx.boundary)),
                      tol=ctx.tol, t_max=ctx.t_max)
    return SteadyEval(ss.rho, nn_covariance(ss.rho, ctx.boundary), ss.converged,
                      ss.time, ss.residual)


def cost_steady_nn_covariance(params: Sequence[float], ctx: CostContext = CostContext()) -> float:
    """Mean nearest-neighbour covariance of the steady state; failures score worst."""
    try:
        ev = evaluate_steady(params, ctx)
    except (numerics.IntegrationError, np.linalg.LinAlgError) as exc:
        log.warning("cost evaluation failed at %s: %s", np.round(params, 4), exc)
        return ctx.worst
    if not ev.converged:
        log.debug("steady state not converged (residual %.2e) at %s", ev.residual, params)
    return ev.cost if math.isfinite(ev.cost) else ctx.worst


# ------------------------------------------------------------------- swarm

@dataclass
class SwarmConfig:
    pop: int = 10
    iters: int = 100
    w: float = 0.7
    c1: float = 1.5
    c2: float = 1.5
    lower: Sequence[float] = (0.0,) * 6
    upper: Sequence[float] = (TWO_PI,) * 6
    seed: int = 0
    objective: str = "maximize"
    cost_tag: str = "nn-covariance"
    vclamp: float = 0.5

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.pop < 2 or self.iters < 1:
            raise ValueError("need pop >= 2 and iters >= 1")
        if self.lower.shape != self.upper.shape or np.any(self.lower >= self.upper):
            raise ValueError("bounds need lower < upper in every dimension")
        if self.objective not in ("maximize", "minimize"):
            raise ValueError("objective must be maximize or minimize")


@dataclass
class SwarmTrace:
    costs: np.ndarray  # (iters, pop)
    positions: np.ndarray  # (iters, pop, dim)
    best_cost: np.ndarray  # (iters,) global best after each iteration
    best_params: np.ndarray
    seed: int
    objective: str

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["iteration", "individual", "cost", "global_best"])
            for it, row in enumerate(self.costs):
                for j, c in enumerate(row):
                    out.writerow([it, j, "%.17g" % c, "%.17g" % self.best_cost[it]])


def _evaluate(cost, xs, pool):
    if pool is None:
        return np.array([cost(x) for x in xs], dtype=float)
    return np.array(list(pool.map(cost, list(xs))), dtype=float)


def pso_optimize(cost: Callable[[np.ndarray], float], cfg: SwarmConfig,
                 workers: int = 1) -> SwarmTrace:
    """Global-best particle swarm with absorbing walls.

    Each particle draws its random numbers from its own stream spawned from
    ``cfg.seed``; all draws happen in the sequential update phase, so results
    do not depend on ``workers``. Non-finite costs rank worst.
    """
    lb, ub = cfg.lower, cfg.upper
    dim = lb.size
    sign = 1.0 if cfg.objective == "maximize" else -1.0
    vmax = cfg.vclamp * (ub - lb)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(cfg.pop)]
    x = np.stack([r.uniform(lb, ub) for r in rngs])
    v = np.stack([r.uniform(-vmax, vmax) for r in rngs])

    def score(c):
        return np.where(np.isfinite(c), sign * c, -np.inf)

    costs, positions, best = [], [], []
    pbest_x, pbest_s = x.copy(), np.full(cfg.pop, -np.inf)
    gbest_x, gbest_s, gbest_c = x[0].copy(), -np.inf, np.nan
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for it in range(cfg.iters):
            if it > 0:
                for j, r in enumerate(rngs):
                    r1, r2 = r.random(dim), r.random(dim)
                    v[j] = (cfg.w * v[j] + cfg.c1 * r1 * (pbest_x[j] - x[j])
                            + cfg.c2 * r2 * (gbest_x - x[j]))
                v = np.clip(v, -vmax, vmax)
                x = np.clip(x + v, lb, ub)
            c = _evaluate(cost, x, pool)
            s = score(c)
            better = s > pbest_s
            pbest_x[better], pbest_s[better] = x[better], s[better]
            j = int(np.argmax(s))
            if s[j] > gbest_s:
                gbest_x, gbest_s, gbest_c = x[j].copy(), s[j], c[j]
            costs.append(c)
            positions.append(x.copy())
            best.append(gbest_c)
            log.info("iteration %d: best %.6f", it, gbest_c)
    finally:
        if pool is not None:
            pool.shutdown()
    return SwarmTrace(np.array(costs), np.array(positions), np.array(best),
                      gbest_x, cfg.seed, cfg.objective)


# ------------------------------------------------------------------ report

def target_pair(ctx: CostContext, objective: str) -> tuple[str, str]:
    """Bitstrings of the cat state each objective aims for."""
    n = ctx.n_sites
    if objective == "maximize":
        return "0" * n, "1" * n
    return antiferro_pair(n)


@dataclass
class FidelityCurve:
    gamma: float
    times: np.ndarray
    fidelity: np.ndarray  # phase-optimised
    fidelity_fixed: np.ndarray  # relative phase pi

    @property
    def peak(self) -> float:
        return float(self.fidelity.max())

    def first_time_above(self, level: float) -> Optional[float]:
        hit = np.flatnonzero(self.fidelity >= level)
        return float(self.times[hit[0]]) if hit.size else None


@dataclass
class OptimizationReport:
    trace: SwarmTrace
    best_params: np.ndarray
    best_cost: float
    steady: SteadyEval
    target: tuple
    fidelity_fixed: float
    fidelity_best: float
    best_phase: float
    curves: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "objective": self.trace.objective,
            "seed": self.trace.seed,
            "best_params": self.best_params.tolist(),
            "best_params_over_pi": (self.best_params / math.pi).tolist(),
            "best_cost": self.best_cost,
            "steady_cost": self.steady.cost,
            "steady_converged": self.steady.converged,
            "steady_time": self.steady.time,
            "steady_residual": self.steady.residual,
            "target": list(self.target),
            "fidelity_fixed_phase": self.fidelity_fixed,
            "fidelity_phase_optimized": self.fidelity_best,
            "optimal_phase": self.best_phase,
            "curves": [{"gamma": c.gamma, "peak": c.peak,
                        "first_time_above_0.99": c.first_time_above(0.99),
                        "times": c.times.tolist(), "fidelity": c.fidelity.tolist(),
                        "fidelity_fixed_phase": c.fidelity_fixed.tolist()} for c in self.curves],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def fidelity_curve(params: Sequence[float], ctx: CostContext, target: tuple[str, str],
                   gamma: float = 0.0, t_max: int = 300) -> FidelityCurve:
    """Cat-state fidelity at integer times from ``ctx.init``."""
    a, b = target
    fixed = cat_state(a, b, math.pi)
    times, best, fix = [], [], []
    if _uses_sector(ctx):
        red = ReducedEvolution(params, ctx.n_sites, gamma)
        states = ((t, red.sector.lift(x)) for t, x in red.run(red.sector.project(basis_density(ctx.init)), t_max))
    else:
        from .evolve import EvolutionSpec, propagate
        spec = EvolutionSpec("continuous", t_max, Lattice(ctx.n_sites, ctx.boundary),
                             RuleSet.from_vector(params, "raw", gamma))
        rec = propagate(basis_density(ctx.init), spec, keep_states=True)
        states = zip(rec.times, rec.states)
    for t, rho in states:
        times.append(float(t))
        best.append(fidelity_cat_best(rho, a, b)[0])
        fix.append(fidelity_pure(rho, fixed))
    return FidelityCurve(gamma, np.array(times), np.array(best), np.array(fix))


def report_for(params: Sequence[float], ctx: CostContext, trace: SwarmTrace,
               gammas: Sequence[float] = DECAY_RATES, t_curve: int = 300) -> OptimizationReport:
    """Re-evaluate ``params`` and attach fidelity curves for each decay rate."""
    params = np.asarray(params, dtype=float)
    steady = evaluate_steady(params, CostContext(**{**ctx.__dict__, "gamma": 0.0,
                                                    "t_max": REPORT_T_MAX, "tol": REPORT_TOL}))
    if not steady.converged:
        log.warning("reported steady state not converged (residual %.2e)", steady.residual)
    target = target_pair(ctx, trace.objective)
    f_best, phase = fidelity_cat_best(steady.rho, *target)
    f_fixed = fidelity_pure(steady.rho, cat_state(*target, math.pi))
    curves = [fidelity_curve(params, ctx, target, g, t_curve) for g in gammas]
    best_cost = float(trace.best_cost[-1])
    return OptimizationReport(trace, params, best_cost, steady, target, f_fixed, f_best,
                              phase, curves)


def optimize_and_report(cfg: SwarmConfig, ctx: Optional[CostContext] = None, workers: int = 1,
                        gammas: Sequence[float] = DECAY_RATES,
                        t_curve: int = 300) -> OptimizationReport:
    """Run the swarm on the steady-state covariance and report the best rule set."""
    ctx = ctx or CostContext(objective=cfg.objective)
    if ctx.objective != cfg.objective:
        ctx = CostContext(**{**ctx.__dict__, "objective": cfg.objective})
    trace = pso_optimize(ctx, cfg, workers)
    return report_for(trace.best_params, ctx, trace, gammas, t_curve)
