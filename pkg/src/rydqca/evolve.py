"""Continuous and block-partitioned evolution of the effective master equation.

The generator is applied matrix-free: the Hamiltonian is kept sparse and
each conditional depump channel is a gather/scatter on index blocks of the
density matrix, so no superoperator is formed. Superoperators are built only
for small chains, as a cross-check.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import numerics
from .model import Lattice, RuleSet, basis_bits, build_hamiltonian, build_jump_operators, neighbour_counts
from .numerics import IntegratorOptions
from .observables import fidelity_pure, magnetization, nn_covariance

log = logging.getLogger(__name__)

SUPEROP_MAX_DIM = 64


def lindblad_rhs(rho: np.ndarray, H, jumps: Sequence) -> np.ndarray:
    """``-i[H, rho] + sum_j (L rho L^+ - {L^+ L, rho}/2)`` for dense or sparse operators."""
    out = -1j * (H @ rho - _right(rho, H))
    for L in jumps:
        Lrho = L @ rho
        LdL = L.conj().T @ L
        out = out + _right(Lrho, L.conj().T) - 0.5 * (LdL @ rho + _right(rho, LdL))
    return np.asarray(out)


def _right(a: np.ndarray, b):
    """``a @ b`` that also works when ``b`` is sparse."""
    if sp.issparse(b):
        return np.asarray((b.T @ a.T).T)
    return a @ b


try:
    import numba
except ImportError:  # pragma: no cover
    numba = None


def _kernel_py(rho, out, coef, masks, decay, rate, cfg, gamma):
    """Fused ``L[rho]`` row by row; compiled with numba when available.

    ``coef[i, b]`` is the drive amplitude on site i seen from basis state b,
    ``rate[i, b]`` the depump rate into b (bit i of b is 0) and ``cfg[i, b]``
    the neighbour configuration of site i.
    """
    dim = rho.shape[0]
    n = masks.shape[0]
    acc = np.empty(dim, dtype=np.complex128)
    hr = np.empty(dim, dtype=np.complex128)
    for b in range(dim):
        db = decay[b]
        for c in range(dim):
            acc[c] = -0.5 * (db + decay[c]) * rho[b, c]
            hr[c] = 0.0
        for i in range(n):
            mi = masks[i]
            cb = coef[i, b]
            s = b ^ mi
            if cb != 0.0:
                for c in range(dim):
                    hr[c] += cb * rho[s, c]
            for c in range(dim):
                hr[c] -= rho[b, c ^ mi] * coef[i, c]
            if (b & mi) == 0:
                rb = rate[i, b]
                gb = cfg[i, b]
                if rb != 0.0:
                    for c in range(dim):
                        if (c & mi) == 0:
                            w = gamma
                            if cfg[i, c] == gb:
                                w += rb
                            acc[c] += w * rho[s, c | mi]
                elif gamma != 0.0:
                    for c in range(dim):
                        if (c & mi) == 0:
                            acc[c] += gamma * rho[s, c | mi]
        for c in range(dim):
            h = hr[c]
            out[b, c] = acc[c] + complex(h.imag, -h.real)
    return out


_kernel = numba.njit(cache=True)(_kernel_py) if numba is not None else None


class Generator:
    """Matrix-free Liouvillian of the effective model for one rule set.

    ``gen(rho)`` returns ``L[rho]`` for any square matrix (Hermitian or not).
    The drive and every conditional depump channel are applied entry-wise
    from per-site lookup tables; with numba present this is one fused pass.
    """

    def __init__(self, rules: RuleSet, lattice: Lattice, backend: str = "auto"):
        self.rules = rules
        self.lattice = lattice
        n, dim = lattice.n_sites, lattice.dim
        self.dim = dim
        if backend == "auto":
            backend = "numba" if _kernel is not None else "numpy"
        if backend not in ("numba", "numpy"):
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend
        self.H = build_hamiltonian(rules, lattice, sparse=True)
        self.H.eliminate_zeros()
        bits = basis_bits(n)
        left, right, k = neighbour_counts(lattice)
        active = np.zeros(n, dtype=bool)
        active[rules.active_sites(lattice)] = True
        theta, phi = np.array(rules.theta), np.array(rules.phi)
        self._masks = np.array([1 << (n - 1 - i) for i in range(n)], dtype=np.int64)
        self._coef = np.ascontiguousarray((theta[k] / 2.0).T * active[:, None])
        self._rate = np.ascontiguousarray(phi[k].T * active[:, None])
        self._cfg = np.ascontiguousarray((2 * left + right).T.astype(np.int64))
        self._gamma = rules.gamma
        self._decay = (bits.T * (self._rate + rules.gamma)).sum(axis=0).astype(float)
        self._has_jumps = bool(np.any(self._rate)) or rules.gamma > 0
        self._out = None

    @property
    def is_zero(self) -> bool:
        return self.H.nnz == 0 and not self._has_jumps

    @property
    def is_unitary(self) -> bool:
        return not self._has_jumps

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        rho = np.ascontiguousarray(rho, dtype=complex)
        if self.backend == "numba":
            out = np.empty_like(rho)
            return _kernel(rho, out, self._coef, self._masks, self._decay,
                           self._rate, self._cfg, self._gamma)
        return self._apply_numpy(rho)

    def _apply_numpy(self, rho: np.ndarray) -> np.ndarray:
        out = -1j * (self.H @ rho - np.asarray((self.H.T @ rho.T).T))
        if self._has_jumps:
            g = self._decay
            out -= 0.5 * (g[:, None] * rho + rho * g[None, :])
            n = self.lattice.n_sites
            idx = np.arange(self.dim)
            for i in range(n):
                m = self._masks[i]
                tgt = idx[(idx & m) == 0]
                if self._gamma > 0:
                    out[np.ix_(tgt, tgt)] += self._gamma * rho[np.ix_(tgt | m, tgt | m)]
                for c in np.unique(self._cfg[i, tgt]):
                    sel = tgt[(self._cfg[i, tgt] == c) & (self._rate[i, tgt] > 0)]
                    if sel.size:
                        r = self._rate[i, sel[0]]
                        out[np.ix_(sel, sel)] += r * rho[np.ix_(sel | m, sel | m)]
        return out

    def rhs(self, t: float, rho: np.ndarray) -> np.ndarray:
        return self(rho)

    def residual(self, rho: np.ndarray) -> float:
        """Frobenius norm of ``L[rho]``."""
        return float(np.linalg.norm(self(rho)))

    def hamiltonian(self) -> np.ndarray:
        return self.H.toarray()

    def jumps(self) -> list[np.ndarray]:
        return build_jump_operators(self.rules, self.lattice)


def build_superoperator(H, jumps: Sequence) -> np.ndarray:
    """Column-stacking Liouvillian matrix (``vec`` stacks columns).

    ``-i(I x H - H^T x I) + sum (conj(L) x L - I x L^+L / 2 - (L^+L)^T x I / 2)``.
    """
    H = H.toarray() if sp.issparse(H) else np.asarray(H, dtype=complex)
    d = H.shape[0]
    if d > SUPEROP_MAX_DIM:
        raise numerics.DimensionError(f"superoperator limited to 2^N <= {SUPEROP_MAX_DIM}, got {d}")
    ident = np.eye(d)
    sup = -1j * (np.kron(ident, H) - np.kron(H.T, ident))
    for L in jumps:
        L = L.toarray() if sp.issparse(L) else np.asarray(L, dtype=complex)
        LdL = L.conj().T @ L
        sup += np.kron(L.conj(), L) - 0.5 * np.kron(ident, LdL) - 0.5 * np.kron(LdL.T, ident)
    return sup


def vec(rho: np.ndarray) -> np.ndarray:
    return rho.reshape(-1, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    d = int(round(np.sqrt(v.size)))
    return v.reshape(d, d, order="F")


# ---------------------------------------------------------------- records

@dataclass
class EvolutionSpec:
    """What to run.

    Continuous mode integrates ``rules`` for ``t_max`` model time units and
    samples every ``dt``. Discrete mode applies ``t_max`` full block steps
    (A then B), sampling every ``dt`` steps; ``rules_a``/``rules_b`` default
    to ``rules`` restricted to each sublattice.
    """

    mode: str
    t_max: float
    lattice: Lattice
    rules: Optional[RuleSet] = None
    rules_a: Optional[RuleSet] = None
    rules_b: Optional[RuleSet] = None
    dt: float = 1.0
    options: IntegratorOptions = field(default_factory=IntegratorOptions)

    def __post_init__(self):
        if self.mode not in ("continuous", "discrete"):
            raise ValueError(f"mode must be continuous or discrete, got {self.mode!r}")
        if self.t_max < 0 or self.dt <= 0:
            raise ValueError("t_max must be >= 0 and dt > 0")
        if self.mode == "discrete":
            if int(self.t_max) != self.t_max or int(self.dt) != self.dt:
                raise ValueError("discrete mode needs integer step counts")
            if self.rules is None and (self.rules_a is None or self.rules_b is None):
                raise ValueError("discrete mode needs rules or both rules_a and rules_b")
        elif self.rules is None:
            raise ValueError("continuous mode needs rules")

    def sample_times(self) -> np.ndarray:
        n = int(np.floor(self.t_max / self.dt + 1e-9))
        times = self.dt * np.arange(n + 1)
        if self.t_max - times[-1] > 1e-9:
            times = np.append(times, self.t_max)
        return times


@dataclass
class EvolutionRecord:
    times: np.ndarray
    magnetization: np.ndarray
    trace_residual: np.ndarray
    nn_covariance: np.ndarray
    fidelity: Optional[np.ndarray] = None
    states: Optional[list] = None
    final_state: Optional[np.ndarray] = None


def _record(times, states, boundary, target, keep_states) -> EvolutionRecord:
    mags = np.array([magnetization(r) for r in states])
    tr = np.array([abs(np.trace(r) - 1.0) for r in states])
    cov = np.array([nn_covariance(r, boundary) for r in states])
    fid = None if target is None else np.array([fidelity_pure(r, target) for r in states])
    return EvolutionRecord(np.asarray(times, dtype=float), mags, tr, cov, fid,
                           list(states) if keep_states else None, states[-1])


def check_state(rho: np.ndarray, tol: float = 1e-10) -> None:
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValueError("density matrix does not have unit trace")
    if np.linalg.eigvalsh(rho)[0] < -tol:
        raise ValueError("density matrix is not positive semidefinite")


def propagate(rho0: np.ndarray, spec: EvolutionSpec, target: Optional[np.ndarray] = None,
              keep_states: bool = False) -> EvolutionRecord:
    """Run ``spec`` from ``rho0`` and sample observables.

    ``target`` is an optional pure state whose fidelity is recorded.
    Integrator failures surface as :class:`numerics.IntegrationError` with
    the last good time and state attached.
    """
    check_state(rho0)
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape[0] != spec.lattice.dim:
        raise ValueError("rho0 does not match the lattice size")
    if spec.mode == "continuous":
        gen = Generator(spec.rules, spec.lattice)
        times = spec.sample_times()
        if gen.is_zero:
            states = [rho0.copy() for _ in times]
        else:
            times, states = numerics.integrate(gen.rhs, rho0, times, spec.options)
    else:
        stepper = DiscreteStepper.from_spec(spec)
        every = int(spec.dt)
        times, states = [0.0], [rho0.copy()]
        rho = rho0
        for step in range(1, int(spec.t_max) + 1):
            rho = stepper.step(rho)
            if step % every == 0 or step == int(spec.t_max):
                times.append(float(step))
                states.append(rho)
    return _record(times, states, spec.lattice.boundary, target, keep_states)


# ---------------------------------------------------------- discrete steps

class _HalfStep:
    """``exp(L)`` for one sublattice update of unit duration."""

    def __init__(self, rules: RuleSet, lattice: Lattice, opts: IntegratorOptions, method: str):
        self.gen = Generator(rules, lattice)
        self.opts = opts
        self.kind = "identity" if self.gen.is_zero else method
        if self.kind == "auto":
            if self.gen.is_unitary and lattice.dim <= numerics.MAX_DENSE_DIM:
                self.kind = "unitary"
            elif _factorizes(rules, lattice):
                self.kind = "local"
            else:
                self.kind = "integrate"
        if self.kind == "unitary":
            self.U = numerics.expm(-1j * self.gen.hamiltonian())
        elif self.kind == "local":
            self._local = _local_channels(rules, lattice)
        elif self.kind not in ("integrate", "identity"):
            raise ValueError(f"unknown half-step method {method!r}")

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return rho.copy()
        if self.kind == "unitary":
            return self.U @ rho @ self.U.conj().T
        if self.kind == "local":
            return _apply_local(rho, self.gen.lattice.n_sites, self._local)
        _, states = numerics.integrate(self.gen.rhs, rho, [0.0, 1.0], self.opts)
        return states[-1]


class DiscreteStepper:
    """Block-partitioned update ``exp(L_B) exp(L_A)``.

    ``method`` is ``"auto"`` (exact unitary or factorised channel when
    possible, otherwise ODE integration) or ``"integrate"``.
    """

    def __init__(self, rules_a: RuleSet, rules_b: RuleSet, lattice: Lattice,
                 opts: Optional[IntegratorOptions] = None, method: str = "auto"):
        opts = opts or IntegratorOptions()
        if rules_a.site_mask is None:
            rules_a = rules_a.masked(lattice.sublattice("A"))
        if rules_b.site_mask is None:
            rules_b = rules_b.masked(lattice.sublattice("B"))
        self.half_a = _HalfStep(rules_a, lattice, opts, method)
        self.half_b = _HalfStep(rules_b, lattice, opts, method)

    @classmethod
    def from_spec(cls, spec: EvolutionSpec, method: str = "auto") -> "DiscreteStepper":
        ra = spec.rules_a if spec.rules_a is not None else spec.rules
        rb = spec.rules_b if spec.rules_b is not None else spec.rules
        return cls(ra, rb, spec.lattice, spec.options, method)

    def step(self, rho: np.ndarray) -> np.ndarray:
        return self.half_b(self.half_a(rho))


def discrete_step(rho: np.ndarray, rules_a: RuleSet, rules_b: RuleSet, lattice: Lattice,
                  opts: Optional[IntegratorOptions] = None, method: str = "auto") -> np.ndarray:
    """One QCA time step: sublattice A for unit time, then sublattice B.

    Rule sets without a ``site_mask`` are restricted to their sublattice.
    """
    return DiscreteStepper(rules_a, rules_b, lattice, opts, method).step(rho)


def _factorizes(rules: RuleSet, lattice: Lattice) -> bool:
    # Active sites must only see frozen neighbours; decay of frozen sites
    # would change the conditions mid-step.
    if rules.gamma > 0:
        return False
    active = set(rules.active_sites(lattice))
    for i in active:
        if any(j is not None and j in active for j in lattice.neighbours(i)):
            return False
    return True


def _local_channels(rules: RuleSet, lattice: Lattice):
    """Per active site, the exact 4x4 maps for every (row, column) neighbour configuration."""
    from .model import SIGMA_MINUS, X
    n1 = np.diag([0.0, 1.0])
    eye = np.eye(2)
    out = []
    for i in rules.active_sites(lattice):
        l, r = lattice.neighbours(i)
        configs = [(a, b) for a in ((0, 1) if l is not None else (0,))
                   for b in ((0, 1) if r is not None else (0,))]
        maps = {}
        for g in configs:
            for h in configs:
                cg, ch = rules.theta[sum(g)] / 2, rules.theta[sum(h)] / 2
                rg, rh = rules.phi[sum(g)], rules.phi[sum(h)]
                # row-major vec: vec(A M B) = (A kron B^T) vec(M)
                s = -1j * (cg * np.kron(X, eye) - ch * np.kron(eye, X.T))
                s = s - 0.5 * (rg * np.kron(n1, eye) + rh * np.kron(eye, n1.T))
                if g == h:
                    s = s + rg * np.kron(SIGMA_MINUS, SIGMA_MINUS.conj())
                maps[g, h] = numerics.expm(s)
        out.append((i, l, r, maps))
    return out


def _apply_local(rho: np.ndarray, n: int, channels) -> np.ndarray:
    t = rho.reshape((2,) * (2 * n)).copy()
    for i, l, r, maps in channels:
        for (g, h), m in maps.items():
            idx = [slice(None)] * (2 * n)
            fixed = {}
            if l is not None:
                fixed[l], fixed[n + l] = g[0], h[0]
            if r is not None:
                fixed[r], fixed[n + r] = g[1], h[1]
            for ax, v in fixed.items():
                idx[ax] = v
            free = [ax for ax in range(2 * n) if ax not in fixed]
            pi, pj = free.index(i), free.index(n + i)
            sub = np.moveaxis(t[tuple(idx)], (pi, pj), (-2, -1))
            new = np.einsum("...ij,klij->...kl", sub, m.reshape(2, 2, 2, 2))
            t[tuple(idx)] = np.moveaxis(new, (-2, -1), (pi, pj))
    return t.reshape(rho.shape)


# ------------------------------------------------------------ steady state

@dataclass
class SteadyState:
    rho: np.ndarray
    residual: float
    time: float
    converged: bool
    nullspace_distance: Optional[float] = None


def steady_state(rho0: np.ndarray, gen: Generator, tol: float = 1e-8, t_max: float = 500.0,
                 check_every: float = 1.0, opts: Optional[IntegratorOptions] = None,
                 cross_check: bool = False, polish_below: Optional[float] = 1e-3) -> SteadyState:
    """Propagate from ``rho0`` until ``||L[rho]||_F < tol`` or ``t_max``.

    Once the residual drops below ``polish_below`` (and after every further
    tenfold drop) a GMRES solve of ``L[delta] = -L[rho]`` is attempted from
    ``delta = 0``. Krylov iterates lie in the range of ``L`` and the zero
    eigenvalue of a Lindbladian is semisimple, so an accepted correction
    lands on the same stationary state the propagation is heading to; it is
    accepted only if its residual is below ``tol``. ``polish_below=None``
    disables it.

    Non-convergence is reported through ``converged=False`` rather than an
    exception. With ``cross_check`` and ``2^N <= 32`` the result is compared
    against the kernel of the superoperator when that kernel is
    one-dimensional.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    res0 = gen.residual(rho0)
    if gen.is_zero or res0 < tol:
        return SteadyState(rho0.copy(), res0, 0.0, True)
    times = np.arange(0.0, t_max + 0.5 * check_every, check_every)
    times[-1] = min(times[-1], t_max)
    state = {"next_polish": polish_below, "polished": None}

    def done(t, rho):
        res = gen.residual(rho)
        state["res"] = res
        if res < tol:
            return True
        nxt = state["next_polish"]
        if nxt is not None and res < nxt:
            state["next_polish"] = res / 10
            cand = _krylov_polish(gen, rho, tol)
            if cand is not None:
                state["polished"], state["res"] = cand
                return True
        return False

    ts, states = numerics.integrate(gen.rhs, rho0, times, opts, stop=done)
    rho = states[-1] if state["polished"] is None else state["polished"]
    res = state["res"]
    result = SteadyState(rho, res, float(ts[-1]), res < tol)
    if cross_check and gen.dim <= 32:
        ns = nullspace_steady_state(gen.hamiltonian(), gen.jumps())
        if ns is not None:
            result.nullspace_distance = float(np.linalg.norm(ns - rho))
    return result


def _krylov_polish(gen: Generator, rho: np.ndarray, tol: float, restart: int = 80,
                   maxiter: int = 10):
    """``rho + delta`` with ``L[rho + delta] ~ 0``, or None if GMRES falls short.

    ``delta`` is built from powers of ``L`` applied to ``L rho``, so it lies in
    the range of ``L`` and leaves the stationary component of ``rho`` alone.
    """
    from scipy.sparse.linalg import LinearOperator, gmres

    d = gen.dim
    op = LinearOperator((d * d, d * d), matvec=lambda v: gen(v.reshape(d, d)).ravel(),
                        dtype=complex)
    rhs = -gen(rho).ravel()
    delta, _ = gmres(op, rhs, rtol=0.0, atol=0.1 * tol, restart=min(restart, d * d),
                     maxiter=maxiter)
    cand = rho + delta.reshape(d, d)
    cand = 0.5 * (cand + cand.conj().T)
    res = gen.residual(cand)
    log.debug("krylov polish: residual %.3e -> %.3e", np.linalg.norm(rhs), res)
    return (cand, res) if res < tol else None


def nullspace_steady_state(H, jumps, gap: float = 1e-6) -> Optional[np.ndarray]:
    """Unique stationary state from the superoperator kernel, or None if degenerate."""
    sup = build_superoperator(H, jumps)
    w = np.sort(np.abs(np.linalg.eigvals(sup)))
    if len(w) > 1 and w[1] < gap * max(1.0, np.linalg.norm(sup, 2)):
        return None
    rho = unvec(numerics.dominant_nullvector(sup))
    rho = rho / np.trace(rho)
    return 0.5 * (rho + rho.conj().T)


# -------------------------------------------------------------- checkpoints

_MAGIC = b"RYDQCA-DM1\n"


def save_checkpoint(path, rho: np.ndarray, n_sites: int, **meta) -> None:
    """Row-major interleaved real/imag float64 after a one-line JSON header."""
    header = {"dims": list(rho.shape), "n_sites": n_sites,
              "basis": "site1-msb;Z|1>=+|1>", "dtype": "<c16", **meta}
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(np.ascontiguousarray(rho, dtype="<c16").tobytes())


def load_checkpoint(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a density-matrix checkpoint")
        (size,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(size))
        data = np.frombuffer(fh.read(), dtype="<c16")
    rows, cols = header["dims"]
    if data.size != rows * cols:
        raise ValueError(f"{path}: truncated checkpoint")
    return data.reshape(rows, cols).copy(), header
