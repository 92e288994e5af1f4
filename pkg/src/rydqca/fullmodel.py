"""Full three-level Rydberg chain with explicit interaction and decay.

Each atom has levels ``|g>, |r>, |e>`` (indices 0, 1, 2). The drives are
written in the frame where the van der Waals shift ``V n_r n_r`` stays
explicit, so the k-th frequency component ``e^{i k V t}`` is resonant only
when exactly k neighbours sit in ``|r>``. The short-lived level ``|e>``
decays to ``|g>`` at rate ``Gamma``; eliminating it gives the two-level
depump rate ``phi**2 / Gamma``.

The embedding into the effective model is ``g -> 0`` and ``r -> 1``; ``|e>``
is traced over when comparing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import numerics
from .evolve import EvolutionSpec, propagate
from .model import OPEN, Lattice, RuleSet, basis_density
from .numerics import IntegratorOptions

MAX_SITES = 5
G, R, E = 0, 1, 2

DEFAULT_V = 50 * math.pi
DEFAULT_GAMMA = 10 * math.pi  # 31.42


@dataclass(frozen=True)
class ThreeLevelParams:
    """Dimensionless parameters of the three-level chain.

    ``theta[k]`` drives ``g <-> r`` and ``phi[k]`` drives ``r <-> e`` with
    the phase ``e^{i k V t}``. ``flags`` records the regime conditions
    ``V >> Gamma`` (by ``ratio``) and ``Gamma`` above every drive.
    """

    n_sites: int
    V: float = DEFAULT_V
    Gamma: float = DEFAULT_GAMMA
    theta: tuple = (0.0, 0.0, 0.0)
    phi: tuple = (0.0, 0.0, 0.0)
    boundary: str = OPEN
    ratio: float = 5.0
    flags: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 1 <= self.n_sites <= MAX_SITES:
            raise numerics.DimensionError(f"three-level chains limited to 1..{MAX_SITES} sites")
        Lattice(self.n_sites, self.boundary)  # validates boundary
        theta = tuple(float(v) for v in self.theta)
        phi = tuple(float(v) for v in self.phi)
        if len(theta) != 3 or len(phi) != 3:
            raise ValueError("theta and phi need exactly three entries")
        if self.Gamma < 0:
            raise ValueError("Gamma must be >= 0")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)
        drives = max(map(abs, theta + phi))
        object.__setattr__(self, "flags", {
            "V_much_greater_than_Gamma": self.V >= self.ratio * self.Gamma * (1 - 1e-12),
            "Gamma_greater_than_drives": self.Gamma > drives,
        })

    @property
    def dim(self) -> int:
        return 3**self.n_sites

    @property
    def lattice(self) -> Lattice:
        return Lattice(self.n_sites, self.boundary)

    @property
    def warnings(self) -> list[str]:
        return [f"regime condition violated: {k}" for k, ok in self.flags.items() if not ok]

    def scaled(self, factor: float) -> "ThreeLevelParams":
        """Same parameters with ``V`` multiplied by ``factor``."""
        return ThreeLevelParams(self.n_sites, self.V * factor, self.Gamma, self.theta,
                                self.phi, self.boundary, self.ratio)

    def effective_rules(self) -> RuleSet:
        """Two-level rule set with the same ``theta`` and ``phi**2 / Gamma``."""
        if self.Gamma > 0:
            phi_eff = tuple(p * p / self.Gamma for p in self.phi)
        elif any(self.phi):
            raise ValueError("phi drives need Gamma > 0 for an effective description")
        else:
            phi_eff = (0.0, 0.0, 0.0)
        return RuleSet(self.theta, phi_eff)


def _level_digits(n: int) -> np.ndarray:
    """``(3**n, n)`` level index per site; site 1 is the most significant digit."""
    idx = np.arange(3**n)
    return np.stack([(idx // 3 ** (n - 1 - i)) % 3 for i in range(n)], axis=1)


def _transition(n: int, site: int, a: int, b: int) -> sp.csr_matrix:
    """``|a><b|`` on 0-based ``site``."""
    digits = _level_digits(n)
    cols = np.flatnonzero(digits[:, site] == b)
    rows = cols + (a - b) * 3 ** (n - 1 - site)
    return sp.csr_matrix((np.ones(cols.size, dtype=complex), (rows, cols)), shape=(3**n, 3**n))


class _Operators:
    """Time-independent pieces: ``H(t) = H_V + sum_k (e^{ikVt} A_k + h.c.)``."""

    def __init__(self, p: ThreeLevelParams):
        n = p.n_sites
        self.p = p
        digits = _level_digits(n)
        lat = p.lattice
        bonds = [(j, j + 1) for j in range(n - 1)]
        if lat.periodic:
            bonds.append((n - 1, 0))
        nr = (digits == R).astype(float)
        self.h_int = p.V * sum((nr[:, i] * nr[:, j] for i, j in bonds), np.zeros(3**n))
        self.drives = []
        for k in range(3):
            a = sp.csr_matrix((3**n, 3**n), dtype=complex)
            for j in range(n):
                if p.theta[k]:
                    a = a + 0.5 * p.theta[k] * _transition(n, j, G, R)
                if p.phi[k]:
                    a = a + 0.5 * p.phi[k] * _transition(n, j, E, R)
            self.drives.append((k, a.toarray()))
        self.drives = [(k, a) for k, a in self.drives if np.any(a)]
        self.jumps = [math.sqrt(p.Gamma) * _transition(n, j, G, E) for j in range(n)] if p.Gamma > 0 else []
        self.ldl = sum((L.conj().T @ L for L in self.jumps), sp.csr_matrix((3**n, 3**n))).diagonal().real

    def hamiltonian(self, t: float) -> np.ndarray:
        h = np.diag(self.h_int).astype(complex)
        for k, a in self.drives:
            term = np.exp(1j * k * self.p.V * t) * a
            h += term + term.conj().T
        return h

    def rhs(self, t: float, rho: np.ndarray) -> np.ndarray:
        h = self.hamiltonian(t)
        out = -1j * (h @ rho - rho @ h)
        if self.jumps:
            g = self.ldl
            out -= 0.5 * (g[:, None] * rho + rho * g[None, :])
            for L in self.jumps:
                out += _sandwich(L, rho)
        return out


def _sandwich(L: sp.csr_matrix, rho: np.ndarray) -> np.ndarray:
    """``L rho L^+`` for sparse ``L``."""
    lr = L @ rho
    return np.asarray((L.conj() @ lr.T).T)


def hamiltonian_at(t: float, p: ThreeLevelParams) -> np.ndarray:
    """Dense ``3^N`` Hamiltonian at time ``t``."""
    return _Operators(p).hamiltonian(t)


def embed_bits(bits: str) -> np.ndarray:
    """Three-level density matrix for a two-level bitstring (``0 -> g``, ``1 -> r``)."""
    if not bits or set(bits) - {"0", "1"}:
        raise ValueError(f"invalid bitstring {bits!r}")
    idx = int(bits, 3)
    rho = np.zeros((3 ** len(bits),) * 2, dtype=complex)
    rho[idx, idx] = 1.0
    return rho


@dataclass
class FullRecord:
    times: np.ndarray
    pop_r: np.ndarray
    pop_e: np.ndarray
    trace_residual: np.ndarray
    final_state: np.ndarray


def site_populations(rho: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-site ``<sigma_rr>`` and ``<sigma_ee>``."""
    p = np.real(np.diagonal(rho))
    digits = _level_digits(n)
    return p @ (digits == R), p @ (digits == E)


def default_options(p: ThreeLevelParams) -> IntegratorOptions:
    """Adams with the step capped at ``0.1 / (2V)`` to resolve the fastest phase."""
    cap = 0.1 / (2 * abs(p.V)) if p.V else 0.0
    return IntegratorOptions(rtol=1e-9, atol=1e-11, max_step=cap)


def propagate_full(rho0: np.ndarray, p: ThreeLevelParams, times: Sequence[float],
                   opts: Optional[IntegratorOptions] = None) -> FullRecord:
    """Integrate the three-level master equation and sample site populations."""
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (p.dim, p.dim):
        raise ValueError(f"rho0 must be {p.dim}x{p.dim}")
    ops = _Operators(p)
    ts, states = numerics.integrate(ops.rhs, rho0, times, opts or default_options(p))
    pops = [site_populations(r, p.n_sites) for r in states]
    return FullRecord(ts, np.array([a for a, _ in pops]), np.array([b for _, b in pops]),
                      np.array([abs(np.trace(r) - 1) for r in states]), states[-1])


@dataclass
class ValidationReport:
    V: float
    Gamma: float
    times: np.ndarray
    deviation: np.ndarray  # (times, sites) |<sigma_rr> - <(1+Z)/2>|
    max_deviation: float
    rms_deviation: float
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"V": self.V, "Gamma": self.Gamma, "max_deviation": self.max_deviation,
                "rms_deviation": self.rms_deviation,
                "max_per_site": self.deviation.max(axis=0).tolist(),
                "warnings": list(self.warnings)}


def compare_effective(p: ThreeLevelParams, init: str, t_max: float, dt: float = 0.05,
                      rules: Optional[RuleSet] = None,
                      opts: Optional[IntegratorOptions] = None) -> ValidationReport:
    """Deviation of the full ``<sigma_rr>`` from the effective excitation density.

    ``rules`` defaults to :meth:`ThreeLevelParams.effective_rules`.
    """
    if len(init) != p.n_sites:
        raise ValueError("initial bitstring length must equal n_sites")
    rules = rules or p.effective_rules()
    spec = EvolutionSpec("continuous", t_max, p.lattice, rules, dt=dt)
    eff = propagate(basis_density(init), spec)
    full = propagate_full(embed_bits(init), p, eff.times, opts)
    dev = np.abs(full.pop_r - 0.5 * (1.0 + eff.magnetization))
    return ValidationReport(p.V, p.Gamma, eff.times, dev, float(dev.max()),
                            float(np.sqrt(np.mean(dev**2))), p.warnings)


def convergence_in_v(p: ThreeLevelParams, init: str, t_max: float,
                     factors: Sequence[float] = (1, 2, 4), dt: float = 0.05) -> dict:
    """Rerun :func:`compare_effective` at scaled ``V`` and report the trend."""
    reports = [compare_effective(p.scaled(f), init, t_max, dt) for f in factors]
    devs = [r.max_deviation for r in reports]
    decreasing = all(b < a for a, b in zip(devs, devs[1:]))
    return {"factors": list(factors), "reports": reports, "max_deviation": devs,
            "strictly_decreasing": decreasing}
