"""Effective two-level QCA model: rule sets, lattices and operator builders.

Conventions used throughout the package:

* single-site basis order is ``|0>, |1>`` (ground, Rydberg);
* ``Z|1> = +|1>`` and ``Z|0> = -|0>``, so excited sites have positive
  magnetization (the opposite sign of the usual physics convention);
* site 1 is the most significant bit of a basis index, and bitstrings read
  left to right as sites 1..N;
* user-facing site numbers are 1-based and sublattice A holds the odd sites.

The conditional drive on site j is ``theta[k]/2 * X_j`` where ``k`` is the
number of excited nearest neighbours; the conditional depump is the lowering
jump ``sqrt(phi[k]) |0><1|_j`` gated on the same neighbour configuration.
Open chains behave as if flanked by two sites frozen in ``|0>``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

OPEN = "open"
PERIODIC = "periodic"

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
# Z|1> = +|1>
Z = np.diag([-1.0, 1.0]).astype(complex)
P0 = np.diag([1.0, 0.0]).astype(complex)
P1 = np.diag([0.0, 1.0]).astype(complex)
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)  # |0><1|


@dataclass(frozen=True)
class Lattice:
    """1D chain of ``n_sites`` qubits.

    Sites are 1-based in this interface. Sublattice A is the odd sites.
    """

    n_sites: int
    boundary: str = OPEN

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError("n_sites must be >= 1")
        if self.boundary not in (OPEN, PERIODIC):
            raise ValueError(f"boundary must be 'open' or 'periodic', got {self.boundary!r}")
        if self.boundary == PERIODIC and self.n_sites < 3:
            raise ValueError("periodic chains need at least 3 sites")

    @property
    def dim(self) -> int:
        return 2**self.n_sites

    @property
    def periodic(self) -> bool:
        return self.boundary == PERIODIC

    def sublattice(self, name: str) -> tuple[int, ...]:
        if name == "A":
            return tuple(range(1, self.n_sites + 1, 2))
        if name == "B":
            return tuple(range(2, self.n_sites + 1, 2))
        raise ValueError(f"sublattice must be 'A' or 'B', got {name!r}")

    def partition(self) -> str:
        return "".join("A" if j % 2 else "B" for j in range(1, self.n_sites + 1))

    def neighbours(self, i: int) -> tuple[Optional[int], Optional[int]]:
        """0-based left/right neighbour of 0-based site ``i`` (None = frozen |0>)."""
        n = self.n_sites
        if self.periodic:
            return (i - 1) % n, (i + 1) % n
        return (i - 1 if i > 0 else None), (i + 1 if i < n - 1 else None)


@dataclass(frozen=True)
class RuleSet:
    """Conditional couplings ``theta[k]`` (unitary) and ``phi[k]`` (dissipative rates).

    ``k`` indexes the number of excited neighbours (0, 1 or 2). ``gamma`` is an
    unconditional Rydberg decay rate that acts on every site, independent of
    ``site_mask``. ``site_mask`` holds 1-based sites that receive the
    conditional drives; None means all sites.
    """

    theta: tuple[float, float, float] = (0.0, 0.0, 0.0)
    phi: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gamma: float = 0.0
    site_mask: Optional[frozenset[int]] = None

    def __post_init__(self):
        theta = tuple(float(v) for v in self.theta)
        phi = tuple(float(v) for v in self.phi)
        if len(theta) != 3 or len(phi) != 3:
            raise ValueError("theta and phi need exactly three entries")
        if not all(math.isfinite(v) for v in theta + phi + (float(self.gamma),)):
            raise ValueError("rule parameters must be finite")
        if min(phi) < 0 or self.gamma < 0:
            raise ValueError("dissipative rates phi and gamma must be >= 0")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.site_mask is not None:
            object.__setattr__(self, "site_mask", frozenset(int(s) for s in self.site_mask))

    @classmethod
    def from_vector(cls, values: Sequence[float], units: str = "pi",
                    gamma: float = 0.0) -> "RuleSet":
        """Build from ``[theta0, theta1, theta2, phi0, phi1, phi2]``.

        With ``units="pi"`` every entry is multiplied by pi, so
        ``[0, 1, 0, 0, 0, 2]`` means theta1 = pi and phi2 = 2 pi.
        ``gamma`` is always in raw model units.
        """
        values = [float(v) for v in values]
        if len(values) != 6:
            raise ValueError(f"rule vectors have 6 entries, got {len(values)}")
        if units == "pi":
            values = [v * math.pi for v in values]
        elif units != "raw":
            raise ValueError(f"units must be 'pi' or 'raw', got {units!r}")
        return cls(tuple(values[:3]), tuple(values[3:]), gamma)

    @classmethod
    def from_manifest(cls, text: str) -> "RuleSet":
        """Parse ``{"theta": [...], "phi": [...], "units": "pi"|"raw", "gamma": 0.0}``."""
        rec = json.loads(text)
        units = rec.get("units", "pi")
        return cls.from_vector(list(rec["theta"]) + list(rec["phi"]), units,
                               float(rec.get("gamma", 0.0)))

    def to_manifest(self) -> str:
        return json.dumps({"theta": list(self.theta), "phi": list(self.phi),
                           "units": "raw", "gamma": self.gamma})

    def vector(self) -> np.ndarray:
        return np.array(self.theta + self.phi)

    @property
    def is_unitary(self) -> bool:
        return not any(self.phi) and self.gamma == 0.0

    def is_digital(self, tol: float = 1e-12) -> bool:
        ok_theta = all(min(abs(t), abs(t - math.pi)) < tol for t in self.theta)
        ok_phi = all(min(abs(p), abs(p - 2 * math.pi)) < tol for p in self.phi)
        return ok_theta and ok_phi

    def masked(self, sites: Optional[Iterable[int]]) -> "RuleSet":
        return replace(self, site_mask=None if sites is None else frozenset(sites))

    def active_sites(self, lattice: Lattice) -> list[int]:
        """0-based sites that carry the conditional drives."""
        if self.site_mask is None:
            return list(range(lattice.n_sites))
        bad = [s for s in self.site_mask if not 1 <= s <= lattice.n_sites]
        if bad:
            raise ValueError(f"site_mask entries out of range: {sorted(bad)}")
        return sorted(s - 1 for s in self.site_mask)


def digital_rules() -> list[tuple[int, ...]]:
    """All 64 digital rule vectors in units of pi (theta in {0,1}, phi in {0,2})."""
    out = []
    for code in range(64):
        bits = [(code >> (5 - i)) & 1 for i in range(6)]
        out.append(tuple(bits[:3]) + tuple(2 * b for b in bits[3:]))
    return out


# ---------------------------------------------------------------- basis tools

def basis_bits(n_sites: int) -> np.ndarray:
    """``(2**n, n)`` array of occupations; column i is 0-based site i."""
    idx = np.arange(2**n_sites)
    shifts = n_sites - 1 - np.arange(n_sites)
    return ((idx[:, None] >> shifts[None, :]) & 1).astype(np.int8)


def bits_to_index(bits: str | Sequence[int]) -> int:
    if isinstance(bits, str):
        if not bits or set(bits) - {"0", "1"}:
            raise ValueError(f"invalid bitstring {bits!r}")
        return int(bits, 2)
    return int("".join(str(int(b)) for b in bits), 2)


def index_to_bits(index: int, n_sites: int) -> str:
    return format(index, f"0{n_sites}b")


def basis_state(bits: str) -> np.ndarray:
    psi = np.zeros(2 ** len(bits), dtype=complex)
    psi[bits_to_index(bits)] = 1.0
    return psi


def basis_density(bits: str) -> np.ndarray:
    psi = basis_state(bits)
    return np.outer(psi, psi.conj())


def neighbour_counts(lattice: Lattice) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-site left occupation, right occupation and their sum ``k``.

    Each array has shape ``(2**N, N)``; frozen open-boundary neighbours
    contribute 0.
    """
    bits = basis_bits(lattice.n_sites)
    left = np.zeros_like(bits)
    right = np.zeros_like(bits)
    for i in range(lattice.n_sites):
        l, r = lattice.neighbours(i)
        if l is not None:
            left[:, i] = bits[:, l]
        if r is not None:
            right[:, i] = bits[:, r]
    return left, right, left + right


# ------------------------------------------------------------------ builders

def build_hamiltonian(rules: RuleSet, lattice: Lattice, sparse: bool = False):
    """Effective PXP-type Hamiltonian ``1/2 sum_j theta[k_j] P X_j P``.

    Returned dense by default; ``sparse=True`` gives a CSR matrix.
    """
    n, dim = lattice.n_sites, lattice.dim
    _, _, k = neighbour_counts(lattice)
    theta = np.array(rules.theta)
    rows, cols, vals = [], [], []
    idx = np.arange(dim)
    for i in rules.active_sites(lattice):
        coeff = theta[k[:, i]] / 2.0
        nz = coeff != 0
        flip = 1 << (n - 1 - i)
        rows.append(idx[nz] ^ flip)
        cols.append(idx[nz])
        vals.append(coeff[nz])
    h = _assemble(rows, cols, vals, dim)
    return h if sparse else h.toarray()


def build_jump_operators(rules: RuleSet, lattice: Lattice, sparse: bool = False) -> list:
    """Conditional depump channels plus unconditional Rydberg decay.

    One operator ``sqrt(phi[a+b]) P^a_{j-1} |0><1|_j P^b_{j+1}`` for each active
    site and each neighbour configuration ``(a, b)`` with non-zero rate (open
    edges only have the ``0`` branch on the frozen side), then one
    ``sqrt(gamma) |0><1|_j`` per site when ``gamma > 0``.
    """
    n, dim = lattice.n_sites, lattice.dim
    bits = basis_bits(n)
    left, right, _ = neighbour_counts(lattice)
    idx = np.arange(dim)
    ops = []
    for i in rules.active_sites(lattice):
        l, r = lattice.neighbours(i)
        flip = 1 << (n - 1 - i)
        for a in ((0, 1) if l is not None else (0,)):
            for b in ((0, 1) if r is not None else (0,)):
                rate = rules.phi[a + b]
                if rate <= 0:
                    continue
                sel = (bits[:, i] == 1) & (left[:, i] == a) & (right[:, i] == b)
                ops.append(_assemble([idx[sel] ^ flip], [idx[sel]],
                                     [np.full(sel.sum(), math.sqrt(rate))], dim))
    if rules.gamma > 0:
        for i in range(n):
            flip = 1 << (n - 1 - i)
            sel = bits[:, i] == 1
            ops.append(_assemble([idx[sel] ^ flip], [idx[sel]],
                                 [np.full(sel.sum(), math.sqrt(rules.gamma))], dim))
    return ops if sparse else [op.toarray() for op in ops]


def _assemble(rows, cols, vals, dim):
    if rows:
        rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        rows = cols = np.zeros(0, dtype=int)
        vals = np.zeros(0)
    return sp.csr_matrix((vals.astype(complex), (rows, cols)), shape=(dim, dim))


def site_operator(op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    """Embed a single-site operator at 1-based ``site``."""
    from .numerics import kron
    mats = [I2] * n_sites
    mats[site - 1] = op
    return kron(*mats)


# ------------------------------------------------------- classical reference

def classical_rule_oracle(rules: RuleSet, bits: str, sublattice: str,
                          boundary: str = OPEN) -> str:
    """Classical update of one sublattice under a digital unitary rule.

    A site of ``sublattice`` flips iff ``theta[k] == pi`` where ``k`` counts its
    excited neighbours (all of which sit on the frozen other sublattice).
    """
    if not rules.is_unitary or not rules.is_digital():
        raise ValueError("classical_rule_oracle needs a digital unitary rule set")
    lattice = Lattice(len(bits), boundary)
    state = [int(c) for c in bits]
    out = list(state)
    for site in lattice.sublattice(sublattice):
        i = site - 1
        l, r = lattice.neighbours(i)
        k = (state[l] if l is not None else 0) + (state[r] if r is not None else 0)
        if abs(rules.theta[k] - math.pi) < 1e-9:
            out[i] ^= 1
    return "".join(map(str, out))


# ----------------------------------------------------------- unit conversion

@dataclass(frozen=True)
class PhysicalParams:
    """Physical rates as angular frequencies (rad/s); ``a`` in metres is informational."""

    V: float
    Gamma: float
    theta_phys: float
    phi_phys: float = 0.0
    gamma_phys: float = 0.0
    a: Optional[float] = None


@dataclass(frozen=True)
class ModelScaling:
    tau: float
    V: float
    Gamma: float
    gamma: float
    theta: float
    phi: float
    flags: dict = field(default_factory=dict)
    warnings: tuple[str, ...] = ()


def physical_to_model(p: PhysicalParams, ratio: float = 5.0) -> ModelScaling:
    """Non-dimensionalise with the time unit ``tau = pi / theta_phys``.

    Every rate ``r`` maps to ``r * tau``. The regime check ``V >> Gamma > theta, phi``
    uses ``ratio`` as the meaning of ``>>``; violations produce warnings only.
    """
    if not p.theta_phys > 0:
        raise ValueError("theta_phys must be positive")
    tau = math.pi / p.theta_phys
    flags = {
        "V_much_greater_than_Gamma": p.V >= ratio * p.Gamma * (1 - 1e-12),
        "Gamma_greater_than_theta": p.Gamma > p.theta_phys,
        "Gamma_greater_than_phi": p.Gamma > p.phi_phys,
    }
    warnings = tuple(f"regime condition violated: {k}" for k, ok in flags.items() if not ok)
    return ModelScaling(tau=tau, V=p.V * tau, Gamma=p.Gamma * tau, gamma=p.gamma_phys * tau,
                        theta=p.theta_phys * tau, phi=p.phi_phys * tau,
                        flags=flags, warnings=warnings)
