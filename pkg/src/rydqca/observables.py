"""Measurements on effective-model density matrices.

Magnetization uses ``Z|1> = +|1>``; see :mod:`rydqca.model`.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .model import OPEN, PERIODIC, basis_bits, bits_to_index


def n_sites_of(rho: np.ndarray) -> int:
    n = int(round(math.log2(rho.shape[0])))
    if 2**n != rho.shape[0]:
        raise ValueError(f"dimension {rho.shape[0]} is not a power of two")
    return n


def populations(rho: np.ndarray) -> np.ndarray:
    return np.real(np.diagonal(rho)).copy()


def magnetization(rho: np.ndarray) -> np.ndarray:
    """Per-site ``<Z_j>`` (site 1 first)."""
    n = n_sites_of(rho)
    z = 2.0 * basis_bits(n) - 1.0
    return populations(rho) @ z


@dataclass(frozen=True)
class CovarianceReport:
    matrix: np.ndarray
    mean_nn: float
    boundary: str


def covariance(rho: np.ndarray, boundary: str = PERIODIC) -> CovarianceReport:
    """Connected ``Z`` correlations and their nearest-neighbour average.

    The average runs over N bonds (with wrap-around) for periodic chains and
    over the N-1 existing bonds for open chains.
    """
    if boundary not in (OPEN, PERIODIC):
        raise ValueError(f"unknown boundary {boundary!r}")
    n = n_sites_of(rho)
    p = populations(rho)
    z = 2.0 * basis_bits(n) - 1.0
    mean = p @ z
    zz = z.T @ (p[:, None] * z)
    c = zz - np.outer(mean, mean)
    c = 0.5 * (c + c.T)
    if boundary == PERIODIC and n > 2:
        bonds = [(j, (j + 1) % n) for j in range(n)]
    else:
        bonds = [(j, j + 1) for j in range(n - 1)]
    avg = float(np.mean([c[i, j] for i, j in bonds])) if bonds else 0.0
    return CovarianceReport(c, avg, boundary)


def nn_covariance(rho: np.ndarray, boundary: str = PERIODIC) -> float:
    return covariance(rho, boundary).mean_nn


def ghz_state(n: int, phase: float = math.pi) -> np.ndarray:
    """``(|0...0> + e^{i phase} |1...1>) / sqrt(2)``; ``phase=pi`` is the minus-sign GHZ."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return cat_state("0" * n, "1" * n, phase)


def cat_state(a: str, b: str, phase: float = 0.0) -> np.ndarray:
    """``(|a> + e^{i phase} |b>) / sqrt(2)`` for two distinct bitstrings."""
    if len(a) != len(b) or a == b:
        raise ValueError("cat_state needs two distinct bitstrings of equal length")
    psi = np.zeros(2 ** len(a), dtype=complex)
    psi[bits_to_index(a)] = 1 / math.sqrt(2)
    psi[bits_to_index(b)] = cmath.exp(1j * phase) / math.sqrt(2)
    return psi


def fidelity_pure(rho: np.ndarray, psi: np.ndarray) -> float:
    """Fidelity with a pure target, ``<psi|rho|psi>``.

    For a pure target this is exactly the Uhlmann fidelity
    ``Tr[sqrt(sqrt(rho) P sqrt(rho))]^2``.
    """
    return float(np.real(np.vdot(psi, rho @ psi)))


def fidelity_uhlmann(rho: np.ndarray, sigma: np.ndarray) -> float:
    from scipy.linalg import sqrtm
    s = sqrtm(rho)
    return float(np.real(np.trace(sqrtm(s @ sigma @ s))) ** 2)


def fidelity_cat_best(rho: np.ndarray, a: str, b: str) -> tuple[float, float]:
    """Fidelity with ``(|a> + e^{i phi}|b>)/sqrt(2)`` maximised over ``phi``.

    Returns ``(fidelity, phi_opt)`` with ``phi_opt`` in ``[0, 2 pi)``.
    """
    ia, ib = bits_to_index(a), bits_to_index(b)
    pa, pb = rho[ia, ia].real, rho[ib, ib].real
    c = rho[ia, ib]
    phase = (-cmath.phase(c)) % (2 * math.pi) if abs(c) > 0 else 0.0
    return float((pa + pb) / 2 + abs(c)), phase


def fidelity_ghz_best(rho: np.ndarray, n: int | None = None) -> tuple[float, float]:
    n = n_sites_of(rho) if n is None else n
    return fidelity_cat_best(rho, "0" * n, "1" * n)


def antiferro_pair(n: int) -> tuple[str, str]:
    """The two Neel bitstrings, ``0101..`` and ``1010..``."""
    a = "".join("01"[j % 2] for j in range(n))
    b = "".join("10"[j % 2] for j in range(n))
    return a, b


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.vdot(rho, rho)))
