"""Dense linear-algebra and ODE kernels shared by the simulator.

Everything here is a pure function of its inputs. Matrices are plain
complex ``numpy`` arrays; the ODE driver wraps the variable-order
Adams/BDF code ``zvode`` shipped with scipy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import reduce
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import ode

log = logging.getLogger(__name__)

MAX_DENSE_DIM = 4096


class DimensionError(ValueError):
    pass


class IntegrationError(RuntimeError):
    """Raised when the integrator cannot advance.

    ``t`` and ``y`` hold the last successfully reached time and state.
    """

    def __init__(self, message: str, t: float, y: np.ndarray):
        super().__init__(f"{message} (last good time t={t:.6g})")
        self.t = t
        self.y = y


class NoSteadyStateError(RuntimeError):
    pass


def kron(*ops: np.ndarray) -> np.ndarray:
    """Kronecker product of one or more matrices, left to right."""
    if not ops:
        raise ValueError("kron needs at least one operand")
    return reduce(np.kron, ops)


def is_hermitian(a: np.ndarray, tol: float = 1e-12) -> bool:
    return a.shape[0] == a.shape[1] and float(np.max(np.abs(a - a.conj().T), initial=0.0)) < tol


# Pade coefficients and 1-norm thresholds for scaling and squaring
# (Higham, SIAM J. Matrix Anal. Appl. 26, 2005).
_PADE = {
    3: (1.495585217958292e-2, (120.0, 60.0, 12.0, 1.0)),
    5: (2.539398330063230e-1, (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0)),
    7: (9.504178996162932e-1,
        (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0)),
    9: (2.097847961257068e0,
        (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
         2162160.0, 110880.0, 3960.0, 90.0, 1.0)),
}
_THETA13 = 5.371920351148152
_B13 = (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
        1187353796428800.0, 129060195264000.0, 10559470521600.0,
        670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
        16380.0, 182.0, 1.0)


def _pade_low(a: np.ndarray, m: int, ident: np.ndarray):
    b = _PADE[m][1]
    a2 = a @ a
    powers = [ident, a2]
    for _ in range((m - 1) // 2 - 1):
        powers.append(powers[-1] @ a2)
    u = sum(b[2 * i + 1] * p for i, p in enumerate(powers))
    v = sum(b[2 * i] * p for i, p in enumerate(powers))
    return a @ u, v


def _pade13(a: np.ndarray, ident: np.ndarray):
    b = _B13
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a2 @ a4
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
             + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
    v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
         + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
    return u, v


def expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring with Pade approximants.

    The Pade degree (3, 5, 7, 9 or 13) and the number of squarings are chosen
    from the exact 1-norm of ``a``.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expm needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n > MAX_DENSE_DIM:
        raise DimensionError(f"expm limited to dim <= {MAX_DENSE_DIM}, got {n}")
    if not np.iscomplexobj(a):
        a = a.astype(float)
    ident = np.eye(n, dtype=a.dtype)
    if n == 0:
        return ident
    norm1 = float(np.max(np.sum(np.abs(a), axis=0)))
    if norm1 == 0.0:
        return ident
    s = 0
    for m in (3, 5, 7, 9):
        if norm1 <= _PADE[m][0]:
            u, v = _pade_low(a, m, ident)
            break
    else:
        s = max(0, int(math.ceil(math.log2(norm1 / _THETA13))))
        u, v = _pade13(a / 2.0**s, ident)
    r = np.linalg.solve(v - u, v + u)
    for _ in range(s):
        r = r @ r
    return r


@dataclass(frozen=True)
class IntegratorOptions:
    """Settings for :func:`integrate`.

    ``method`` is ``"adams"`` (variable-order multistep, BDF retry on
    failure), ``"bdf"`` or ``"rk4"`` (fixed step of ``rk4_step``).
    """

    rtol: float = 1e-10
    atol: float = 1e-12
    max_step: float = 0.0
    method: str = "adams"
    rk4_step: float = 1e-3
    nsteps: int = 1_000_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be strictly positive")
        if self.method not in ("adams", "bdf", "rk4"):
            raise ValueError(f"unknown integrator method {self.method!r}")
        if self.max_step < 0 or self.rk4_step <= 0:
            raise ValueError("step sizes must be positive")


Rhs = Callable[[float, np.ndarray], np.ndarray]
StopFn = Callable[[float, np.ndarray], bool]


def integrate(
    rhs: Rhs,
    y0: np.ndarray,
    times: Sequence[float],
    opts: Optional[IntegratorOptions] = None,
    stop: Optional[StopFn] = None,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Integrate ``dy/dt = rhs(t, y)`` and sample ``y`` at ``times``.

    ``y0`` may be any complex array; ``rhs`` receives and returns arrays of the
    same shape. ``times`` must be non-decreasing and starts at the initial
    time. If ``stop(t, y)`` returns True at a sample, integration ends there
    and the samples reached so far are returned.
    """
    opts = opts or IntegratorOptions()
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-d sequence")
    if np.any(np.diff(times) < 0):
        raise ValueError("times must be non-decreasing")
    y0 = np.asarray(y0, dtype=complex)
    shape = y0.shape

    out_t = [float(times[0])]
    out_y = [y0.copy()]
    if stop is not None and stop(out_t[0], out_y[0]):
        return np.array(out_t), out_y

    if opts.method == "rk4":
        _rk4_drive(rhs, y0, times, opts, stop, out_t, out_y)
        return np.array(out_t), out_y

    def flat_rhs(t, y):
        return rhs(t, y.reshape(shape)).ravel()

    method = opts.method
    solver = _make_zvode(flat_rhs, y0.ravel(), times[0], opts, method)
    for t in times[1:]:
        if t > solver.t:
            y = solver.integrate(t)
            if not solver.successful():
                if method == "adams":
                    log.warning("adams failed near t=%.6g, retrying with bdf", out_t[-1])
                    method = "bdf"
                    solver = _make_zvode(flat_rhs, out_y[-1].ravel(), out_t[-1], opts, method)
                    y = solver.integrate(t)
                if not solver.successful():
                    raise IntegrationError("step size underflow", out_t[-1], out_y[-1])
            state = y.reshape(shape).copy()
        else:
            state = out_y[-1].copy()
        out_t.append(float(t))
        out_y.append(state)
        if stop is not None and stop(float(t), state):
            break
    return np.array(out_t), out_y


def _make_zvode(f, y0, t0, opts, method):
    solver = ode(f)
    solver.set_integrator(
        "zvode", method=method, rtol=opts.rtol, atol=opts.atol,
        max_step=opts.max_step, nsteps=opts.nsteps,
        with_jacobian=(method == "bdf"),
    )
    solver.set_initial_value(y0, t0)
    return solver


def _rk4_drive(rhs, y0, times, opts, stop, out_t, out_y):
    y = y0.copy()
    h_max = opts.max_step if opts.max_step > 0 else opts.rk4_step
    h_max = min(h_max, opts.rk4_step)
    for t0, t1 in zip(times[:-1], times[1:]):
        span = t1 - t0
        if span > 0:
            n = max(1, int(math.ceil(span / h_max - 1e-12)))
            h = span / n
            t = t0
            for _ in range(n):
                k1 = rhs(t, y)
                k2 = rhs(t + h / 2, y + (h / 2) * k1)
                k3 = rhs(t + h / 2, y + (h / 2) * k2)
                k4 = rhs(t + h, y + h * k3)
                y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
                t += h
            if not np.all(np.isfinite(y)):
                raise IntegrationError("non-finite state in rk4", out_t[-1], out_y[-1])
        out_t.append(float(t1))
        out_y.append(y.copy())
        if stop is not None and stop(float(t1), out_y[-1]):
            return


def dominant_nullvector(a: np.ndarray) -> np.ndarray:
    """Unit vector spanning the (numerical) kernel of ``a``.

    Picks the eigenvector whose eigenvalue has the smallest modulus and
    refuses when that modulus exceeds ``1e-6 * ||a||``.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("dominant_nullvector needs a square matrix")
    if a.shape[0] > MAX_DENSE_DIM:
        raise DimensionError(f"dim {a.shape[0]} exceeds {MAX_DENSE_DIM}")
    scale = np.linalg.norm(a, 2) if a.size else 0.0
    if scale == 0.0:
        v = np.zeros(a.shape[0], dtype=complex)
        v[0] = 1.0
        return v
    w, vecs = np.linalg.eig(a)
    i = int(np.argmin(np.abs(w)))
    if abs(w[i]) >= 1e-6 * scale:
        raise NoSteadyStateError(
            f"smallest |eigenvalue| {abs(w[i]):.3e} is not below 1e-6*||A|| = {1e-6 * scale:.3e}")
    v = vecs[:, i]
    return v / np.linalg.norm(v)
