import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from rydqca import numerics
from rydqca.numerics import IntegratorOptions


def rand_c(rng, n, scale=1.0):
    return scale * (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))


def test_kron_matches_numpy_chain():
    rng = np.random.default_rng(0)
    a, b, c = rand_c(rng, 2), rand_c(rng, 3), rand_c(rng, 2)
    out = numerics.kron(a, b, c)
    assert out.shape == (12, 12)
    np.testing.assert_allclose(out, np.kron(np.kron(a, b), c))
    np.testing.assert_allclose(numerics.kron(a), a)
    with pytest.raises(ValueError):
        numerics.kron()


@pytest.mark.parametrize("scale", [1e-4, 1e-2, 0.3, 1.0, 4.0, 40.0])
def test_expm_matches_scipy(scale):
    rng = np.random.default_rng(1)
    a = rand_c(rng, 12, scale)
    ref = scipy.linalg.expm(a)
    np.testing.assert_allclose(numerics.expm(a), ref, rtol=1e-11, atol=1e-11 * np.abs(ref).max())


def test_expm_special_cases():
    np.testing.assert_array_equal(numerics.expm(np.zeros((3, 3))), np.eye(3))
    d = np.diag([0.5, -1.0, 2.0])
    np.testing.assert_allclose(numerics.expm(d), np.diag(np.exp([0.5, -1.0, 2.0])), rtol=1e-14)
    with pytest.raises(ValueError):
        numerics.expm(np.zeros((2, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 20.0))
def test_expm_of_antihermitian_is_unitary(seed, scale):
    rng = np.random.default_rng(seed)
    h = rand_c(rng, 6, scale)
    h = h + h.conj().T
    u = numerics.expm(-1j * h)
    np.testing.assert_allclose(u @ u.conj().T, np.eye(6), atol=1e-11)


@pytest.mark.parametrize("method", ["adams", "bdf", "rk4"])
def test_integrate_linear_system(method):
    rng = np.random.default_rng(2)
    a = rand_c(rng, 4, 0.5) - 2 * np.eye(4)
    y0 = rand_c(rng, 4)
    times = np.linspace(0, 2, 5)
    opts = IntegratorOptions(method=method, rk4_step=1e-3)
    ts, ys = numerics.integrate(lambda t, y: a @ y, y0, times, opts)
    np.testing.assert_array_equal(ts, times)
    for t, y in zip(ts, ys):
        np.testing.assert_allclose(y, scipy.linalg.expm(a * t) @ y0, atol=1e-7)


def test_integrate_stop_callback_ends_early():
    times = np.arange(0.0, 11.0)
    ts, ys = numerics.integrate(lambda t, y: -y, np.ones((2, 2)), times,
                                stop=lambda t, y: abs(y[0, 0]) < 0.1)
    assert ts[-1] == 3.0
    assert len(ys) == 4


def test_integrate_failure_reports_last_good_state():
    # y' = y^2 from y(0) = 1 blows up at t = 1
    opts = IntegratorOptions(nsteps=5000)
    with pytest.raises(numerics.IntegrationError) as info:
        numerics.integrate(lambda t, y: y * y, np.ones(3), [0.0, 0.5, 2.0], opts)
    assert info.value.t == pytest.approx(0.5)
    np.testing.assert_allclose(info.value.y, 2.0, rtol=1e-6)
    assert info.value.y.shape == (3,)


def test_integrator_options_validation():
    with pytest.raises(ValueError):
        IntegratorOptions(rtol=0)
    with pytest.raises(ValueError):
        IntegratorOptions(method="euler")
    with pytest.raises(ValueError):
        numerics.integrate(lambda t, y: y, np.ones(2), [1.0, 0.0])


def test_dominant_nullvector():
    rng = np.random.default_rng(3)
    v = rand_c(rng, 5)[:, 0]
    q, _ = np.linalg.qr(np.column_stack([v, rand_c(rng, 5)[:, :4]]))
    a = q @ np.diag([0, 1, 2, 3, 4]) @ q.conj().T
    n = numerics.dominant_nullvector(a)
    assert np.linalg.norm(a @ n) < 1e-10
    assert abs(np.vdot(q[:, 0], n)) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(numerics.NoSteadyStateError):
        numerics.dominant_nullvector(np.eye(3))
