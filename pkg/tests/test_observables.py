import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rydqca import observables as ob
from rydqca.model import OPEN, PERIODIC, basis_density


def random_density(rng, dim, rank=None):
    rank = rank or dim
    a = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def test_magnetization_sign_convention():
    np.testing.assert_array_equal(ob.magnetization(basis_density("101")), [1, -1, 1])
    assert ob.n_sites_of(np.eye(8)) == 3
    with pytest.raises(ValueError):
        ob.n_sites_of(np.eye(6))


@pytest.mark.parametrize("boundary", [OPEN, PERIODIC])
def test_covariance_reference_states(boundary):
    assert ob.nn_covariance(basis_density("0110"), boundary) == pytest.approx(0.0, abs=1e-15)
    ghz = ob.ghz_state(4)
    assert ob.nn_covariance(np.outer(ghz, ghz.conj()), boundary) == pytest.approx(1.0)
    af = ob.cat_state(*ob.antiferro_pair(4), math.pi)
    assert ob.nn_covariance(np.outer(af, af.conj()), boundary) == pytest.approx(-1.0)


def test_covariance_bond_counting():
    # only the bond between sites 1 and 3 is correlated; it exists only with wrap-around
    psi = ob.cat_state("000", "101")
    rho = np.outer(psi, psi.conj())
    rep_p = ob.covariance(rho, PERIODIC)
    rep_o = ob.covariance(rho, OPEN)
    assert rep_p.matrix[0, 2] == pytest.approx(1.0)
    assert rep_p.mean_nn == pytest.approx(1 / 3)
    assert rep_o.mean_nn == pytest.approx(0.0)
    with pytest.raises(ValueError):
        ob.covariance(rho, "twisted")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pure_fidelity_equals_uhlmann(seed):
    rng = np.random.default_rng(seed)
    rho = random_density(rng, 4)
    psi = rng.normal(size=4) + 1j * rng.normal(size=4)
    psi /= np.linalg.norm(psi)
    sigma = np.outer(psi, psi.conj())
    assert ob.fidelity_pure(rho, psi) == pytest.approx(ob.fidelity_uhlmann(rho, sigma), abs=1e-7)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_best_phase_matches_scan(seed):
    rng = np.random.default_rng(seed)
    rho = random_density(rng, 8, rank=2)
    fid, phase = ob.fidelity_ghz_best(rho)
    grid = np.linspace(0, 2 * math.pi, 2001)
    scan = [ob.fidelity_pure(rho, ob.ghz_state(3, p)) for p in grid]
    assert fid >= max(scan) - 1e-12
    assert fid == pytest.approx(max(scan), abs=1e-5)
    assert ob.fidelity_pure(rho, ob.ghz_state(3, phase)) == pytest.approx(fid, abs=1e-12)


def test_ghz_and_cat_states():
    g = ob.ghz_state(3)
    assert g[0] == pytest.approx(1 / math.sqrt(2))
    assert g[7] == pytest.approx(-1 / math.sqrt(2))
    rho = np.outer(g, g.conj())
    fid, phase = ob.fidelity_ghz_best(rho)
    assert fid == pytest.approx(1.0)
    assert phase == pytest.approx(math.pi)
    assert ob.purity(rho) == pytest.approx(1.0)
    assert ob.antiferro_pair(5) == ("01010", "10101")
    with pytest.raises(ValueError):
        ob.cat_state("01", "01")
    with pytest.raises(ValueError):
        ob.ghz_state(0)
