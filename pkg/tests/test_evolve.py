import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from rydqca import evolve as ev
from rydqca import model as m
from rydqca import numerics
from rydqca.observables import fidelity_pure, magnetization


def random_density(rng, dim):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def random_rules(rng, gamma=True):
    return m.RuleSet.from_vector(rng.uniform(0, 2, 6), gamma=float(rng.uniform(0, 0.5)) if gamma else 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.booleans(), st.sampled_from([None, "A", "B"]))
def test_generator_matches_dense_lindblad(seed, n, periodic, sub):
    rng = np.random.default_rng(seed)
    lattice = m.Lattice(n, m.PERIODIC if periodic and n >= 3 else m.OPEN)
    rules = random_rules(rng).masked(None if sub is None else lattice.sublattice(sub))
    ref_h = m.build_hamiltonian(rules, lattice)
    ref_j = m.build_jump_operators(rules, lattice)
    x = rng.normal(size=(lattice.dim,) * 2) + 1j * rng.normal(size=(lattice.dim,) * 2)
    ref = ev.lindblad_rhs(x, ref_h, ref_j)
    for backend in ("numba", "numpy"):
        gen = ev.Generator(rules, lattice, backend=backend)
        np.testing.assert_allclose(gen(x), ref, atol=1e-12)


def test_superoperator_uses_column_stacking():
    rng = np.random.default_rng(4)
    lattice = m.Lattice(3, m.PERIODIC)
    rules = random_rules(rng)
    h, jumps = m.build_hamiltonian(rules, lattice), m.build_jump_operators(rules, lattice)
    rho = random_density(rng, 8)
    sup = ev.build_superoperator(h, jumps)
    np.testing.assert_allclose(ev.unvec(sup @ ev.vec(rho)), ev.lindblad_rhs(rho, h, jumps), atol=1e-12)
    np.testing.assert_array_equal(ev.vec(np.array([[1, 2], [3, 4]])), [1, 3, 2, 4])
    with pytest.raises(numerics.DimensionError):
        ev.build_superoperator(np.eye(128), [])


@pytest.mark.parametrize("boundary", [m.OPEN, m.PERIODIC])
def test_propagate_matches_superoperator_exponential(boundary):
    rng = np.random.default_rng(5)
    lattice = m.Lattice(4, boundary)
    rules = random_rules(rng)
    rho0 = random_density(rng, 16)
    spec = ev.EvolutionSpec("continuous", 1.0, lattice, rules, dt=0.5)
    rec = ev.propagate(rho0, spec, keep_states=True)
    sup = ev.build_superoperator(m.build_hamiltonian(rules, lattice), m.build_jump_operators(rules, lattice))
    ref = ev.unvec(scipy.linalg.expm(sup) @ ev.vec(rho0))
    np.testing.assert_allclose(rec.final_state, ref, atol=1e-7)
    np.testing.assert_array_equal(rec.times, [0, 0.5, 1.0])
    assert rec.trace_residual.max() < 1e-8


def test_propagate_input_checks():
    lattice = m.Lattice(2)
    rules = m.RuleSet()
    spec = ev.EvolutionSpec("continuous", 1.0, lattice, rules)
    with pytest.raises(ValueError):
        ev.propagate(np.eye(4), spec)  # trace 4
    with pytest.raises(ValueError):
        ev.propagate(m.basis_density("000"), spec)
    with pytest.raises(ValueError):
        ev.EvolutionSpec("discrete", 1.5, lattice, rules)
    with pytest.raises(ValueError):
        ev.EvolutionSpec("sideways", 1.0, lattice, rules)
    rec = ev.propagate(m.basis_density("01"), spec)
    np.testing.assert_array_equal(rec.magnetization, [[-1, 1], [-1, 1]])


@pytest.mark.parametrize("vector,gamma", [([0.3, 1, 0.7, 0, 0, 0], 0.0),
                                          ([0.3, 1, 0.7, 1.5, 0.2, 2], 0.0),
                                          ([0.3, 1, 0.7, 1.5, 0.2, 2], 0.3)])
def test_discrete_fast_paths_match_integration(vector, gamma):
    rng = np.random.default_rng(6)
    lattice = m.Lattice(5, m.OPEN)
    rules = m.RuleSet.from_vector(vector, gamma=gamma)
    rho = random_density(rng, 32)
    fast = ev.DiscreteStepper(rules, rules, lattice)
    slow = ev.DiscreteStepper(rules, rules, lattice, method="integrate")
    np.testing.assert_allclose(fast.step(rho), slow.step(rho), atol=1e-7)
    expected = "integrate" if gamma else ("unitary" if not any(vector[3:]) else "local")
    assert fast.half_a.kind == expected


def test_discrete_step_updates_sublattices_in_order():
    lattice = m.Lattice(5, m.OPEN)
    rules = m.RuleSet.from_vector([0, 1, 0, 0, 0, 0])
    out = ev.discrete_step(m.basis_density("00100"), rules, rules, lattice)
    # site 3 is on A with empty neighbours; the B update then flips sites 2 and 4
    np.testing.assert_allclose(np.diag(out).real, np.diag(m.basis_density("01110")).real, atol=1e-12)
    zero = ev.DiscreteStepper(m.RuleSet(), m.RuleSet(), lattice)
    assert zero.half_a.kind == "identity"


def test_unitary_discrete_preserves_purity():
    rng = np.random.default_rng(7)
    lattice = m.Lattice(5, m.PERIODIC)
    rules = random_rules(rng, gamma=False)
    rules = m.RuleSet(rules.theta)
    psi = rng.normal(size=32) + 1j * rng.normal(size=32)
    psi /= np.linalg.norm(psi)
    rho = np.outer(psi, psi.conj())
    spec = ev.EvolutionSpec("discrete", 3, lattice, rules)
    rec = ev.propagate(rho, spec)
    assert np.real(np.trace(rec.final_state @ rec.final_state)) == pytest.approx(1.0, abs=1e-10)


def test_steady_state_unique_case_matches_kernel():
    lattice = m.Lattice(3, m.OPEN)
    rules = m.RuleSet.from_vector([0.5, 0.3, 0.2, 0.4, 0.6, 0.1], gamma=0.2)
    gen = ev.Generator(rules, lattice)
    ss = ev.steady_state(m.basis_density("000"), gen, tol=1e-9, t_max=400, cross_check=True)
    assert ss.converged
    assert ss.residual < 1e-9
    assert ss.nullspace_distance < 1e-7


def test_steady_state_dark_initial_state():
    lattice = m.Lattice(4, m.OPEN)
    rules = m.RuleSet.from_vector([0, 1, 0, 0, 0, 2])
    gen = ev.Generator(rules, lattice)
    ss = ev.steady_state(m.basis_density("0000"), gen)
    assert ss.converged and ss.time == 0.0


def test_steady_state_reports_nonconvergence():
    lattice = m.Lattice(3, m.OPEN)
    rules = m.RuleSet.from_vector([1, 0, 0, 0, 0, 0])
    gen = ev.Generator(rules, lattice)
    ss = ev.steady_state(m.basis_density("000"), gen, t_max=3.0)
    assert not ss.converged
    assert ss.time == 3.0


def test_nullspace_degenerate_returns_none():
    lattice = m.Lattice(3, m.OPEN)
    rules = m.RuleSet.from_vector([0, 1, 0, 0, 0, 2])
    h, jumps = m.build_hamiltonian(rules, lattice), m.build_jump_operators(rules, lattice)
    assert ev.nullspace_steady_state(h, jumps) is None


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    rho = random_density(rng, 8)
    path = tmp_path / "state.bin"
    ev.save_checkpoint(path, rho, 3, t=1.5)
    back, header = ev.load_checkpoint(path)
    np.testing.assert_array_equal(back, rho)
    assert header["n_sites"] == 3 and header["t"] == 1.5
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope")
    with pytest.raises(ValueError):
        ev.load_checkpoint(bad)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        ev.load_checkpoint(path)


def test_central_excitation_spreads_symmetrically():
    lattice = m.Lattice(5, m.OPEN)
    rules = m.RuleSet.from_vector([0, 1, 0, 0, 0, 2])
    spec = ev.EvolutionSpec("continuous", 2.0, lattice, rules)
    rec = ev.propagate(m.basis_density("00100"), spec)
    z = rec.magnetization[-1]
    np.testing.assert_allclose(z, z[::-1], atol=1e-9)
    assert np.all(np.abs(rec.magnetization) <= 1 + 1e-12)


def test_classical_step_keeps_target_fidelity():
    lattice = m.Lattice(3, m.OPEN)
    rules = m.RuleSet.from_vector([1, 0, 0, 0, 0, 0])
    rho = ev.discrete_step(m.basis_density("000"), rules, rules, lattice)
    assert fidelity_pure(rho, m.basis_state("101")) == pytest.approx(1.0, abs=1e-12)
    assert magnetization(rho) == pytest.approx([1, -1, 1])


def test_krylov_polish_lands_on_long_time_limit():
    # degenerate stationary manifold: the limit depends on the initial state
    lattice = m.Lattice(5, m.OPEN)
    rules = m.RuleSet.from_vector([0, 1, 0, 0, 0, 2])
    gen = ev.Generator(rules, lattice)
    rho0 = m.basis_density("00100")
    plain = ev.steady_state(rho0, gen, tol=1e-12, t_max=1500, polish_below=None)
    fast = ev.steady_state(rho0, gen, tol=1e-10, t_max=1500)
    assert fast.converged and fast.time < plain.time
    np.testing.assert_allclose(fast.rho, plain.rho, atol=1e-6)
    assert abs(np.trace(fast.rho) - 1) < 1e-12


def test_persistent_oscillation_has_no_steady_state():
    lattice = m.Lattice(4, m.OPEN)
    rules = m.RuleSet.from_vector([0, 1, 0, 0, 0, 2])
    ss = ev.steady_state(m.basis_density("0100"), ev.Generator(rules, lattice), t_max=50)
    assert not ss.converged and ss.residual > 0.1
