import numpy as np
import pytest
from scipy.linalg import expm

from nestcoh.echo import (CoherenceTrace, TimeGrid, echo_operator, fidelity_amplitude,
                          maximally_mixed, random_pure_state, relative_coherence)
from nestcoh.errors import ParameterError, UndefinedCoherenceError, ValidationError


def test_time_grid_validation():
    g = TimeGrid.uniform(2.0, 0.5)
    np.testing.assert_allclose(g.points, [0, 0.5, 1, 1.5, 2])
    assert g.is_uniform and g.t_max == 2.0
    with pytest.raises(ValidationError):
        TimeGrid([0.1, 0.2])
    with pytest.raises(ValidationError):
        TimeGrid([0.0, 0.2, 0.2])
    with pytest.raises(ParameterError):
        TimeGrid.uniform(1.0, 0.3)


def test_echo_operator_trivial_cases(instance):
    pair, _ = instance(8, 0.0)
    for t in (0.0, 1.3, 17.0):
        np.testing.assert_allclose(echo_operator(pair, t), np.eye(8), atol=1e-12)
    pair, _ = instance(8, 0.1)
    np.testing.assert_allclose(echo_operator(pair, 0.0), np.eye(8), atol=1e-12)


def test_echo_operator_matches_expm(instance):
    pair, _ = instance(8, 0.1)
    t = 3.0
    ref = expm(1j * pair.H0 * t) @ expm(-1j * pair.H_lambda * t)
    np.testing.assert_allclose(echo_operator(pair, t), ref, atol=1e-9)


def test_echo_operator_unitary(instance):
    pair, _ = instance(20, 0.1, seed=4)
    for t in np.linspace(0, 30, 7):
        M = echo_operator(pair, t)
        assert np.linalg.norm(M.conj().T @ M - np.eye(20)) < 1e-9


def test_fidelity_lambda_zero(instance):
    pair, _ = instance(10, 0.0)
    f = fidelity_amplitude(pair)
    np.testing.assert_allclose(f.values, 1.0, atol=1e-12)
    assert len(f.grid) == 301 and f.grid.t_max == 30.0


def test_fidelity_independent_summation(instance, rng):
    pair, _ = instance(8, 0.1, seed=2)
    rho = random_pure_state(8, rng)
    grid = TimeGrid.uniform(10.0, 0.5)
    f = fidelity_amplitude(pair, rho, grid)
    ref = np.array([np.trace(rho @ echo_operator(pair, t)) for t in grid.points])
    np.testing.assert_allclose(f.values, ref, atol=1e-10)
    assert f.values[0] == 1.0
    assert np.all(np.abs(f.values) <= 1 + 1e-10)


def test_fidelity_rejects_bad_state(instance):
    pair, _ = instance(4, 0.1)
    with pytest.raises(ValidationError):
        fidelity_amplitude(pair, np.eye(4))
    with pytest.raises(ValidationError):
        fidelity_amplitude(pair, np.diag([1.5, -0.5, 0, 0]))


def test_populations_conserved(instance):
    # the j = k block evolves with M_0 = I
    pair, _ = instance(10, 0.0)
    f = fidelity_amplitude(pair, maximally_mixed(10))
    np.testing.assert_allclose(f.values, 1.0, atol=1e-12)


def test_relative_coherence():
    grid = TimeGrid.uniform(5.0, 0.1)
    g = np.exp(-0.1 * grid.points) * (1 + 0.2j * grid.points)
    rho0, ej, ek = 0.3 - 0.1j, 1.7, 0.4
    raw = CoherenceTrace(grid, rho0 * np.exp(-1j * (ej - ek) * grid.points) * g)
    out = relative_coherence(rho0, ej, ek, raw)
    np.testing.assert_allclose(out.values, g, atol=1e-14)
    same = relative_coherence(rho0, 1.0, 1.0, raw)
    np.testing.assert_allclose(same.values, raw.values / rho0)
    with pytest.raises(UndefinedCoherenceError):
        relative_coherence(0.0, ej, ek, raw)


def test_relative_coherence_error_rotation():
    grid = TimeGrid.uniform(1.0, 0.5)
    raw = CoherenceTrace(grid, np.ones(3), [0.0, 1.0, 1.0], [0.0, 0.0, 0.0])
    out = relative_coherence(1j, 0.0, 0.0, raw)
    # division by i swaps the roles of real and imaginary parts
    np.testing.assert_allclose(out.stderr_re, [0, 0, 0], atol=1e-15)
    np.testing.assert_allclose(out.stderr_im, [0, 1, 1])


def test_trace_shapes_and_window():
    grid = TimeGrid.uniform(1.0, 0.25)
    with pytest.raises(ValidationError):
        CoherenceTrace(grid, np.ones(3))
    tr = CoherenceTrace(grid, np.ones(5))
    np.testing.assert_array_equal(tr.window(0.0, 0.5), [False, True, True, False, False])
