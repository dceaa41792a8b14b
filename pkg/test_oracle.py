#!/usr/bin/env python3
"""
Tests for the brute-force oracle and the closed-form dephasing reference.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent))

from CovariantTCL.solver.foliation import flat_foliation
from CovariantTCL.solver.hs_algebra import purity, trace_norm
from CovariantTCL.solver.models import bloch_state, dephasing, qubit_boson, two_qubit_exchange
from CovariantTCL.solver.oracle import (
    dephasing_factor,
    dephasing_reference,
    exact_reduced,
    exact_reduced_single_expm,
    exact_series,
)
from CovariantTCL.solver.perturb import fit_order
from CovariantTCL.utils.exceptions import ModelError


def test_zero_coupling_keeps_initial_state():
    """Nothing moves in the interaction picture without coupling"""
    m = two_qubit_exchange(omega=1.0, g=0.0)
    run = exact_series(m, flat_foliation(0.0, 3.0, 30))
    for rho in run.states.values:
        np.testing.assert_allclose(rho, m.rho0_sys, atol=1e-14)


def test_lab_stepping_matches_single_exponential():
    """A time-independent lab Hamiltonian steps exactly"""
    m = qubit_boson(omega=1.0, g=0.4, n_trunc=5, picture="lab")
    f = flat_foliation(0.0, 2.5, 50)
    stepped = exact_reduced(m, f, 50)
    assert np.max(np.abs(stepped - exact_reduced_single_expm(m, 2.5))) <= 1e-8


def test_halving_the_step_converges_quadratically():
    """Successive grid halvings change the interaction-picture oracle by O(dt^2)"""
    m = qubit_boson(omega=1.0, g=0.3, n_trunc=5, rho0=bloch_state(0.6, 0.0, 0.8))
    grids = [50, 100, 200, 400]
    states = [exact_reduced(m, flat_foliation(0.0, 3.0, n), n) for n in grids]
    changes = [trace_norm(coarse - fine) for coarse, fine in zip(states, states[1:])]
    steps = [3.0 / n for n in grids[:-1]]
    assert fit_order(steps, changes) == pytest.approx(2.0, abs=0.3)
    assert changes[-1] <= 1e-4


def test_oracle_states_are_physical():
    """Unit trace and purity at most one on every slice"""
    m = qubit_boson(omega=1.0, g=0.3, n_trunc=6)
    run = exact_series(m, flat_foliation(0.0, 4.0, 200))
    assert run.joint_trace_error <= 1e-10
    for rho in run.states.values:
        assert abs(np.trace(rho) - 1.0) <= 1e-10
        assert purity(rho) <= 1.0 + 1e-10
    assert run.bath_top_population.shape == (201,)
    assert run.bath_top_population[0] == pytest.approx(0.0, abs=1e-14)


def test_dephasing_closed_form_lab_frame():
    """Lab-frame stepping of the dephasing model follows the closed form over one period"""
    m = dephasing(omega=1.0, g=0.2, n_trunc=6, picture="lab")
    f = flat_foliation(0.0, 2 * np.pi, 400)
    exact = exact_series(m, f).states.values
    reference = dephasing_reference(0.2, 1.0, f, m.rho0_sys, picture="lab").values
    assert np.max(np.abs(exact - reference)) <= 1e-6
    np.testing.assert_allclose(exact[:, 0, 0], m.rho0_sys[0, 0], atol=1e-10)
    np.testing.assert_allclose(exact[:, 1, 1], m.rho0_sys[1, 1], atol=1e-10)


def test_dephasing_closed_form_half_period():
    """At t = pi/omega the coherence is damped by exp(-8 g^2 / omega^2)"""
    m = dephasing(omega=1.0, g=0.2, n_trunc=8)
    rho = exact_reduced_single_expm(m, np.pi)
    assert abs(rho[0, 1]) == pytest.approx(0.5 * np.exp(-8 * 0.04), abs=1e-6)


def test_dephasing_factor_limits():
    """Factor is one at t = 0 and at full periods"""
    assert dephasing_factor(0.3, 2.0, 0.0) == pytest.approx(1.0)
    assert dephasing_factor(0.3, 2.0, np.pi) == pytest.approx(1.0)
    assert dephasing_factor(0.0, 2.0, 1.3) == pytest.approx(1.0)


def test_dephasing_reference_rejects_bad_input():
    """Non-qubit states, bad frequencies and unknown pictures are model errors"""
    f = flat_foliation(0.0, 1.0, 4)
    with pytest.raises(ModelError):
        dephasing_reference(0.1, 1.0, f, np.eye(3) / 3)
    with pytest.raises(ModelError):
        dephasing_reference(0.1, 0.0, f, bloch_state(1.0, 0.0, 0.0))
    with pytest.raises(ModelError):
        dephasing_reference(0.1, 1.0, f, bloch_state(1.0, 0.0, 0.0), picture="rotating")
    with pytest.raises(ModelError):
        dephasing_reference(0.1, 1.0, f, np.diag([0.8, 0.8]))
