#!/usr/bin/env python3
"""
Tests for ordered exponentials, the convolutionless sweep and the reduced
dynamical map, checked against brute-force joint evolution.
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent))

from CovariantTCL.solver import propagate as propagate_module
from CovariantTCL.solver.foliation import RELABELINGS, flat_foliation, reparametrize
from CovariantTCL.solver.hs_algebra import (
    SpaceLayout,
    expm,
    liouvillian_matrix,
    random_density_matrix,
    trace_norm,
)
from CovariantTCL.solver.models import (
    SIGMA_X,
    SIGMA_Z,
    Coupling,
    ModelSpec,
    bloch_state,
    thermal_state,
    two_qubit_exchange,
)
from CovariantTCL.solver.oracle import exact_reduced_single_expm, exact_series, joint_state_at
from CovariantTCL.solver.perturb import fit_order
from CovariantTCL.solver.propagate import (
    MINUS_I,
    PLUS_I,
    TCLSolver,
    channel_from_slice,
    check_generator,
    choi_matrix,
    forward_propagator,
    g_retarded,
    generator_for,
    ordered_exp,
    projected_propagator_H,
    quantum_operation,
    reduced_dm,
    reduced_dm_series,
    theta,
    theta_inverse_direct,
    u_system,
    w_operator,
)
from CovariantTCL.utils.exceptions import GridError, TCLBreakdownError


@pytest.fixture
def exchange():
    return two_qubit_exchange(omega=1.0, g=0.1)


def _max_abs(a):
    return float(np.max(np.abs(a)))


def test_generator_is_commutator_map(exchange):
    """gen(t) is the commutator map of a Hermitian Hamiltonian on sampled times"""
    assert check_generator(generator_for(exchange), [0.0, 0.3, 1.9]) <= 1e-12


def test_zero_coupling_gives_identities():
    """Without coupling theta, W and the reduced map are identities"""
    m = two_qubit_exchange(omega=1.0, g=0.0)
    f = flat_foliation(0.0, 2.0, 20)
    gen = generator_for(m)
    identity = np.eye(16)
    assert _max_abs(theta(gen, f, 20).matrix - identity) <= 1e-14
    assert _max_abs(w_operator(gen, f, 20).matrix - identity) <= 1e-14
    np.testing.assert_allclose(reduced_dm(m, f, 20), m.rho0_sys, atol=1e-14)


def test_inverse_pairing(exchange):
    """Forward propagation followed by the retarded map is the identity"""
    f = flat_foliation(0.0, 2.0, 40)
    gen = generator_for(exchange)
    for k, j in ((40, 0), (25, 7), (3, 3)):
        product = forward_propagator(gen, f, k, j) @ g_retarded(gen, f, k, j)
        assert _max_abs(product.matrix - np.eye(16)) <= 1e-10


def test_retarded_map_undoes_joint_evolution(exchange):
    """G_R(k, 0) maps the stepped joint state back to rho_0 (x) rho_B"""
    f = flat_foliation(0.0, 1.5, 30)
    gen = generator_for(exchange)
    joint = joint_state_at(exchange, f, 30)
    back = g_retarded(gen, f, 30, 0).apply(joint)
    assert _max_abs(back - exchange.initial_joint_state()) <= 1e-8
    with pytest.raises(GridError):
        g_retarded(gen, f, 3, 5)


def test_lab_frame_table_is_single_exponential():
    """A constant generator composes to one exponential"""
    m = two_qubit_exchange(omega=1.0, g=0.3, picture="lab")
    f = flat_foliation(0.0, 1.0, 16)
    table = ordered_exp(generator_for(m), f, MINUS_I, "time")
    expected = expm(-1j * liouvillian_matrix(m.total_hamiltonian()))
    assert _max_abs(table.between(0, 16).matrix - expected) <= 1e-10


@pytest.mark.parametrize("ordering", ["time", "anti-time"])
def test_composition(exchange, ordering):
    """U(k, j) U(j, i) = U(k, i) for time order; reversed factors for anti-time"""
    f = flat_foliation(0.0, 2.0, 24)
    sign = MINUS_I if ordering == "time" else PLUS_I
    table = ordered_exp(generator_for(exchange), f, sign, ordering)
    for i, j, k in ((0, 5, 24), (3, 11, 17), (7, 7, 9)):
        if ordering == "time":
            composed = table.between(j, k) @ table.between(i, j)
        else:
            composed = table.between(i, j) @ table.between(j, k)
        assert composed.distance(table.between(i, k)) <= 1e-10
    with pytest.raises(GridError):
        table.between(5, 2)


def test_identity_bath_operator_reduces_to_effective_evolution():
    """With B = I the projected coupling vanishes: theta = W = I and rho follows H_eff = lambda S"""
    h = 0.5 * SIGMA_Z
    m = ModelSpec(
        name="identity_bath",
        layout=SpaceLayout(2, 2),
        h_sys=h,
        h_bath=h,
        couplings=(Coupling(SIGMA_X, np.eye(2), 0.3),),
        rho_bath=thermal_state(h, np.inf),
        rho0_sys=bloch_state(0.2, 0.4, 0.7),
    )
    f = flat_foliation(0.0, 3.0, 60)
    slices = list(TCLSolver(generator_for(m), f).sweep(m.rho0_sys))
    identity = np.eye(16)
    for tcl_slice in slices:
        assert _max_abs(tcl_slice.theta - identity) <= 1e-12
        assert _max_abs(tcl_slice.w - identity) <= 1e-12
    exact = exact_series(m, f).states.values
    assert _max_abs(np.array([s.rho for s in slices]) - exact) <= 1e-10


def test_system_block_is_trivial_for_unbiased_bath(exchange):
    """<B>_bath = 0 makes P L P vanish, so U_s is the identity"""
    f = flat_foliation(0.0, 2.0, 20)
    u = u_system(generator_for(exchange), f, 20, 0)
    assert _max_abs(u.matrix - np.eye(16)) <= 1e-12


def test_projected_propagator_static_lab_model():
    """For a static lab Hamiltonian H(k, 0) is the single exponential of Q L Q and leaves P alone"""
    m = two_qubit_exchange(omega=1.0, g=0.3, picture="lab")
    f = flat_foliation(0.0, 1.5, 30)
    gen = generator_for(m)
    qlq = gen.Q.matrix @ gen.matrix(0.0) @ gen.Q.matrix
    h = projected_propagator_H(gen, f, 30, 0)
    assert _max_abs(h.matrix - expm(-1j * 1.5 * qlq)) <= 1e-10
    assert _max_abs(h.matrix @ gen.P.matrix - gen.P.matrix) <= 1e-12
    split = projected_propagator_H(gen, f, 30, 12) @ projected_propagator_H(gen, f, 12, 0)
    assert _max_abs(split.matrix - h.matrix) <= 1e-10


def test_recursion_matches_direct_sum():
    """The O(n) sweep reproduces theta^{-1} summed term by term"""
    m = two_qubit_exchange(omega=1.0, g=0.3)
    f = flat_foliation(0.0, 2.0, 40)
    gen = generator_for(m)
    swept = TCLSolver(gen, f).at(40)
    direct = theta_inverse_direct(gen, f, 40).matrix
    assert _max_abs(np.linalg.inv(swept.theta) - direct) <= 1e-9


def test_coupling_scaling_of_theta_and_w():
    """||theta - I|| = O(lambda) and ||W - I|| = O(lambda^2)"""
    f = flat_foliation(0.0, 2.0, 100)
    strengths = [0.025, 0.05, 0.1]
    theta_dev, w_dev = [], []
    for g in strengths:
        last = TCLSolver(generator_for(two_qubit_exchange(omega=1.0, g=g)), f).at(100)
        theta_dev.append(np.linalg.norm(last.theta - np.eye(16)))
        w_dev.append(np.linalg.norm(last.w - np.eye(16)))
    assert fit_order(strengths, theta_dev) == pytest.approx(1.0, abs=0.3)
    assert fit_order(strengths, w_dev) == pytest.approx(2.0, abs=0.4)


def test_agreement_with_exact_evolution(exchange):
    """Two-qubit exchange over [0, 5] with 1000 slices"""
    f = flat_foliation(0.0, 5.0, 1000)
    tcl = reduced_dm_series(exchange, f).values
    exact = exact_series(exchange, f).states.values
    assert max(trace_norm(a - b) for a, b in zip(tcl, exact)) <= 1e-4
    traces = np.einsum('kaa->k', tcl)
    assert _max_abs(traces - 1.0) <= 1e-8
    assert _max_abs(tcl - np.conj(tcl.transpose(0, 2, 1))) <= 1e-8


def test_midpoint_foliation_is_flagged(exchange, caplog, monkeypatch):
    """The sweep accumulates with trapezoid weights whatever the foliation rule, and warns"""
    monkeypatch.setattr(propagate_module.logger, "propagate", True)
    trapezoid = reduced_dm(exchange, flat_foliation(0.0, 2.0, 40), 40)
    with caplog.at_level(logging.WARNING):
        midpoint = reduced_dm(exchange, flat_foliation(0.0, 2.0, 40, quadrature="midpoint"), 40)
    assert "midpoint quadrature is ignored" in caplog.text
    np.testing.assert_allclose(midpoint, trapezoid, atol=1e-15)


def test_refinement_order():
    """Error against one lab-frame exponential falls as dt^2"""
    m = two_qubit_exchange(omega=1.0, g=0.2)
    errors, steps = [], []
    for n in (100, 200, 400):
        f = flat_foliation(0.0, 3.0, n)
        errors.append(_max_abs(reduced_dm(m, f, n) - exact_reduced_single_expm(m, 3.0)))
        steps.append(3.0 / n)
    assert fit_order(steps, errors) == pytest.approx(2.0, abs=0.3)


def test_relabeling_does_not_change_results(exchange):
    """Only slice times enter the numerics"""
    f = flat_foliation(0.0, 2.0, 50)
    relabeled = reparametrize(f, RELABELINGS["cubic"])
    a = reduced_dm_series(exchange, f).values
    b = reduced_dm_series(exchange, relabeled).values
    assert _max_abs(a - b) <= 1e-12


def test_channel_is_identity_without_coupling():
    """The reduced map at zero coupling is the identity channel"""
    m = two_qubit_exchange(omega=1.0, g=0.0)
    channel = quantum_operation(m, flat_foliation(0.0, 1.0, 10), 10)
    assert _max_abs(channel.matrix - np.eye(4)) <= 1e-14


def test_channel_reproduces_reduced_states(exchange):
    """E(rho_0) equals the swept reduced state for arbitrary rho_0"""
    rng = np.random.default_rng(21)
    f = flat_foliation(0.0, 1.0, 100)
    solver = TCLSolver(generator_for(exchange), f)
    last = solver.at(100)
    channel = channel_from_slice(last, exchange.layout, exchange.rho_bath)
    for _ in range(20):
        rho = random_density_matrix(2, rng)
        assert _max_abs(channel.apply(rho) - solver.at(100, rho).rho) <= 1e-10


def test_channel_is_completely_positive_and_trace_preserving(exchange):
    """Choi spectrum is non-negative and traces are kept"""
    f = flat_foliation(0.0, 1.0, 1000)
    channel = quantum_operation(exchange, f, 1000)
    assert np.min(np.linalg.eigvalsh(choi_matrix(channel))) >= -1e-6
    for a in range(2):
        for b in range(2):
            unit = np.zeros((2, 2))
            unit[a, b] = 1.0
            assert abs(np.trace(channel.apply(unit)) - np.trace(unit)) <= 1e-8


def test_forced_breakdown_reports_first_slice(exchange):
    """A condition ceiling of one trips on the first non-trivial slice"""
    f = flat_foliation(0.0, 1.0, 10)
    solver = TCLSolver(generator_for(exchange), f, condition_max=1.0)
    with pytest.raises(TCLBreakdownError) as excinfo:
        list(solver.sweep(exchange.rho0_sys))
    assert excinfo.value.slice_index == 1
    assert excinfo.value.operator == "theta"
