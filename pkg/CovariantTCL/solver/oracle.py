"""
Oracle Module
Independent ground truth: brute-force joint evolution of the Hilbert-space
state followed by the partial trace, and the closed-form dephasing solution.

Nothing here touches superoperators; the joint state is stepped with D x D
unitaries so the oracle shares no code path with the convolutionless solver.
"""

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np

from ..utils.exceptions import ModelError, StateValidationError
from ..utils.logger import setup_logger
from ..utils.series import TimeSeries
from .foliation import Foliation
from .hs_algebra import (
    ComplexMatrix,
    as_matrix,
    dagger,
    expm,
    partial_trace,
    validate_density_matrix,
)
from .models import ModelSpec

if TYPE_CHECKING:
    from .perturb import DriveProtocol

logger = setup_logger(__name__)

LEAKAGE_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class OracleRun:
    """Reduced states plus the joint-state diagnostics of one exact evolution"""
    states: TimeSeries
    bath_top_population: np.ndarray
    joint_trace_error: float


def _step_joint(rho: ComplexMatrix, hamiltonian: ComplexMatrix, dt: float) -> ComplexMatrix:
    unitary = expm(-1j * dt * hamiltonian)
    return unitary @ rho @ dagger(unitary)


def _evolve(model: ModelSpec, f: Foliation, upto: int,
            hamiltonian: Callable[[float], ComplexMatrix], leakage_tol: float = LEAKAGE_TOL) -> OracleRun:
    layout = model.layout
    rho = model.initial_joint_state()
    states = [partial_trace(rho, layout, "system")]
    top = [float(partial_trace(rho, layout, "bath")[-1, -1].real)]
    trace_error = 0.0
    for k in range(upto):
        rho = _step_joint(rho, hamiltonian(f.midpoints[k]), float(f.steps[k]))
        trace_error = max(trace_error, abs(np.trace(rho) - 1.0))
        states.append(partial_trace(rho, layout, "system"))
        top.append(float(partial_trace(rho, layout, "bath")[-1, -1].real))

    top = np.array(top)
    if model.bath_truncated and float(np.max(top)) > leakage_tol:
        logger.warning(
            f"{model.name}: top bath level population reached {np.max(top):.3e} "
            f"(> {leakage_tol:.1e}); truncation n_trunc={layout.d_bath} may be too small"
        )
    series = TimeSeries(np.array(f.times[: upto + 1]), np.array(states), name="rho_exact")
    return OracleRun(series, top, float(trace_error))


def exact_series(model: ModelSpec, f: Foliation, leakage_tol: float = LEAKAGE_TOL) -> OracleRun:
    """Exact reduced state on every slice, midpoint-stepped joint evolution"""
    return _evolve(model, f, f.n, model.hamiltonian, leakage_tol)


def exact_reduced(model: ModelSpec, f: Foliation, k: int) -> ComplexMatrix:
    """rho_exact(t_k) = tr_B(U(k, 0) rho_0 (x) rho_B U(k, 0)^dag)"""
    f.check_index(k)
    return _evolve(model, f, k, model.hamiltonian).states.values[k]


def exact_reduced_single_expm(model: ModelSpec, t: float, t0: float = 0.0) -> ComplexMatrix:
    """
    One lab-frame exponential of the total Hamiltonian from t0 to t, mapped
    into the model's picture. Agrees with the stepped path exactly for lab
    models and to O(dt^2) in the interaction picture.
    """
    joint = model.initial_joint_state()
    if model.picture == "interaction":
        # interaction-picture state at t0 back to the lab frame
        free = expm(-1j * t0 * model.free_hamiltonian())
        joint = free @ joint @ dagger(free)
    unitary = expm(-1j * (t - t0) * model.total_hamiltonian())
    reduced = partial_trace(unitary @ joint @ dagger(unitary), model.layout, "system")
    if model.picture == "interaction":
        return model.system_to_interaction(reduced, t)
    return reduced


def exact_driven_series(model: ModelSpec, drive: "DriveProtocol", f: Foliation,
                        leakage_tol: float = LEAKAGE_TOL) -> OracleRun:
    """Exact evolution with the classical drive -a(t) O (x) I_B added"""
    return _evolve(model, f, f.n, lambda t: model.hamiltonian(t) + drive.system_term(model, t), leakage_tol)


def dephasing_factor(g: float, omega: float, t) -> np.ndarray:
    """
    Coherence factor of a sigma_z-coupled qubit with one vacuum mode,
    exp(-(4 g^2 / omega^2) (1 - cos omega t)), interaction picture.
    """
    t = np.asarray(t, dtype=float)
    return np.exp(-(4.0 * g * g / (omega * omega)) * (1.0 - np.cos(omega * t)))


def dephasing_reference(g: float, omega: float, f: Foliation, rho0: ComplexMatrix,
                        picture: str = "interaction") -> TimeSeries:
    """Closed-form reduced states of the dephasing model on every slice, vacuum mode from t_0"""
    try:
        rho0 = validate_density_matrix(as_matrix(rho0, "initial system state"), "initial system state")
    except (StateValidationError, ValueError) as exc:
        raise ModelError(f"dephasing reference needs a qubit density matrix: {exc}") from exc
    if rho0.shape != (2, 2):
        raise ModelError(f"dephasing reference is a qubit model, got {rho0.shape[0]}-dimensional state")
    if not omega > 0:
        raise ModelError(f"omega must be positive, got {omega}")
    if picture not in ("interaction", "lab"):
        raise ModelError(f"unknown picture {picture!r}")

    times = np.array(f.times)
    elapsed = times - times[0]
    coherence = rho0[0, 1] * dephasing_factor(g, omega, elapsed)
    if picture == "lab":
        coherence = coherence * np.exp(-1j * omega * elapsed)
    states = np.empty((len(times), 2, 2), dtype=complex)
    states[:, 0, 0] = rho0[0, 0]
    states[:, 1, 1] = rho0[1, 1]
    states[:, 0, 1] = coherence
    states[:, 1, 0] = np.conj(coherence)
    return TimeSeries(times, states, name="rho_dephasing")


def joint_state_at(model: ModelSpec, f: Foliation, k: int) -> ComplexMatrix:
    """Stepped joint state at slice k (for identity checks on the full space)"""
    f.check_index(k)
    rho = model.initial_joint_state()
    for j in range(k):
        rho = _step_joint(rho, model.hamiltonian(f.midpoints[j]), float(f.steps[j]))
    return rho
