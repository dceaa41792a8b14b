"""
Perturb Module
First-order reduced state and Kubo linear response under a classical drive,
second-order bath correction built from two-time correlation kernels, and the
induced-field combination of the two.

All operators are in the interaction picture of H_S + H_B; expectations
<.>_0 are taken in the initial system state.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..utils.exceptions import ModelError
from ..utils.logger import setup_logger
from ..utils.series import TimeSeries
from .foliation import Foliation
from .hs_algebra import ComplexMatrix, as_matrix, kron, require_hermitian
from .models import ModelSpec
from .oracle import exact_driven_series, exact_series

logger = setup_logger(__name__)

SWITCH_ON_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DriveProtocol:
    """
    Classical field a(t) coupled to a Hermitian system operator O through
    -a(t) O. The field must vanish at `start` (switch-on surrogate).
    """
    operator: ComplexMatrix
    field: Callable[[float], complex]
    start: float = 0.0

    def __post_init__(self):
        operator = as_matrix(self.operator, "drive operator")
        require_hermitian(operator, "drive operator")
        object.__setattr__(self, "operator", operator)
        initial = complex(self.field(self.start))
        if abs(initial) > SWITCH_ON_TOL:
            raise ModelError(f"drive field is {abs(initial):.3e} at its start time, expected <= {SWITCH_ON_TOL:.0e}")

    def amplitude(self, times) -> np.ndarray:
        return np.array([complex(self.field(float(t))) for t in np.atleast_1d(times)])

    def scaled(self, factor: float) -> "DriveProtocol":
        field = self.field
        return DriveProtocol(self.operator, lambda t: factor * field(t), self.start)

    def system_term(self, model: ModelSpec, t: float) -> ComplexMatrix:
        """-a(t) O(t) (x) I_B in the model's picture"""
        value = complex(self.field(t))
        if abs(value.imag) > 1e-12:
            raise ModelError("a Hamiltonian drive needs a real field")
        op = self.operator
        if model.picture == "interaction":
            op = model.system_heisenberg(op, [t])[0]
        return -value.real * kron(op, np.eye(model.layout.d_bath))


def ramped_cosine(amplitude: float, frequency: float, start: float = 0.0, ramp: float = 1.0,
                  phase: float = 0.0) -> Callable[[float], float]:
    """amplitude * s(t) * cos(frequency t + phase), s a sin^2 ramp from 0 to 1 over `ramp`"""
    if ramp <= 0:
        raise ModelError(f"ramp duration must be positive, got {ramp}")

    def field(t: float) -> float:
        if t <= start:
            return 0.0
        envelope = 1.0 if t >= start + ramp else np.sin(0.5 * np.pi * (t - start) / ramp) ** 2
        return float(amplitude * envelope * np.cos(frequency * t + phase))

    return field


@dataclass(frozen=True, eq=False)
class BathCorrelation:
    """
    Two-time kernel C_ij(t', t'') = <B_i(t') B_j(t'')> over coupling channels.
    `kernel` returns a (channels, channels) array; `grid_kernel`, when given,
    evaluates a whole (len(t1), len(t2), channels, channels) table at once.
    """
    kernel: Callable[[float, float], np.ndarray]
    channels: int = 1
    grid_kernel: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __call__(self, t1: float, t2: float) -> np.ndarray:
        return np.asarray(self.kernel(t1, t2), dtype=complex).reshape(self.channels, self.channels)

    def commutator(self, t1: float, t2: float) -> np.ndarray:
        """<[B_i(t'), B_j(t'')]> = C_ij(t', t'') - C_ji(t'', t')"""
        return self(t1, t2) - self(t2, t1).T

    def on_grid(self, times1, times2) -> np.ndarray:
        times1, times2 = np.asarray(times1, dtype=float), np.asarray(times2, dtype=float)
        if self.grid_kernel is not None:
            return np.asarray(self.grid_kernel(times1, times2), dtype=complex)
        table = np.empty((len(times1), len(times2), self.channels, self.channels), dtype=complex)
        for a, t1 in enumerate(times1):
            for b, t2 in enumerate(times2):
                table[a, b] = self(t1, t2)
        return table

    def commutator_on_grid(self, times1, times2) -> np.ndarray:
        forward = self.on_grid(times1, times2)
        backward = self.on_grid(times2, times1)
        return forward - backward.transpose(1, 0, 3, 2)


def zero_correlation(channels: int = 1) -> BathCorrelation:
    return BathCorrelation(lambda t1, t2: np.zeros((channels, channels)), channels,
                           lambda a, b: np.zeros((len(a), len(b), channels, channels), dtype=complex))


def vacuum_mode_correlation(g: float, omega: float) -> BathCorrelation:
    """g^2 <0|B(t') B(t'')|0> for B = a + a^dag: g^2 exp(-i omega (t' - t''))"""

    def grid(t1, t2):
        return (g * g * np.exp(-1j * omega * np.subtract.outer(t1, t2)))[:, :, None, None]

    return BathCorrelation(lambda t1, t2: np.array([[g * g * np.exp(-1j * omega * (t1 - t2))]]), 1, grid)


def model_bath_correlation(model: ModelSpec) -> BathCorrelation:
    """lambda_i lambda_j tr(B_i(t') B_j(t'') rho_B) from the model's operators"""
    strengths = np.array([c.strength for c in model.couplings])
    bath_ops = [c.bath_op for c in model.couplings]
    rho_b = model.rho_bath

    def grid(t1, t2):
        b1 = np.stack([model.bath_heisenberg(op, t1) for op in bath_ops])
        b2 = np.stack([model.bath_heisenberg(op, t2) for op in bath_ops])
        table = np.einsum('xy,iayz,jbzx->abij', rho_b, b1, b2, optimize=True)
        return table * np.outer(strengths, strengths)[None, None]

    return BathCorrelation(lambda t1, t2: grid(np.array([t1]), np.array([t2]))[0, 0],
                           len(bath_ops), grid)


def _require_interaction(model: ModelSpec):
    if model.picture != "interaction":
        raise ModelError(f"perturbative expansions run in the interaction picture, model '{model.name}' is {model.picture}")


def _expectation(rho: ComplexMatrix, ops: np.ndarray) -> np.ndarray:
    return np.einsum('ab,...ba->...', rho, ops)


def first_order_series(model: ModelSpec, drive: DriveProtocol, f: Foliation) -> TimeSeries:
    """rho^(1)(t_k) = rho_0 + i sum_j w_j a(t_j) [O(t_j), rho_0] for every k"""
    _require_interaction(model)
    nodes = f.nodes()
    weights = f.prefix_weight_matrix()
    rho0 = model.rho0_sys
    ops = model.system_heisenberg(drive.operator, nodes)
    commutators = ops @ rho0 - rho0 @ ops
    field = drive.amplitude(nodes)
    corrections = 1j * np.einsum('kj,j,jab->kab', weights, field, commutators)
    return TimeSeries(np.array(f.times), rho0[None] + corrections, name="rho_first_order")


def rho_first_order(model: ModelSpec, drive: DriveProtocol, f: Foliation, k: int) -> ComplexMatrix:
    f.check_index(k)
    return first_order_series(model, drive, f).at(k)


def _kubo_series(model: ModelSpec, operator: ComplexMatrix, field: np.ndarray, observable: ComplexMatrix,
                 f: Foliation, nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    rho0 = model.rho0_sys
    obs_t = model.system_heisenberg(observable, f.times)
    ops = model.system_heisenberg(operator, nodes)
    # <[obs(t_k), O(s_j)]>_0
    correlator = (np.einsum('ab,kbc,jca->kj', rho0, obs_t, ops)
                  - np.einsum('ab,jbc,kca->kj', rho0, ops, obs_t))
    return 1j * np.einsum('kj,j,kj->k', weights, field, correlator)


def linear_response_series(model: ModelSpec, drive: DriveProtocol, observable: ComplexMatrix,
                           f: Foliation) -> TimeSeries:
    """delta<obs>(t_k) = i sum_j w_j <[obs(t_k), O(t_j)]>_0 a(t_j)"""
    _require_interaction(model)
    observable = as_matrix(observable, "observable")
    require_hermitian(observable, "observable")
    nodes = f.nodes()
    response = _kubo_series(model, drive.operator, drive.amplitude(nodes), observable, f,
                            nodes, f.prefix_weight_matrix())
    return TimeSeries(np.array(f.times), response, name="linear_response")


def linear_response(model: ModelSpec, drive: DriveProtocol, observable: ComplexMatrix,
                    f: Foliation, k: int) -> complex:
    f.check_index(k)
    return complex(linear_response_series(model, drive, observable, f).at(k))


def second_order_series(model: ModelSpec, f: Foliation,
                        kernel: Optional[BathCorrelation] = None) -> TimeSeries:
    """
    Delta rho^(2)(t_k) over the ordered region t_m <= t_j <= t_k, nested
    trapezoid weights, for every k:
        sum_j w_j sum_{m<=j} w_m sum_{i,i'} [ -C_ii'(j,m) S_i(j) S_i'(m) rho_0
            + C_ii'(j,m) S_i'(m) rho_0 S_i(j) + C_i'i(m,j) S_i(j) rho_0 S_i'(m)
            - C_i'i(m,j) rho_0 S_i'(m) S_i(j) ]
    """
    _require_interaction(model)
    kernel = model_bath_correlation(model) if kernel is None else kernel
    if kernel.channels != len(model.couplings):
        raise ModelError(f"kernel has {kernel.channels} channels, model has {len(model.couplings)} couplings")

    times = np.array(f.times)
    nested = f.prefix_weight_matrix("trapezoid")
    rho0 = model.rho0_sys
    system_ops = np.stack([model.system_heisenberg(c.system_op, times) for c in model.couplings])
    table = kernel.on_grid(times, times)
    swapped = table.transpose(1, 0, 3, 2)

    # inner sums over m for every outer slice j
    inner = np.einsum('jm,jmik,kmab->jiab', nested, table, system_ops)
    inner_swapped = np.einsum('jm,jmik,kmab->jiab', nested, swapped, system_ops)
    outer_ops = system_ops.transpose(1, 0, 2, 3)

    terms = (-outer_ops @ inner @ rho0
             + inner @ rho0 @ outer_ops
             + outer_ops @ rho0 @ inner_swapped
             - rho0 @ inner_swapped @ outer_ops).sum(axis=1)
    correction = np.einsum('kj,jab->kab', nested, terms)
    return TimeSeries(times, correction, name="rho_second_order")


def rho_second_order(model: ModelSpec, f: Foliation, k: int,
                     kernel: Optional[BathCorrelation] = None) -> ComplexMatrix:
    f.check_index(k)
    return second_order_series(model, f, kernel).at(k)


def second_order_response(model: ModelSpec, observable: ComplexMatrix, f: Foliation, k: int,
                          kernel: Optional[BathCorrelation] = None) -> complex:
    """
    tr(obs(t_k) Delta rho^(2)(t_k)), i.e. the correlator double sum
    -sum sum w w [C <[obs, S(j)] S(m)>_0 - C~ <S(m) [obs, S(j)]>_0].
    """
    observable = as_matrix(observable, "observable")
    require_hermitian(observable, "observable")
    f.check_index(k)
    correction = rho_second_order(model, f, k, kernel)
    obs_k = model.system_heisenberg(observable, [f.times[k]])[0]
    return complex(np.trace(obs_k @ correction))


def induced_field(model: ModelSpec, drive: DriveProtocol, f: Foliation,
                  kernel: Optional[BathCorrelation] = None) -> np.ndarray:
    """
    delta a(t_k) = -1/2 sum_j w_j D(t_k, t_j) <O(t_j)>_0 on the slice times,
    with D = -i <[B(t'), B(t'')]> of a single-channel kernel.
    """
    _require_interaction(model)
    kernel = model_bath_correlation(model) if kernel is None else kernel
    if kernel.channels != 1:
        raise ModelError("the induced field needs a single-channel kernel")
    times = np.array(f.times)
    propagator = -1j * kernel.commutator_on_grid(times, times)[:, :, 0, 0]
    source = _expectation(model.rho0_sys, model.system_heisenberg(drive.operator, times))
    nested = f.prefix_weight_matrix("trapezoid")
    return -0.5 * np.einsum('kj,kj,j->k', nested, propagator, source)


def polarization_response(model: ModelSpec, drive: DriveProtocol, observable: ComplexMatrix,
                          f: Foliation, k: Optional[int] = None,
                          kernel: Optional[BathCorrelation] = None):
    """
    Linear response evaluated with the field a + 4 delta a. Trapezoid on the
    slice times. Returns the value at slice k, or the whole series when k is None.
    """
    observable = as_matrix(observable, "observable")
    require_hermitian(observable, "observable")
    times = np.array(f.times)
    field = drive.amplitude(times) + 4.0 * induced_field(model, drive, f, kernel)
    response = _kubo_series(model, drive.operator, field, observable, f, times,
                            f.prefix_weight_matrix("trapezoid"))
    if k is None:
        return TimeSeries(times, response, name="polarization_response")
    f.check_index(k)
    return complex(response[k])


def finite_field_response(model: ModelSpec, drive: DriveProtocol, observable: ComplexMatrix,
                          f: Foliation) -> TimeSeries:
    """<obs>_driven - <obs>_undriven from exact joint evolution"""
    observable = as_matrix(observable, "observable")
    require_hermitian(observable, "observable")
    driven = exact_driven_series(model, drive, f).states.values
    undriven = exact_series(model, f).states.values
    if model.picture == "interaction":
        obs_t = model.system_heisenberg(observable, f.times)
    else:
        obs_t = np.broadcast_to(observable, driven.shape)
    difference = _expectation_pairs(obs_t, driven - undriven)
    return TimeSeries(np.array(f.times), difference, name="finite_field_response")


def _expectation_pairs(ops: np.ndarray, states: np.ndarray) -> np.ndarray:
    return np.einsum('kab,kba->k', ops, states)


def fit_order(xs: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(x)"""
    xs, errors = np.asarray(xs, dtype=float), np.asarray(errors, dtype=float)
    if len(xs) != len(errors) or len(xs) < 2:
        raise ValueError("need at least two (x, error) pairs of equal length")
    if np.any(xs <= 0) or np.any(errors <= 0):
        raise ValueError("order fit needs positive abscissas and errors")
    slope, _ = np.polyfit(np.log(xs), np.log(errors), 1)
    return float(slope)
