"""
Propagate Module
Ordered-exponential propagators and the exact convolutionless solution for
the reduced density operator.

Complexity: TCLSolver sweeps the whole trajectory in one forward pass. Each
slice costs three D^2 x D^2 exponentials plus a constant number of products
and two inversions, so a run of n slices is O(n D^6) time and O(D^4) memory.
The double-indexed operators are never tabulated.
"""

import threading
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, Optional, Sequence, Tuple

import numpy as np

from ..utils.exceptions import GridError, SingularMatrixError, TCLBreakdownError
from ..utils.logger import setup_logger
from ..utils.series import TimeSeries
from .foliation import Foliation
from .hs_algebra import (
    CONDITION_MAX,
    ComplexMatrix,
    SpaceLayout,
    SuperOp,
    devectorize,
    expm,
    hermitian_part,
    inv,
    kron,
    liouvillian_matrix,
    partial_trace,
    projector_P,
    require_hermitian,
    superop_from_map,
    vectorize,
)
from .models import ModelSpec

logger = setup_logger(__name__)

MINUS_I = -1j
PLUS_I = 1j
ORDERINGS = ("time", "anti-time")
BLOCKS = ("full", "P", "Q")


class LiouvilleGenerator:
    """
    Slice-local commutator map L(t): X -> [H(t), X] together with the
    projectors P and Q of the bath reference state.
    """

    def __init__(self, hamiltonian: Callable[[float], ComplexMatrix], layout: SpaceLayout,
                 rho_bath: ComplexMatrix, name: str = "generator"):
        self.hamiltonian = hamiltonian
        self.layout = layout
        self.name = name
        self.P = projector_P(rho_bath, layout)
        self.Q = SuperOp.identity(layout.D) - self.P
        self.rho_bath = np.asarray(rho_bath, dtype=complex)

    @classmethod
    def from_model(cls, model: ModelSpec,
                   extra: Optional[Callable[[float], ComplexMatrix]] = None) -> "LiouvilleGenerator":
        """Generator of a model, optionally with an additional joint-space term extra(t)"""
        if extra is None:
            return cls(model.hamiltonian, model.layout, model.rho_bath, name=model.name)
        return cls(lambda t: model.hamiltonian(t) + extra(t), model.layout, model.rho_bath,
                   name=f"{model.name}+drive")

    @property
    def dim_op(self) -> int:
        return self.layout.D

    def matrix(self, t: float) -> np.ndarray:
        return liouvillian_matrix(np.asarray(self.hamiltonian(t), dtype=complex))

    def block(self, t: float, part: str = "full") -> np.ndarray:
        """L(t), P L(t) P or Q L(t) Q as a raw matrix"""
        full = self.matrix(t)
        if part == "full":
            return full
        if part == "P":
            return self.P.matrix @ full @ self.P.matrix
        if part == "Q":
            return self.Q.matrix @ full @ self.Q.matrix
        raise ValueError(f"block must be one of {BLOCKS}, got {part!r}")

    def __call__(self, t: float) -> SuperOp:
        return SuperOp(self.matrix(t))


def check_generator(gen: LiouvilleGenerator, times: Sequence[float], tol: float = 1e-12) -> float:
    """
    Check on sampled times that gen(t) is the commutator map of a Hermitian
    Hamiltonian. Returns the largest matrix deviation found.
    """
    worst = 0.0
    for t in times:
        h = np.asarray(gen.hamiltonian(t), dtype=complex)
        require_hermitian(h, f"{gen.name} Hamiltonian at t={t:.6g}", tol)
        deviation = float(np.max(np.abs(gen(t).matrix - liouvillian_matrix(h))))
        worst = max(worst, deviation)
    return worst


class PropagatorTable:
    """
    Step propagators of one ordered exponential with a cache of accumulated
    products keyed by (from_index, to_index). Steps are built on demand.
    """

    def __init__(self, step_fn: Callable[[int], np.ndarray], n_steps: int, dim_op: int, ordering: str):
        if ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}, got {ordering!r}")
        self.n_steps = n_steps
        self.dim_op = dim_op
        self.ordering = ordering
        self._step_fn = step_fn
        self._steps: Dict[int, np.ndarray] = {}
        self._products: Dict[Tuple[int, int], np.ndarray] = {}
        self._lock = threading.RLock()

    def step(self, k: int) -> np.ndarray:
        """Propagator of interval [t_k, t_{k+1}]"""
        if not 0 <= k < self.n_steps:
            raise GridError(f"interval index {k} outside 0..{self.n_steps - 1}")
        with self._lock:
            if k not in self._steps:
                self._steps[k] = self._step_fn(k)
            return self._steps[k]

    def between(self, a: int, b: int) -> SuperOp:
        """
        Product over intervals a..b-1. Time ordering puts later steps on the
        left (S_{b-1} ... S_a); anti-time ordering puts them on the right.
        """
        if not 0 <= a <= self.n_steps or not 0 <= b <= self.n_steps:
            raise GridError(f"slice pair ({a}, {b}) outside 0..{self.n_steps}")
        if a > b:
            raise GridError(f"ordered exponential needs from-index <= to-index, got ({a}, {b})")
        return SuperOp(self._product(a, b))

    __call__ = between

    def _product(self, a: int, b: int) -> np.ndarray:
        with self._lock:
            if a == b:
                return np.eye(self.dim_op * self.dim_op, dtype=complex)
            cached = self._products.get((a, b))
            if cached is not None:
                return cached
            start, product = a, np.eye(self.dim_op * self.dim_op, dtype=complex)
            for end in range(b - 1, a, -1):
                if (a, end) in self._products:
                    start, product = end, self._products[(a, end)]
                    break
            for k in range(start, b):
                if self.ordering == "time":
                    product = self.step(k) @ product
                else:
                    product = product @ self.step(k)
            self._products[(a, b)] = product
            return product


def ordered_exp(gen: LiouvilleGenerator, f: Foliation, sign: complex = MINUS_I,
                ordering: str = "time", block: str = "full") -> PropagatorTable:
    """
    Discrete T / T^c ordered exponential of sign * L over the foliation.
    Interval k contributes expm(sign * L(midpoint_k) * dt_k), with L
    optionally restricted to the P or Q block.
    """
    if sign not in (MINUS_I, PLUS_I):
        raise ValueError(f"sign must be +1j or -1j, got {sign!r}")
    if block not in BLOCKS:
        raise ValueError(f"block must be one of {BLOCKS}, got {block!r}")
    midpoints, steps = f.midpoints, f.steps

    def step(k: int) -> np.ndarray:
        return expm(sign * steps[k] * gen.block(midpoints[k], block))

    return PropagatorTable(step, f.n, gen.dim_op, ordering)


def _ordered_pair(f: Foliation, k: int, j: int):
    f.check_index(k, "to-slice")
    f.check_index(j, "from-slice")
    if j > k:
        raise GridError(f"need j <= k, got j={j}, k={k}")


def forward_propagator(gen: LiouvilleGenerator, f: Foliation, k: int, j: int) -> SuperOp:
    """T exp(-i int_j^k L): joint state at slice j to slice k"""
    _ordered_pair(f, k, j)
    return ordered_exp(gen, f, MINUS_I, "time").between(j, k)


def g_retarded(gen: LiouvilleGenerator, f: Foliation, t_index: int, s_index: int) -> SuperOp:
    """T^c exp(+i int_j^k L): maps the joint state at slice k back to slice j"""
    _ordered_pair(f, t_index, s_index)
    return ordered_exp(gen, f, PLUS_I, "anti-time").between(s_index, t_index)


def projected_propagator_H(gen: LiouvilleGenerator, f: Foliation, k: int, j: int) -> SuperOp:
    """T exp(-i int_j^k Q L Q)"""
    _ordered_pair(f, k, j)
    return ordered_exp(gen, f, MINUS_I, "time", block="Q").between(j, k)


def u_system(gen: LiouvilleGenerator, f: Foliation, k: int, j: int) -> SuperOp:
    """T exp(-i int_j^k P L P)"""
    _ordered_pair(f, k, j)
    return ordered_exp(gen, f, MINUS_I, "time", block="P").between(j, k)


def theta_inverse_direct(gen: LiouvilleGenerator, f: Foliation, k: int) -> SuperOp:
    """
    theta^{-1}(t_k) = I + i sum_j w_j H(k,j) Q L(t_j) P G_R(k,j), summed
    term by term. O(k) products; the solver's recursion must agree with it.
    """
    f.check_index(k)
    weights = f.prefix_weight_matrix("trapezoid")[k]
    h_table = ordered_exp(gen, f, MINUS_I, "time", block="Q")
    g_table = ordered_exp(gen, f, PLUS_I, "anti-time")
    P, Q = gen.P.matrix, gen.Q.matrix
    total = np.zeros_like(P)
    for j in range(k + 1):
        if weights[j] == 0.0:
            continue
        total += weights[j] * (h_table.between(j, k).matrix @ Q @ gen.matrix(f.times[j]) @ P
                               @ g_table.between(j, k).matrix)
    return SuperOp(np.eye(P.shape[0]) + 1j * total)


@dataclass(frozen=True, eq=False)
class TCLSlice:
    """Convolutionless operators at one slice (raw D^2 x D^2 matrices)"""
    index: int
    time: float
    theta: np.ndarray
    w: np.ndarray
    w_inverse: np.ndarray
    u_s: np.ndarray
    theta_condition: float
    w_condition: float
    rho: Optional[ComplexMatrix] = None

    @property
    def reduced_map(self) -> np.ndarray:
        """W^{-1} U_s on the joint space"""
        return self.w_inverse @ self.u_s


class TCLSolver:
    """
    Forward sweep of theta, W and U_s along the foliation.

    With X_j = Q L(t_j) P and Y_j = P L(t_j) (theta_j - I) P the trapezoid
    sums obey
        A_k = E_k (A_{k-1} + h X_{k-1}) Fi_k + h X_k,   theta_k = (I + i A_k)^{-1}
        B_k = V_k (B_{k-1} + h Y_{k-1}) Fi_k + h Y_k,   W_k = I + i B_k theta_k
    where h is half the interval, E_k and V_k are the Q L Q and P L P step
    propagators and Fi_k is the inverse full step.
    """

    def __init__(self, gen: LiouvilleGenerator, f: Foliation, condition_max: float = CONDITION_MAX,
                 positivity_tol: Optional[float] = None):
        self.gen = gen
        self.f = f
        self.condition_max = condition_max
        self.positivity_tol = positivity_tol
        self.max_condition = 1.0
        if f.quadrature != "trapezoid":
            logger.warning(f"{f.quadrature} quadrature is ignored by the convolutionless sweep, "
                           f"which always accumulates with trapezoid weights")

    def _invert(self, a: np.ndarray, k: int, operator: str) -> Tuple[np.ndarray, float]:
        try:
            inverse, condition = inv(a, self.condition_max)
        except SingularMatrixError as exc:
            error = TCLBreakdownError(k, float(self.f.times[k]), exc.condition, operator)
            logger.error(str(error))
            raise error from exc
        self.max_condition = max(self.max_condition, condition)
        return inverse, condition

    def _reduced_state(self, reduced_map: np.ndarray, joint0: np.ndarray) -> ComplexMatrix:
        return partial_trace(devectorize(reduced_map @ joint0, self.gen.layout.D), self.gen.layout, "system")

    def _check_positivity(self, rho: ComplexMatrix, k: int, condition: float):
        if self.positivity_tol is None:
            return
        smallest = float(np.min(np.linalg.eigvalsh(hermitian_part(rho))))
        if smallest < -self.positivity_tol:
            error = TCLBreakdownError(k, float(self.f.times[k]), condition, "positivity")
            logger.error(f"{error} (smallest eigenvalue {smallest:.3e})")
            raise error

    def sweep(self, rho0: Optional[ComplexMatrix] = None, upto: Optional[int] = None) -> Iterator[TCLSlice]:
        """Yield a TCLSlice for slices 0..upto (default: all)"""
        f, gen = self.f, self.gen
        upto = f.n if upto is None else f.check_index(upto)
        D2 = gen.layout.D ** 2
        identity = np.eye(D2, dtype=complex)
        P, Q = gen.P.matrix, gen.Q.matrix
        joint0 = None
        if rho0 is not None:
            joint0 = vectorize(kron(np.asarray(rho0, dtype=complex), gen.rho_bath))

        self.max_condition = 1.0
        L_prev = gen.matrix(f.times[0])
        X_prev = Q @ L_prev @ P
        Y_prev = np.zeros_like(identity)
        acc_theta = np.zeros_like(identity)
        acc_w = np.zeros_like(identity)
        u_s = identity.copy()
        rho = None if rho0 is None else self._reduced_state(identity, joint0)
        yield TCLSlice(0, float(f.times[0]), identity, identity, identity, u_s, 1.0, 1.0, rho)

        for k in range(1, upto + 1):
            dt = float(f.steps[k - 1])
            half = 0.5 * dt
            L_mid = gen.matrix(f.midpoints[k - 1])
            full_inverse = expm(1j * dt * L_mid)
            step_q = expm(-1j * dt * (Q @ L_mid @ Q))
            step_p = expm(-1j * dt * (P @ L_mid @ P))
            L_k = gen.matrix(f.times[k])

            X_k = Q @ L_k @ P
            acc_theta = step_q @ (acc_theta + half * X_prev) @ full_inverse + half * X_k
            theta_k, theta_condition = self._invert(identity + 1j * acc_theta, k, "theta")

            Y_k = P @ L_k @ (theta_k - identity) @ P
            acc_w = step_p @ (acc_w + half * Y_prev) @ full_inverse + half * Y_k
            w_k = identity + 1j * acc_w @ theta_k
            w_inverse, w_condition = self._invert(w_k, k, "W")

            u_s = step_p @ u_s
            logger.debug(f"slice {k}: cond(theta^-1)={theta_condition:.3e}, cond(W)={w_condition:.3e}")

            rho = None
            if joint0 is not None:
                rho = self._reduced_state(w_inverse @ u_s, joint0)
                self._check_positivity(rho, k, w_condition)
            yield TCLSlice(k, float(f.times[k]), theta_k, w_k, w_inverse, u_s,
                           theta_condition, w_condition, rho)
            X_prev, Y_prev = X_k, Y_k

    def at(self, k: int, rho0: Optional[ComplexMatrix] = None) -> TCLSlice:
        last = None
        for last in self.sweep(rho0, upto=k):
            pass
        return last


def generator_for(model: ModelSpec) -> LiouvilleGenerator:
    return LiouvilleGenerator.from_model(model)


def theta(gen: LiouvilleGenerator, f: Foliation, k: int, condition_max: float = CONDITION_MAX) -> SuperOp:
    """theta(t_k); raises TCLBreakdownError when theta^{-1} is singular"""
    return SuperOp(TCLSolver(gen, f, condition_max).at(k).theta)


def w_operator(gen: LiouvilleGenerator, f: Foliation, k: int, condition_max: float = CONDITION_MAX) -> SuperOp:
    return SuperOp(TCLSolver(gen, f, condition_max).at(k).w)


def reduced_dm(model: ModelSpec, f: Foliation, k: int, condition_max: float = CONDITION_MAX,
               positivity_tol: Optional[float] = None) -> ComplexMatrix:
    """rho(t_k) = tr_B(W^{-1}(t_k) U_s(k, 0) rho_0 (x) rho_B)"""
    solver = TCLSolver(generator_for(model), f, condition_max, positivity_tol)
    return solver.at(k, model.rho0_sys).rho


def reduced_dm_series(model: ModelSpec, f: Foliation, condition_max: float = CONDITION_MAX,
                      positivity_tol: Optional[float] = None) -> TimeSeries:
    """Reduced state on every slice from a single sweep"""
    solver = TCLSolver(generator_for(model), f, condition_max, positivity_tol)
    states = np.array([s.rho for s in solver.sweep(model.rho0_sys)])
    logger.info(f"{model.name}: {f.n} slices, max condition estimate {solver.max_condition:.3e}")
    return TimeSeries(np.array(f.times), states, name="rho")


def apply_reduced_map(reduced_map: np.ndarray, layout: SpaceLayout, rho_bath: ComplexMatrix,
                      x: ComplexMatrix) -> ComplexMatrix:
    """tr_B(M (x (x) rho_B)) for a joint-space superoperator matrix M"""
    joint = devectorize(reduced_map @ vectorize(kron(x, rho_bath)), layout.D)
    return partial_trace(joint, layout, "system")


def channel_from_slice(tcl_slice: TCLSlice, layout: SpaceLayout, rho_bath: ComplexMatrix) -> SuperOp:
    """E(X) = tr_B(W^{-1} U_s (X (x) rho_B)), one matrix-unit column at a time"""
    reduced_map = tcl_slice.reduced_map
    return SuperOp(superop_from_map(lambda x: apply_reduced_map(reduced_map, layout, rho_bath, x), layout.d_sys))


def quantum_operation(model: ModelSpec, f: Foliation, k: int, condition_max: float = CONDITION_MAX) -> SuperOp:
    """Reduced dynamical map on the system space (d_sys^2 x d_sys^2)"""
    tcl_slice = TCLSolver(generator_for(model), f, condition_max).at(k)
    return channel_from_slice(tcl_slice, model.layout, model.rho_bath)


def choi_matrix(channel: SuperOp) -> ComplexMatrix:
    """sum_ab E_ab (x) E(E_ab)"""
    d = channel.dim_op
    choi = np.zeros((d * d, d * d), dtype=complex)
    for a in range(d):
        for b in range(d):
            unit = np.zeros((d, d), dtype=complex)
            unit[a, b] = 1.0
            choi += kron(unit, channel.apply(unit))
    return choi
