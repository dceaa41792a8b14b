"""
Hilbert-Schmidt Algebra Module
Dense complex linear algebra, tensor-product bookkeeping and the superoperator
layer (Liouvillian, projectors, vectorization).

Conventions used everywhere in the package:
  * vectorization is column-stacking, so X -> A X B has matrix kron(B.T, A);
  * joint spaces are ordered system factor first.
"""

from dataclasses import dataclass
from typing import Callable, Literal, Tuple

import numpy as np
import scipy.linalg

from ..utils.exceptions import (
    DimensionError,
    HermiticityError,
    SingularMatrixError,
    StateValidationError,
)
from ..utils.logger import setup_logger

logger = setup_logger(__name__)

# dense complex square matrix; operators, density operators, Hamiltonians
ComplexMatrix = np.ndarray

HERMITICITY_TOL = 1e-12
STATE_TOL = 1e-10
CONDITION_MAX = 1e12
MAX_DIM = 16


def as_matrix(x, name: str = "matrix") -> ComplexMatrix:
    """Convert to a complex square array, rejecting non-finite entries"""
    m = np.asarray(x, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def dagger(a: ComplexMatrix) -> ComplexMatrix:
    return np.conj(np.swapaxes(a, -1, -2))


def hermitian_part(a: ComplexMatrix) -> ComplexMatrix:
    return 0.5 * (a + dagger(a))


def commutator(a: ComplexMatrix, b: ComplexMatrix) -> ComplexMatrix:
    return a @ b - b @ a


def is_hermitian(a: ComplexMatrix, tol: float = HERMITICITY_TOL) -> bool:
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    return float(np.max(np.abs(a - dagger(a)), initial=0.0)) <= tol * scale


def require_hermitian(a: ComplexMatrix, name: str = "operator", tol: float = HERMITICITY_TOL):
    if not is_hermitian(a, tol):
        deviation = float(np.max(np.abs(a - dagger(a))))
        raise HermiticityError(f"{name} is not Hermitian (max |A - A^dag| = {deviation:.3e})")


def validate_density_matrix(rho, name: str = "density matrix", tol: float = STATE_TOL) -> ComplexMatrix:
    """Hermitian, PSD to -tol and unit trace to tol"""
    try:
        rho = as_matrix(rho, name)
    except (DimensionError, ValueError) as exc:
        raise StateValidationError(str(exc)) from exc
    if not is_hermitian(rho, tol):
        raise StateValidationError(f"{name} is not Hermitian")
    trace = np.trace(rho)
    if abs(trace - 1.0) > tol:
        raise StateValidationError(f"{name} has trace {trace.real:.12g}, expected 1")
    smallest = float(np.min(np.linalg.eigvalsh(hermitian_part(rho))))
    if smallest < -tol:
        raise StateValidationError(f"{name} has negative eigenvalue {smallest:.3e}")
    return rho


@dataclass(frozen=True)
class SpaceLayout:
    """System/environment split; system factor first in every tensor product"""
    d_sys: int
    d_bath: int

    def __post_init__(self):
        if self.d_sys < 1 or self.d_bath < 1:
            raise DimensionError(f"layout dimensions must be positive, got {self.d_sys}x{self.d_bath}")

    @property
    def D(self) -> int:
        return self.d_sys * self.d_bath


def kron(a: ComplexMatrix, b: ComplexMatrix) -> ComplexMatrix:
    """Tensor product, first factor is the system factor"""
    return np.kron(a, b)


def partial_trace(x: ComplexMatrix, layout: SpaceLayout, keep: Literal["system", "bath"] = "system") -> ComplexMatrix:
    x = np.asarray(x)
    if x.shape != (layout.D, layout.D):
        raise DimensionError(f"partial_trace expects {layout.D}x{layout.D}, got {x.shape}")
    blocks = x.reshape(layout.d_sys, layout.d_bath, layout.d_sys, layout.d_bath)
    if keep == "system":
        return np.einsum('ijkj->ik', blocks)
    if keep == "bath":
        return np.einsum('ijil->jl', blocks)
    raise ValueError(f"keep must be 'system' or 'bath', got {keep!r}")


def expm(a: ComplexMatrix, tol: float = 1e-12) -> ComplexMatrix:
    """
    Matrix exponential.

    scipy's scaling-and-squaring Pade(13) approximant is accurate to a few
    units of roundoff relative to the norm of the input, which meets any
    tol above ~1e-15 * ||a||.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    a = np.asarray(a, dtype=complex)
    if not np.all(np.isfinite(a)):
        raise ValueError("expm input has non-finite entries")
    return scipy.linalg.expm(a)


def inv(a: ComplexMatrix, threshold: float = CONDITION_MAX) -> Tuple[ComplexMatrix, float]:
    """Inverse plus 2-norm condition estimate; raises past the threshold"""
    a = as_matrix(a)
    condition = float(np.linalg.cond(a))
    if not np.isfinite(condition) or condition > threshold:
        raise SingularMatrixError(condition, threshold)
    return scipy.linalg.inv(a), condition


def trace_norm(a: ComplexMatrix) -> float:
    """Sum of singular values"""
    return float(np.sum(np.linalg.svd(np.asarray(a, dtype=complex), compute_uv=False)))


def vectorize(x: ComplexMatrix) -> np.ndarray:
    return np.asarray(x).reshape(-1, order='F')


def devectorize(v: np.ndarray, dim: int = None) -> ComplexMatrix:
    v = np.asarray(v)
    if dim is None:
        dim = int(round(np.sqrt(v.size)))
    if dim * dim != v.size:
        raise DimensionError(f"vector of length {v.size} is not a vectorized square matrix")
    return v.reshape(dim, dim, order='F')


@dataclass(frozen=True, eq=False)
class SuperOp:
    """Linear map on operators, stored as a D^2 x D^2 matrix (column stacking)"""
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"superoperator matrix must be square, got {m.shape}")
        dim = int(round(np.sqrt(m.shape[0])))
        if dim * dim != m.shape[0]:
            raise DimensionError(f"superoperator size {m.shape[0]} is not a square number")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim_op(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))

    @classmethod
    def identity(cls, dim_op: int) -> "SuperOp":
        return cls(np.eye(dim_op * dim_op, dtype=complex))

    def _check(self, other: "SuperOp"):
        if other.matrix.shape != self.matrix.shape:
            raise DimensionError(
                f"superoperator shapes differ: {self.matrix.shape} vs {other.matrix.shape}"
            )

    def __matmul__(self, other: "SuperOp") -> "SuperOp":
        """Composition: (A @ B)(X) = A(B(X))"""
        self._check(other)
        return SuperOp(self.matrix @ other.matrix)

    def __add__(self, other: "SuperOp") -> "SuperOp":
        self._check(other)
        return SuperOp(self.matrix + other.matrix)

    def __sub__(self, other: "SuperOp") -> "SuperOp":
        self._check(other)
        return SuperOp(self.matrix - other.matrix)

    def __mul__(self, scalar: complex) -> "SuperOp":
        return SuperOp(scalar * self.matrix)

    __rmul__ = __mul__

    def apply(self, x: ComplexMatrix) -> ComplexMatrix:
        return apply(self, x)

    def distance(self, other: "SuperOp") -> float:
        self._check(other)
        return float(np.max(np.abs(self.matrix - other.matrix)))


def apply(s: SuperOp, x: ComplexMatrix) -> ComplexMatrix:
    x = np.asarray(x)
    if x.shape != (s.dim_op, s.dim_op):
        raise DimensionError(f"superoperator acts on {s.dim_op}x{s.dim_op}, got {x.shape}")
    return devectorize(s.matrix @ vectorize(x), s.dim_op)


def superop_from_map(fn: Callable[[ComplexMatrix], ComplexMatrix], dim_in: int, dim_out: int = None) -> np.ndarray:
    """
    Matrix of a linear map, built column by column from the matrix-unit basis.
    Returns a raw (dim_out^2 x dim_in^2) array; square maps can be wrapped in SuperOp.
    """
    dim_out = dim_in if dim_out is None else dim_out
    out = np.zeros((dim_out * dim_out, dim_in * dim_in), dtype=complex)
    for column in range(dim_in * dim_in):
        unit = np.zeros(dim_in * dim_in, dtype=complex)
        unit[column] = 1.0
        out[:, column] = vectorize(fn(devectorize(unit, dim_in)))
    return out


def sandwich(a: ComplexMatrix, b: ComplexMatrix) -> SuperOp:
    """X -> a X b"""
    return SuperOp(np.kron(np.asarray(b).T, np.asarray(a)))


def liouvillian(h: ComplexMatrix, tol: float = HERMITICITY_TOL) -> SuperOp:
    """Commutator map X -> [h, X]; the -i factor belongs to the propagation layer"""
    h = as_matrix(h, "Hamiltonian")
    require_hermitian(h, "Hamiltonian", tol)
    return SuperOp(liouvillian_matrix(h))


def liouvillian_matrix(h: ComplexMatrix) -> np.ndarray:
    """Unchecked matrix of X -> [h, X]: kron(I, h) - kron(h.T, I)"""
    identity = np.eye(h.shape[0], dtype=complex)
    return np.kron(identity, h) - np.kron(h.T, identity)


def projector_P(rho_b: ComplexMatrix, layout: SpaceLayout) -> SuperOp:
    """P X = tr_B(X) (x) rho_B"""
    rho_b = validate_density_matrix(rho_b, "bath state")
    if rho_b.shape != (layout.d_bath, layout.d_bath):
        raise StateValidationError(
            f"bath state is {rho_b.shape[0]}-dimensional, layout expects {layout.d_bath}"
        )
    return SuperOp(superop_from_map(
        lambda x: kron(partial_trace(x, layout, "system"), rho_b), layout.D
    ))


def projector_Q(rho_b: ComplexMatrix, layout: SpaceLayout) -> SuperOp:
    """Q = 1 - P"""
    return SuperOp.identity(layout.D) - projector_P(rho_b, layout)


def random_operator(dim: int, rng: np.random.Generator) -> ComplexMatrix:
    return rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))


def random_hermitian(dim: int, rng: np.random.Generator) -> ComplexMatrix:
    return hermitian_part(random_operator(dim, rng))


def random_density_matrix(dim: int, rng: np.random.Generator) -> ComplexMatrix:
    a = random_operator(dim, rng)
    rho = a @ dagger(a)
    return rho / np.trace(rho)


def purity(rho: ComplexMatrix) -> float:
    return float(np.real(np.trace(rho @ rho)))


def psd_sqrt(a: ComplexMatrix) -> ComplexMatrix:
    """Square root of the PSD part of a Hermitian matrix"""
    values, vectors = np.linalg.eigh(hermitian_part(a))
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ dagger(vectors)


def fidelity(rho: ComplexMatrix, sigma: ComplexMatrix) -> float:
    """Uhlmann fidelity (tr sqrt(sqrt(rho) sigma sqrt(rho)))^2"""
    root = psd_sqrt(rho)
    inner = psd_sqrt(root @ sigma @ root)
    return float(np.real(np.trace(inner)) ** 2)
