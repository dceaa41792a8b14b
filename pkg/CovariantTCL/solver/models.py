"""
Models Module
Concrete system+environment specifications and interaction-picture
transformations feeding every other module.
"""

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
import scipy.linalg

from ..utils.exceptions import DimensionError, ModelError, StateValidationError
from ..utils.logger import setup_logger
from .hs_algebra import (
    ComplexMatrix,
    SpaceLayout,
    as_matrix,
    dagger,
    hermitian_part,
    kron,
    require_hermitian,
    validate_density_matrix,
)

logger = setup_logger(__name__)

IDENTITY_2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# |0> is the excited (sigma_z = +1) level
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_MINUS = SIGMA_PLUS.T.copy()

PAULI = {"identity": IDENTITY_2, "sigma_x": SIGMA_X, "sigma_y": SIGMA_Y, "sigma_z": SIGMA_Z}
PICTURES = ("interaction", "lab")


def annihilation(n_levels: int) -> ComplexMatrix:
    """Truncated bosonic lowering operator"""
    return np.diag(np.sqrt(np.arange(1, n_levels, dtype=float)), k=1).astype(complex)


def number_operator(n_levels: int) -> ComplexMatrix:
    return np.diag(np.arange(n_levels, dtype=float)).astype(complex)


def bloch_state(x: float, y: float, z: float) -> ComplexMatrix:
    """Qubit density matrix (I + r.sigma) / 2, |r| <= 1"""
    radius = float(np.sqrt(x * x + y * y + z * z))
    if radius > 1.0 + 1e-12:
        raise StateValidationError(f"Bloch vector length {radius:.6g} exceeds 1")
    return 0.5 * (IDENTITY_2 + x * SIGMA_X + y * SIGMA_Y + z * SIGMA_Z)


def thermal_state(h_bath: ComplexMatrix, beta: float) -> ComplexMatrix:
    """
    exp(-beta h) / Z. beta = inf gives the normalized projector onto the
    ground space (maximally mixed over it when degenerate).
    """
    h_bath = as_matrix(h_bath, "bath Hamiltonian")
    require_hermitian(h_bath, "bath Hamiltonian")
    if beta is None or not beta >= 0:
        raise ModelError(f"inverse temperature must be >= 0, got {beta}")
    energies, vectors = scipy.linalg.eigh(hermitian_part(h_bath))
    shifted = energies - energies[0]
    if np.isinf(beta):
        degeneracy_tol = 1e-10 * max(1.0, float(np.max(np.abs(energies))))
        populations = (shifted <= degeneracy_tol).astype(float)
        if populations.sum() > 1:
            logger.debug(f"degenerate ground space of dimension {int(populations.sum())}")
    else:
        populations = np.exp(-beta * shifted)
    populations /= populations.sum()
    rho = (vectors * populations) @ dagger(vectors)
    return hermitian_part(rho)


@dataclass(frozen=True)
class Coupling:
    """One bilinear term strength * S (x) B"""
    system_op: ComplexMatrix
    bath_op: ComplexMatrix
    strength: float = 1.0


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """System, environment, couplings and the factorized initial state"""
    name: str
    layout: SpaceLayout
    h_sys: ComplexMatrix
    h_bath: ComplexMatrix
    couplings: Tuple[Coupling, ...]
    rho_bath: ComplexMatrix
    rho0_sys: ComplexMatrix
    picture: str = "interaction"
    bath_truncated: bool = False
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.picture not in PICTURES:
            raise ModelError(f"picture must be one of {PICTURES}, got {self.picture!r}")
        d_s, d_b = self.layout.d_sys, self.layout.d_bath
        h_sys = as_matrix(self.h_sys, "system Hamiltonian")
        h_bath = as_matrix(self.h_bath, "bath Hamiltonian")
        if h_sys.shape != (d_s, d_s) or h_bath.shape != (d_b, d_b):
            raise DimensionError(f"Hamiltonian shapes {h_sys.shape}/{h_bath.shape} do not match layout {d_s}x{d_b}")
        require_hermitian(h_sys, "system Hamiltonian")
        require_hermitian(h_bath, "bath Hamiltonian")
        couplings = []
        for index, term in enumerate(self.couplings):
            s = as_matrix(term.system_op, f"coupling {index} system operator")
            b = as_matrix(term.bath_op, f"coupling {index} bath operator")
            if s.shape != (d_s, d_s) or b.shape != (d_b, d_b):
                raise DimensionError(f"coupling {index} operators do not match layout {d_s}x{d_b}")
            require_hermitian(s, f"coupling {index} system operator")
            require_hermitian(b, f"coupling {index} bath operator")
            strength = float(term.strength)
            if not np.isfinite(strength):
                raise ModelError(f"coupling {index} strength must be finite")
            couplings.append(Coupling(s, b, strength))
        rho_bath = validate_density_matrix(self.rho_bath, "bath state")
        rho0 = validate_density_matrix(self.rho0_sys, "initial system state")
        if rho_bath.shape != (d_b, d_b) or rho0.shape != (d_s, d_s):
            raise StateValidationError("state dimensions do not match the layout")
        for name, value in (("h_sys", h_sys), ("h_bath", h_bath), ("rho_bath", rho_bath),
                            ("rho0_sys", rho0), ("couplings", tuple(couplings))):
            object.__setattr__(self, name, value)

    # -- derived operators -------------------------------------------------

    def coupling_operator(self) -> ComplexMatrix:
        """Bare interaction sum_i lambda_i S_i (x) B_i"""
        total = np.zeros((self.layout.D, self.layout.D), dtype=complex)
        for term in self.couplings:
            total += term.strength * kron(term.system_op, term.bath_op)
        return total

    def free_hamiltonian(self) -> ComplexMatrix:
        return (kron(self.h_sys, np.eye(self.layout.d_bath))
                + kron(np.eye(self.layout.d_sys), self.h_bath))

    def total_hamiltonian(self) -> ComplexMatrix:
        return self.free_hamiltonian() + self.coupling_operator()

    @cached_property
    def _free_spectrum(self):
        return scipy.linalg.eigh(self.free_hamiltonian())

    @cached_property
    def _system_spectrum(self):
        return scipy.linalg.eigh(self.h_sys)

    @cached_property
    def _bath_spectrum(self):
        return scipy.linalg.eigh(self.h_bath)

    def hamiltonian(self, t: float) -> ComplexMatrix:
        """Generator Hamiltonian at time t in the model's picture"""
        if self.picture == "lab":
            return self.total_hamiltonian()
        return interaction_picture_hint(self, t)

    def system_heisenberg(self, op: ComplexMatrix, times) -> np.ndarray:
        """e^{iH_S t} op e^{-iH_S t} for every t, stacked along axis 0"""
        return _heisenberg(self._system_spectrum, op, times)

    def bath_heisenberg(self, op: ComplexMatrix, times) -> np.ndarray:
        return _heisenberg(self._bath_spectrum, op, times)

    def system_to_interaction(self, rho_lab: ComplexMatrix, t: float) -> ComplexMatrix:
        """Reduced lab-frame state to the interaction picture"""
        return _heisenberg(self._system_spectrum, rho_lab, [t])[0]

    # -- variants ------------------------------------------------------------

    def with_strengths(self, factor: float) -> "ModelSpec":
        """Multiply every coupling strength by factor"""
        couplings = tuple(Coupling(c.system_op, c.bath_op, factor * c.strength) for c in self.couplings)
        return replace(self, couplings=couplings)

    def with_rho0(self, rho0: ComplexMatrix) -> "ModelSpec":
        return replace(self, rho0_sys=rho0)

    def with_picture(self, picture: str) -> "ModelSpec":
        return replace(self, picture=picture)

    def initial_joint_state(self) -> ComplexMatrix:
        return kron(self.rho0_sys, self.rho_bath)


def _heisenberg(spectrum, op: ComplexMatrix, times) -> np.ndarray:
    energies, vectors = spectrum
    times = np.atleast_1d(np.asarray(times, dtype=float))
    op_eig = dagger(vectors) @ np.asarray(op, dtype=complex) @ vectors
    phases = np.exp(1j * np.subtract.outer(energies, energies)[None, :, :] * times[:, None, None])
    rotated = vectors[None] @ (op_eig[None] * phases) @ dagger(vectors)[None]
    return rotated


def interaction_picture_hint(m: ModelSpec, t: float) -> ComplexMatrix:
    """H_int(t) = e^{i(H_S+H_B)t} V e^{-i(H_S+H_B)t}"""
    if m.picture != "interaction":
        raise ModelError(f"model '{m.name}' is in the {m.picture} picture")
    rotated = _heisenberg(m._free_spectrum, m.coupling_operator(), [t])[0]
    return hermitian_part(rotated)


def _check_builder_args(omega: float, g: float, n_trunc: Optional[int] = None):
    if not (np.isfinite(omega) and omega > 0):
        raise ModelError(f"omega must be positive, got {omega}")
    if not np.isfinite(g) or isinstance(g, complex):
        raise ModelError(f"coupling g must be a finite real number, got {g}")
    if n_trunc is not None and (not isinstance(n_trunc, (int, np.integer)) or n_trunc < 2):
        raise ModelError(f"n_trunc must be an integer >= 2, got {n_trunc!r}")


def _mode_model(name: str, system_op: ComplexMatrix, omega: float, g: float, n_trunc: int,
                beta: float, rho0: Optional[ComplexMatrix], picture: str,
                default_rho0: ComplexMatrix) -> ModelSpec:
    _check_builder_args(omega, g, n_trunc)
    a = annihilation(n_trunc)
    h_bath = omega * number_operator(n_trunc)
    return ModelSpec(
        name=name,
        layout=SpaceLayout(2, n_trunc),
        h_sys=0.5 * omega * SIGMA_Z,
        h_bath=h_bath,
        couplings=(Coupling(system_op, a + dagger(a), float(g)),),
        rho_bath=thermal_state(h_bath, beta),
        rho0_sys=default_rho0 if rho0 is None else rho0,
        picture=picture,
        bath_truncated=True,
        params={"omega": omega, "g": g, "n_trunc": n_trunc, "beta": beta},
    )


def qubit_boson(omega: float, g: float, n_trunc: int = 6, beta: float = np.inf,
                rho0: Optional[ComplexMatrix] = None, picture: str = "interaction") -> ModelSpec:
    """Qubit sigma_x coupled to one truncated mode (a + a^dag)"""
    return _mode_model("qubit_boson", SIGMA_X, omega, g, n_trunc, beta, rho0, picture,
                       bloch_state(0.0, 0.0, 1.0))


def dephasing(omega: float, g: float, n_trunc: int = 6, beta: float = np.inf,
              rho0: Optional[ComplexMatrix] = None, picture: str = "interaction") -> ModelSpec:
    """Qubit sigma_z coupled to one truncated mode; populations are conserved"""
    return _mode_model("dephasing", SIGMA_Z, omega, g, n_trunc, beta, rho0, picture,
                       bloch_state(1.0, 0.0, 0.0))


def two_qubit_exchange(omega: float, g: float, beta: float = np.inf,
                       rho0: Optional[ComplexMatrix] = None, picture: str = "interaction") -> ModelSpec:
    """Qubit coupled to a single bath qubit through sigma_x (x) sigma_x"""
    _check_builder_args(omega, g)
    h_bath = 0.5 * omega * SIGMA_Z
    return ModelSpec(
        name="two_qubit_exchange",
        layout=SpaceLayout(2, 2),
        h_sys=0.5 * omega * SIGMA_Z,
        h_bath=h_bath,
        couplings=(Coupling(SIGMA_X, SIGMA_X, float(g)),),
        rho_bath=thermal_state(h_bath, beta),
        rho0_sys=bloch_state(0.5, 0.3, 0.6) if rho0 is None else rho0,
        picture=picture,
        bath_truncated=False,
        params={"omega": omega, "g": g, "beta": beta},
    )


MODEL_BUILDERS: Dict[str, Callable[..., ModelSpec]] = {
    "qubit_boson": qubit_boson,
    "dephasing": dephasing,
    "two_qubit_exchange": two_qubit_exchange,
}


def build_model(name: str, params: Dict[str, Any]) -> ModelSpec:
    """Resolve a builder by name, as addressed from the CLI config"""
    try:
        builder = MODEL_BUILDERS[name]
    except KeyError:
        raise ModelError(f"unknown model '{name}', expected one of {sorted(MODEL_BUILDERS)}") from None
    try:
        return builder(**params)
    except TypeError as exc:
        raise ModelError(f"bad parameters for model '{name}': {exc}") from None


def excitation_number(model: ModelSpec) -> ComplexMatrix:
    """sigma_+ sigma_- + a^dag a on the qubit (x) mode space"""
    if not model.bath_truncated or model.layout.d_sys != 2:
        raise ModelError(f"excitation number is defined for qubit (x) mode models, not '{model.name}'")
    return (kron(SIGMA_PLUS @ SIGMA_MINUS, np.eye(model.layout.d_bath))
            + kron(IDENTITY_2, number_operator(model.layout.d_bath)))


def counter_rotating_part(model: ModelSpec) -> ComplexMatrix:
    """Terms lambda (sigma_+ a^dag + sigma_- a) of a sigma_x (x) (a + a^dag) coupling"""
    if model.name != "qubit_boson":
        raise ModelError(f"counter-rotating split is defined for qubit_boson, not '{model.name}'")
    a = annihilation(model.layout.d_bath)
    strength = model.couplings[0].strength
    return strength * (kron(SIGMA_PLUS, dagger(a)) + kron(SIGMA_MINUS, a))
