"""Quantum and classical Fisher information of the receiver qubit."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import Propagator
from .hilbert import (
    PAULI,
    DensityOperator,
    LocalOperatorSpec,
    PureState,
    apply_local,
    impulse_unitary,
    reduce_to_qubit,
    spectral_decompose,
)

EIGENVALUE_CUTOFF = 1e-12
DEGENERACY_GAP = 1e-10
SMALL_EIGENVALUE_FLOOR = 1e-20
FD_DELTA = 1e-5
CFI_DELTA = 1e-4
THETA_MIN = 1e-3


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """POVM on the receiver qubit."""

    effects: tuple

    def __post_init__(self):
        effects = tuple(np.asarray(e, dtype=complex) for e in self.effects)
        if not effects:
            raise ValueError("measurement needs at least one effect")
        for e in effects:
            if e.shape != (2, 2):
                raise ValueError(f"effects must be 2x2, got {e.shape}")
            if np.max(np.abs(e - e.conj().T)) > 1e-12:
                raise ValueError("effects must be Hermitian")
            if np.linalg.eigvalsh(e).min() < -1e-12:
                raise ValueError("effects must be positive")
        if np.max(np.abs(sum(effects) - np.eye(2))) > 1e-12:
            raise ValueError("effects must sum to the identity")
        object.__setattr__(self, "effects", effects)

    @classmethod
    def z_basis(cls) -> "MeasurementModel":
        return cls((np.diag([1.0, 0.0]), np.diag([0.0, 1.0])))

    @classmethod
    def projective(cls, axis: str) -> "MeasurementModel":
        s = PAULI[axis]
        return cls((0.5 * (np.eye(2) + s), 0.5 * (np.eye(2) - s)))


@dataclass
class FisherReport:
    theta: float
    qfi: float
    cfi: float
    variance_bound: Optional[float] = None
    commutator_bound: Optional[float] = None

    def slacks(self) -> dict:
        out = {"qfi_minus_cfi": self.qfi - self.cfi}
        if self.variance_bound is not None:
            out["variance_minus_qfi"] = self.variance_bound - self.qfi
        if self.commutator_bound is not None:
            out["commutator_minus_qfi"] = self.commutator_bound - self.qfi
        return out

    def check(self, tol: float = 1e-9) -> bool:
        return all(v >= -tol for v in self.slacks().values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slack"] = self.slacks()
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


# ---------------------------------------------------------------------------
# The impulse -> evolve -> reduce pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ImpulsePipeline:
    """Impulse on ``source``, evolution under ``prop``, readout of ``receiver``.

    Pure inputs stay vectors all the way to the receiver; mixed inputs are
    propagated as full density matrices.
    """

    prop: Propagator
    source: LocalOperatorSpec
    receiver: int
    initial: object = field(default=None)

    def __post_init__(self):
        n = self.prop.hamiltonian.n_qubits
        self.source.check(n)
        if not self.source.is_pauli:
            raise ValueError("source generator must be a Pauli axis")
        if not 0 <= self.receiver < n:
            raise IndexError(f"receiver {self.receiver} outside register of {n} qubits")
        init = self.initial
        if init is None:
            init = PureState.basis("0" * n)
        if not isinstance(init, (PureState, DensityOperator)) or init.n_qubits != n:
            raise ValueError("initial state must be a PureState or DensityOperator on the register")
        object.__setattr__(self, "initial", init)

    @property
    def n_qubits(self) -> int:
        return self.prop.hamiltonian.n_qubits

    @property
    def is_pure(self) -> bool:
        return isinstance(self.initial, PureState)

    def _kicked(self, theta):
        u = impulse_unitary(self.source.axis, theta)
        s = self.source.site
        if self.is_pure:
            return apply_local(u, s, self.initial.amplitudes)
        rho = apply_local(u, s, self.initial.matrix)
        return apply_local(u, s, rho.conj().T).conj().T

    def state(self, theta: float, t: float) -> np.ndarray:
        """Full state after impulse and evolution (vector for pure inputs)."""
        kicked = self._kicked(theta)
        if self.is_pure:
            return self.prop.apply(kicked, t)
        left = self.prop.apply(kicked, t)
        return self.prop.apply(left.conj().T, t).conj().T

    def full_density(self, theta: float, t: float) -> np.ndarray:
        s = self.state(theta, t)
        return np.outer(s, s.conj()) if s.ndim == 1 else s

    def receiver_state(self, theta: float, t: float) -> np.ndarray:
        rho = reduce_to_qubit(self.state(theta, t), self.receiver)
        return 0.5 * (rho + rho.conj().T)

    def full_rho_dot(self, theta: float, t: float) -> np.ndarray:
        init = self.initial if not self.is_pure else self.initial.to_density()
        return rho_dot_analytic(init, self.source, self.prop, t, theta)

    def receiver_rho_dot(self, theta: float, t: float) -> np.ndarray:
        if self.is_pure:
            sigma = self.source.matrix
            kicked = self._kicked(theta)
            psi = self.prop.apply(kicked, t)
            dpsi = self.prop.apply(-1j * apply_local(sigma, self.source.site, kicked), t)
            cross = reduce_to_qubit((dpsi, psi), self.receiver)
            return cross + cross.conj().T
        return reduce_to_qubit(self.full_rho_dot(theta, t), self.receiver)

    def qfi(self, theta: float, t: float) -> float:
        return qfi_qubit(self.receiver_state(theta, t), self.receiver_rho_dot(theta, t))

    def probabilities(self, theta: float, t: float, model: Optional[MeasurementModel] = None):
        model = model or MeasurementModel.z_basis()
        return probabilities(self.receiver_state(theta, t), model)

    def cfi(self, theta: float, t: float, model: Optional[MeasurementModel] = None,
            delta: float = CFI_DELTA) -> float:
        """Finite-difference classical Fisher information of ``model`` at ``theta``."""
        model = model or MeasurementModel.z_basis()
        return classical_fisher(lambda th: self.probabilities(th, t, model), theta, delta)

    def cfi_exact(self, theta: float, t: float, model: Optional[MeasurementModel] = None) -> float:
        """Classical Fisher information with the analytic derivative ``Tr[rho_dot E]``."""
        model = model or MeasurementModel.z_basis()
        p = probabilities(self.receiver_state(theta, t), model, check=False)
        dp = np.array([np.real(np.trace(self.receiver_rho_dot(theta, t) @ e)) for e in model.effects])
        return fisher_from_derivatives(p, dp)

    def report(self, theta: float, t: float, model: Optional[MeasurementModel] = None) -> FisherReport:
        if theta == 0.0:
            cfi = self.cfi_exact(THETA_MIN, t, model)
        else:
            cfi = self.cfi_exact(theta, t, model)
        return FisherReport(theta=theta, qfi=self.qfi(theta, t), cfi=cfi)


# ---------------------------------------------------------------------------
# Derivatives of the state
# ---------------------------------------------------------------------------


def rho_dot_analytic(initial, source: LocalOperatorSpec, prop: Propagator, t: float,
                     theta: float) -> np.ndarray:
    """``d/dtheta rho(theta; t) = U (-i)[H_sr, rho(theta)] U^dagger``, ``U = exp(-itH)``."""
    if isinstance(initial, PureState):
        initial = initial.to_density()
    rho = initial.matrix if isinstance(initial, DensityOperator) else np.asarray(initial, dtype=complex)
    if rho.shape != (prop.dim, prop.dim):
        raise ValueError(f"dimension mismatch: state {rho.shape}, Hamiltonian {prop.dim}")
    source.check(prop.hamiltonian.n_qubits)
    u = impulse_unitary(source.axis, theta)
    s = source.site
    kicked = apply_local(u, s, apply_local(u, s, rho).conj().T).conj().T
    h_rho = apply_local(source.matrix, s, kicked)
    comm = -1j * (h_rho - h_rho.conj().T)
    left = prop.apply(comm, t)
    return prop.apply(left.conj().T, t).conj().T


def rho_dot_findiff(pipeline: Callable[[float], np.ndarray], theta: float,
                    delta: float = FD_DELTA) -> np.ndarray:
    """Central difference ``(f(theta + delta) - f(theta - delta)) / (2 delta)``."""
    if not 1e-7 <= delta <= 1e-3:
        raise ValueError(f"delta must lie in [1e-7, 1e-3], got {delta}")
    return (np.asarray(pipeline(theta + delta)) - np.asarray(pipeline(theta - delta))) / (2 * delta)


# ---------------------------------------------------------------------------
# Fisher information
# ---------------------------------------------------------------------------


def qfi_general(rho, rho_dot, cutoff: float = EIGENVALUE_CUTOFF) -> float:
    """Quantum Fisher information from the spectrum of ``rho``.

    ``2 sum_{i,j} |<psi_i|rho_dot|psi_j>|^2 / (p_i + p_j)`` over every pair with
    ``p_i + p_j >= cutoff``. The ``i == j`` terms are the population part
    ``dp_i^2 / p_i``; :func:`qfi_coherent` returns the ``i != j`` part alone.
    The full sum does not depend on how a degenerate eigenspace is resolved.
    """
    elems, denom = _spectral_terms(rho, rho_dot)
    mask = denom >= cutoff
    return float(2.0 * np.sum(elems[mask] / denom[mask]))


def qfi_coherent(rho, rho_dot, cutoff: float = EIGENVALUE_CUTOFF) -> float:
    """Off-diagonal part ``2 sum_{i != j} |<psi_j|rho_dot|psi_i>|^2 / (p_i + p_j)``.

    For a qubit this is ``4 |<psi_1|rho_dot|psi_2>|^2``, the quantity the
    commutator chain bounds term by term. It is basis dependent when ``rho``
    is degenerate and can fall below the classical Fisher information of a
    measurement, so it is not itself a Fisher information.
    """
    elems, denom = _spectral_terms(rho, rho_dot)
    mask = (denom >= cutoff) & ~np.eye(len(denom), dtype=bool)
    return float(2.0 * np.sum(elems[mask] / denom[mask]))


def _spectral_terms(rho, rho_dot):
    rho = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho, dtype=complex)
    rho_dot = np.asarray(rho_dot, dtype=complex)
    if rho.shape != rho_dot.shape or rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"shape mismatch: rho {rho.shape}, rho_dot {rho_dot.shape}")
    if not np.all(np.isfinite(rho_dot)):
        raise ValueError("rho_dot has non-finite entries")
    dec = spectral_decompose(rho)
    p = dec.clamped()
    v = dec.eigenvectors
    elems = np.abs(v.conj().T @ rho_dot @ v) ** 2
    return elems, p[:, None] + p[None, :]


def qfi_qubit(rho_rc, rho_dot_rc) -> float:
    """Quantum Fisher information of a qubit in the eigenbasis of ``rho_rc``.

    ``4 |<psi_1|rho_dot|psi_2>|^2 + dp_1^2 / p_1 + dp_2^2 / p_2``. The small
    eigenvalue is taken as ``det(rho) / p_1``, which stays accurate when it is
    far below machine epsilon relative to ``p_1`` (nearly pure receivers); its
    population term is dropped once ``p_2 < 1e-20``. Eigenvalues closer than
    1e-10 leave the basis undefined, and the basis-free :func:`qfi_general`
    is used.
    """
    rho, rho_dot = _qubit_pair(rho_rc, rho_dot_rc)
    dec = spectral_decompose(rho)
    if dec.eigenvalues[0] - dec.eigenvalues[1] <= DEGENERACY_GAP:
        return qfi_general(rho, rho_dot)
    v = dec.eigenvectors
    p1 = dec.eigenvalues[0]
    det = np.real(rho[0, 0] * rho[1, 1]) - abs(rho[0, 1]) ** 2
    p2 = max(det, 0.0) / p1
    m = v.conj().T @ rho_dot @ v
    total = 4.0 * abs(m[0, 1]) ** 2 + np.real(m[0, 0]) ** 2 / p1
    if p2 >= SMALL_EIGENVALUE_FLOOR:
        total += np.real(m[1, 1]) ** 2 / p2
    return float(total)


def eq6_term(rho_rc, rho_dot_rc) -> float:
    """``4 |<psi_1|rho_dot|psi_2>|^2`` with ``psi_1`` the dominant eigenvector."""
    rho, rho_dot = _qubit_pair(rho_rc, rho_dot_rc)
    v = spectral_decompose(rho).eigenvectors
    return float(4.0 * abs(v[:, 0].conj() @ rho_dot @ v[:, 1]) ** 2)


def _qubit_pair(rho_rc, rho_dot_rc):
    rho = rho_rc.matrix if isinstance(rho_rc, DensityOperator) else np.asarray(rho_rc, dtype=complex)
    rho_dot = np.asarray(rho_dot_rc, dtype=complex)
    if rho.shape != (2, 2) or rho_dot.shape != (2, 2):
        raise ValueError("expected 2x2 inputs")
    return rho, rho_dot


def variance_bound(state, generator) -> float:
    """``4 (<h^2> - <h>^2)`` for a pure state."""
    psi = state.amplitudes if isinstance(state, PureState) else np.asarray(state, dtype=complex)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-12:
        raise ValueError("variance bound needs a normalized pure state")
    h = np.asarray(generator, dtype=complex)
    hpsi = h @ psi
    mean = np.vdot(psi, hpsi)
    second = np.vdot(hpsi, hpsi)
    return float(max(4.0 * np.real(second - abs(mean) ** 2), 0.0))


def probabilities(rho_rc, model: MeasurementModel, check: bool = True) -> np.ndarray:
    rho = rho_rc.matrix if isinstance(rho_rc, DensityOperator) else np.asarray(rho_rc, dtype=complex)
    p = np.array([np.real(np.trace(rho @ e)) for e in model.effects])
    p[(p < 0) & (p > -1e-10)] = 0.0
    if check and (abs(p.sum() - 1.0) > 1e-12 or np.any(p < 0)):
        raise ValueError(f"invalid outcome distribution {p}")
    return p


def fisher_from_derivatives(p: Sequence[float], dp: Sequence[float]) -> float:
    """``sum_x dp_x^2 / p_x``; outcomes with ``p_x = dp_x = 0`` contribute nothing."""
    total = 0.0
    for px, dpx in zip(p, dp):
        if px > 0:
            total += dpx * dpx / px
        elif abs(dpx) > 1e-12:
            raise ValueError("outcome with vanishing probability but nonzero derivative")
    return float(total)


def classical_fisher(p_of_theta: Callable[[float], Sequence[float]], theta: float,
                     delta: float = CFI_DELTA) -> float:
    """Fisher information of an outcome distribution by central differences."""
    p = np.asarray(p_of_theta(theta), dtype=float)
    dp = (np.asarray(p_of_theta(theta + delta)) - np.asarray(p_of_theta(theta - delta))) / (2 * delta)
    # central differences of an exactly-zero probability give roundoff, not signal
    dp[(p == 0) & (np.abs(dp) < 1e-9)] = 0.0
    return fisher_from_derivatives(p, dp)


def xy_generator(n: int, t: float, amplitude: Optional[complex] = None) -> np.ndarray:
    """Receiver generator ``J_n(2t) sigma_x`` of the small-theta XY receiver state."""
    from .xy_analytic import bessel_j

    if amplitude is None:
        amplitude = bessel_j(n, 2.0 * t)
    return abs(amplitude) * PAULI["x"]


__all__ = [
    "MeasurementModel",
    "FisherReport",
    "ImpulsePipeline",
    "rho_dot_analytic",
    "rho_dot_findiff",
    "qfi_general",
    "qfi_coherent",
    "qfi_qubit",
    "eq6_term",
    "variance_bound",
    "probabilities",
    "classical_fisher",
    "fisher_from_derivatives",
    "xy_generator",
    "THETA_MIN",
]
