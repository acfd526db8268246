"""State and operator algebra for N-qubit registers.

Basis convention: computational basis states are indexed by integers whose
binary expansion lists the qubits with **qubit 0 as the most significant bit**.
For N=2 the basis order is |00>, |01>, |10>, |11>, and ``|01>`` means qubit 0
is in |0> and qubit 1 is in |1>. Every module in the package relies on this
convention (embedding, partial trace, single-excitation indexing).

Single-qubit states: ``|0>`` and ``|1>`` are the sigma_z eigenstates with
eigenvalues +1 and -1. The lowering operator is ``sigma_minus = |0><1|``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
POSITIVITY_TOL = 1e-10
NORM_TOL = 1e-12

#: dimension up to which ``operator_norm`` uses a dense eigensolve
DENSE_NORM_LIMIT = 4096

PAULI = {
    "i": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
    "plus": np.array([[0, 0], [1, 0]], dtype=complex),
    "minus": np.array([[0, 1], [0, 0]], dtype=complex),
}
PAULI_AXES = ("x", "y", "z")
AXES = ("x", "y", "z", "plus", "minus")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocalOperatorSpec:
    """A single-site operator: Pauli ``x``/``y``/``z`` or ladder ``plus``/``minus``."""

    site: int
    axis: str

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown axis {self.axis!r}; expected one of {AXES}")
        if self.site < 0:
            raise ValueError(f"site must be non-negative, got {self.site}")

    @property
    def matrix(self) -> np.ndarray:
        return PAULI[self.axis]

    @property
    def is_pauli(self) -> bool:
        return self.axis in PAULI_AXES

    def check(self, n_qubits: int) -> None:
        if not 0 <= self.site < n_qubits:
            raise IndexError(f"site {self.site} outside register of {n_qubits} qubits")


@dataclass(frozen=True, eq=False)
class PureState:
    """Normalized amplitude vector of an N-qubit register."""

    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape[0] != 2**self.n_qubits:
            raise ValueError(
                f"expected {2**self.n_qubits} amplitudes for {self.n_qubits} qubits, "
                f"got {amps.shape[0]}"
            )
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalized (norm={norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_vector(cls, vec, normalize: bool = False) -> "PureState":
        vec = np.asarray(vec, dtype=complex).reshape(-1)
        if normalize:
            vec = vec / np.linalg.norm(vec)
        return cls(_n_qubits_for(vec.shape[0]), vec)

    @classmethod
    def basis(cls, bits) -> "PureState":
        """Computational basis state from a bit string or sequence, e.g. ``"010"``."""
        bits = [int(b) for b in bits]
        n = len(bits)
        idx = 0
        for b in bits:
            if b not in (0, 1):
                raise ValueError("bits must be 0 or 1")
            idx = (idx << 1) | b
        vec = np.zeros(2**n, dtype=complex)
        vec[idx] = 1.0
        return cls(n, vec)

    @classmethod
    def product(cls, single_qubit_states) -> "PureState":
        vec = np.ones(1, dtype=complex)
        for s in single_qubit_states:
            s = np.asarray(s, dtype=complex)
            vec = np.kron(vec, s / np.linalg.norm(s))
        return cls.from_vector(vec)

    def to_density(self) -> "DensityOperator":
        return DensityOperator(np.outer(self.amplitudes, self.amplitudes.conj()))

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """Hermitian, positive, unit-trace matrix over a register of qubits."""

    matrix: np.ndarray

    def __post_init__(self):
        rho = np.array(self.matrix, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValueError(f"density matrix must be square, got shape {rho.shape}")
        _n_qubits_for(rho.shape[0])
        herm = np.max(np.abs(rho - rho.conj().T)) if rho.size else 0.0
        if herm > HERMITIAN_TOL:
            raise ValueError(f"density matrix is not Hermitian (max deviation {herm:.3e})")
        tr = np.trace(rho)
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValueError(f"density matrix trace is {tr!r}, expected 1")
        lo = np.linalg.eigvalsh(rho).min()
        if lo < -POSITIVITY_TOL:
            raise ValueError(f"density matrix has negative eigenvalue {lo:.3e}")
        rho.setflags(write=False)
        object.__setattr__(self, "matrix", rho)

    @classmethod
    def mixture(cls, weights, states) -> "DensityOperator":
        """Convex combination ``sum_k w_k |psi_k><psi_k|`` of pure states."""
        weights = np.asarray(weights, dtype=float)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > TRACE_TOL:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        rho = 0
        for w, s in zip(weights, states):
            v = s.amplitudes if isinstance(s, PureState) else np.asarray(s, dtype=complex)
            rho = rho + w * np.outer(v, v.conj())
        return cls(rho)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_qubits(self) -> int:
        return _n_qubits_for(self.dim)

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues in descending order and matching orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T

    def clamped(self) -> np.ndarray:
        """Eigenvalues with roundoff negatives in (-POSITIVITY_TOL, 0) set to zero."""
        lam = self.eigenvalues.copy()
        lam[(lam < 0) & (lam > -POSITIVITY_TOL)] = 0.0
        return lam


State = Union[PureState, DensityOperator]


def _n_qubits_for(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 1 or 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of 2")
    return n


def n_qubits_of(obj) -> int:
    if isinstance(obj, PureState):
        return obj.n_qubits
    if isinstance(obj, DensityOperator):
        return obj.n_qubits
    return _n_qubits_for(np.shape(obj)[0])


# ---------------------------------------------------------------------------
# Local operators
# ---------------------------------------------------------------------------


def embed_local(spec: LocalOperatorSpec, n_qubits: int, sparse: bool = False):
    """Return ``1 ⊗ ... ⊗ op ⊗ ... ⊗ 1`` with ``op`` on ``spec.site``.

    Parameters
    ----------
    spec : LocalOperatorSpec
        Site and axis of the single-qubit operator.
    n_qubits : int
        Register size.
    sparse : bool
        Return a ``scipy.sparse.csr_matrix`` instead of a dense array.
    """
    spec.check(n_qubits)
    return embed_matrix(spec.matrix, spec.site, n_qubits, sparse=sparse)


def embed_matrix(op2: np.ndarray, site: int, n_qubits: int, sparse: bool = False):
    if not 0 <= site < n_qubits:
        raise IndexError(f"site {site} outside register of {n_qubits} qubits")
    left = 2**site
    right = 2 ** (n_qubits - site - 1)
    if sparse:
        return sp.kron(sp.kron(sp.identity(left, format="csr"), sp.csr_matrix(op2)),
                       sp.identity(right, format="csr"), format="csr")
    return np.kron(np.kron(np.eye(left), op2), np.eye(right))


def apply_local(op2: np.ndarray, site: int, array: np.ndarray) -> np.ndarray:
    """Apply a 2x2 operator on ``site`` to a vector or to the rows of a matrix.

    Matrix-free: no 2^N x 2^N operator is formed. For a matrix ``M`` this
    returns ``(1 ⊗ op ⊗ 1) @ M``.
    """
    array = np.asarray(array)
    dim = array.shape[0]
    n = _n_qubits_for(dim)
    if not 0 <= site < n:
        raise IndexError(f"site {site} outside register of {n} qubits")
    tail = array.shape[1:]
    t = array.reshape((2**site, 2, 2 ** (n - site - 1)) + tail)
    out = np.einsum("ij,ajb...->aib...", op2, t)
    return out.reshape(array.shape)


def local_applier(spec: LocalOperatorSpec, n_qubits: int) -> Callable[[np.ndarray], np.ndarray]:
    """Matrix-free applier ``v -> (1 ⊗ op ⊗ 1) v`` for use with sparse/Krylov code."""
    spec.check(n_qubits)
    op2 = spec.matrix
    return lambda v: apply_local(op2, spec.site, v)


# ---------------------------------------------------------------------------
# Impulse, partial trace, spectra
# ---------------------------------------------------------------------------


def impulse_unitary(axis: str, theta: float) -> np.ndarray:
    """``exp(-i theta sigma) = cos(theta) 1 - i sin(theta) sigma`` for a Pauli axis."""
    if axis not in PAULI_AXES:
        raise ValueError(f"impulse generator must be a Pauli axis, got {axis!r}")
    return np.cos(theta) * PAULI["i"] - 1j * np.sin(theta) * PAULI[axis]


def apply_impulse(state, generator: LocalOperatorSpec, theta: float):
    """Rotate the source qubit by ``exp(-i theta sigma_axis)``.

    Accepts a ``PureState``, a ``DensityOperator`` or a raw vector/matrix and
    returns the same kind.
    """
    u = impulse_unitary(generator.axis, theta)
    n = n_qubits_of(state)
    generator.check(n)
    if isinstance(state, PureState):
        return PureState(n, apply_local(u, generator.site, state.amplitudes))
    if isinstance(state, DensityOperator):
        return DensityOperator(_conjugate_local(u, generator.site, state.matrix))
    arr = np.asarray(state, dtype=complex)
    if arr.ndim == 1:
        return apply_local(u, generator.site, arr)
    return _conjugate_local(u, generator.site, arr)


def _conjugate_local(u: np.ndarray, site: int, rho: np.ndarray) -> np.ndarray:
    left = apply_local(u, site, rho)
    return apply_local(u, site, left.conj().T).conj().T


def reduce_to_qubit(array: np.ndarray, site: int) -> np.ndarray:
    """Partial trace of a vector (as |v><v|) or any square matrix onto one qubit.

    No validation is done on the input, so this also reduces derivatives
    and cross terms such as ``|a><b|`` (pass a ``(vec_a, vec_b)`` tuple).
    """
    if isinstance(array, tuple):
        a, b = (np.asarray(x) for x in array)
        n = _n_qubits_for(a.shape[0])
        ta = a.reshape(2**site, 2, 2 ** (n - site - 1))
        tb = b.reshape(2**site, 2, 2 ** (n - site - 1))
        return np.einsum("aib,ajb->ij", ta, tb.conj())
    array = np.asarray(array)
    n = _n_qubits_for(array.shape[0])
    if not 0 <= site < n:
        raise IndexError(f"site {site} outside register of {n} qubits")
    left, right = 2**site, 2 ** (n - site - 1)
    if array.ndim == 1:
        t = array.reshape(left, 2, right)
        return np.einsum("aib,ajb->ij", t, t.conj())
    t = array.reshape(left, 2, right, left, 2, right)
    return np.einsum("aibajb->ij", t)


def partial_trace_to_qubit(state, receiver_site: int) -> DensityOperator:
    """Reduced 2x2 density operator of ``receiver_site``."""
    n = n_qubits_of(state)
    if not 0 <= receiver_site < n:
        raise IndexError(f"receiver site {receiver_site} outside register of {n} qubits")
    if isinstance(state, PureState):
        arr = state.amplitudes
    elif isinstance(state, DensityOperator):
        arr = state.matrix
    else:
        arr = np.asarray(state, dtype=complex)
    rho = reduce_to_qubit(arr, receiver_site)
    return DensityOperator(0.5 * (rho + rho.conj().T))


def spectral_decompose(op, tol: float = 1e-10) -> SpectralDecomposition:
    """Eigen-decomposition of a Hermitian matrix, eigenvalues descending."""
    if isinstance(op, DensityOperator):
        op = op.matrix
    op = np.asarray(op, dtype=complex)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {op.shape}")
    dev = np.max(np.abs(op - op.conj().T))
    if dev > tol:
        raise ValueError(f"matrix is not Hermitian (max deviation {dev:.3e})")
    w, v = np.linalg.eigh(0.5 * (op + op.conj().T))
    return SpectralDecomposition(w[::-1].copy(), v[:, ::-1].copy())


# ---------------------------------------------------------------------------
# Commutators and norms
# ---------------------------------------------------------------------------


def commutator(a, b):
    """``ab - ba``; works for dense arrays and scipy sparse matrices."""
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise ValueError(f"commutator needs equal square shapes, got {a.shape} and {b.shape}")
    return a @ b - b @ a


def operator_norm(op, rtol: float = 1e-10, maxiter: int = 20000, seed: int = 0) -> float:
    """Largest singular value.

    Dense input up to ``DENSE_NORM_LIMIT`` uses a Hermitian eigensolve of
    ``C^dagger C``; anything larger (or a ``scipy.sparse.linalg.LinearOperator``)
    goes through power iteration capped at ``maxiter`` steps.
    """
    if sp.issparse(op) or isinstance(op, spla.LinearOperator):
        lin = spla.aslinearoperator(op)
        return power_norm(lin.matvec, lin.rmatvec, lin.shape[1], rtol=rtol,
                          maxiter=maxiter, seed=seed)
    op = np.asarray(op)
    if op.size == 0:
        return 0.0
    if not np.all(np.isfinite(op)):
        raise ValueError("operator has non-finite entries")
    if op.shape[0] <= DENSE_NORM_LIMIT and op.shape[1] <= DENSE_NORM_LIMIT:
        gram = op.conj().T @ op
        lam = np.linalg.eigvalsh(0.5 * (gram + gram.conj().T))[-1]
        return float(np.sqrt(max(lam, 0.0)))
    return power_norm(lambda v: op @ v, lambda v: op.conj().T @ v, op.shape[1],
                      rtol=rtol, maxiter=maxiter, seed=seed)


def lanczos_norm(matvec, rmatvec, dim: int, rtol: float = 1e-10, maxiter: int = 5000,
                 seed: int = 0) -> float:
    """Largest singular value from ARPACK's Lanczos on ``C^dagger C``.

    Converges where power iteration stalls on a nearly degenerate top of the
    spectrum.
    """
    if dim <= 2:
        dense = np.column_stack([matvec(e) for e in np.eye(dim, dtype=complex)])
        return operator_norm(dense)
    rng = np.random.default_rng(seed)
    v0 = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    gram = spla.LinearOperator((dim, dim), matvec=lambda v: rmatvec(matvec(v)), dtype=complex)
    lam = spla.eigsh(gram, k=1, which="LA", v0=v0, tol=rtol, maxiter=maxiter,
                     return_eigenvectors=False)[0]
    return float(np.sqrt(max(float(lam), 0.0)))


class PowerIterationError(RuntimeError):
    pass


def power_norm(matvec, rmatvec, dim: int, rtol: float = 1e-10, maxiter: int = 20000,
               seed: int = 0) -> float:
    """Power iteration on ``C^dagger C`` given matrix-free products.

    Stops when the Rayleigh quotient changes by less than ``rtol`` (relative)
    between iterations. Raises ``PowerIterationError`` at the iteration cap.
    """
    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    v /= np.linalg.norm(v)
    prev = None
    for _ in range(maxiter):
        w = rmatvec(matvec(v))
        lam = float(np.real(np.vdot(v, w)))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if prev is not None and abs(lam - prev) <= rtol * abs(lam):
            return float(np.sqrt(max(lam, 0.0)))
        prev = lam
    raise PowerIterationError(f"power iteration did not converge in {maxiter} steps")
