"""Nearest-neighbour Pauli Hamiltonians and unitary time evolution.

Time is measured in units where the single-excitation hopping amplitude of
the XY chain equals 1. With the default ``coupling=0.5`` the chain Hamiltonian
``coupling * sum_i (X_i X_{i+1} + Y_i Y_{i+1})`` moves one excitation to a
neighbouring site with matrix element ``2 * coupling = 1``, so the
infinite-chain amplitude at distance n is ``(-i)^n J_n(2t)`` and the light-cone
front travels at two sites per unit time.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm

from .hilbert import (
    PAULI,
    DensityOperator,
    PureState,
    apply_local,
    embed_matrix,
    n_qubits_of,
)

OPEN = "open"
PERIODIC = "periodic"

#: default XY prefactor; gives unit hopping in the one-excitation sector
XY_COUPLING = 0.5

Coupling = Tuple[int, int, str, str, float]
Field = Tuple[int, str, float]


class KrylovConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class HamiltonianTerms:
    """Sum of two-site Pauli couplings and one-site Pauli fields.

    ``couplings`` holds ``(i, j, a, b, J)`` meaning ``J * sigma^a_i sigma^b_j``;
    ``fields`` holds ``(i, a, h)`` meaning ``h * sigma^a_i``.
    """

    n_qubits: int
    couplings: Tuple[Coupling, ...] = ()
    fields: Tuple[Field, ...] = ()
    boundary: str = OPEN

    def __post_init__(self):
        object.__setattr__(self, "couplings", tuple(tuple(c) for c in self.couplings))
        object.__setattr__(self, "fields", tuple(tuple(f) for f in self.fields))
        if self.boundary not in (OPEN, PERIODIC):
            raise ValueError(f"boundary must be 'open' or 'periodic', got {self.boundary!r}")
        for i, j, a, b, _ in self.couplings:
            if not (0 <= i < self.n_qubits and 0 <= j < self.n_qubits):
                raise IndexError(f"coupling ({i}, {j}) outside register of {self.n_qubits}")
            if i == j:
                raise ValueError(f"coupling must join two distinct sites, got ({i}, {j})")
            if a not in "xyz" or b not in "xyz":
                raise ValueError(f"coupling axes must be Pauli, got {a!r}, {b!r}")
        for i, a, _ in self.fields:
            if not 0 <= i < self.n_qubits:
                raise IndexError(f"field site {i} outside register of {self.n_qubits}")
            if a not in "xyz":
                raise ValueError(f"field axis must be Pauli, got {a!r}")

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def to_sparse(self) -> sp.csr_matrix:
        n = self.n_qubits
        h = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for i, j, a, b, strength in self.couplings:
            h = h + strength * (embed_matrix(PAULI[a], i, n, sparse=True)
                                @ embed_matrix(PAULI[b], j, n, sparse=True))
        for i, a, strength in self.fields:
            h = h + strength * embed_matrix(PAULI[a], i, n, sparse=True)
        return h.tocsr()

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """Matrix-free ``H @ v`` (v may also be a matrix, acted on from the left)."""
        out = np.zeros_like(v, dtype=complex)
        for i, j, a, b, strength in self.couplings:
            out += strength * apply_local(PAULI[a], i, apply_local(PAULI[b], j, v))
        for i, a, strength in self.fields:
            out += strength * apply_local(PAULI[a], i, v)
        return out


def build_xy_hamiltonian(n_qubits: int, boundary: str = OPEN,
                         coupling: float = XY_COUPLING) -> HamiltonianTerms:
    """XY chain ``coupling * sum_i (X_i X_{i+1} + Y_i Y_{i+1})``.

    ``coupling=1`` gives the bare Pauli sum with flip-flop element 2;
    the default 0.5 gives unit hopping (see module docstring).
    """
    if n_qubits < 2:
        raise ValueError(f"XY chain needs at least 2 qubits, got {n_qubits}")
    if boundary not in (OPEN, PERIODIC):
        raise ValueError(f"boundary must be 'open' or 'periodic', got {boundary!r}")
    bonds = [(i, i + 1) for i in range(n_qubits - 1)]
    if boundary == PERIODIC and n_qubits > 2:
        bonds.append((n_qubits - 1, 0))
    couplings = []
    for i, j in bonds:
        couplings.append((i, j, "x", "x", coupling))
        couplings.append((i, j, "y", "y", coupling))
    return HamiltonianTerms(n_qubits, tuple(couplings), (), boundary)


def hopping_matrix(n_sites: int, boundary: str = OPEN, hopping: float = 2 * XY_COUPLING) -> np.ndarray:
    """Tridiagonal single-excitation block of the XY chain."""
    h = np.zeros((n_sites, n_sites))
    idx = np.arange(n_sites - 1)
    h[idx, idx + 1] = h[idx + 1, idx] = hopping
    if boundary == PERIODIC and n_sites > 2:
        h[0, -1] = h[-1, 0] = hopping
    return h


# ---------------------------------------------------------------------------
# Propagators
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Propagator:
    """Time-evolution engine for a fixed Hamiltonian.

    ``method="dense"`` diagonalizes H once (cached per Hamiltonian) and is
    exact to roundoff. ``method="krylov"`` uses a Lanczos propagator with
    adaptive substeps and never forms H densely.
    """

    hamiltonian: HamiltonianTerms
    method: str = "dense"
    krylov_tol: float = 1e-10
    krylov_dim: int = 30
    _spectrum: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.method not in ("dense", "krylov"):
            raise ValueError(f"method must be 'dense' or 'krylov', got {self.method!r}")
        if self.method == "dense" and self._spectrum is None:
            object.__setattr__(self, "_spectrum", _dense_spectrum(self.hamiltonian))

    @classmethod
    def dense(cls, hamiltonian: HamiltonianTerms) -> "Propagator":
        return cls(hamiltonian, "dense")

    @classmethod
    def krylov(cls, hamiltonian: HamiltonianTerms, tol: float = 1e-10, dim: int = 30) -> "Propagator":
        return cls(hamiltonian, "krylov", krylov_tol=tol, krylov_dim=dim)

    @property
    def dim(self) -> int:
        return self.hamiltonian.dim

    @property
    def spectrum(self) -> Tuple[np.ndarray, np.ndarray]:
        if self._spectrum is None:
            raise AttributeError("spectral data is only available on the dense path")
        return self._spectrum

    def apply(self, array: np.ndarray, t: float) -> np.ndarray:
        """``exp(-i t H) @ array`` for a vector or a matrix (column-wise)."""
        array = np.asarray(array, dtype=complex)
        if array.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: operand {array.shape[0]}, Hamiltonian {self.dim}")
        if t == 0:
            return array.copy()
        if self.method == "dense":
            w, v = self.spectrum
            phase = np.exp(-1j * t * w)
            coeffs = v.conj().T @ array
            if array.ndim == 1:
                return v @ (phase * coeffs)
            return v @ (phase[:, None] * coeffs)
        if array.ndim == 1:
            return krylov_expm_apply(self.hamiltonian.matvec, array, t,
                                     tol=self.krylov_tol, m=self.krylov_dim)
        return np.column_stack([
            krylov_expm_apply(self.hamiltonian.matvec, col, t, tol=self.krylov_tol, m=self.krylov_dim)
            for col in array.T
        ])

    def unitary(self, t: float) -> np.ndarray:
        if self.method == "dense":
            w, v = self.spectrum
            return (v * np.exp(-1j * t * w)) @ v.conj().T
        return self.apply(np.eye(self.dim, dtype=complex), t)


@functools.lru_cache(maxsize=32)
def _dense_spectrum(hamiltonian: HamiltonianTerms):
    h = hamiltonian.to_dense()
    w, v = np.linalg.eigh(h)
    w.setflags(write=False)
    v.setflags(write=False)
    return w, v


def krylov_expm_apply(matvec: Callable[[np.ndarray], np.ndarray], v: np.ndarray, t: float,
                      tol: float = 1e-10, m: int = 30, max_substeps: int = 100000) -> np.ndarray:
    """``exp(-i t H) v`` by short-iterate Lanczos with adaptive substeps.

    Each substep builds an ``m``-dimensional Krylov space and accepts the step
    when the standard a-posteriori estimate ``beta_m |[exp(-i dt T)]_{m,0}|``
    is below ``tol`` times the step fraction; otherwise the step is halved.
    """
    v = np.asarray(v, dtype=complex)
    nrm = np.linalg.norm(v)
    if nrm == 0 or t == 0:
        return v.copy()
    w = v / nrm
    remaining = float(t)
    sign = 1.0 if t > 0 else -1.0
    remaining = abs(remaining)
    dt = remaining
    steps = 0
    err = np.inf
    while remaining > 0:
        alpha, beta, basis, breakdown = _lanczos(matvec, w, m)
        k = len(alpha)
        tmat = np.diag(alpha) + np.diag(beta[: k - 1], 1) + np.diag(beta[: k - 1], -1)
        dt = min(dt, remaining)
        while True:
            steps += 1
            if steps > max_substeps:
                raise KrylovConvergenceError("Krylov propagator exceeded substep budget", err)
            small = expm(-1j * sign * dt * tmat)[:, 0]
            err = 0.0 if breakdown else abs(beta[k - 1] * small[k - 1])
            if err <= tol * max(dt / abs(t), 1e-3) or breakdown:
                break
            dt *= 0.5
        w = basis @ small
        w /= np.linalg.norm(w)
        remaining -= dt
        if err < 0.1 * tol * dt / abs(t):
            dt *= 1.5
    return nrm * w


def _lanczos(matvec, v0: np.ndarray, m: int):
    n = v0.shape[0]
    m = min(m, n)
    basis = np.zeros((n, m), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    basis[:, 0] = v0
    for j in range(m):
        w = matvec(basis[:, j])
        alpha[j] = np.real(np.vdot(basis[:, j], w))
        w = w - alpha[j] * basis[:, j]
        if j > 0:
            w = w - beta[j - 1] * basis[:, j - 1]
        # full reorthogonalization keeps the short recurrence honest
        w = w - basis[:, : j + 1] @ (basis[:, : j + 1].conj().T @ w)
        beta[j] = np.linalg.norm(w)
        if j + 1 == m:
            break
        if beta[j] < 1e-14:
            return alpha[: j + 1], beta[: j + 1], basis[:, : j + 1], True
        basis[:, j + 1] = w / beta[j]
    return alpha, beta, basis, m == n


# ---------------------------------------------------------------------------
# Evolution
# ---------------------------------------------------------------------------


def evolve(state, prop: Propagator, t: float):
    """Schroedinger evolution ``exp(-i t H)`` of a pure state or density operator."""
    if n_qubits_of(state) != prop.hamiltonian.n_qubits:
        raise ValueError(
            f"dimension mismatch: state has {n_qubits_of(state)} qubits, "
            f"Hamiltonian {prop.hamiltonian.n_qubits}"
        )
    if isinstance(state, PureState):
        out = prop.apply(state.amplitudes, t)
        return PureState(state.n_qubits, out / np.linalg.norm(out))
    if isinstance(state, DensityOperator):
        rho = _evolve_matrix(state.matrix, prop, t)
        return DensityOperator(0.5 * (rho + rho.conj().T))
    arr = np.asarray(state, dtype=complex)
    if arr.ndim == 1:
        return prop.apply(arr, t)
    return _evolve_matrix(arr, prop, t)


def _evolve_matrix(m: np.ndarray, prop: Propagator, t: float) -> np.ndarray:
    left = prop.apply(m, t)
    return prop.apply(left.conj().T, t).conj().T


def heisenberg_operator(op, prop: Propagator, t: float) -> np.ndarray:
    """``exp(i t H) op exp(-i t H)``."""
    op = np.asarray(op.toarray() if sp.issparse(op) else op, dtype=complex)
    if op.shape != (prop.dim, prop.dim):
        raise ValueError(f"dimension mismatch: operator {op.shape}, Hamiltonian {prop.dim}")
    if t == 0:
        return op.copy()
    if prop.method == "dense":
        w, v = prop.spectrum
        op_eig = v.conj().T @ op @ v
        phase = np.exp(1j * t * w)
        return v @ (phase[:, None] * op_eig * phase.conj()[None, :]) @ v.conj().T
    # exp(itH) op exp(-itH) = [exp(-itH) (exp(-itH) op)^dagger]^dagger
    return _evolve_matrix(op, prop, -t)


def heisenberg_applier(op2: np.ndarray, site: int, prop: Propagator, t: float):
    """Matrix-free ``v -> exp(itH) op exp(-itH) v`` for a single-site ``op2``."""

    def matvec(v):
        return prop.apply(apply_local(op2, site, prop.apply(v, t)), -t)

    return matvec


def total_magnetization(state) -> float:
    """Expectation of ``sum_i sigma^z_i``."""
    n = n_qubits_of(state)
    diag = np.zeros(2**n)
    idx = np.arange(2**n)
    for i in range(n):
        diag += 1 - 2 * ((idx >> (n - 1 - i)) & 1)
    if isinstance(state, PureState):
        return float(np.sum(diag * np.abs(state.amplitudes) ** 2))
    m = state.matrix if isinstance(state, DensityOperator) else np.asarray(state)
    return float(np.real(np.sum(diag * np.diag(m))))


def single_excitation_index(site: int, n_qubits: int) -> int:
    """Basis index of the state with one |1> on ``site`` and |0> elsewhere."""
    if not 0 <= site < n_qubits:
        raise IndexError(f"site {site} outside register of {n_qubits} qubits")
    return 1 << (n_qubits - 1 - site)


__all__ = [
    "HamiltonianTerms",
    "Propagator",
    "KrylovConvergenceError",
    "build_xy_hamiltonian",
    "hopping_matrix",
    "evolve",
    "heisenberg_operator",
    "heisenberg_applier",
    "krylov_expm_apply",
    "total_magnetization",
    "single_excitation_index",
    "XY_COUPLING",
]
