"""Closed-form single-excitation dynamics of the XY chain.

An impulse ``exp(-i theta X)`` on the source of ``|0...0>`` creates
``cos(theta)|0...0> - i sin(theta)|1_source>``. The vacuum does not move and the
single excitation hops freely, reaching distance ``n`` with amplitude
``(-i)^n J_n(2t)`` on an infinite chain. Everything here follows from that.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import expm

from .dynamics import OPEN, hopping_matrix

BESSEL_MAX_ORDER = 500
BESSEL_MAX_ARG = 500.0
AMPLITUDE_CUTOFF = 1e-16
SMALL_THETA_LIMIT = 0.1
DEFAULT_DT = 0.1

_RESCALE_AT = 1e250
#: below this argument two series terms are exact in double precision
_TINY_ARG = 1e-6


# ---------------------------------------------------------------------------
# Bessel functions of the first kind, integer order
# ---------------------------------------------------------------------------


def miller_start(n_max: int, x_max: float) -> int:
    """Even starting order for the downward recurrence.

    Past the turning point ``k ~ x`` the ratio ``J_k/J_{k-1}`` falls off on an
    Airy scale ``(x/2)^{1/3}``; twenty of those scales bury the start-up error
    below double precision.
    """
    top = max(int(n_max), int(math.ceil(x_max)))
    m = top + 20 + int(20.0 * (0.5 * x_max) ** (1.0 / 3.0))
    return m + (m % 2)


def _miller(n_max: int, x: np.ndarray, start: int) -> np.ndarray:
    """Orders ``0..n_max`` of J at every (positive) ``x``, shape ``(n_max+1, len(x))``."""
    out = np.zeros((n_max + 1, x.size))
    two_over_x = 2.0 / x
    j_next = np.zeros_like(x)
    j_cur = np.full_like(x, 1e-300)
    norm = np.zeros_like(x)
    for k in range(start, 0, -1):
        # J_{k-1} = (2k/x) J_k - J_{k+1}
        j_prev = k * two_over_x * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        if k - 1 <= n_max:
            out[k - 1] = j_cur
        if (k - 1) % 2 == 0 and k - 1 > 0:
            norm += 2.0 * j_cur
        big = np.abs(j_cur) > _RESCALE_AT
        if np.any(big):
            scale = np.where(big, 1.0 / _RESCALE_AT, 1.0)
            j_cur *= scale
            j_next *= scale
            norm *= scale
            out[k - 1:] *= scale
    norm += j_cur  # J_0 + 2 sum J_{2k} = 1
    return out / norm


def _tiny(n_max: int, x: np.ndarray) -> np.ndarray:
    """``(x/2)^n / n! * (1 - (x/2)^2 / (n+1))``; the next term is O(x^4) relative."""
    half = 0.5 * x
    out = np.zeros((n_max + 1, x.size))
    term = np.ones_like(x)
    for n in range(n_max + 1):
        if n:
            term = term * half / n
        out[n] = term * (1.0 - half * half / (n + 1))
    return out


def bessel_j_orders(n_max: int, x, start: Optional[int] = None) -> np.ndarray:
    """``J_0(x) .. J_{n_max}(x)`` in one downward sweep.

    Returns an array of shape ``(n_max + 1,) + np.shape(x)``. ``start`` fixes the
    starting order so that results do not depend on how a grid is chunked.
    """
    x_arr = np.asarray(x, dtype=float)
    flat = x_arr.reshape(-1)
    if n_max < 0 or n_max > BESSEL_MAX_ORDER:
        raise ValueError(f"order must lie in [0, {BESSEL_MAX_ORDER}], got {n_max}")
    if np.any(flat < 0) or np.any(flat > BESSEL_MAX_ARG) or not np.all(np.isfinite(flat)):
        raise ValueError(f"argument must lie in [0, {BESSEL_MAX_ARG}]")
    out = np.zeros((n_max + 1, flat.size))
    zero = flat == 0.0
    out[0, zero] = 1.0
    tiny = (flat > 0) & (flat < _TINY_ARG)
    if np.any(tiny):
        out[:, tiny] = _tiny(n_max, flat[tiny])
    pos = flat >= _TINY_ARG
    if np.any(pos):
        xp = flat[pos]
        if start is None:
            start = miller_start(n_max, float(xp.max()))
        out[:, pos] = _miller(n_max, xp, start)
    return out.reshape((n_max + 1,) + x_arr.shape)


def bessel_j(n: int, x):
    """Bessel function of the first kind ``J_n(x)`` for integer ``n``.

    Valid for ``|n| <= 500`` and ``0 <= x <= 500`` with absolute error below
    1e-12. Negative orders use ``J_{-n} = (-1)^n J_n``.
    """
    n = int(n)
    vals = bessel_j_orders(abs(n), x)[abs(n)]
    if n < 0 and n % 2:
        vals = -vals
    return float(vals) if np.ndim(vals) == 0 else vals


def bessel_j_series(n: int, x: float, terms: int = 30) -> float:
    """Truncated ascending series ``sum_k (-1)^k (x/2)^{2k+n} / (k! (k+n)!)``.

    Evaluated in 50-digit arithmetic so the only error is truncation.
    """
    import mpmath

    with mpmath.workdps(50):
        half = mpmath.mpf(x) / 2
        total = mpmath.mpf(0)
        for k in range(terms):
            total += (-1) ** k * half ** (2 * k + n) / (mpmath.factorial(k) * mpmath.factorial(k + n))
        return float(total)


# ---------------------------------------------------------------------------
# Single-excitation propagation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteChain:
    n_sites: int
    source: int
    boundary: str = OPEN

    def __post_init__(self):
        if not 0 <= self.source < self.n_sites:
            raise IndexError(f"source {self.source} outside chain of {self.n_sites}")


INFINITE = "infinite"


@dataclass(frozen=True)
class ExcitationAmplitudes:
    """Amplitudes of the hopping excitation, keyed by offset ``site - source``."""

    offsets: np.ndarray
    amplitudes: np.ndarray

    def at(self, offset: int) -> complex:
        hit = np.nonzero(self.offsets == offset)[0]
        return complex(self.amplitudes[hit[0]]) if hit.size else 0j

    def total_weight(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))


def single_excitation_amplitudes(t: float, chain: Union[str, FiniteChain] = INFINITE,
                                 hopping: float = 1.0) -> ExcitationAmplitudes:
    """Where a single excitation released at the source sits after time ``t``.

    Infinite chain: ``(-i)^|n| J_|n|(2t)`` (the phase matches ``exp(-itA)`` for
    the unit hopping matrix ``A``), with tails below 1e-16 dropped.
    Finite chain: the source column of ``exp(-i t hopping A)`` computed exactly.
    """
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    if isinstance(chain, FiniteChain):
        h = hopping_matrix(chain.n_sites, chain.boundary, hopping)
        col = expm(-1j * t * h)[:, chain.source]
        return ExcitationAmplitudes(np.arange(chain.n_sites) - chain.source, col)
    if chain != INFINITE:
        raise ValueError(f"chain must be 'infinite' or a FiniteChain, got {chain!r}")
    if hopping != 1.0:
        raise ValueError("the Bessel form assumes unit hopping")
    x = 2.0 * t
    n_top = min(BESSEL_MAX_ORDER, int(x + 20 + 20 * (0.5 * x) ** (1.0 / 3.0)))
    j = bessel_j_orders(n_top, x)
    keep = np.nonzero(np.abs(j) >= AMPLITUDE_CUTOFF)[0]
    k_max = int(keep.max()) if keep.size else 0
    orders = np.arange(k_max + 1)
    pos = (-1j) ** orders * j[: k_max + 1]
    offsets = np.concatenate([-orders[:0:-1], orders])
    amps = np.concatenate([pos[:0:-1], pos])
    return ExcitationAmplitudes(offsets, amps)


# ---------------------------------------------------------------------------
# Receiver state
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReceiverState:
    matrix: np.ndarray
    theta: float
    t: float
    n: int

    def eigenvalues(self) -> np.ndarray:
        """Descending eigenvalues of the 2x2 matrix."""
        return _qubit_eigenvalues(self.matrix)

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))


def _qubit_eigenvalues(m: np.ndarray) -> np.ndarray:
    a = np.real(m[..., 0, 0])
    d = np.real(m[..., 1, 1])
    half_gap = np.sqrt(0.25 * (a - d) ** 2 + np.abs(m[..., 0, 1]) ** 2)
    mean = 0.5 * (a + d)
    return np.stack([mean + half_gap, mean - half_gap], axis=-1)


def receiver_closed_form(theta: float, t: float, n: int,
                         amplitude: Optional[complex] = None) -> ReceiverState:
    """Exact receiver density matrix at distance ``n`` from the source.

    With ``alpha = cos(theta)``, ``beta = -i sin(theta)`` and ``A`` the
    excitation amplitude at the receiver::

        rho = [[1 - |beta A|^2,      alpha conj(beta A)],
               [alpha beta A,        |beta A|^2        ]]

    ``A`` defaults to the real ``J_n(2t)``, which drops the ``(-i)^n`` hopping
    phase; that is a fixed local rotation of the receiver and leaves spectrum
    and Fisher information unchanged. Pass a complex amplitude (e.g. from a
    finite chain) to reproduce a full simulation entry by entry.
    """
    if n < 1:
        raise ValueError(f"receiver must be at distance n >= 1, got {n}")
    if amplitude is None:
        amplitude = bessel_j(n, 2.0 * t)
    alpha = math.cos(theta)
    beta = -1j * math.sin(theta)
    c = beta * amplitude
    w = abs(c) ** 2
    rho = np.array([[1.0 - w, alpha * np.conj(c)], [alpha * c, w]], dtype=complex)
    return ReceiverState(rho, theta, t, n)


def receiver_small_theta(theta: float, t: float, n: int,
                         amplitude: Optional[complex] = None) -> ReceiverState:
    """Second-order expansion of :func:`receiver_closed_form` around ``theta = 0``.

    Off-diagonal ``<0|rho|1> = i theta J_n(2t)`` in the default real-amplitude
    convention. Warns outside ``|theta| <= 0.1``.
    """
    if n < 1:
        raise ValueError(f"receiver must be at distance n >= 1, got {n}")
    if abs(theta) > SMALL_THETA_LIMIT:
        warnings.warn(f"small-theta expansion used at theta={theta} (> {SMALL_THETA_LIMIT})",
                      stacklevel=2)
    if amplitude is None:
        amplitude = bessel_j(n, 2.0 * t)
    w = theta**2 * abs(amplitude) ** 2
    off = 1j * theta * np.conj(amplitude)
    rho = np.array([[1.0 - w, off], [np.conj(off), w]], dtype=complex)
    return ReceiverState(rho, theta, t, n)


def dominant_eigenvalue_curve(t: float, n: int, theta_grid: Sequence[float]) -> np.ndarray:
    """Larger eigenvalue of the exact receiver matrix along ``theta_grid``."""
    theta = np.asarray(theta_grid, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta grid must be finite")
    j2 = bessel_j(n, 2.0 * t) ** 2
    s2 = np.sin(theta) ** 2
    w = s2 * j2
    off2 = np.cos(theta) ** 2 * s2 * j2
    half_gap = np.sqrt(0.25 * (1.0 - 2.0 * w) ** 2 + off2)
    return 0.5 + half_gap


# ---------------------------------------------------------------------------
# Light cone
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LightConeGrid:
    """Signal strength on an (n, t) grid, ``values[i, k]`` at ``n_values[i]``, ``t_values[k]``."""

    n_values: np.ndarray
    t_values: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.n_values), len(self.t_values)):
            raise ValueError("values must have shape (len(n_values), len(t_values))")

    def row(self, n: int) -> np.ndarray:
        return self.values[int(np.nonzero(self.n_values == n)[0][0])]

    def scaled(self, factor: float) -> "LightConeGrid":
        return LightConeGrid(self.n_values, self.t_values, factor * self.values)

    def to_csv(self, target=None) -> str:
        """Write ``n,t,value`` rows (n-major) with 17 significant digits."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "t", "value"])
        for i, n in enumerate(self.n_values):
            for k, t in enumerate(self.t_values):
                w.writerow([int(n), f"{t:.17g}", f"{self.values[i, k]:.17g}"])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "LightConeGrid":
        with open(source, newline="") as fh:
            rows = list(csv.DictReader(fh))
        ns = sorted({int(r["n"]) for r in rows})
        ts = sorted({float(r["t"]) for r in rows})
        values = np.array([float(r["value"]) for r in rows]).reshape(len(ns), len(ts))
        return cls(np.array(ns), np.array(ts), values)


def lightcone_grid(n_range: Tuple[int, int] = (0, 100), t_range: Tuple[float, float] = (0.0, 50.0),
                   t_steps: Optional[int] = None, workers: int = 1) -> LightConeGrid:
    """Grid of ``4 J_n(2t)^2``, the largest receiver QFI at distance ``n``.

    ``t_steps`` is the number of time intervals; by default the smallest count
    with spacing at most 0.1. Rows are evaluated in blocks (optionally on
    ``workers`` threads) with a common recurrence start, so the output does not
    depend on ``workers``.
    """
    n0, n1 = int(n_range[0]), int(n_range[1])
    t0, t1 = float(t_range[0]), float(t_range[1])
    if n1 < n0 or t1 < t0:
        raise ValueError("ranges must be non-empty")
    if t_steps is None:
        t_steps = max(1, int(math.ceil((t1 - t0) / DEFAULT_DT - 1e-9)))
    if t_steps < 1:
        raise ValueError("t_steps must be positive")
    n_values = np.arange(n0, n1 + 1)
    t_values = t0 + (t1 - t0) * np.arange(t_steps + 1) / t_steps
    x = 2.0 * t_values
    n_abs_max = int(np.max(np.abs(n_values)))
    start = miller_start(n_abs_max, float(x.max()))
    blocks = np.array_split(n_values, max(1, workers))

    def block_values(ns):
        if ns.size == 0:
            return np.zeros((0, x.size))
        j = bessel_j_orders(int(np.max(np.abs(ns))), x, start=start)
        return 4.0 * j[np.abs(ns)] ** 2

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(block_values, blocks))
    else:
        parts = [block_values(b) for b in blocks]
    return LightConeGrid(n_values, t_values, np.vstack(parts))
