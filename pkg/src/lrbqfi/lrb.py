"""Commutator bound on receiver information and light-cone velocity fits.

The receiver's Fisher information about the source impulse is bounded by
``4 ||C(t)||^2`` with ``C(t) = [sigma_-(t), H_sr]``, where ``sigma_-`` is built
from the receiver's own eigenbasis and evolved in the Heisenberg picture.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional, Sequence, Union

import numpy as np

from .dynamics import OPEN, Propagator, build_xy_hamiltonian, heisenberg_applier, heisenberg_operator
from .fisher import ImpulsePipeline, eq6_term, qfi_qubit
from .hilbert import (
    DensityOperator,
    LocalOperatorSpec,
    PureState,
    apply_local,
    commutator,
    embed_local,
    embed_matrix,
    lanczos_norm,
    operator_norm,
    power_norm,
    spectral_decompose,
)
from .xy_analytic import LightConeGrid

BOUND_TOL = 1e-9
DENSE_QUBIT_LIMIT = 10
APPROX_QUBIT_LIMIT = 20
FIT_N_MIN = 10


class BoundViolation(AssertionError):
    """A certified inequality failed beyond tolerance; carries the configuration."""

    def __init__(self, message: str, config: dict):
        super().__init__(f"{message}\nconfig: {json.dumps(config, sort_keys=True)}")
        self.config = config


# ---------------------------------------------------------------------------
# The commutator
# ---------------------------------------------------------------------------


def receiver_lowering(rho_rc: np.ndarray) -> np.ndarray:
    """``|psi_1><psi_2|`` from the eigenvectors of a receiver state (dominant first)."""
    v = spectral_decompose(np.asarray(rho_rc)).eigenvectors
    return np.outer(v[:, 0], v[:, 1].conj())


def source_receiver_commutator(source: LocalOperatorSpec, receiver: Union[int, LocalOperatorSpec],
                               prop: Propagator, t: float,
                               receiver_op: Optional[np.ndarray] = None) -> np.ndarray:
    """Dense ``[O(t), H_sr]`` with ``O`` the receiver operator (default ``sigma_-``).

    ``receiver`` is a site or a ``LocalOperatorSpec`` whose axis picks ``O``;
    ``receiver_op`` overrides it with an arbitrary 2x2 matrix.
    """
    n = prop.hamiltonian.n_qubits
    site = receiver.site if isinstance(receiver, LocalOperatorSpec) else int(receiver)
    source.check(n)
    if not 0 <= site < n:
        raise IndexError(f"receiver {site} outside register of {n} qubits")
    if site == source.site:
        raise ValueError("source and receiver must be different sites")
    if receiver_op is None:
        receiver_op = receiver.matrix if isinstance(receiver, LocalOperatorSpec) else \
            LocalOperatorSpec(site, "minus").matrix
    o_t = heisenberg_operator(embed_matrix(receiver_op, site, n), prop, t)
    return commutator(o_t, embed_local(source, n))


def commutator_norm(source: LocalOperatorSpec, receiver: int, prop: Propagator, t: float,
                    receiver_op: Optional[np.ndarray] = None, method: str = "dense",
                    rtol: float = 1e-10, maxiter: int = 5000, seed: int = 0) -> float:
    """``||[O(t), H_sr]||``, densely or matrix-free (``"lanczos"`` or ``"power"``)."""
    if method == "dense":
        return operator_norm(source_receiver_commutator(source, receiver, prop, t, receiver_op))
    if method not in ("power", "lanczos"):
        raise ValueError(f"method must be 'dense', 'lanczos' or 'power', got {method!r}")
    if receiver == source.site:
        raise ValueError("source and receiver must be different sites")
    if t == 0:
        return 0.0
    if receiver_op is None:
        receiver_op = LocalOperatorSpec(receiver, "minus").matrix
    o_t = heisenberg_applier(receiver_op, receiver, prop, t)
    o_t_dag = heisenberg_applier(np.conj(receiver_op).T, receiver, prop, t)
    h = source.matrix

    def c(v):
        return o_t(apply_local(h, source.site, v)) - apply_local(h, source.site, o_t(v))

    def c_dag(v):
        return apply_local(h, source.site, o_t_dag(v)) - o_t_dag(apply_local(h, source.site, v))

    solver = lanczos_norm if method == "lanczos" else power_norm
    return solver(c, c_dag, prop.dim, rtol=rtol, maxiter=maxiter, seed=seed)


# ---------------------------------------------------------------------------
# Certification
# ---------------------------------------------------------------------------


@dataclass
class BoundConfig:
    """Everything needed to rerun one point of the protocol."""

    n_qubits: int
    source: int
    receiver: int
    t: float
    theta: float = 0.0
    source_axis: str = "x"
    boundary: str = OPEN
    input_kind: str = "zeros"
    seed: Optional[int] = None
    norm_method: str = "dense"
    initial: object = field(default=None, repr=False, compare=False)

    def describe(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "initial"}
        if self.initial is not None and self.input_kind not in ("zeros", "ones"):
            d["input_rank"] = input_rank(self.initial)
        return d


def input_rank(state) -> int:
    if isinstance(state, PureState):
        return 1
    return int(np.sum(np.linalg.eigvalsh(state.matrix) > 1e-12))


def _initial_state(config: BoundConfig):
    if config.initial is not None:
        return config.initial
    if config.input_kind == "zeros":
        return PureState.basis("0" * config.n_qubits)
    if config.input_kind == "ones":
        return PureState.basis("1" * config.n_qubits)
    raise ValueError(f"input kind {config.input_kind!r} needs an explicit initial state")


def _propagator(config: BoundConfig) -> Propagator:
    h = build_xy_hamiltonian(config.n_qubits, config.boundary)
    if config.norm_method == "dense":
        if config.n_qubits > DENSE_QUBIT_LIMIT:
            raise ValueError(
                f"exact commutator norms are limited to N <= {DENSE_QUBIT_LIMIT}; "
                "use norm_method='power' for larger registers"
            )
        return Propagator.dense(h)
    if config.n_qubits > APPROX_QUBIT_LIMIT:
        raise ValueError(f"registers above {APPROX_QUBIT_LIMIT} qubits are not supported")
    return Propagator.krylov(h)


def _pipeline(config: BoundConfig, prop: Optional[Propagator] = None) -> ImpulsePipeline:
    prop = prop or _propagator(config)
    src = LocalOperatorSpec(config.source, config.source_axis)
    return ImpulsePipeline(prop, src, config.receiver, _initial_state(config))


@dataclass
class BoundReport:
    qfi: float
    lrb_value: float
    slack: float
    config: dict
    eq6_value: float = 0.0
    cfi: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def certify_bound(config: BoundConfig, tol: float = BOUND_TOL, with_cfi: bool = True) -> BoundReport:
    """Receiver QFI against ``4 ||C(t)||^2`` at one configuration.

    ``sigma_-`` is built from the eigenbasis of the receiver state at
    ``(theta, t)``. Raises :class:`BoundViolation` when the slack (or the
    slack of the off-diagonal term ``eq6_value``) is below ``-tol``.
    """
    if config.source == config.receiver:
        raise ValueError("source and receiver must be different sites")
    prop = _propagator(config)
    pipe = _pipeline(config, prop)
    rho_rc = pipe.receiver_state(config.theta, config.t)
    rho_dot_rc = pipe.receiver_rho_dot(config.theta, config.t)
    qfi = qfi_qubit(rho_rc, rho_dot_rc)
    eq6 = eq6_term(rho_rc, rho_dot_rc)
    lowering = receiver_lowering(rho_rc)
    norm = commutator_norm(pipe.source, config.receiver, prop, config.t, receiver_op=lowering,
                           method=config.norm_method, seed=config.seed or 0)
    lrb_value = 4.0 * norm**2
    cfi = pipe.cfi_exact(config.theta, config.t) if with_cfi else None
    report = BoundReport(qfi=qfi, lrb_value=lrb_value, slack=lrb_value - qfi,
                         config=config.describe(), eq6_value=eq6, cfi=cfi)
    if report.slack < -tol or lrb_value - eq6 < -tol:
        raise BoundViolation(
            f"receiver information exceeds the commutator bound (slack {report.slack:.3e})",
            report.to_dict(),
        )
    return report


# ---------------------------------------------------------------------------
# Randomized suite
# ---------------------------------------------------------------------------


def haar_state(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_config(seed: int, n_max: int = 6, t_max: float = 3.0) -> BoundConfig:
    """One random configuration drawn entirely from ``seed``.

    Register size in ``[2, n_max]``, distinct source/receiver, Pauli source
    axis, ``t`` in ``[0, t_max]``, ``theta`` in ``[0, pi]``, and either a Haar
    pure state or a mixture of 2 to 4 Haar states with Dirichlet weights.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, n_max + 1))
    source, receiver = (int(k) for k in rng.choice(n, size=2, replace=False))
    axis = str(rng.choice(["x", "y", "z"]))
    t = float(rng.uniform(0.0, t_max))
    theta = float(rng.uniform(0.0, math.pi))
    dim = 2**n
    if rng.random() < 0.5:
        initial = PureState.from_vector(haar_state(rng, dim))
        kind = "haar_pure"
    else:
        rank = int(rng.integers(2, 5))
        weights = rng.dirichlet(np.ones(rank))
        initial = DensityOperator.mixture(weights, [haar_state(rng, dim) for _ in range(rank)])
        kind = f"haar_mixture_{rank}"
    return BoundConfig(n, source, receiver, t, theta, axis, OPEN, kind, seed, "dense", initial)


def trial_seeds(master_seed: int, trials: int) -> List[int]:
    children = np.random.SeedSequence(master_seed).spawn(trials)
    return [int(c.generate_state(1)[0]) for c in children]


def run_certification_suite(trials: int = 200, master_seed: int = 7, n_max: int = 6,
                            t_max: float = 3.0, workers: int = 1,
                            tol: float = BOUND_TOL) -> List[BoundReport]:
    """Certify ``trials`` random configurations; reports come back in trial order.

    Each trial draws from its own seed spawned off ``master_seed``, so the
    result is the same for any number of ``workers``.
    """
    seeds = trial_seeds(master_seed, trials)

    def one(seed):
        return certify_bound(random_config(seed, n_max, t_max), tol=tol)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, seeds))
    return [one(s) for s in seeds]


SUITE_COLUMNS = ["trial", "seed", "N", "source", "receiver", "t", "theta", "qfi", "lrb", "slack"]


def suite_to_csv(reports: Sequence[BoundReport], target=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUITE_COLUMNS)
    for k, r in enumerate(reports):
        c = r.config
        w.writerow([k, "" if c.get("seed") is None else c["seed"], c["n_qubits"], c["source"],
                    c["receiver"], f"{c['t']:.17g}", f"{c['theta']:.17g}", f"{r.qfi:.17g}",
                    f"{r.lrb_value:.17g}", f"{r.slack:.17g}"])
    text = buf.getvalue()
    if target is not None:
        with open(target, "w", newline="") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------------------
# Inequality chain
# ---------------------------------------------------------------------------


@dataclass
class ChainReport:
    """Each rung of the chain from the receiver term down to the operator norm.

    ``eq6``: ``4 |<psi_1|rho_dot|psi_2>|^2``; ``trace_form``: the same term as
    ``4 |Tr[sigma_- rho_dot]|^2`` over the whole register; ``convexity``:
    ``4 sum_n p_n |<Psi_n|C|Psi_n>|^2``; ``second_moment``:
    ``4 sum_n p_n <Psi_n|C^dagger C|Psi_n>``; ``norm_bound``: ``4 ||C||^2``.
    """

    qfi: float
    eq6: float
    trace_form: float
    convexity: float
    second_moment: float
    norm_bound: float
    pure_input: bool
    config: dict

    def links(self) -> dict:
        return {
            "trace_form_vs_eq6": self.trace_form - self.eq6,
            "convexity_minus_eq6": self.convexity - self.eq6,
            "second_moment_minus_convexity": self.second_moment - self.convexity,
            "norm_minus_second_moment": self.norm_bound - self.second_moment,
            "norm_minus_qfi": self.norm_bound - self.qfi,
        }

    def strict_gaps(self) -> dict:
        lk = self.links()
        return {k: v for k, v in lk.items() if k != "trace_form_vs_eq6" and v > 1e-9}


def inequality_chain_check(config: BoundConfig, tol: float = BOUND_TOL) -> ChainReport:
    """Evaluate every intermediate quantity and assert the chain is monotone.

    For a pure input the convexity rung must equal the receiver term.
    Raises :class:`BoundViolation` on any broken link.
    """
    if config.n_qubits > DENSE_QUBIT_LIMIT:
        raise ValueError("the chain check needs the dense path")
    dense_cfg = replace(config, norm_method="dense")
    prop = _propagator(dense_cfg)
    pipe = _pipeline(dense_cfg, prop)
    n = config.n_qubits
    theta, t = config.theta, config.t
    rho_rc = pipe.receiver_state(theta, t)
    rho_dot_rc = pipe.receiver_rho_dot(theta, t)
    qfi = qfi_qubit(rho_rc, rho_dot_rc)
    eq6 = eq6_term(rho_rc, rho_dot_rc)

    lowering = receiver_lowering(rho_rc)
    sm_full = embed_matrix(lowering, config.receiver, n)
    rho_dot_full = pipe.full_rho_dot(theta, t)
    trace_form = 4.0 * abs(np.trace(sm_full @ rho_dot_full)) ** 2

    c = source_receiver_commutator(pipe.source, config.receiver, prop, t, receiver_op=lowering)
    kicked = pipe.full_density(theta, 0.0)
    dec = spectral_decompose(kicked)
    p = dec.clamped()
    keep = p > 1e-14
    vecs = dec.eigenvectors[:, keep]
    p = p[keep]
    c_vecs = c @ vecs
    diag = np.einsum("ij,ij->j", vecs.conj(), c_vecs)
    convexity = 4.0 * float(np.sum(p * np.abs(diag) ** 2))
    second = 4.0 * float(np.sum(p * np.real(np.einsum("ij,ij->j", c_vecs.conj(), c_vecs))))
    norm_bound = 4.0 * operator_norm(c) ** 2

    report = ChainReport(qfi, eq6, trace_form, convexity, second, norm_bound,
                         isinstance(pipe.initial, PureState) or bool(np.sum(keep) == 1),
                         dense_cfg.describe())
    lk = report.links()
    scale = max(1.0, norm_bound)
    if abs(lk["trace_form_vs_eq6"]) > tol * scale:
        raise BoundViolation("receiver term differs from its full-register trace form", asdict(report))
    for name, gap in lk.items():
        if name != "trace_form_vs_eq6" and gap < -tol:
            raise BoundViolation(f"broken link {name} ({gap:.3e})", asdict(report))
    if report.pure_input and abs(lk["convexity_minus_eq6"]) > tol:
        raise BoundViolation("convexity step is not tight for a pure input", asdict(report))
    return report


def top_eigenstate_of_commutator(source: LocalOperatorSpec, receiver: int, prop: Propagator,
                                 t: float, receiver_op: Optional[np.ndarray] = None) -> PureState:
    """Eigenvector of ``C(t)`` with the largest-modulus eigenvalue."""
    c = source_receiver_commutator(source, receiver, prop, t, receiver_op)
    w, v = np.linalg.eig(c)
    k = int(np.argmax(np.abs(w)))
    return PureState.from_vector(v[:, k], normalize=True)


# ---------------------------------------------------------------------------
# Light-cone front and velocity
# ---------------------------------------------------------------------------


@dataclass
class VelocityFit:
    threshold: float
    front_times: List[tuple]
    v: float
    intercept: float
    residual: float
    excluded: List[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["front_times"] = [[int(n), float(t)] for n, t in self.front_times]
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


class VelocityFitError(ValueError):
    pass


def front_time(t_values: np.ndarray, row: np.ndarray, threshold: float) -> Optional[float]:
    """First time the row reaches ``threshold``, linearly interpolated."""
    hit = np.nonzero(row >= threshold)[0]
    if hit.size == 0:
        return None
    k = int(hit[0])
    if k == 0:
        return float(t_values[0])
    t0, t1 = t_values[k - 1], t_values[k]
    y0, y1 = row[k - 1], row[k]
    return float(t0 + (threshold - y0) * (t1 - t0) / (y1 - y0))


def fit_velocity(grid: LightConeGrid, threshold: float, n_min: int = FIT_N_MIN) -> VelocityFit:
    """Least-squares line ``n = v t* + b`` through the threshold-crossing times.

    Rows with ``n < n_min`` are left out (the front there is still as wide as
    the distance travelled). Rows that never reach the threshold are reported
    in ``excluded``.
    """
    vmax = float(np.max(grid.values))
    if not 0 < threshold < vmax:
        raise VelocityFitError(f"threshold must lie in (0, {vmax}), got {threshold}")
    fronts, excluded = [], []
    for n, row in zip(grid.n_values, grid.values):
        if n < n_min:
            continue
        ts = front_time(grid.t_values, row, threshold)
        if ts is None:
            excluded.append(int(n))
        else:
            fronts.append((int(n), ts))
    if len(fronts) < 2:
        raise VelocityFitError("fewer than two rows cross the threshold")
    ns = np.array([f[0] for f in fronts], dtype=float)
    ts = np.array([f[1] for f in fronts])
    (v, b), *_ = np.linalg.lstsq(np.column_stack([ts, np.ones_like(ts)]), ns, rcond=None)
    resid = float(np.sqrt(np.mean((ns - (v * ts + b)) ** 2)))
    return VelocityFit(float(threshold), fronts, float(v), float(b), resid, excluded)


@dataclass
class EnvelopeReport:
    """Smallest ``a`` with ``value <= a exp(-2 (n - v t))`` where ``n - v t > margin``.

    The grid holds a squared amplitude, so the exponent is doubled relative
    to the bound on the commutator itself.
    """

    v: float
    margin: float
    constant: float
    points_checked: int
    max_log_ratio_by_margin: dict

    def to_dict(self) -> dict:
        return asdict(self)


def lrb_envelope_check(grid: LightConeGrid, v: float, margin: float = 0.0,
                       margins: Sequence[float] = (0.0, 2.0, 5.0, 10.0, 20.0)) -> EnvelopeReport:
    """Fit the envelope constant outside the cone; inside it the bound says nothing."""
    if v <= 0:
        raise ValueError("velocity must be positive")
    n = np.abs(grid.n_values.astype(float))[:, None]
    t = grid.t_values[None, :]
    dist = n - v * t
    with np.errstate(divide="ignore"):
        log_ratio = np.log(grid.values) + 2.0 * dist
    by_margin = {}
    for m in margins:
        sel = (dist > m) & (grid.values > 0)
        by_margin[str(m)] = float(np.max(log_ratio[sel])) if np.any(sel) else float("-inf")
    sel = (dist > margin) & (grid.values > 0)
    const = float(np.exp(np.max(log_ratio[sel]))) if np.any(sel) else 0.0
    return EnvelopeReport(float(v), float(margin), const, int(np.sum(dist > margin)), by_margin)
