"""RIS phase-shift optimization by received-energy maximization.

The received energy of a phase configuration theta is
G(theta) = ||sum_i theta_i H_i||_F^2 = theta^H C theta with the Gram matrix
C[i, l] = vec(H_i)^H vec(H_l). The optimizer repeatedly replaces each theta_i
by the phase of the gradient gamma = C theta, which maximizes the linearized
objective over the unit-modulus set and never decreases G.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import sparse

from channel_model import CascadedChannel, SparseChannelMatrix

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-4
DEFAULT_MAX_ITERATIONS = 15

# L unit-modulus complex coefficients.
PhaseVector = np.ndarray

_UNIT_TOL = 1e-12


def validate_phases(theta: np.ndarray, L: int | None = None) -> PhaseVector:
    """Return ``theta`` as a complex vector after checking |theta_i| = 1."""
    arr = np.asarray(theta, dtype=complex).ravel()
    if L is not None and arr.size != L:
        raise ValueError(f"Phase vector length {arr.size} does not match L = {L}")
    if arr.size == 0:
        raise ValueError("Phase vector must not be empty")
    if np.max(np.abs(np.abs(arr) - 1.0)) > _UNIT_TOL:
        raise ValueError("Phase vector entries must have unit modulus")
    return arr


@dataclass(frozen=True)
class GramMatrix:
    C: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        C = np.asarray(self.C, dtype=complex)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError(f"Gram matrix must be square, got shape {C.shape}")
        object.__setattr__(self, "C", C)

    @property
    def L(self) -> int:
        return self.C.shape[0]

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.C)))


@dataclass(frozen=True)
class OptimizerTrace:
    """G at the starting point followed by one value per update."""

    objective_per_iteration: list[float]
    iterations_run: int
    converged: bool

    @property
    def final_objective(self) -> float:
        return self.objective_per_iteration[-1]


def _stacked_generators(channels: Sequence[SparseChannelMatrix]) -> sparse.csr_array:
    grid = channels[0].grid
    rows, cols, data = [], [], []
    for i, H in enumerate(channels):
        if H.grid != grid:
            raise ValueError(f"Channel {i} grid {H.grid} differs from channel 0 grid {grid}")
        rows.append(np.full(H.nnz, i))
        cols.append(H.rows)
        data.append(H.values)
    return sparse.csr_array(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(channels), grid.size),
    )


def _stacked_full(channels: Sequence[SparseChannelMatrix]) -> sparse.csr_array:
    grid = channels[0].grid
    rows, cols, data = [], [], []
    for i, H in enumerate(channels):
        if H.grid != grid:
            raise ValueError(f"Channel {i} grid {H.grid} differs from channel 0 grid {grid}")
        coo = H.to_sparse().tocoo()
        rows.append(np.full(coo.nnz, i))
        cols.append(coo.row.astype(np.int64) * grid.size + coo.col)
        data.append(coo.data)
    return sparse.csr_array(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(channels), grid.size * grid.size),
    )


def gram_matrix(channels: Sequence[SparseChannelMatrix], method: str = "generator") -> GramMatrix:
    """Gram matrix of the vectorized per-element channels.

    ``generator`` uses the 2D-circulant structure: every column of H_i is a
    permutation of its generator, so vec(H_i)^H vec(H_l) = MN * g_i^H g_l.
    ``full`` takes inner products of the complete sparse matrices.
    """
    if not channels:
        raise ValueError("At least one channel is required")
    if method == "generator":
        G = _stacked_generators(channels)
        scale = channels[0].grid.size
    elif method == "full":
        G = _stacked_full(channels)
        scale = 1
    else:
        raise ValueError(f"Unknown Gram method {method!r}")
    C = scale * (G.conj() @ G.T).toarray()
    return GramMatrix(C)


def objective(C: GramMatrix, theta: PhaseVector) -> float:
    """G = theta^H C theta (imaginary residue dropped, clipped at 0)."""
    t = np.asarray(theta, dtype=complex)
    if t.shape != (C.L,):
        raise ValueError(f"Phase vector length {t.size} does not match L = {C.L}")
    return max(float(np.real(np.vdot(t, C.C @ t))), 0.0)


def gradient(C: GramMatrix, theta: PhaseVector) -> np.ndarray:
    """Wirtinger gradient dG/dtheta* = C theta."""
    t = np.asarray(theta, dtype=complex)
    if t.shape != (C.L,):
        raise ValueError(f"Phase vector length {t.size} does not match L = {C.L}")
    return C.C @ t


def _relative_improvement(previous: float, current: float) -> float:
    if previous > 0:
        return (current - previous) / previous
    return 0.0 if current == previous else np.inf


def optimize_phases(
    C: GramMatrix,
    theta0: PhaseVector | None = None,
    epsilon: float = DEFAULT_EPSILON,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> tuple[PhaseVector, OptimizerTrace]:
    """Gradient-phase fixed-point iteration theta_i <- gamma_i / |gamma_i|.

    Stops once the relative improvement of G falls below ``epsilon`` or after
    ``max_iterations`` updates. Entries with gamma_i == 0 keep their phase.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if max_iterations < 1:
        raise ValueError(f"max_iterations must be >= 1, got {max_iterations}")
    theta = np.ones(C.L, dtype=complex) if theta0 is None else validate_phases(theta0, C.L).copy()

    g = objective(C, theta)
    history = [g]
    if not np.any(C.C):
        history.append(g)
        return theta, OptimizerTrace(history, 1, True)

    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        gamma = C.C @ theta
        mag = np.abs(gamma)
        moving = mag > 0
        theta = theta.copy()
        theta[moving] = gamma[moving] / mag[moving]
        g_new = objective(C, theta)
        history.append(g_new)
        logger.debug("Iteration %d: G = %.12g", iterations, g_new)
        improvement = _relative_improvement(g, g_new)
        g = g_new
        if improvement < epsilon:
            converged = True
            break
    return theta, OptimizerTrace(history, iterations, converged)


def optimize_phases_multistart(
    C: GramMatrix,
    rng: np.random.Generator,
    starts: int = 1,
    epsilon: float = DEFAULT_EPSILON,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> tuple[PhaseVector, OptimizerTrace]:
    """Best of ``starts`` runs: all-ones first, then random unit-modulus starts.

    The rng is only drawn from when ``starts > 1``.
    """
    if starts < 1:
        raise ValueError(f"starts must be >= 1, got {starts}")
    best_theta, best_trace = optimize_phases(C, None, epsilon, max_iterations)
    for _ in range(starts - 1):
        theta, trace = optimize_phases(C, random_phases(C.L, rng), epsilon, max_iterations)
        if trace.final_objective > best_trace.final_objective:
            best_theta, best_trace = theta, trace
    return best_theta, best_trace


def scp_phases(channel: CascadedChannel) -> PhaseVector:
    """Strongest-cascaded-path phases.

    Per element, taps are binned by (l, k) with coefficient
    gain * exp(-j2pi nu tau) (before fractional-Doppler spreading). The bin with
    the largest sum over elements of |coefficient|^2 is aligned by setting
    theta_i = exp(-j arg(coefficient_i)); elements with nothing in that bin
    get theta_i = 1. Ties go to the smallest (l, k).
    """
    if channel.L == 0 or any(n == 0 for n in channel.tap_counts):
        raise ValueError("Every RIS element needs at least one cascaded tap")
    per_element: list[dict[tuple[int, int], complex]] = []
    power: dict[tuple[int, int], float] = {}
    for taps in channel.elements:
        bins: dict[tuple[int, int], complex] = {}
        for tap in taps:
            coeff = tap.gain * complex(np.exp(-2j * np.pi * tap.doppler * tap.delay))
            bins[(tap.l, tap.k)] = bins.get((tap.l, tap.k), 0j) + coeff
        per_element.append(bins)
        for key, coeff in bins.items():
            power[key] = power.get(key, 0.0) + abs(coeff) ** 2

    best = max(sorted(power), key=lambda key: power[key])
    theta = np.ones(channel.L, dtype=complex)
    for i, bins in enumerate(per_element):
        coeff = bins.get(best, 0j)
        if coeff != 0:
            theta[i] = np.exp(-1j * np.angle(coeff))
    return theta


def random_phases(L: int, rng: np.random.Generator) -> PhaseVector:
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, L))


def trace_rows(trace: OptimizerTrace) -> Iterator[tuple[int, float]]:
    yield from enumerate(trace.objective_per_iteration)


def write_trace_csv(trace: OptimizerTrace, path: str) -> None:
    frame = pd.DataFrame(
        [(str(i), repr(value)) for i, value in trace_rows(trace)],
        columns=["iteration", "objective"],
        dtype=str,
    )
    frame.to_csv(path, index=False, lineterminator="\n")
