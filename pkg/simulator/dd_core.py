"""Delay-Doppler frame representation: grid, ISFFT/SFFT, Gray QAM, vectorization.

Frames are stored as (N, M) arrays indexed [k, l] (Doppler row, delay column).
Vectorization is Doppler-major: ``v[k + N*l] = frame[k, l]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DDGrid:
    """Delay-Doppler grid of M delay bins and N Doppler bins.

    ``T`` defaults to ``1/delta_f``; an explicit ``T`` must satisfy
    ``T * delta_f == 1``.
    """

    M: int
    N: int
    delta_f: float = 15e3
    T: float = 0.0

    def __post_init__(self) -> None:
        if self.M < 1 or self.N < 1:
            raise ValueError(f"Grid dimensions must be >= 1, got M={self.M}, N={self.N}")
        if self.delta_f <= 0:
            raise ValueError(f"delta_f must be positive, got {self.delta_f}")
        if self.T == 0.0:
            object.__setattr__(self, "T", 1.0 / self.delta_f)
        elif not math.isclose(self.T * self.delta_f, 1.0, rel_tol=1e-9):
            raise ValueError(
                f"T * delta_f must equal 1, got T={self.T}, delta_f={self.delta_f}"
            )

    @property
    def size(self) -> int:
        return self.M * self.N

    @property
    def shape(self) -> tuple[int, int]:
        return (self.N, self.M)

    @property
    def frame_duration(self) -> float:
        return self.N * self.T

    @property
    def bandwidth(self) -> float:
        return self.M * self.delta_f

    @property
    def delay_resolution(self) -> float:
        """Delay bin width 1/(M*delta_f) in seconds."""
        return 1.0 / (self.M * self.delta_f)

    @property
    def doppler_resolution(self) -> float:
        """Doppler bin width 1/(N*T) in Hz."""
        return 1.0 / (self.N * self.T)


def _check_shape(grid: DDGrid, data: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(data, dtype=complex)
    if arr.shape != grid.shape:
        raise ValueError(f"{what} shape {arr.shape} does not match grid (N, M) = {grid.shape}")
    return arr


@dataclass(frozen=True)
class DDFrame:
    grid: DDGrid
    symbols: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "symbols", _check_shape(self.grid, self.symbols, "DD frame"))


@dataclass(frozen=True)
class TFFrame:
    grid: DDGrid
    samples: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", _check_shape(self.grid, self.samples, "TF frame"))


# ---------------------------------------------------------------------------
# Symplectic transforms
# ---------------------------------------------------------------------------


def isfft(frame: DDFrame) -> TFFrame:
    """Inverse symplectic finite Fourier transform, DD -> TF.

    X[n,m] = 1/sqrt(MN) sum_k sum_l x[k,l] exp(j2pi(nk/N - ml/M)), computed as an
    orthonormal IFFT along Doppler followed by an orthonormal FFT along delay.
    """
    tmp = np.fft.ifft(frame.symbols, axis=0, norm="ortho")
    return TFFrame(frame.grid, np.fft.fft(tmp, axis=1, norm="ortho"))


def sfft(frame: TFFrame) -> DDFrame:
    """Symplectic finite Fourier transform, TF -> DD. Exact inverse of :func:`isfft`."""
    tmp = np.fft.fft(frame.samples, axis=0, norm="ortho")
    return DDFrame(frame.grid, np.fft.ifft(tmp, axis=1, norm="ortho"))


# ---------------------------------------------------------------------------
# Vectorization
# ---------------------------------------------------------------------------


def vectorize(frame: DDFrame) -> np.ndarray:
    return frame.symbols.ravel(order="F")


def devectorize(v: np.ndarray, grid: DDGrid) -> DDFrame:
    """Inverse of :func:`vectorize`; ``v`` must have length M*N."""
    arr = np.asarray(v, dtype=complex)
    if arr.ndim != 1 or arr.size != grid.size:
        raise ValueError(f"Vector length {arr.size} does not match grid size MN = {grid.size}")
    return DDFrame(grid, arr.reshape(grid.shape, order="F"))


# ---------------------------------------------------------------------------
# Gray-coded square QAM
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QamConstellation:
    """Square Gray-coded QAM with unit average symbol energy.

    Constellation index ``i`` carries the bit label of ``i`` written MSB first;
    the first half of the label selects the in-phase level, the second half the
    quadrature level. Per axis, level index ``j`` (Gray-decoded from the label
    bits) maps to amplitude ``(m - 1) - 2j``, so a 0 bit sits on the positive
    side. For 4-QAM: 00 -> (+1+1j)/sqrt2, 01 -> (+1-1j)/sqrt2,
    10 -> (-1+1j)/sqrt2, 11 -> (-1-1j)/sqrt2.
    """

    order: int
    points: np.ndarray = field(repr=False)
    bit_labels: np.ndarray = field(repr=False)

    @property
    def bits_per_symbol(self) -> int:
        return int(self.order).bit_length() - 1

    @classmethod
    def square(cls, order: int = 4) -> QamConstellation:
        bits = int(order).bit_length() - 1
        if order < 4 or order != 1 << bits or bits % 2:
            raise ValueError(f"QAM order must be a power of 4, got {order}")
        half = bits // 2
        side = 1 << half

        # Gray code: level j is labelled j ^ (j >> 1); invert that table.
        level_of_label = np.empty(side, dtype=int)
        for j in range(side):
            level_of_label[j ^ (j >> 1)] = j
        amplitudes = (side - 1) - 2.0 * level_of_label

        index = np.arange(order)
        i_label = index >> half
        q_label = index & (side - 1)
        scale = math.sqrt(2.0 * (order - 1) / 3.0)
        points = (amplitudes[i_label] + 1j * amplitudes[q_label]) / scale

        shifts = np.arange(bits - 1, -1, -1)
        labels = ((index[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
        return cls(order=order, points=points, bit_labels=labels)


def qam_modulate(bits: np.ndarray, constellation: QamConstellation, grid: DDGrid) -> DDFrame:
    """Map bits to a DD frame, symbols placed row-major over (k, l)."""
    b = np.asarray(bits, dtype=np.int64).ravel()
    bps = constellation.bits_per_symbol
    expected = grid.size * bps
    if b.size != expected:
        raise ValueError(f"Bit count {b.size} does not match M*N*log2(order) = {expected}")
    weights = 1 << np.arange(bps - 1, -1, -1)
    index = b.reshape(-1, bps) @ weights
    return DDFrame(grid, constellation.points[index].reshape(grid.shape))


def demodulate_symbols(symbols: np.ndarray, constellation: QamConstellation) -> np.ndarray:
    """Hard minimum-distance decision per symbol; ties go to the lowest index."""
    s = np.asarray(symbols, dtype=complex).ravel()
    dist = np.abs(s[:, None] - constellation.points[None, :]) ** 2
    # argmin returns the first minimum, i.e. the lowest constellation index.
    return constellation.bit_labels[np.argmin(dist, axis=1)].ravel()


def qam_demodulate(frame: DDFrame, constellation: QamConstellation) -> np.ndarray:
    return demodulate_symbols(frame.symbols, constellation)
