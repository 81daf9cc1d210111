"""OTFS link: effective RIS channel, AWGN, MMSE detection and error counting.

SNR is defined as 1/sigma0^2 with unit-average-energy constellations.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

from channel_model import SparseChannelMatrix, apply_channel, combine_channels, dense_circulant
from dd_core import (
    DDGrid,
    QamConstellation,
    TFFrame,
    devectorize,
    qam_demodulate,
    qam_modulate,
    sfft,
    vectorize,
)
from phase_optimizer import PhaseVector

logger = logging.getLogger(__name__)

SNR_DEFINITION = "snr = 1/sigma0^2, unit-energy constellation"


@dataclass(frozen=True)
class EffectiveChannel:
    """H_eff = sum_i theta_i H_i, kept in generator form."""

    matrix: SparseChannelMatrix

    @property
    def grid(self) -> DDGrid:
        return self.matrix.grid

    @property
    def generator_column(self) -> np.ndarray:
        return self.matrix.generator_column

    def dense_form(self) -> np.ndarray:
        return self.matrix.to_dense()


@dataclass(frozen=True)
class NoiseModel:
    sigma0_sq: float

    def __post_init__(self) -> None:
        if self.sigma0_sq < 0:
            raise ValueError(f"sigma0_sq must be >= 0, got {self.sigma0_sq}")

    @classmethod
    def from_snr_db(cls, snr_db: float) -> NoiseModel:
        return cls(10.0 ** (-snr_db / 10.0))

    @property
    def snr_db(self) -> float:
        return -10.0 * np.log10(self.sigma0_sq) if self.sigma0_sq > 0 else np.inf


@dataclass(frozen=True)
class TrialResult:
    bit_errors: int
    bits_total: int
    frame_errors: int
    frames_total: int

    def __post_init__(self) -> None:
        if not 0 <= self.bit_errors <= self.bits_total:
            raise ValueError(f"bit_errors {self.bit_errors} outside [0, {self.bits_total}]")
        if not 0 <= self.frame_errors <= self.frames_total:
            raise ValueError(f"frame_errors {self.frame_errors} outside [0, {self.frames_total}]")

    def __add__(self, other: TrialResult) -> TrialResult:
        return TrialResult(
            self.bit_errors + other.bit_errors,
            self.bits_total + other.bits_total,
            self.frame_errors + other.frame_errors,
            self.frames_total + other.frames_total,
        )

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_total if self.bits_total else 0.0

    @property
    def fer(self) -> float:
        return self.frame_errors / self.frames_total if self.frames_total else 0.0


def effective_channel(
    channels: Sequence[SparseChannelMatrix], theta: PhaseVector
) -> EffectiveChannel:
    t = np.asarray(theta, dtype=complex).ravel()
    if t.size != len(channels):
        raise ValueError(f"Phase vector length {t.size} does not match {len(channels)} channels")
    return EffectiveChannel(combine_channels(channels, t))


def transmit(
    x: np.ndarray,
    H: EffectiveChannel,
    noise: NoiseModel,
    rng: np.random.Generator,
    domain: str = "dd",
) -> np.ndarray:
    """z = H_eff x + w with w ~ CN(0, sigma0^2).

    ``domain="tf"`` draws the noise on the TF grid and maps it through SFFT.
    No random numbers are drawn when sigma0^2 is 0.
    """
    z = apply_channel(H.matrix, x)
    if noise.sigma0_sq == 0:
        return z
    grid = H.grid
    scale = np.sqrt(noise.sigma0_sq / 2.0)
    if domain == "dd":
        w = scale * (rng.standard_normal(grid.size) + 1j * rng.standard_normal(grid.size))
    elif domain == "tf":
        W = scale * (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))
        w = vectorize(sfft(TFFrame(grid, W)))
    else:
        raise ValueError(f"Unknown noise domain {domain!r}, expected 'dd' or 'tf'")
    return z + w


class MmseEqualizer:
    """Factorizes (H^H H + sigma0^2 I) once for repeated solves.

    H is 2D circulant, so H^H H is too: its generator is ifft2(|fft2(g)|^2) and
    H^H z is a circular correlation. The dense system is then solved by Cholesky.
    """

    def __init__(self, H: EffectiveChannel, noise: NoiseModel) -> None:
        self.grid = H.grid
        self._spectrum = np.fft.fft2(H.matrix.generator_frame())
        power = np.abs(self._spectrum) ** 2
        if noise.sigma0_sq == 0:
            floor = self.grid.size * np.finfo(float).eps * max(float(power.max()), 1.0)
            if power.min() <= floor:
                raise ValueError("MMSE system is singular: rank-deficient channel at zero noise")
        gram_column = np.fft.ifft2(power).ravel(order="F")
        gram = dense_circulant(self.grid, gram_column)
        gram[np.diag_indices_from(gram)] += noise.sigma0_sq
        try:
            self._factor = linalg.cho_factor(gram, check_finite=False)
        except linalg.LinAlgError as e:
            raise ValueError(f"MMSE system is not positive definite: {e}") from e

    def matched_filter(self, z: np.ndarray) -> np.ndarray:
        """H^H z."""
        v = np.asarray(z, dtype=complex)
        if v.shape != (self.grid.size,):
            raise ValueError(f"Received vector length {v.size} does not match MN = {self.grid.size}")
        frame = v.reshape(self.grid.shape, order="F")
        return np.fft.ifft2(np.conj(self._spectrum) * np.fft.fft2(frame)).ravel(order="F")

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return linalg.cho_solve(self._factor, self.matched_filter(z), check_finite=False)


def mmse_equalize(H: EffectiveChannel, z: np.ndarray, noise: NoiseModel) -> np.ndarray:
    """x_hat = (H^H H + sigma0^2 I)^-1 H^H z."""
    return MmseEqualizer(H, noise)(z)


def ber_trial(
    grid: DDGrid,
    channels: Sequence[SparseChannelMatrix],
    theta: PhaseVector,
    constellation: QamConstellation,
    noise: NoiseModel,
    rng: np.random.Generator,
    frames: int = 1,
    domain: str = "dd",
) -> TrialResult:
    """Send ``frames`` random frames over one channel realization and count errors."""
    H = effective_channel(channels, theta)
    if H.grid != grid:
        raise ValueError(f"Channel grid {H.grid} does not match {grid}")
    equalize = MmseEqualizer(H, noise)
    bits_per_frame = grid.size * constellation.bits_per_symbol
    bit_errors = frame_errors = 0
    for _ in range(frames):
        bits = rng.integers(0, 2, bits_per_frame, dtype=np.uint8)
        x = vectorize(qam_modulate(bits, constellation, grid))
        z = transmit(x, H, noise, rng, domain)
        decided = qam_demodulate(devectorize(equalize(z), grid), constellation)
        errors = int(np.count_nonzero(decided != bits))
        bit_errors += errors
        frame_errors += errors > 0
    logger.debug("%d frames: %d bit errors", frames, bit_errors)
    return TrialResult(bit_errors, bits_per_frame * frames, int(frame_errors), frames)


def channel_gain(channels: Sequence[SparseChannelMatrix], theta: PhaseVector) -> float:
    """||sum_i theta_i H_i||_F^2 / MN, i.e. the squared norm of the combined generator."""
    H = effective_channel(channels, theta)
    return float(np.sum(np.abs(H.matrix.values) ** 2))


def qpsk_awgn_ber(snr_db: float | np.ndarray) -> float | np.ndarray:
    """Gray QPSK bit error rate over AWGN: 0.5 * erfc(sqrt(SNR / 2))."""
    snr = 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)
    ber = 0.5 * special.erfc(np.sqrt(snr / 2.0))
    return float(ber) if np.ndim(ber) == 0 else ber
