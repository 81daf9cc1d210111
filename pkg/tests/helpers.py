"""Shared test helpers: reference implementations used as oracles."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
import yaml

from channel_model import CascadedTap
from dd_core import DDGrid

PROJECT_ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = PROJECT_ROOT / "configs"

slow = pytest.mark.slow


def direct_isfft(x: np.ndarray) -> np.ndarray:
    """X[n,m] = 1/sqrt(MN) sum_k sum_l x[k,l] exp(j2pi(nk/N - ml/M)) by explicit sums."""
    N, M = x.shape
    n = np.arange(N)[:, None, None, None]
    m = np.arange(M)[None, :, None, None]
    k = np.arange(N)[None, None, :, None]
    l = np.arange(M)[None, None, None, :]
    kernel = np.exp(2j * np.pi * (n * k / N - m * l / M))
    return np.sum(kernel * x[None, None, :, :], axis=(2, 3)) / np.sqrt(M * N)


def direct_sfft(Z: np.ndarray) -> np.ndarray:
    """z[k,l] = 1/sqrt(MN) sum_n sum_m Z[n,m] exp(-j2pi(nk/N - ml/M)) by explicit sums."""
    N, M = Z.shape
    k = np.arange(N)[:, None, None, None]
    l = np.arange(M)[None, :, None, None]
    n = np.arange(N)[None, None, :, None]
    m = np.arange(M)[None, None, None, :]
    kernel = np.exp(-2j * np.pi * (n * k / N - m * l / M))
    return np.sum(kernel * Z[None, None, :, :], axis=(2, 3)) / np.sqrt(M * N)


def geometric_weight(n_prime: int, k_frac: float, N: int) -> complex:
    """(1/N) sum_{n=0}^{N-1} exp(j2pi n (n' + k') / N), term by term."""
    n = np.arange(N)
    return complex(np.sum(np.exp(2j * np.pi * n * (n_prime + k_frac) / N)) / N)


def _tap_coefficients(tap: CascadedTap, N: int, n_prime_max: int) -> list[tuple[int, complex]]:
    base = tap.gain * np.exp(-2j * np.pi * tap.doppler * tap.delay)
    if tap.k_frac == 0.0:
        return [(0, complex(base))]
    return [
        (n, complex(base * geometric_weight(n, tap.k_frac, N)))
        for n in range(-n_prime_max, n_prime_max + 1)
    ]


def naive_dd_channel(
    taps: list[CascadedTap], grid: DDGrid, x: np.ndarray, n_prime_max: int
) -> np.ndarray:
    """z[k,l] = sum_taps sum_n' coeff * x[(k - k_t + n') mod N, (l - l_t) mod M], looped."""
    N, M = grid.N, grid.M
    z = np.zeros((N, M), dtype=complex)
    for k in range(N):
        for l in range(M):
            for tap in taps:
                for n_prime, coeff in _tap_coefficients(tap, N, n_prime_max):
                    z[k, l] += coeff * x[(k - tap.k + n_prime) % N, (l - tap.l) % M]
    return z


def naive_dense_channel(taps: list[CascadedTap], grid: DDGrid, n_prime_max: int) -> np.ndarray:
    """MN x MN matrix filled by looping the DD input-output relation per output index."""
    N, M = grid.N, grid.M
    H = np.zeros((grid.size, grid.size), dtype=complex)
    for k in range(N):
        for l in range(M):
            r = k + N * l
            for tap in taps:
                for n_prime, coeff in _tap_coefficients(tap, N, n_prime_max):
                    c = (k - tap.k + n_prime) % N + N * ((l - tap.l) % M)
                    H[r, c] += coeff
    return H


def random_taps(
    grid: DDGrid,
    rng: np.random.Generator,
    count: int = 4,
    fractional: bool = True,
    max_k: int = 2,
) -> list[CascadedTap]:
    """Random cascaded taps on integer delay bins, optionally with fractional Doppler."""
    taps = []
    for _ in range(count):
        l = int(rng.integers(0, grid.M))
        k = int(rng.integers(-max_k, max_k + 1))
        k_frac = float(rng.uniform(-0.45, 0.45)) if fractional else 0.0
        gain = complex(rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2)
        taps.append(
            CascadedTap(
                gain=gain,
                delay=l * grid.delay_resolution,
                doppler=(k + k_frac) * grid.doppler_resolution,
                l=l,
                k=k,
                k_frac=k_frac,
            )
        )
    return taps


def _propagate(signal, paths, grid: DDGrid):
    """One hop sum_p gain * exp(j2pi nu (t - tau)) * s(t - tau), sampled per OTFS symbol.

    Signals are callables of ``d``, the delay still to be added downstream, and
    return samples [n, q] at t = nT + qT/M. The Doppler phase is taken at the
    symbol instant nT - d, delays are whole samples applied cyclically (a
    per-symbol cyclic prefix longer than the total delay).
    """
    n = np.arange(grid.N)[:, None]

    def received(d: float) -> np.ndarray:
        out = np.zeros(grid.shape, dtype=complex)
        for p in paths:
            shift = round(p.delay * grid.M * grid.delta_f)
            phase = np.exp(2j * np.pi * p.doppler * (n * grid.T - d - p.delay))
            out += p.gain * phase * np.roll(signal(d + p.delay), shift, axis=1)
        return out

    return received


def two_hop_waveform(x: np.ndarray, u_paths, g_paths, grid: DDGrid) -> np.ndarray:
    """DD output of one RIS element found by pushing time samples through both hops.

    ISFFT, per-symbol IFFT (Heisenberg), BS-RIS hop, RIS-MT hop, per-symbol
    FFT (Wigner), SFFT. Returns the received frame indexed [k, l].
    """
    s = np.fft.ifft(direct_isfft(x), axis=1, norm="ortho")
    at_mt = _propagate(_propagate(lambda d: s, u_paths, grid), g_paths, grid)(0.0)
    return direct_sfft(np.fft.fft(at_mt, axis=1, norm="ortho"))


def random_frame(grid: DDGrid, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)


def write_yaml(path: Path, data: dict) -> str:
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return str(path)
