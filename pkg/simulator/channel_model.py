"""Per-element BS-RIS / RIS-MT multipath channels and their cascaded DD matrices.

Each RIS element i sees a BS-RIS link of P paths and a RIS-MT link of Q paths.
Cascading multiplies gains (with the phase term exp(j2pi nu_g tau_u)), adds
delays and adds Dopplers, giving P*Q cascaded taps per element. A cascaded
element channel acts on the DD frame as a 2D circulant matrix, so it is
stored by its generating column only (see :class:`SparseChannelMatrix`).
"""

from __future__ import annotations

import enum
import logging
import math
import os
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from dd_core import DDGrid

logger = logging.getLogger(__name__)

_DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
TDL_C_TABLE = os.path.join(_DATA_DIR, "tdl_c.txt")

SPEED_OF_LIGHT = 299_792_458.0

# Tolerance when checking that a delay sits exactly on a delay bin.
_DELAY_BIN_TOL = 1e-6
_FRAC_SNAP = 1e-9


# ---------------------------------------------------------------------------
# Link paths
# ---------------------------------------------------------------------------


class DopplerModel(str, enum.Enum):
    NONE = "none"
    FIXED = "fixed"
    UNIFORM_COSINE = "uniform_cosine"


@dataclass(frozen=True)
class PathTap:
    """One propagation path: complex gain, delay (s), Doppler (Hz)."""

    gain: complex
    delay: float
    doppler: float = 0.0

    def __post_init__(self) -> None:
        if self.delay < 0:
            raise ValueError(f"Path delay must be >= 0, got {self.delay}")


@dataclass(frozen=True)
class PathSet:
    taps: tuple[PathTap, ...]

    def __len__(self) -> int:
        return len(self.taps)

    def __iter__(self) -> Iterator[PathTap]:
        return iter(self.taps)


@dataclass(frozen=True)
class LinkProfile:
    """Statistical description of one link, shared by every RIS element.

    ``doppler_values`` (Hz) is the list drawn from under the ``fixed`` model;
    ``nu_max`` (Hz) scales the ``uniform_cosine`` model.
    """

    delay_taps: tuple[int, ...]
    power_fractions: tuple[float, ...]
    doppler_model: DopplerModel = DopplerModel.NONE
    nu_max: float = 0.0
    doppler_values: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "delay_taps", tuple(int(d) for d in self.delay_taps))
        object.__setattr__(self, "power_fractions", tuple(float(p) for p in self.power_fractions))
        object.__setattr__(self, "doppler_model", DopplerModel(self.doppler_model))
        object.__setattr__(self, "doppler_values", tuple(float(v) for v in self.doppler_values))

        if not self.delay_taps:
            raise ValueError("Link profile needs at least one path")
        if len(self.delay_taps) != len(self.power_fractions):
            raise ValueError(
                f"delay_taps ({len(self.delay_taps)}) and power_fractions "
                f"({len(self.power_fractions)}) differ in length"
            )
        if len(set(self.delay_taps)) != len(self.delay_taps):
            raise ValueError(f"delay_taps must be distinct, got {list(self.delay_taps)}")
        if min(self.delay_taps) < 0:
            raise ValueError(f"delay_taps must be >= 0, got {list(self.delay_taps)}")
        if min(self.power_fractions) < 0:
            raise ValueError("power_fractions must be non-negative")
        if not math.isclose(math.fsum(self.power_fractions), 1.0, abs_tol=1e-9):
            raise ValueError(
                f"power_fractions must sum to 1, got {math.fsum(self.power_fractions)}"
            )
        if self.nu_max < 0:
            raise ValueError(f"nu_max must be >= 0, got {self.nu_max}")
        if self.doppler_model is DopplerModel.FIXED and not self.doppler_values:
            raise ValueError("The fixed Doppler model needs a non-empty doppler_values list")

    @property
    def path_count(self) -> int:
        return len(self.delay_taps)

    @classmethod
    def equal(cls, delay_taps: Sequence[int], **doppler) -> LinkProfile:
        """Profile with equal average power on every tap."""
        p = 1.0 / len(delay_taps)
        return cls(tuple(delay_taps), (p,) * len(delay_taps), **doppler)

    @classmethod
    def dominant(
        cls,
        delay_taps: Sequence[int],
        strong_fraction: float = 0.7,
        strong_index: int = 0,
        **doppler,
    ) -> LinkProfile:
        """One tap holds ``strong_fraction`` of the power, the rest split equally."""
        n = len(delay_taps)
        if n == 1:
            return cls(tuple(delay_taps), (1.0,), **doppler)
        if not 0.0 < strong_fraction < 1.0:
            raise ValueError(f"strong_fraction must be in (0, 1), got {strong_fraction}")
        powers = [(1.0 - strong_fraction) / (n - 1)] * n
        powers[strong_index] = strong_fraction
        return cls(tuple(delay_taps), tuple(powers), **doppler)


def sample_doppler(
    model: DopplerModel | str,
    nu_max: float,
    rng: np.random.Generator,
    values: Sequence[float] = (),
) -> float:
    """Draw one Doppler shift in Hz.

    uniform_cosine: nu_max * cos(phi), phi ~ U[0, 2pi). fixed: uniform choice
    from ``values``. none: 0.
    """
    model = DopplerModel(model)
    if model is DopplerModel.UNIFORM_COSINE:
        if nu_max == 0.0:
            return 0.0
        return float(nu_max * math.cos(rng.uniform(0.0, 2.0 * math.pi)))
    if model is DopplerModel.FIXED:
        return float(values[int(rng.integers(len(values)))])
    return 0.0


def sample_link_paths(profile: LinkProfile, grid: DDGrid, rng: np.random.Generator) -> PathSet:
    """Draw CN(0, sigma_p^2) gains, grid-aligned delays and per-path Dopplers."""
    if max(profile.delay_taps) >= grid.M:
        raise ValueError(
            f"Delay tap {max(profile.delay_taps)} does not fit in M = {grid.M} delay bins"
        )
    sigma = np.sqrt(np.asarray(profile.power_fractions) / 2.0)
    n = profile.path_count
    gains = sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    taps = []
    for p in range(n):
        nu = sample_doppler(profile.doppler_model, profile.nu_max, rng, profile.doppler_values)
        taps.append(
            PathTap(complex(gains[p]), profile.delay_taps[p] * grid.delay_resolution, nu)
        )
    return PathSet(tuple(taps))


# ---------------------------------------------------------------------------
# Cascading
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CascadedTap:
    """Cascaded BS-RIS-MT tap with its grid indices.

    ``l`` is the integer delay bin, ``k + k_frac`` the normalized Doppler
    ``doppler * N * T`` with ``k_frac`` in (-0.5, 0.5].
    """

    gain: complex
    delay: float
    doppler: float
    l: int
    k: int
    k_frac: float


@dataclass(frozen=True)
class CascadedChannel:
    """Cascaded taps per RIS element; element i holds P_i * Q_i taps."""

    elements: tuple[tuple[CascadedTap, ...], ...]

    @property
    def L(self) -> int:
        return len(self.elements)

    @property
    def tap_counts(self) -> list[int]:
        return [len(taps) for taps in self.elements]


def doppler_decompose(nu: float, grid: DDGrid) -> tuple[int, float]:
    """Split nu*N*T into integer k and fractional k_frac in (-0.5, 0.5].

    Halves round down, so 2.5 -> (2, 0.5). A remainder within 1e-9 of zero is
    snapped to exactly 0.0 so on-bin Dopplers take the integer path.
    """
    x = nu * grid.N * grid.T
    k = math.ceil(x - 0.5)
    k_frac = x - k
    if abs(k_frac) < _FRAC_SNAP:
        k_frac = 0.0
    return k, k_frac


def _delay_index(delay: float, grid: DDGrid) -> int:
    x = delay * grid.M * grid.delta_f
    l = round(x)
    if abs(x - l) > _DELAY_BIN_TOL:
        raise ValueError(f"Delay {delay} s is not an integer multiple of the delay resolution")
    return l


def cascade(u: PathTap, g: PathTap, grid: DDGrid) -> CascadedTap:
    """Combine a BS-RIS path ``u`` with a RIS-MT path ``g``."""
    delay = u.delay + g.delay
    l = _delay_index(delay, grid)
    if l >= grid.M:
        raise ValueError(
            f"Cascaded delay index {l} overflows the frame (M = {grid.M} delay bins)"
        )
    if g.doppler == 0.0 or u.delay == 0.0:
        gain = g.gain * u.gain
    else:
        gain = g.gain * u.gain * complex(np.exp(2j * np.pi * g.doppler * u.delay))
    doppler = u.doppler + g.doppler
    k, k_frac = doppler_decompose(doppler, grid)
    return CascadedTap(complex(gain), delay, doppler, l, k, k_frac)


def cascade_links(u_set: PathSet, g_set: PathSet, grid: DDGrid) -> list[CascadedTap]:
    """All P*Q pairwise cascades, BS-RIS path index outermost."""
    return [cascade(u, g, grid) for u in u_set for g in g_set]


def sample_cascaded_channel(
    bs_ris: LinkProfile,
    ris_mt: LinkProfile,
    grid: DDGrid,
    L: int,
    rng: np.random.Generator,
) -> CascadedChannel:
    """Draw an L-element cascaded channel.

    Every element shares the delay structure of each link; gains and Dopplers
    are drawn independently per element.
    """
    if L < 1:
        raise ValueError(f"Number of RIS elements must be >= 1, got {L}")
    elements = []
    for _ in range(L):
        u_set = sample_link_paths(bs_ris, grid, rng)
        g_set = sample_link_paths(ris_mt, grid, rng)
        elements.append(tuple(cascade_links(u_set, g_set, grid)))
    return CascadedChannel(tuple(elements))


# ---------------------------------------------------------------------------
# DD spreading kernel
# ---------------------------------------------------------------------------


def _kernel(a: np.ndarray, N: int) -> np.ndarray:
    # (e^{-j2pi a} - 1) / (N e^{-j2pi a/N} - N) in sin-ratio form; a is never a multiple of N.
    return np.exp(-1j * np.pi * a * (N - 1) / N) * np.sin(np.pi * a) / (N * np.sin(np.pi * a / N))


def dd_spreading_weight(n_prime: int, k_frac: float, N: int) -> complex:
    """Fractional-Doppler spreading weight onto Doppler offset ``n_prime``.

    Closed form of (1/N) sum_{n=0}^{N-1} exp(j2pi n (n' + k') / N). The integer
    case (k_frac == 0) is exact: 1 when n' = 0 (mod N), 0 otherwise.
    """
    if k_frac == 0.0:
        return 1.0 + 0j if n_prime % N == 0 else 0j
    return complex(_kernel(np.float64(-n_prime - k_frac), N))


def kernel_energy_fraction(k_frac: float, N: int, n_prime_max: int) -> float:
    """Share of the spreading kernel energy kept by truncating to |n'| <= N'."""
    return math.fsum(
        abs(dd_spreading_weight(n, k_frac, N)) ** 2
        for n in range(-n_prime_max, n_prime_max + 1)
    )


def worst_kernel_capture(N: int, n_prime_max: int, points: int = 101) -> float:
    """Minimum of :func:`kernel_energy_fraction` over k_frac in (-0.5, 0.5]."""
    fracs = np.linspace(-0.5, 0.5, points)[1:]
    return min(kernel_energy_fraction(float(f), N, n_prime_max) for f in fracs)


# ---------------------------------------------------------------------------
# Sparse 2D-circulant channel matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SparseChannelMatrix:
    """MN x MN doubly circulant DD channel stored by its generating column.

    ``rows`` are the sorted nonzero indices of column 0 (vectorized index
    a + N*b for Doppler offset a and delay offset b), ``values`` their entries.
    Entry (row, col) equals the generator at the modular index difference.
    """

    grid: DDGrid
    rows: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        values = np.asarray(self.values, dtype=complex).ravel()
        if rows.shape != values.shape:
            raise ValueError("rows and values must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= self.grid.size):
            raise ValueError(f"Generator rows must lie in [0, {self.grid.size})")
        order = np.argsort(rows, kind="stable")
        rows, values = rows[order], values[order]
        if np.any(np.diff(rows) == 0):
            raise ValueError("Generator rows must be unique")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_generator(cls, grid: DDGrid, column: np.ndarray) -> SparseChannelMatrix:
        col = np.asarray(column, dtype=complex)
        if col.shape != (grid.size,):
            raise ValueError(f"Generator length {col.size} does not match MN = {grid.size}")
        rows = np.flatnonzero(col)
        return cls(grid, rows, col[rows])

    @property
    def nnz(self) -> int:
        return int(self.rows.size)

    @property
    def nnz_coords(self) -> list[tuple[int, complex]]:
        return list(zip(self.rows.tolist(), self.values.tolist()))

    @property
    def generator_column(self) -> np.ndarray:
        col = np.zeros(self.grid.size, dtype=complex)
        col[self.rows] = self.values
        return col

    def generator_frame(self) -> np.ndarray:
        """Generator column laid out as an (N, M) DD frame."""
        return self.generator_column.reshape(self.grid.shape, order="F")

    def frobenius_norm_sq(self) -> float:
        return self.grid.size * float(np.sum(np.abs(self.values) ** 2))

    def to_sparse(self) -> sparse.csr_array:
        """Full MN x MN matrix in CSR form."""
        N, M = self.grid.N, self.grid.M
        cols = np.arange(self.grid.size)
        kc, lc = cols % N, cols // N
        a, b = self.rows % N, self.rows // N
        out_rows = ((a[:, None] + kc[None, :]) % N) + N * ((b[:, None] + lc[None, :]) % M)
        data = np.repeat(self.values[:, None], cols.size, axis=1)
        out_cols = np.broadcast_to(cols, out_rows.shape)
        return sparse.csr_array(
            (data.ravel(), (out_rows.ravel(), out_cols.ravel())),
            shape=(self.grid.size, self.grid.size),
        )

    def to_dense(self) -> np.ndarray:
        return dense_circulant(self.grid, self.generator_column)


def dense_circulant(grid: DDGrid, column: np.ndarray) -> np.ndarray:
    """MN x MN matrix with entry (r, c) = column[(k_r - k_c) mod N + N((l_r - l_c) mod M)]."""
    N, M = grid.N, grid.M
    idx = np.arange(grid.size)
    k, l = idx % N, idx // N
    diff = ((k[:, None] - k[None, :]) % N) + N * ((l[:, None] - l[None, :]) % M)
    return np.asarray(column)[diff]


def _spreading_weights(k_frac: float, N: int, n_prime_max: int) -> tuple[np.ndarray, np.ndarray]:
    if k_frac == 0.0:
        return np.array([0]), np.array([1.0 + 0j])
    n_primes = np.arange(-n_prime_max, n_prime_max + 1)
    return n_primes, _kernel(-n_primes - k_frac, N)


def build_channel_matrix(
    taps: Sequence[CascadedTap], grid: DDGrid, n_prime_max: int = 5
) -> SparseChannelMatrix:
    """Generator column of the DD channel of one RIS element.

    Each tap adds h * exp(-j2pi nu tau) * w(n', k_frac) at Doppler offset
    (k - n') mod N and delay offset l for |n'| <= N'. Coinciding offsets add.
    """
    if not 0 <= n_prime_max < grid.N / 2:
        raise ValueError(f"n_prime_max must satisfy 0 <= N' < N/2, got {n_prime_max} for N = {grid.N}")
    column = np.zeros(grid.size, dtype=complex)
    for tap in taps:
        if not 0 <= tap.l < grid.M:
            raise ValueError(f"Tap delay index {tap.l} outside [0, {grid.M})")
        base = tap.gain * np.exp(-2j * np.pi * tap.doppler * tap.delay)
        n_primes, weights = _spreading_weights(tap.k_frac, grid.N, n_prime_max)
        rows = ((tap.k - n_primes) % grid.N) + grid.N * tap.l
        np.add.at(column, rows, base * weights)
    return SparseChannelMatrix.from_generator(grid, column)


def channel_matrices(
    channel: CascadedChannel, grid: DDGrid, n_prime_max: int = 5
) -> list[SparseChannelMatrix]:
    return [build_channel_matrix(taps, grid, n_prime_max) for taps in channel.elements]


def apply_channel(H: SparseChannelMatrix, x: np.ndarray) -> np.ndarray:
    """H @ x as a 2D circular convolution of the frame form of x with the generator."""
    v = np.asarray(x, dtype=complex)
    if v.shape != (H.grid.size,):
        raise ValueError(f"Input length {v.size} does not match MN = {H.grid.size}")
    x_frame = v.reshape(H.grid.shape, order="F")
    y = np.fft.ifft2(np.fft.fft2(H.generator_frame()) * np.fft.fft2(x_frame))
    return y.ravel(order="F")


def combine_channels(
    channels: Sequence[SparseChannelMatrix], weights: Sequence[complex]
) -> SparseChannelMatrix:
    """Generator of sum_i weights[i] * channels[i] (all on one grid)."""
    if len(channels) != len(weights):
        raise ValueError(f"{len(channels)} channels but {len(weights)} weights")
    if not channels:
        raise ValueError("At least one channel is required")
    grid = channels[0].grid
    column = np.zeros(grid.size, dtype=complex)
    for H, w in zip(channels, weights):
        if H.grid != grid:
            raise ValueError("All channels must share one grid")
        np.add.at(column, H.rows, w * H.values)
    return SparseChannelMatrix.from_generator(grid, column)


# ---------------------------------------------------------------------------
# Two-hop TF response
# ---------------------------------------------------------------------------


def two_hop_tf_response(u_set: PathSet, g_set: PathSet, grid: DDGrid) -> np.ndarray:
    """TF response H[n, m] of one element from the link equations, hop by hop.

    A tone at f = m*delta_f leaves the BS-RIS path (u, tau, nu) as a tone at
    f + nu scaled by u*exp(-j2pi(nu + f)tau); the RIS-MT paths then act on
    that shifted tone. The result is read at t = n*T relative to the input tone.
    """
    t = np.arange(grid.N)[:, None] * grid.T
    f = np.arange(grid.M)[None, :] * grid.delta_f
    response = np.zeros(grid.shape, dtype=complex)
    for u in u_set:
        hop1 = u.gain * np.exp(-2j * np.pi * (u.doppler + f) * u.delay)
        f1 = f + u.doppler
        for g in g_set:
            hop2 = g.gain * np.exp(-2j * np.pi * (g.doppler + f1) * g.delay)
            response += hop1 * hop2 * np.exp(2j * np.pi * (u.doppler + g.doppler) * t)
    return response


# ---------------------------------------------------------------------------
# TDL-C
# ---------------------------------------------------------------------------


def load_tdl_c_table(path: str = TDL_C_TABLE) -> np.ndarray:
    """Rows of (normalized delay, power dB)."""
    return np.loadtxt(path, comments="#", ndmin=2)


def tdl_c_profile(
    delay_spread: float,
    grid: DDGrid,
    nu_max: float,
    table_path: str = TDL_C_TABLE,
) -> LinkProfile:
    """TDL-C profile quantized onto the delay grid.

    Scaled delays round to the nearest bin (halves up); taps landing on one bin
    merge with summed linear power; powers are renormalized to sum to 1.
    """
    if delay_spread <= 0:
        raise ValueError(f"delay_spread must be positive, got {delay_spread}")
    table = load_tdl_c_table(table_path)
    bins = np.floor(table[:, 0] * delay_spread * grid.M * grid.delta_f + 0.5).astype(int)
    if bins.max() >= grid.M:
        raise ValueError(
            f"TDL-C delay bin {bins.max()} overflows M = {grid.M} for delay_spread {delay_spread}"
        )
    power = 10.0 ** (table[:, 1] / 10.0)
    taps = np.unique(bins)
    merged = np.array([math.fsum(power[bins == b]) for b in taps])
    merged = merged / math.fsum(merged)
    logger.debug("TDL-C quantized to %d taps at bins %s", taps.size, taps.tolist())
    return LinkProfile(
        tuple(taps.tolist()),
        tuple(merged.tolist()),
        DopplerModel.UNIFORM_COSINE,
        nu_max=nu_max,
    )


def max_doppler(carrier_frequency: float, speed_kmh: float) -> float:
    """nu_max = f_c * v / c."""
    return carrier_frequency * (speed_kmh / 3.6) / SPEED_OF_LIGHT


# ---------------------------------------------------------------------------
# Text fixtures
# ---------------------------------------------------------------------------


def write_cascaded_channel(channel: CascadedChannel, grid: DDGrid, path: str) -> None:
    """Write one tap per line: element l k k_frac gain_re gain_im delay doppler."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# grid {grid.M} {grid.N} {grid.delta_f!r} {grid.T!r}\n")
        for i, taps in enumerate(channel.elements):
            for tap in taps:
                f.write(
                    f"{i} {tap.l} {tap.k} {tap.k_frac!r} {tap.gain.real!r} "
                    f"{tap.gain.imag!r} {tap.delay!r} {tap.doppler!r}\n"
                )


def read_cascaded_channel(path: str) -> tuple[CascadedChannel, DDGrid]:
    grid: DDGrid | None = None
    elements: dict[int, list[CascadedTap]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "#":
                if len(parts) == 6 and parts[1] == "grid":
                    grid = DDGrid(int(parts[2]), int(parts[3]), float(parts[4]), float(parts[5]))
                continue
            if len(parts) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            i = int(parts[0])
            elements.setdefault(i, []).append(
                CascadedTap(
                    complex(float(parts[4]), float(parts[5])),
                    float(parts[6]),
                    float(parts[7]),
                    int(parts[1]),
                    int(parts[2]),
                    float(parts[3]),
                )
            )
    if grid is None:
        raise ValueError(f"{path}: missing '# grid' header")
    if sorted(elements) != list(range(len(elements))):
        raise ValueError(f"{path}: element indices are not contiguous from 0")
    return CascadedChannel(tuple(tuple(elements[i]) for i in range(len(elements)))), grid
