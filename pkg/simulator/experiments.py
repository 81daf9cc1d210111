"""Scenario runners: channel gain vs. L, optimizer convergence, BER sweeps, TDL-C.

Every Monte Carlo trial draws from its own generator
``default_rng([master_seed, crc32(name), trial, L, q, stream, ...])`` so results
do not depend on the worker count or on how many trials follow. Policies share
the channel and noise streams of a trial (common random numbers).
"""

from __future__ import annotations

import logging
import math
import zlib
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from typing import Any

import numpy as np

from channel_model import (
    CascadedChannel,
    SparseChannelMatrix,
    channel_matrices,
    sample_cascaded_channel,
    worst_kernel_capture,
)
from config import ExperimentConfig, LinkConfig, config_to_dict
from dd_core import QamConstellation
from link_sim import SNR_DEFINITION, NoiseModel, TrialResult, ber_trial, channel_gain
from phase_optimizer import (
    GramMatrix,
    PhaseVector,
    gram_matrix,
    optimize_phases,
    optimize_phases_multistart,
    random_phases,
    scp_phases,
)
from results import CODE_VERSION, ResultTable

logger = logging.getLogger(__name__)

# Sub-stream keys appended after (trial, L, q).
STREAM_CHANNEL = 0
STREAM_RANDOM = 1
STREAM_MULTISTART = 2
STREAM_NOISE = 3


def trial_rng(cfg: ExperimentConfig, trial: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(
        [cfg.master_seed, zlib.crc32(cfg.name.encode("utf-8")), trial, *keys]
    )


def _pool_map(fn: Callable[[Any], Any], tasks: Sequence[Any], workers: int) -> list[Any]:
    if workers > 1 and len(tasks) > 1:
        chunksize = max(1, len(tasks) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, tasks, chunksize=chunksize))
    return list(map(fn, tasks))


def mean_stderr(values: Iterable[float]) -> tuple[float, float]:
    """Sample mean and standard error (0 for a single value), summed with fsum."""
    vals = [float(v) for v in values]
    n = len(vals)
    mean = math.fsum(vals) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
    return mean, math.sqrt(var / n)


def to_db(mean: float, stderr: float) -> tuple[float, float]:
    """dB value with a first-order (delta-method) standard error."""
    if mean <= 0:
        return -math.inf, 0.0
    return 10.0 * math.log10(mean), 10.0 / math.log(10.0) * stderr / mean


def binomial_stderr(errors: int, total: int) -> float:
    if total == 0:
        return 0.0
    p = errors / total
    return math.sqrt(p * (1.0 - p) / total)


def base_metadata(cfg: ExperimentConfig) -> dict[str, Any]:
    meta: dict[str, Any] = {
        "config": config_to_dict(cfg),
        "master_seed": cfg.master_seed,
        "code_version": CODE_VERSION,
        "snr_definition": SNR_DEFINITION,
        "kernel_capture": {
            "n_prime_max": cfg.n_prime_max,
            "worst_case_fraction": worst_kernel_capture(cfg.grid.N, cfg.n_prime_max),
        },
    }
    if cfg.tdl is not None:
        meta["tdl"] = {
            "nu_max_hz": cfg.tdl.nu_max,
            "delay_spread_s": cfg.tdl.delay_spread,
            "carrier_frequency_hz": cfg.tdl.carrier_frequency,
            "speed_kmh": cfg.tdl.speed_kmh,
        }
    return meta


# ---------------------------------------------------------------------------
# One trial's channel and phases
# ---------------------------------------------------------------------------


def realize_channel(
    cfg: ExperimentConfig, L: int, trial: int, q: int = 0, ris_mt: LinkConfig | None = None
) -> tuple[CascadedChannel, list[SparseChannelMatrix]]:
    bs_profile, mt_profile = cfg.link_profiles(ris_mt)
    rng = trial_rng(cfg, trial, L, q, STREAM_CHANNEL)
    channel = sample_cascaded_channel(bs_profile, mt_profile, cfg.grid, L, rng)
    return channel, channel_matrices(channel, cfg.grid, cfg.n_prime_max)


def policy_phases(
    cfg: ExperimentConfig,
    policy: str,
    channel: CascadedChannel,
    C: GramMatrix,
    trial: int,
    q: int = 0,
) -> PhaseVector:
    L = channel.L
    if policy == "optimized":
        rng = trial_rng(cfg, trial, L, q, STREAM_MULTISTART)
        theta, trace = optimize_phases_multistart(
            C, rng, cfg.multi_start, cfg.epsilon, cfg.max_iterations
        )
        logger.debug(
            "Trial %d L=%d: optimizer ran %d iterations (converged=%s)",
            trial, L, trace.iterations_run, trace.converged,
        )
        return theta
    if policy == "scp":
        return scp_phases(channel)
    if policy == "random":
        return random_phases(L, trial_rng(cfg, trial, L, q, STREAM_RANDOM))
    raise ValueError(f"Unknown phase policy {policy!r}")


# ---------------------------------------------------------------------------
# Gain sweep
# ---------------------------------------------------------------------------


def _gain_task(task: tuple[ExperimentConfig, int, int, LinkConfig | None, int]) -> list[float]:
    cfg, L, q, ris_mt, trial = task
    channel, mats = realize_channel(cfg, L, trial, q, ris_mt)
    C = gram_matrix(mats)
    return [channel_gain(mats, policy_phases(cfg, p, channel, C, trial, q)) for p in cfg.policies]


def run_gain_sweep(cfg: ExperimentConfig, workers: int = 1) -> ResultTable:
    """Average channel gain G/MN per L and policy, linear and in dB.

    With ``run.ris_mt_tap_counts`` the sweep repeats for equal-power RIS-MT
    links of the first Q taps (metrics suffixed ``_q{Q}``).
    """
    if cfg.scenario != "gain_sweep":
        raise ValueError(f"run_gain_sweep needs scenario gain_sweep, got {cfg.scenario}")
    variants: list[tuple[int, LinkConfig | None, str]] = [(0, None, "")]
    variants += [(q, cfg.ris_mt.with_tap_count(q), f"_q{q}") for q in cfg.ris_mt_tap_counts]

    tasks = [
        (cfg, L, q, link, t)
        for q, link, _ in variants
        for L in cfg.L_values
        for t in range(cfg.realizations)
    ]
    logger.info("Gain sweep %s: %d trials over L=%s", cfg.name, len(tasks), list(cfg.L_values))
    results = _pool_map(_gain_task, tasks, workers)

    table = ResultTable(cfg.scenario, "L", metadata=base_metadata(cfg))
    offset = 0
    for _, _, suffix in variants:
        for L in cfg.L_values:
            block = results[offset : offset + cfg.realizations]
            offset += cfg.realizations
            for j, policy in enumerate(cfg.policies):
                mean, se = mean_stderr(r[j] for r in block)
                db, se_db = to_db(mean, se)
                table.add(L, policy, f"gain{suffix}", mean, se)
                table.add(L, policy, f"gain_db{suffix}", db, se_db)
            logger.info("L=%d%s done", L, suffix)
    return table


# ---------------------------------------------------------------------------
# Convergence
# ---------------------------------------------------------------------------


def _convergence_task(task: tuple[ExperimentConfig, int, int]) -> tuple[list[float], int, bool]:
    cfg, L, trial = task
    _, mats = realize_channel(cfg, L, trial)
    _, trace = optimize_phases(gram_matrix(mats), None, cfg.epsilon, cfg.max_iterations)
    history = trace.objective_per_iteration
    final = history[-1]
    normalized = [g / final if final > 0 else 1.0 for g in history]
    normalized += [normalized[-1]] * (cfg.max_iterations + 1 - len(normalized))
    return normalized, trace.iterations_run, trace.converged


def run_convergence(cfg: ExperimentConfig, workers: int = 1) -> ResultTable:
    """Objective per iteration over the final value, averaged over realizations.

    Traces that stop early are padded with their final value.
    """
    if cfg.scenario != "convergence":
        raise ValueError(f"run_convergence needs scenario convergence, got {cfg.scenario}")
    tasks = [(cfg, L, t) for L in cfg.L_values for t in range(cfg.realizations)]
    logger.info("Convergence %s: %d trials", cfg.name, len(tasks))
    results = _pool_map(_convergence_task, tasks, workers)

    table = ResultTable(cfg.scenario, "iteration", metadata=base_metadata(cfg))
    summary: dict[str, Any] = {}
    for i, L in enumerate(cfg.L_values):
        block = results[i * cfg.realizations : (i + 1) * cfg.realizations]
        for j in range(cfg.max_iterations + 1):
            mean, se = mean_stderr(r[0][j] for r in block)
            table.add(j, "optimized", f"normalized_objective_L{L}", mean, se)
        summary[f"L{L}"] = {
            "mean_iterations": math.fsum(r[1] for r in block) / len(block),
            "converged_fraction": sum(r[2] for r in block) / len(block),
        }
    table.metadata["convergence"] = summary
    return table


# ---------------------------------------------------------------------------
# BER sweeps
# ---------------------------------------------------------------------------


def _ber_task(task: tuple[ExperimentConfig, int, int]) -> list[list[TrialResult]]:
    """Results indexed [snr][policy] for one channel realization."""
    cfg, L, trial = task
    channel, mats = realize_channel(cfg, L, trial)
    C = gram_matrix(mats)
    phases = [policy_phases(cfg, p, channel, C, trial) for p in cfg.policies]
    constellation = QamConstellation.square(cfg.modulation_order)
    out = []
    for s, snr in enumerate(cfg.snr_db):
        noise = NoiseModel.from_snr_db(snr)
        row = []
        for theta in phases:
            rng = trial_rng(cfg, trial, L, 0, STREAM_NOISE, s)
            row.append(
                ber_trial(
                    cfg.grid, mats, theta, constellation, noise, rng,
                    frames=cfg.frames_per_point, domain=cfg.noise_domain,
                )
            )
        out.append(row)
    return out


def _ber_table(cfg: ExperimentConfig, workers: int) -> ResultTable:
    tasks = [(cfg, L, t) for L in cfg.L_values for t in range(cfg.realizations)]
    logger.info(
        "BER %s: %d channel realizations x %d SNR points x %d frames",
        cfg.name, len(tasks), len(cfg.snr_db), cfg.frames_per_point,
    )
    results = _pool_map(_ber_task, tasks, workers)

    table = ResultTable(cfg.scenario, "snr_db", metadata=base_metadata(cfg))
    for i, L in enumerate(cfg.L_values):
        block = results[i * cfg.realizations : (i + 1) * cfg.realizations]
        for s, snr in enumerate(cfg.snr_db):
            for j, policy in enumerate(cfg.policies):
                total = TrialResult(0, 0, 0, 0)
                for r in block:
                    total = total + r[s][j]
                table.add(snr, policy, f"ber_L{L}", total.ber,
                          binomial_stderr(total.bit_errors, total.bits_total))
                table.add(snr, policy, f"fer_L{L}", total.fer,
                          binomial_stderr(total.frame_errors, total.frames_total))
        logger.info("L=%d done", L)
    return table


def run_ber_sweep(cfg: ExperimentConfig, workers: int = 1) -> ResultTable:
    """BER and FER per SNR, policy and L with binomial standard errors."""
    if cfg.scenario != "ber_sweep":
        raise ValueError(f"run_ber_sweep needs scenario ber_sweep, got {cfg.scenario}")
    return _ber_table(cfg, workers)


def run_tdl(cfg: ExperimentConfig, workers: int = 1) -> ResultTable:
    """BER sweep over TDL-C links; the BS-RIS link carries no Doppler."""
    if cfg.scenario != "tdl":
        raise ValueError(f"run_tdl needs scenario tdl, got {cfg.scenario}")
    _, mt_profile = cfg.link_profiles()
    logger.info(
        "TDL-C: nu_max = %.1f Hz, delay taps %s",
        cfg.tdl.nu_max, list(mt_profile.delay_taps),
    )
    table = _ber_table(cfg, workers)
    table.metadata["tdl"]["delay_taps"] = list(mt_profile.delay_taps)
    table.metadata["tdl"]["power_fractions"] = list(mt_profile.power_fractions)
    return table


RUNNERS: dict[str, Callable[[ExperimentConfig, int], ResultTable]] = {
    "gain_sweep": run_gain_sweep,
    "convergence": run_convergence,
    "ber_sweep": run_ber_sweep,
    "tdl": run_tdl,
}
