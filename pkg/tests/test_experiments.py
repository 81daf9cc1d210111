"""Tests for the scenario runners, trial seeding and summary statistics."""

from __future__ import annotations

import math

import numpy as np
import pytest

from config import parse_config, parse_config_dict
from experiments import (
    RUNNERS,
    STREAM_CHANNEL,
    binomial_stderr,
    mean_stderr,
    realize_channel,
    run_ber_sweep,
    run_convergence,
    run_gain_sweep,
    run_tdl,
    to_db,
    trial_rng,
)
from results import ResultRow, render_results
from helpers import CONFIG_DIR, slow


def _gain_cfg_raw(**run) -> dict:
    return {
        "scenario": "gain_sweep",
        "name": "gain_small",
        "grid": {"M": 16, "N": 8},
        "run": {"L_values": [8, 16], "realizations": 10, "master_seed": 5, **run},
    }


def _gain_cfg(**run):
    return parse_config_dict(_gain_cfg_raw(**run))


def _ber_cfg(**run):
    return parse_config_dict(
        {
            "scenario": "ber_sweep",
            "name": "ber_small",
            "grid": {"M": 8, "N": 4},
            "links": {"bs_ris": {"delay_taps": [0, 1]}, "ris_mt": {"delay_taps": [0, 1]}},
            "run": {"L_values": [4], "snr_db": [-5, 5], "realizations": 3, "frames_per_point": 2, **run},
        }
    )


class TestStatistics:
    def test_mean_stderr(self) -> None:
        mean, se = mean_stderr([1.0, 2.0, 3.0])
        assert mean == 2.0
        assert se == pytest.approx(math.sqrt(1 / 3))
        assert mean_stderr([4.0]) == (4.0, 0.0)

    def test_to_db(self) -> None:
        db, se = to_db(10.0, 1.0)
        assert db == pytest.approx(10.0)
        assert se == pytest.approx(10 / math.log(10) / 10)
        assert to_db(0.0, 1.0) == (-math.inf, 0.0)

    def test_binomial_stderr(self) -> None:
        assert binomial_stderr(25, 100) == pytest.approx(math.sqrt(0.25 * 0.75 / 100))
        assert binomial_stderr(0, 0) == 0.0
        assert binomial_stderr(0, 50) == 0.0


class TestTrialRng:
    def test_same_keys_same_stream(self) -> None:
        cfg = _gain_cfg()
        a = trial_rng(cfg, 3, 8, 0, STREAM_CHANNEL).standard_normal(4)
        b = trial_rng(cfg, 3, 8, 0, STREAM_CHANNEL).standard_normal(4)
        np.testing.assert_array_equal(a, b)

    def test_keys_separate_streams(self) -> None:
        cfg = _gain_cfg()
        base = trial_rng(cfg, 3, 8, 0, STREAM_CHANNEL).standard_normal(4)
        for other in (trial_rng(cfg, 4, 8, 0, STREAM_CHANNEL), trial_rng(cfg, 3, 16, 0, STREAM_CHANNEL)):
            assert not np.array_equal(other.standard_normal(4), base)
        renamed = parse_config_dict({**_gain_cfg_raw(), "name": "other"})
        assert not np.array_equal(trial_rng(renamed, 3, 8, 0, STREAM_CHANNEL).standard_normal(4), base)

    def test_realization_is_reproducible(self) -> None:
        cfg = _gain_cfg()
        first, _ = realize_channel(cfg, 8, 2)
        second, _ = realize_channel(cfg, 8, 2)
        assert first == second
        assert first.L == 8


class TestGainSweep:
    def test_rows_and_metadata(self) -> None:
        table = run_gain_sweep(_gain_cfg())
        assert table.x_name == "L"
        assert len(table.rows) == 2 * 3 * 2
        for policy in ("optimized", "scp", "random"):
            linear = table.lookup(policy, "gain")
            db = table.lookup(policy, "gain_db")
            for L in (8.0, 16.0):
                assert db[L].value == pytest.approx(10 * math.log10(linear[L].value))
        meta = table.metadata
        assert meta["master_seed"] == 5
        assert meta["config"]["run"]["realizations"] == 10
        assert meta["kernel_capture"]["n_prime_max"] == 3
        assert 0.9 < meta["kernel_capture"]["worst_case_fraction"] <= 1.0
        assert "snr_definition" in meta and "code_version" in meta

    def test_optimized_beats_random(self) -> None:
        table = run_gain_sweep(_gain_cfg())
        for L in (8.0, 16.0):
            assert table.lookup("optimized", "gain")[L].value > table.lookup("random", "gain")[L].value

    def test_tap_count_variants(self) -> None:
        table = run_gain_sweep(_gain_cfg(L_values=[8], realizations=3, ris_mt_tap_counts=[1, 2]))
        metrics = {r.metric for r in table.rows}
        assert metrics == {"gain", "gain_db", "gain_q1", "gain_db_q1", "gain_q2", "gain_db_q2"}

    def test_deterministic_and_worker_independent(self) -> None:
        cfg = _gain_cfg(realizations=4)
        serial = render_results(run_gain_sweep(cfg))
        assert render_results(run_gain_sweep(cfg)) == serial
        assert render_results(run_gain_sweep(cfg, workers=2)) == serial

    def test_more_realizations_keep_earlier_trials(self) -> None:
        short = realize_channel(_gain_cfg(realizations=2), 8, 1)[0]
        long = realize_channel(_gain_cfg(realizations=50), 8, 1)[0]
        assert short == long

    def test_rejects_other_scenario(self) -> None:
        with pytest.raises(ValueError, match="gain_sweep"):
            run_gain_sweep(_ber_cfg())


def _conv_cfg():
    return parse_config_dict(
        {
            "scenario": "convergence",
            "grid": {"M": 16, "N": 8},
            "run": {"L_values": [8], "realizations": 4, "max_iterations": 10},
        }
    )


def _tdl_cfg(**run):
    return parse_config_dict(
        {
            "scenario": "tdl",
            "grid": {"M": 32, "N": 8},
            "run": {"L_values": [2], "snr_db": [0], "realizations": 1, "frames_per_point": 1, **run},
        }
    )


class TestConvergence:
    def test_normalized_trace(self) -> None:
        cfg = _conv_cfg()
        table = run_convergence(cfg)
        series = table.lookup("optimized", "normalized_objective_L8")
        assert sorted(series) == [float(i) for i in range(11)]
        values = [series[float(i)].value for i in range(11)]
        assert values[-1] == pytest.approx(1.0)
        assert values[0] <= 1.0
        for a, b in zip(values, values[1:]):
            assert b >= a - 1e-12
        summary = table.metadata["convergence"]["L8"]
        assert 1 <= summary["mean_iterations"] <= 10
        assert 0.0 <= summary["converged_fraction"] <= 1.0

    def test_deterministic_and_worker_independent(self) -> None:
        cfg = _conv_cfg()
        serial = render_results(run_convergence(cfg))
        assert render_results(run_convergence(cfg)) == serial
        assert render_results(run_convergence(cfg, workers=2)) == serial


class TestBerSweep:
    def test_rows(self) -> None:
        table = run_ber_sweep(_ber_cfg())
        assert table.x_name == "snr_db"
        assert len(table.rows) == 2 * 3 * 2
        for row in table.rows:
            assert 0.0 <= row.value <= 1.0
            assert row.metric in ("ber_L4", "fer_L4")

    def test_worker_independent(self) -> None:
        cfg = _ber_cfg()
        assert render_results(run_ber_sweep(cfg, workers=2)) == render_results(run_ber_sweep(cfg))

    def test_tf_noise_domain(self) -> None:
        table = run_ber_sweep(_ber_cfg(noise_domain="tf", policies=["optimized"]))
        assert {r.policy for r in table.rows} == {"optimized"}

    def test_16qam(self) -> None:
        table = run_ber_sweep(_ber_cfg(modulation_order=16, policies=["random"]))
        assert table.metadata["config"]["run"]["modulation_order"] == 16
        assert all(0.0 <= r.value <= 1.0 for r in table.rows)


class TestTdl:
    def test_metadata_records_channel(self) -> None:
        table = run_tdl(_tdl_cfg())
        tdl = table.metadata["tdl"]
        assert tdl["nu_max_hz"] == pytest.approx(4e9 * 500 / 3.6 / 299_792_458)
        assert tdl["delay_spread_s"] == 100e-9
        assert math.fsum(tdl["power_fractions"]) == pytest.approx(1.0)
        assert len(tdl["delay_taps"]) == len(tdl["power_fractions"])
        assert len(table.rows) == 3 * 2

    def test_deterministic_and_worker_independent(self) -> None:
        cfg = _tdl_cfg(realizations=3, snr_db=[-4, 4])
        serial = render_results(run_tdl(cfg))
        assert render_results(run_tdl(cfg)) == serial
        assert render_results(run_tdl(cfg, workers=2)) == serial

    def test_runner_table(self) -> None:
        assert set(RUNNERS) == {"gain_sweep", "convergence", "ber_sweep", "tdl"}


def _snr_at_ber(series: dict[float, ResultRow], target: float) -> float:
    """SNR where the BER series first drops through ``target``, log-linear between points."""
    points = sorted(series.items())
    for (x0, r0), (x1, r1) in zip(points, points[1:]):
        if r0.value >= target > r1.value:
            if r1.value == 0.0:
                return x1
            y0, y1 = math.log10(r0.value), math.log10(r1.value)
            return x0 + (y0 - math.log10(target)) / (y0 - y1) * (x1 - x0)
    raise AssertionError(f"BER never crosses {target}: {[(x, r.value) for x, r in points]}")


def _assert_policy_ordering(table, metric: str) -> None:
    """optimized <= scp <= random at every SNR, within 3 binomial standard errors."""
    opt, scp, rand = (table.lookup(p, metric) for p in ("optimized", "scp", "random"))
    for snr in opt:
        assert opt[snr].value <= scp[snr].value + 3 * math.hypot(opt[snr].stderr, scp[snr].stderr)
        assert scp[snr].value <= rand[snr].value + 3 * math.hypot(scp[snr].stderr, rand[snr].stderr)


def _assert_nonincreasing(series: dict[float, ResultRow]) -> None:
    points = sorted(series.items())
    for (_, a), (_, b) in zip(points, points[1:]):
        assert b.value <= a.value + 3 * math.hypot(a.stderr, b.stderr)


class TestBerMonotonicity:
    def test_ber_nonincreasing_in_snr(self) -> None:
        table = run_ber_sweep(_ber_cfg(snr_db=[-10, -5, 0, 5, 10], realizations=4))
        for policy in ("optimized", "scp", "random"):
            series = table.lookup(policy, "ber_L4")
            _assert_nonincreasing(series)
            assert series[10.0].value < series[-10.0].value


@slow
class TestAcceptance:
    def test_gain_scaling(self) -> None:
        cfg = parse_config(
            str(CONFIG_DIR / "gain_sweep_desk.yaml"),
            {"run.L_values": [32, 64, 128], "run.ris_mt_tap_counts": []},
        )
        assert cfg.realizations == 500
        table = run_gain_sweep(cfg)
        opt = {L: r.value for L, r in table.lookup("optimized", "gain_db").items()}
        scp = {L: r.value for L, r in table.lookup("scp", "gain_db").items()}
        rand = {L: r.value for L, r in table.lookup("random", "gain_db").items()}
        assert rand[64] - rand[32] == pytest.approx(3.0, abs=0.5)
        assert rand[128] - rand[64] == pytest.approx(3.0, abs=0.5)
        assert opt[128] - opt[64] == pytest.approx(6.0, abs=1.0)
        assert opt[128] - rand[128] == pytest.approx(10.0, abs=1.5)
        for L in (32.0, 64.0, 128.0):
            assert opt[L] > scp[L] > rand[L]

    def test_convergence_within_ten_iterations(self) -> None:
        cfg = parse_config(str(CONFIG_DIR / "convergence.yaml"))
        series = run_convergence(cfg).lookup("optimized", "normalized_objective_L32")
        assert series[10.0].value >= 0.95
        assert series[0.0].value < series[15.0].value

    @pytest.mark.parametrize("preset", ["ber_equal_desk", "ber_unequal_desk"])
    def test_ber_ordering(self, preset: str) -> None:
        cfg = parse_config(str(CONFIG_DIR / f"{preset}.yaml"))
        assert cfg.realizations * cfg.frames_per_point * 2 * cfg.grid.size >= 200_000
        table = run_ber_sweep(cfg, workers=2)
        metric = f"ber_L{cfg.L_values[0]}"
        _assert_policy_ordering(table, metric)
        for policy in ("optimized", "scp", "random"):
            series = table.lookup(policy, metric)
            _assert_nonincreasing(series)
            values = [r.value for r in series.values()]
            assert max(values) >= 1e-2
            assert min(values) <= 1e-3

    def test_unequal_gain_snr_advantage_over_scp(self) -> None:
        cfg = parse_config(str(CONFIG_DIR / "ber_unequal_desk.yaml"))
        table = run_ber_sweep(cfg, workers=2)
        metric = f"ber_L{cfg.L_values[0]}"
        opt = _snr_at_ber(table.lookup("optimized", metric), 1e-2)
        scp = _snr_at_ber(table.lookup("scp", metric), 1e-2)
        rand = _snr_at_ber(table.lookup("random", metric), 1e-2)
        assert scp - opt >= 2.0
        assert rand > scp

    def test_tdl_ranking(self) -> None:
        cfg = parse_config(
            str(CONFIG_DIR / "tdl_desk.yaml"),
            {"run.snr_db": [-6, -2], "run.realizations": 40, "run.frames_per_point": 1},
        )
        table = run_tdl(cfg, workers=2)
        opt, scp, rand = (table.lookup(p, "ber_L16") for p in ("optimized", "scp", "random"))
        for snr in (-6.0, -2.0):
            assert opt[snr].value < scp[snr].value < rand[snr].value
