"""Experiment configuration: YAML loading, defaults, validation and echo.

A config file has a top-level ``scenario`` (and optional ``name``) plus the
sections ``grid``, ``links`` (``bs_ris`` / ``ris_mt``), ``run`` and, for the
``tdl`` scenario only, ``tdl``. Missing keys take the scenario's defaults;
unknown keys are rejected with the dotted key in the message.
"""

from __future__ import annotations

import copy
import math
import os
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any

import yaml

from channel_model import DopplerModel, LinkProfile, max_doppler, tdl_c_profile
from dd_core import DDGrid, QamConstellation

SCENARIOS = ("gain_sweep", "convergence", "ber_sweep", "tdl")
POLICIES = ("optimized", "scp", "random")
POWER_PROFILES = ("equal", "dominant", "custom")
NOISE_DOMAINS = ("dd", "tf")

ENV_WORKERS = "RIS_OTFS_WORKERS"
ENV_LOG_LEVEL = "RIS_OTFS_LOG_LEVEL"


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


# ---------------------------------------------------------------------------
# Config types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinkConfig:
    """One link as written in the config; Doppler bins are in units of 1/(NT)."""

    delay_taps: tuple[int, ...] = (0, 1, 2, 3)
    power_profile: str = "equal"
    power_fractions: tuple[float, ...] = ()
    strong_fraction: float = 0.7
    doppler: str = "none"
    doppler_bins: tuple[float, ...] = ()
    nu_max: float = 0.0

    def with_tap_count(self, q: int) -> LinkConfig:
        """The first ``q`` delay taps with equal power, same Doppler model."""
        return LinkConfig(
            delay_taps=self.delay_taps[:q],
            power_profile="equal",
            doppler=self.doppler,
            doppler_bins=self.doppler_bins,
            nu_max=self.nu_max,
        )

    def to_profile(self, grid: DDGrid) -> LinkProfile:
        doppler = {
            "doppler_model": DopplerModel(self.doppler),
            "nu_max": self.nu_max,
            "doppler_values": tuple(b * grid.doppler_resolution for b in self.doppler_bins),
        }
        if self.power_profile == "dominant":
            return LinkProfile.dominant(self.delay_taps, self.strong_fraction, **doppler)
        if self.power_profile == "custom":
            return LinkProfile(self.delay_taps, self.power_fractions, **doppler)
        return LinkProfile.equal(self.delay_taps, **doppler)


@dataclass(frozen=True)
class TdlConfig:
    delay_spread: float = 100e-9
    carrier_frequency: float = 4e9
    speed_kmh: float = 500.0

    @property
    def nu_max(self) -> float:
        return max_doppler(self.carrier_frequency, self.speed_kmh)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    name: str
    grid: DDGrid
    L_values: tuple[int, ...]
    policies: tuple[str, ...]
    snr_db: tuple[float, ...]
    realizations: int
    frames_per_point: int
    epsilon: float
    max_iterations: int
    n_prime_max: int
    multi_start: int
    master_seed: int
    modulation_order: int
    noise_domain: str
    ris_mt_tap_counts: tuple[int, ...] = ()
    bs_ris: LinkConfig | None = None
    ris_mt: LinkConfig | None = None
    tdl: TdlConfig | None = None

    def link_profiles(self, ris_mt: LinkConfig | None = None) -> tuple[LinkProfile, LinkProfile]:
        """(BS-RIS, RIS-MT) profiles; ``ris_mt`` overrides the configured RIS-MT link."""
        if self.tdl is not None:
            moving = tdl_c_profile(self.tdl.delay_spread, self.grid, self.tdl.nu_max)
            fixed = LinkProfile(moving.delay_taps, moving.power_fractions)
            return fixed, moving
        assert self.bs_ris is not None and self.ris_mt is not None
        return self.bs_ris.to_profile(self.grid), (ris_mt or self.ris_mt).to_profile(self.grid)


# ---------------------------------------------------------------------------
# Defaults
# ---------------------------------------------------------------------------

_LINK_DEFAULTS: dict[str, dict[str, Any]] = {
    "bs_ris": {"delay_taps": [0, 1, 2, 3], "doppler": "none"},
    "ris_mt": {"delay_taps": [0, 1, 2, 3], "doppler": "fixed", "doppler_bins": [-1, 0, 1]},
}

_SCENARIO_DEFAULTS: dict[str, dict[str, Any]] = {
    "gain_sweep": {
        "grid": {"M": 32, "N": 16},
        "run": {"L_values": [8, 16, 32, 64, 128], "policies": list(POLICIES), "realizations": 100},
    },
    "convergence": {
        "grid": {"M": 32, "N": 16},
        "run": {"L_values": [32], "policies": ["optimized"], "realizations": 100},
    },
    "ber_sweep": {
        "grid": {"M": 16, "N": 8},
        "run": {
            "L_values": [16],
            "policies": list(POLICIES),
            "snr_db": [-10, -8, -6, -4, -2, 0],
            "realizations": 50,
        },
    },
    "tdl": {
        "grid": {"M": 128, "N": 16},
        "run": {
            "L_values": [16],
            "policies": list(POLICIES),
            "snr_db": [-10, -8, -6, -4, -2, 0],
            "realizations": 20,
        },
    },
}

_GRID_KEYS = ("M", "N", "delta_f")
_LINK_KEYS = (
    "delay_taps",
    "power_profile",
    "power_fractions",
    "strong_fraction",
    "doppler",
    "doppler_bins",
    "nu_max",
)
_RUN_KEYS = (
    "L_values",
    "policies",
    "snr_db",
    "realizations",
    "frames_per_point",
    "epsilon",
    "max_iterations",
    "n_prime_max",
    "multi_start",
    "master_seed",
    "modulation_order",
    "noise_domain",
    "ris_mt_tap_counts",
)
_TDL_KEYS = ("delay_spread", "carrier_frequency", "speed_kmh")
_TOP_KEYS = ("scenario", "name", "grid", "links", "run", "tdl")


# ---------------------------------------------------------------------------
# Value parsing
# ---------------------------------------------------------------------------


def parse_list(value: Any, key: str, kind: type = int) -> list:
    """Parse a YAML list or a string like '8,16,32' or '0:10:2'.

    ``start:stop[:step]`` expands with an inclusive stop. A scalar becomes a
    one-element list.
    """
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        items = list(value)
    elif isinstance(value, str):
        items = []
        for part in value.split(","):
            part = part.strip()
            if not part:
                continue
            if ":" in part:
                pieces = [p.strip() for p in part.split(":")]
                if len(pieces) not in (2, 3):
                    raise ConfigError(f"{key}: bad range {part!r}")
                try:
                    start, stop = kind(pieces[0]), kind(pieces[1])
                    step = kind(pieces[2]) if len(pieces) == 3 else kind(1)
                except ValueError as e:
                    raise ConfigError(f"{key}: bad range {part!r}") from e
                if step <= 0:
                    raise ConfigError(f"{key}: range step must be positive in {part!r}")
                count = int(math.floor((stop - start) / step + 1e-9)) + 1
                items.extend(start + i * step for i in range(max(count, 0)))
            else:
                items.append(part)
    else:
        items = [value]

    out = []
    for item in items:
        try:
            if kind is int and isinstance(item, float) and not item.is_integer():
                raise ValueError(item)
            out.append(kind(item))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{key}: cannot read {item!r} as {kind.__name__}") from e
    return out


def _int(value: Any, key: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    try:
        number = int(value)
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
    except ValueError as e:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from e
    if minimum is not None and number < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {number}")
    return number


def _float(value: Any, key: str, positive: bool = False, nonnegative: bool = False) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    try:
        number = float(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from e
    if not math.isfinite(number):
        raise ConfigError(f"{key} must be finite, got {number}")
    if positive and number <= 0:
        raise ConfigError(f"{key} must be > 0, got {number}")
    if nonnegative and number < 0:
        raise ConfigError(f"{key} must be >= 0, got {number}")
    return number


def _choice(value: Any, key: str, options: tuple[str, ...]) -> str:
    if value not in options:
        raise ConfigError(f"{key} must be one of {', '.join(options)}, got {value!r}")
    return str(value)


def _mapping(value: Any, key: str, allowed: tuple[str, ...]) -> dict[str, Any]:
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"{key} must be a mapping, got {type(value).__name__}")
    for name in value:
        if name not in allowed:
            dotted = f"{key}.{name}" if key else str(name)
            raise ConfigError(f"Unknown config key: {dotted}")
    return dict(value)


def _merged(defaults: Mapping[str, Any], given: Mapping[str, Any]) -> dict[str, Any]:
    out = copy.deepcopy(dict(defaults))
    out.update(given)
    return out


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------


def _parse_grid(raw: dict[str, Any]) -> DDGrid:
    M = _int(raw["M"], "grid.M", minimum=1)
    N = _int(raw["N"], "grid.N", minimum=1)
    delta_f = _float(raw.get("delta_f", 15e3), "grid.delta_f", positive=True)
    return DDGrid(M, N, delta_f)


def _parse_link(raw: dict[str, Any], key: str, grid: DDGrid) -> LinkConfig:
    taps = parse_list(raw.get("delay_taps"), f"{key}.delay_taps", int)
    if not taps:
        raise ConfigError(f"{key}.delay_taps must not be empty")
    if len(set(taps)) != len(taps):
        raise ConfigError(f"{key}.delay_taps must be distinct, got {taps}")
    if min(taps) < 0 or max(taps) >= grid.M:
        raise ConfigError(f"{key}.delay_taps must lie in [0, {grid.M}), got {taps}")

    profile = _choice(raw.get("power_profile", "equal"), f"{key}.power_profile", POWER_PROFILES)
    fractions = parse_list(raw.get("power_fractions"), f"{key}.power_fractions", float)
    if profile == "custom":
        if len(fractions) != len(taps):
            raise ConfigError(
                f"{key}.power_fractions needs {len(taps)} entries, got {len(fractions)}"
            )
        if min(fractions) < 0 or not math.isclose(math.fsum(fractions), 1.0, abs_tol=1e-9):
            raise ConfigError(f"{key}.power_fractions must be non-negative and sum to 1")
    elif fractions:
        raise ConfigError(f"{key}.power_fractions is only used with power_profile: custom")

    strong = _float(raw.get("strong_fraction", 0.7), f"{key}.strong_fraction")
    if not 0.0 < strong < 1.0:
        raise ConfigError(f"{key}.strong_fraction must be in (0, 1), got {strong}")

    doppler = _choice(raw.get("doppler", "none"), f"{key}.doppler", tuple(m.value for m in DopplerModel))
    bins = parse_list(raw.get("doppler_bins"), f"{key}.doppler_bins", float)
    if doppler == DopplerModel.FIXED.value and not bins:
        raise ConfigError(f"{key}.doppler_bins must not be empty for the fixed Doppler model")
    nu_max = _float(raw.get("nu_max", 0.0), f"{key}.nu_max", nonnegative=True)
    return LinkConfig(
        delay_taps=tuple(taps),
        power_profile=profile,
        power_fractions=tuple(fractions),
        strong_fraction=strong,
        doppler=doppler,
        doppler_bins=tuple(bins),
        nu_max=nu_max,
    )


def _parse_tdl(raw: dict[str, Any]) -> TdlConfig:
    return TdlConfig(
        delay_spread=_float(raw.get("delay_spread", 100e-9), "tdl.delay_spread", positive=True),
        carrier_frequency=_float(
            raw.get("carrier_frequency", 4e9), "tdl.carrier_frequency", positive=True
        ),
        speed_kmh=_float(raw.get("speed_kmh", 500.0), "tdl.speed_kmh", nonnegative=True),
    )


def parse_config_dict(raw: Mapping[str, Any]) -> ExperimentConfig:
    """Validate a config mapping and resolve every default."""
    raw = _mapping(raw, "", _TOP_KEYS)
    if "scenario" not in raw or raw["scenario"] is None:
        raise ConfigError("Missing required config key: scenario")
    scenario = _choice(raw["scenario"], "scenario", SCENARIOS)
    name = str(raw.get("name") or scenario)
    defaults = _SCENARIO_DEFAULTS[scenario]

    grid = _parse_grid(_merged(defaults["grid"], _mapping(raw.get("grid"), "grid", _GRID_KEYS)))
    run = _merged(defaults["run"], _mapping(raw.get("run"), "run", _RUN_KEYS))

    L_values = parse_list(run.get("L_values"), "run.L_values", int)
    if not L_values or min(L_values) < 1:
        raise ConfigError(f"run.L_values must be a non-empty list of counts >= 1, got {L_values}")
    policies = parse_list(run.get("policies"), "run.policies", str)
    if not policies:
        raise ConfigError("run.policies must not be empty")
    for p in policies:
        _choice(p, "run.policies", POLICIES)
    if len(set(policies)) != len(policies):
        raise ConfigError(f"run.policies must be distinct, got {policies}")
    snr_db = parse_list(run.get("snr_db"), "run.snr_db", float)
    if scenario in ("ber_sweep", "tdl") and not snr_db:
        raise ConfigError(f"run.snr_db must not be empty for scenario {scenario}")

    n_prime_max = _int(run.get("n_prime_max", min(5, (grid.N - 1) // 2)), "run.n_prime_max", 0)
    if n_prime_max >= grid.N / 2:
        raise ConfigError(f"run.n_prime_max must be < N/2 = {grid.N / 2}, got {n_prime_max}")

    order = _int(run.get("modulation_order", 4), "run.modulation_order", 4)
    try:
        QamConstellation.square(order)
    except ValueError as e:
        raise ConfigError(f"run.modulation_order: {e}") from e

    links_raw = raw.get("links")
    bs_ris = ris_mt = tdl = None
    if scenario == "tdl":
        if links_raw:
            raise ConfigError("links is not used by scenario tdl; set the tdl section instead")
        tdl = _parse_tdl(_mapping(raw.get("tdl"), "tdl", _TDL_KEYS))
        try:
            longest = 2 * max(tdl_c_profile(tdl.delay_spread, grid, tdl.nu_max).delay_taps)
        except ValueError as e:
            raise ConfigError(f"tdl.delay_spread: {e}") from e
        if longest >= grid.M:
            raise ConfigError(
                f"tdl.delay_spread: cascaded delay index {longest} overflows M = {grid.M}"
            )
    else:
        if raw.get("tdl"):
            raise ConfigError(f"tdl is only used by scenario tdl, not {scenario}")
        links = _mapping(links_raw, "links", ("bs_ris", "ris_mt"))
        bs_ris = _parse_link(
            _merged(_LINK_DEFAULTS["bs_ris"], _mapping(links.get("bs_ris"), "links.bs_ris", _LINK_KEYS)),
            "links.bs_ris",
            grid,
        )
        ris_mt = _parse_link(
            _merged(_LINK_DEFAULTS["ris_mt"], _mapping(links.get("ris_mt"), "links.ris_mt", _LINK_KEYS)),
            "links.ris_mt",
            grid,
        )
        # Cascaded delays add, so the two largest taps together must still fit.
        longest = max(bs_ris.delay_taps) + max(ris_mt.delay_taps)
        if longest >= grid.M:
            raise ConfigError(
                f"links.ris_mt.delay_taps: cascaded delay index {longest} overflows M = {grid.M}"
            )

    tap_counts = parse_list(run.get("ris_mt_tap_counts"), "run.ris_mt_tap_counts", int)
    if tap_counts:
        if scenario != "gain_sweep":
            raise ConfigError("run.ris_mt_tap_counts is only used by scenario gain_sweep")
        q_max = len(ris_mt.delay_taps)
        if min(tap_counts) < 1 or max(tap_counts) > q_max:
            raise ConfigError(f"run.ris_mt_tap_counts must lie in [1, {q_max}], got {tap_counts}")

    return ExperimentConfig(
        scenario=scenario,
        name=name,
        grid=grid,
        L_values=tuple(L_values),
        policies=tuple(policies),
        snr_db=tuple(snr_db),
        realizations=_int(run.get("realizations"), "run.realizations", 1),
        frames_per_point=_int(run.get("frames_per_point", 10), "run.frames_per_point", 1),
        epsilon=_float(run.get("epsilon", 1e-4), "run.epsilon", positive=True),
        max_iterations=_int(run.get("max_iterations", 15), "run.max_iterations", 1),
        n_prime_max=n_prime_max,
        multi_start=_int(run.get("multi_start", 1), "run.multi_start", 1),
        master_seed=_int(run.get("master_seed", 0), "run.master_seed", 0),
        modulation_order=order,
        noise_domain=_choice(run.get("noise_domain", "dd"), "run.noise_domain", NOISE_DOMAINS),
        ris_mt_tap_counts=tuple(tap_counts),
        bs_ris=bs_ris,
        ris_mt=ris_mt,
        tdl=tdl,
    )


def _apply_overrides(raw: dict[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    """Set dotted keys (``run.master_seed``) on a copy of ``raw``; None values are skipped."""
    out = copy.deepcopy(raw)
    for dotted, value in overrides.items():
        if value is None:
            continue
        *parents, leaf = dotted.split(".")
        node = out
        for part in parents:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            node = child
        node[leaf] = value
    return out


def parse_config(
    path: str | None = None, overrides: Mapping[str, Any] | None = None
) -> ExperimentConfig:
    """Load a YAML config file, apply dotted-key overrides and validate.

    Overrides win over the file; the file wins over scenario defaults.
    """
    raw: dict[str, Any] = {}
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"Config file not found: {path}")
        try:
            with open(path, encoding="utf-8") as f:
                raw = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Cannot parse config file {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"Config file {path} must hold a mapping at the top level")

    overrides = dict(overrides or {})
    wanted = overrides.pop("scenario", None)
    if wanted is not None:
        if raw.get("scenario") not in (None, wanted):
            raise ConfigError(
                f"scenario {raw['scenario']!r} in {path} does not match the requested {wanted!r}"
            )
        raw["scenario"] = wanted
    return parse_config_dict(_apply_overrides(raw, overrides))


# ---------------------------------------------------------------------------
# Echo
# ---------------------------------------------------------------------------


def _link_to_dict(link: LinkConfig) -> dict[str, Any]:
    return {
        "delay_taps": list(link.delay_taps),
        "power_profile": link.power_profile,
        "power_fractions": list(link.power_fractions),
        "strong_fraction": link.strong_fraction,
        "doppler": link.doppler,
        "doppler_bins": list(link.doppler_bins),
        "nu_max": link.nu_max,
    }


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    """Fully resolved config as plain YAML-safe types; re-parses to ``cfg``."""
    out: dict[str, Any] = {
        "scenario": cfg.scenario,
        "name": cfg.name,
        "grid": {"M": cfg.grid.M, "N": cfg.grid.N, "delta_f": cfg.grid.delta_f},
        "run": {
            "L_values": list(cfg.L_values),
            "policies": list(cfg.policies),
            "snr_db": list(cfg.snr_db),
            "realizations": cfg.realizations,
            "frames_per_point": cfg.frames_per_point,
            "epsilon": cfg.epsilon,
            "max_iterations": cfg.max_iterations,
            "n_prime_max": cfg.n_prime_max,
            "multi_start": cfg.multi_start,
            "master_seed": cfg.master_seed,
            "modulation_order": cfg.modulation_order,
            "noise_domain": cfg.noise_domain,
            "ris_mt_tap_counts": list(cfg.ris_mt_tap_counts),
        },
    }
    if cfg.tdl is not None:
        out["tdl"] = {
            "delay_spread": cfg.tdl.delay_spread,
            "carrier_frequency": cfg.tdl.carrier_frequency,
            "speed_kmh": cfg.tdl.speed_kmh,
        }
    else:
        out["links"] = {"bs_ris": _link_to_dict(cfg.bs_ris), "ris_mt": _link_to_dict(cfg.ris_mt)}
    return out


def env_setting(flag_value: Any, env_name: str, default: Any) -> Any:
    """Flag value if given, else the environment variable, else ``default``."""
    if flag_value is not None:
        return flag_value
    return os.environ.get(env_name) or default
