"""Synthetic uplink environment: slot geometry, fading channel, DMRS slots.

The channel is a tapped-delay-line Rayleigh model with an exponential power
-delay profile and AR(1) evolution across slots. Everything here is a pure
function of (config, seed, slot_index); the stateful ChannelProcess exists
only to make sequential generation O(1) per slot and is bit-identical to the
pure generate_channel.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, replace

import numpy as np

from .rng import complex_normal, qpsk, stream
from .validation import ConfigurationError, ContractViolation, check_in_range

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

N_TAPS = 8  # TDL length; small vs n_sc so the delay-domain denoiser has headroom

GOOD, POOR = "good", "poor"


@dataclass(frozen=True)
class SlotGeometry:
    n_ant: int = 4
    n_layers: int = 1
    n_prb: int = 12
    n_sym: int = 14
    dmrs_symbols: tuple = (0, 5, 10)
    slot_duration_us: float = 500.0

    def __post_init__(self):
        if min(self.n_ant, self.n_layers, self.n_prb, self.n_sym) < 1:
            raise ConfigurationError("geometry dimensions must be positive")
        if self.slot_duration_us <= 0:
            raise ConfigurationError("slot_duration_us must be > 0")
        syms = tuple(self.dmrs_symbols)
        if list(syms) != sorted(set(syms)) or any(s >= self.n_sym for s in syms):
            raise ConfigurationError("dmrs_symbols must be strictly increasing and < n_sym")

    @property
    def n_sc(self) -> int:
        return 12 * self.n_prb

    @property
    def n_dmrs(self) -> int:
        return len(self.dmrs_symbols)

    @property
    def comb(self) -> np.ndarray:
        """Type-1 comb: even subcarriers of the DMRS symbols."""
        return np.arange(0, self.n_sc, 2)

    @property
    def slot_duration_ns(self) -> int:
        return int(round(self.slot_duration_us * 1000))


@dataclass(frozen=True)
class ScenarioConfig:
    regime: str = GOOD
    base_snr_db: float = 20.0
    interference_prb_mask: tuple = ()  # bool per PRB; empty = all clear
    interference_power_db: float = 3.0
    delay_spread: float = 3.0
    temporal_correlation: float = 0.9
    # Log-normal shadow fading on the serving link; correlation is per slot,
    # so 0.9355 is roughly a 15-slot coherence time. Shadowing is what lets
    # instantaneous PHY readings stray across regime boundaries while windowed
    # MAC rates stay apart.
    shadow_sigma_db: float = 4.0
    shadow_correlation: float = 0.9355
    seed: int = 0
    # The interferer is an asynchronous co-channel transmitter whose multipath
    # arrives this many delay taps late (beyond any cyclic-prefix protection),
    # so its pilot collision shows up as a ghost channel at high delay.
    interference_excess_delay: int = 32
    # Estimator-side PDP constant for the MMSE expert. Production estimators
    # run a fixed profile approximation, so this may differ from delay_spread;
    # None means matched.
    mmse_assumed_delay_spread: float | None = None

    def __post_init__(self):
        if self.regime not in (GOOD, POOR):
            raise ConfigurationError(f"unknown regime {self.regime!r}")
        check_in_range(self.temporal_correlation, 0.0, 1.0 - 1e-12, "temporal_correlation")
        check_in_range(self.shadow_correlation, 0.0, 1.0 - 1e-12, "shadow_correlation")
        if self.delay_spread < 0:
            raise ConfigurationError("delay_spread must be >= 0")
        if self.shadow_sigma_db < 0:
            raise ConfigurationError("shadow_sigma_db must be >= 0")
        if self.interference_excess_delay < 0:
            raise ConfigurationError("interference_excess_delay must be >= 0")
        if self.regime == GOOD and any(self.interference_prb_mask):
            raise ConfigurationError("good regime implies an all-clear interference mask")

    @property
    def assumed_delay_spread(self) -> float:
        if self.mmse_assumed_delay_spread is None:
            return self.delay_spread
        return self.mmse_assumed_delay_spread

    def noise_var(self, n_ant: int = 4) -> float:
        """Per-antenna complex noise variance. Scaled by n_ant so the
        MRC-combined SNR equals base_snr_db (unit E[|H|^2] per branch)."""
        if math.isinf(self.base_snr_db):
            return 0.0
        return n_ant / 10.0 ** (self.base_snr_db / 10.0)

    def interference_var(self) -> float:
        if self.regime == GOOD or not any(self.interference_prb_mask):
            return 0.0
        return 10.0 ** (self.interference_power_db / 10.0)


@dataclass
class ResourceGrid:
    values: np.ndarray        # (n_ant, n_sc, n_sym) received samples
    known_dmrs: np.ndarray    # (n_comb, n_dmrs) unit-magnitude pilots
    geometry: SlotGeometry


def pdp_powers(delay_spread: float, n_taps: int = N_TAPS) -> np.ndarray:
    """Exponential power-delay profile normalized to sum 1."""
    if delay_spread <= 0:
        p = np.zeros(n_taps)
        p[0] = 1.0
        return p
    p = np.exp(-np.arange(n_taps) / delay_spread)
    return p / p.sum()


def _innovation(geometry: SlotGeometry, scenario: ScenarioConfig, slot_index: int,
                sqrt_p: np.ndarray, purpose: str) -> np.ndarray:
    gen = stream(scenario.seed, purpose, slot_index)
    z = complex_normal(gen, (geometry.n_ant, geometry.n_layers, len(sqrt_p)))
    return z * sqrt_p


def _taps_to_freq(taps: np.ndarray, n_sc: int, excess_delay: int = 0) -> np.ndarray:
    # H[..., k] = sum_l taps[..., l] e^{-2pi i (l + excess_delay) k / n_sc}
    h = np.fft.fft(taps, n=n_sc, axis=-1)
    if excess_delay:
        k = np.arange(n_sc)
        h = h * np.exp(-2j * np.pi * excess_delay * k / n_sc)
    return h


class ChannelProcess:
    """Sequential channel source. next_slot() must be called with strictly
    increasing slot indices starting at 0."""

    def __init__(self, geometry: SlotGeometry, scenario: ScenarioConfig,
                 purpose: str = "channel", excess_delay: int = 0,
                 shadowed: bool = True):
        self.geometry = geometry
        self.scenario = scenario
        self.purpose = purpose
        self.excess_delay = excess_delay
        self.shadowed = shadowed
        self._sqrt_p = np.sqrt(pdp_powers(scenario.delay_spread))
        self._taps = None
        self._shadow_db = 0.0
        self._next = 0

    def step_taps(self) -> np.ndarray:
        slot = self._next
        innov = _innovation(self.geometry, self.scenario, slot, self._sqrt_p,
                            self.purpose)
        phi = self.scenario.temporal_correlation
        if self._taps is None:
            self._taps = innov
        else:
            self._taps = phi * self._taps + math.sqrt(1.0 - phi * phi) * innov
        self._next += 1
        if not self.shadowed or self.scenario.shadow_sigma_db == 0:
            return self._taps
        phi_s = self.scenario.shadow_correlation
        z = float(stream(self.scenario.seed, "shadow", slot).standard_normal())
        g = self.scenario.shadow_sigma_db * z
        if slot == 0:
            self._shadow_db = g
        else:
            self._shadow_db = phi_s * self._shadow_db + math.sqrt(1.0 - phi_s * phi_s) * g
        return self._taps * 10.0 ** (self._shadow_db / 20.0)

    def next_slot(self) -> np.ndarray:
        h = _taps_to_freq(self.step_taps(), self.geometry.n_sc, self.excess_delay)
        return np.repeat(h[..., None], self.geometry.n_sym, axis=-1)


def interferer_process(geometry: SlotGeometry, scenario: ScenarioConfig) -> ChannelProcess:
    """Fading process of the co-channel interferer. Its excess delay must stay
    resolvable on the comb (no wrap back under the serving channel taps); the
    serving link's shadow does not apply to it."""
    if scenario.interference_excess_delay + N_TAPS > len(geometry.comb):
        raise ConfigurationError("interference_excess_delay does not fit the comb span")
    return ChannelProcess(geometry, scenario, purpose="interferer",
                          excess_delay=scenario.interference_excess_delay,
                          shadowed=False)


def generate_channel(geometry: SlotGeometry, scenario: ScenarioConfig,
                     slot_index: int) -> np.ndarray:
    """True channel H, shape (n_ant, n_layers, n_sc, n_sym). Pure in
    (scenario.seed, slot_index); replays the AR(1) recursion from slot 0."""
    if slot_index < 0:
        raise ConfigurationError("slot_index must be >= 0")
    proc = ChannelProcess(geometry, scenario)
    for _ in range(slot_index):
        proc.step_taps()
    return proc.next_slot()


def generate_interferer(geometry: SlotGeometry, scenario: ScenarioConfig,
                        slot_index: int) -> np.ndarray:
    """Interferer channel for one slot; pure replay like generate_channel."""
    if slot_index < 0:
        raise ConfigurationError("slot_index must be >= 0")
    proc = interferer_process(geometry, scenario)
    for _ in range(slot_index):
        proc.step_taps()
    return proc.next_slot()


def pilot_sequence(geometry: SlotGeometry, scenario: ScenarioConfig) -> np.ndarray:
    """Fixed unit-magnitude QPSK pilots, (n_comb, n_dmrs); seed-derived,
    slot-independent."""
    gen = stream(scenario.seed, "pilot")
    return qpsk(gen, (len(geometry.comb), geometry.n_dmrs))


def transmit_grid(geometry: SlotGeometry, scenario: ScenarioConfig,
                  slot_index: int) -> np.ndarray:
    """Transmitted grid X, (n_sc, n_sym): unit-power random QPSK data with
    pilots on the comb REs of the DMRS symbols."""
    gen = stream(scenario.seed, "data", slot_index)
    x = qpsk(gen, (geometry.n_sc, geometry.n_sym))
    pil = pilot_sequence(geometry, scenario)
    for j, sym in enumerate(geometry.dmrs_symbols):
        x[geometry.comb, sym] = pil[:, j]
    return x


def subcarrier_interference_mask(geometry: SlotGeometry,
                                 scenario: ScenarioConfig) -> np.ndarray:
    mask = np.zeros(geometry.n_sc, dtype=bool)
    prbs = np.asarray(scenario.interference_prb_mask, dtype=bool)
    if prbs.size:
        if prbs.size != geometry.n_prb:
            raise ContractViolation(
                f"interference mask covers {prbs.size} PRBs, geometry has {geometry.n_prb}")
        mask = np.repeat(prbs, 12)
    return mask


def interferer_grid(geometry: SlotGeometry, scenario: ScenarioConfig,
                    slot_index: int) -> np.ndarray:
    """Transmit grid of the interferer, (n_sc, n_sym). Co-channel pilot reuse:
    the same comb sequence as the serving cell (worst-case pilot collision),
    random QPSK elsewhere."""
    gen = stream(scenario.seed, "interferer-data", slot_index)
    x = qpsk(gen, (geometry.n_sc, geometry.n_sym))
    pil = pilot_sequence(geometry, scenario)
    for j, sym in enumerate(geometry.dmrs_symbols):
        x[geometry.comb, sym] = pil[:, j]
    return x


def synthesize_uplink_slot(geometry: SlotGeometry, channel: np.ndarray,
                           scenario: ScenarioConfig, slot_index: int,
                           interferer: np.ndarray | None = None) -> ResourceGrid:
    """Received grid Y = H*X + Hi*Xi + W. The interference term is a second
    transmission through its own channel; on pilot REs it adds a coherent
    ghost at the interferer's excess delay rather than plain noise."""
    expected = (geometry.n_ant, geometry.n_layers, geometry.n_sc, geometry.n_sym)
    if channel.shape != expected:
        raise ContractViolation(f"channel shape {channel.shape}, expected {expected}")
    x = transmit_grid(geometry, scenario, slot_index)
    y = channel[:, 0, :, :] * x[None, :, :]

    nv = scenario.noise_var(geometry.n_ant)
    if nv > 0:
        w = complex_normal(stream(scenario.seed, "awgn", slot_index), y.shape)
        y = y + math.sqrt(nv) * w

    iv = scenario.interference_var()
    if iv > 0:
        if interferer is None:
            interferer = generate_interferer(geometry, scenario, slot_index)
        if interferer.shape != expected:
            raise ContractViolation(
                f"interferer shape {interferer.shape}, expected {expected}")
        mask = subcarrier_interference_mask(geometry, scenario)
        x_i = interferer_grid(geometry, scenario, slot_index)
        y[:, mask, :] += math.sqrt(iv) * interferer[:, 0, mask, :] * x_i[None, mask, :]

    return ResourceGrid(values=y, known_dmrs=pilot_sequence(geometry, scenario),
                        geometry=geometry)


# ---------------------------------------------------------------------------
# configuration file schema (TOML):
#   regime, snr_db, delay_spread, temporal_correlation, seed
#   [shadow]       sigma_db, correlation
#   [interference] prbs = [...], power_db, excess_delay
#   [geometry]     n_prb, n_ant, ... (optional)
#   [mmse]         assumed_delay_spread (optional)
#   [pipeline]     window_length, lcid4_fraction, crc_margin_db, truncation
#   [costs]        mmse.*, ai.*, switch_ai_us, switch_mmse_us, dt_us, framework_us

def read_config(path) -> dict:
    with open(path, "rb") as f:
        return tomllib.load(f)


def scenario_from_dict(cfg: dict, n_prb: int | None = None) -> tuple[SlotGeometry, ScenarioConfig]:
    geo_cfg = cfg.get("geometry", {})
    if n_prb is not None:
        geo_cfg = dict(geo_cfg, n_prb=n_prb)
    allowed = {"n_ant", "n_layers", "n_prb", "n_sym", "dmrs_symbols", "slot_duration_us"}
    bad = set(geo_cfg) - allowed
    if bad:
        raise ConfigurationError(f"unknown geometry keys: {sorted(bad)}")
    if "dmrs_symbols" in geo_cfg:
        geo_cfg["dmrs_symbols"] = tuple(geo_cfg["dmrs_symbols"])
    geometry = SlotGeometry(**geo_cfg)

    interference = cfg.get("interference", {})
    prbs = interference.get("prbs", [])
    mask = np.zeros(geometry.n_prb, dtype=bool)
    for p in prbs:
        if not 0 <= p < geometry.n_prb:
            raise ConfigurationError(f"interference PRB {p} outside 0..{geometry.n_prb - 1}")
        mask[p] = True
    scenario = ScenarioConfig(
        regime=cfg.get("regime", GOOD),
        base_snr_db=float(cfg.get("snr_db", 20.0)),
        interference_prb_mask=tuple(bool(b) for b in mask),
        interference_power_db=float(interference.get("power_db", 3.0)),
        interference_excess_delay=int(interference.get("excess_delay", 32)),
        delay_spread=float(cfg.get("delay_spread", 3.0)),
        temporal_correlation=float(cfg.get("temporal_correlation", 0.9)),
        shadow_sigma_db=float(cfg.get("shadow", {}).get("sigma_db", 4.0)),
        shadow_correlation=float(cfg.get("shadow", {}).get("correlation", 0.9355)),
        seed=int(cfg.get("seed", 0)),
        mmse_assumed_delay_spread=cfg.get("mmse", {}).get("assumed_delay_spread"),
    )
    return geometry, scenario


def load_scenario(path) -> tuple[SlotGeometry, ScenarioConfig, dict]:
    cfg = read_config(path)
    geometry, scenario = scenario_from_dict(cfg)
    return geometry, scenario, cfg


def with_seed(scenario: ScenarioConfig, seed: int) -> ScenarioConfig:
    return replace(scenario, seed=seed)
