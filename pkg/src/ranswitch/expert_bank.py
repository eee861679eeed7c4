"""Channel-estimation experts and their cost model.

Two experts fill the bank in this instantiation: the MMSE frequency
interpolator and a delay-domain truncation denoiser standing in for a
learned estimator. Both consume the same raw LS estimate.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .radio_scene import N_TAPS, ResourceGrid, ScenarioConfig, SlotGeometry, pdp_powers
from .validation import ConfigurationError, ContractViolation, EstimatorError

RIDGE = 1e-12  # keeps the Gram matrix positive definite at near-zero noise


class Stage(enum.Enum):
    RAW_LS = "RawLS"
    INTERPOLATED = "Interpolated"


class ExpertId(enum.Enum):
    MMSE = 1
    AI = 0


@dataclass
class DmrsEstimate:
    values: np.ndarray          # (n_ant, n_layers, n_sc, n_dmrs)
    stage: Stage
    comb_mask: np.ndarray       # bool per subcarrier; True where observed
    geometry: SlotGeometry


@dataclass(frozen=True)
class ExpertCostProfile:
    exec_time_us: float
    gpu_power_w: float
    gpu_utilization_pct: float

    def __post_init__(self):
        if min(self.exec_time_us, self.gpu_power_w, self.gpu_utilization_pct) < 0:
            raise ConfigurationError("cost profile fields must be >= 0")


@dataclass(frozen=True)
class CostTable:
    mmse: ExpertCostProfile = ExpertCostProfile(5.04, 148.4, 50.0)
    ai: ExpertCostProfile = ExpertCostProfile(432.33, 164.2, 67.0)
    switch_ai_us: float = 3.36    # mode 0: kernel no-op
    switch_mmse_us: float = 4.89  # mode 1: buffer copy
    dt_us: float = 0.41
    framework_us: float = 135.0

    def switch_cost_us(self, mode: int) -> float:
        return self.switch_mmse_us if mode == 1 else self.switch_ai_us


def cost_table_from_dict(cfg: dict) -> CostTable:
    costs = cfg.get("costs", {})
    base = CostTable()

    def profile(name, default):
        c = costs.get(name, {})
        return ExpertCostProfile(
            exec_time_us=float(c.get("exec_time_us", default.exec_time_us)),
            gpu_power_w=float(c.get("gpu_power_w", default.gpu_power_w)),
            gpu_utilization_pct=float(c.get("gpu_utilization_pct", default.gpu_utilization_pct)),
        )

    return CostTable(
        mmse=profile("mmse", base.mmse),
        ai=profile("ai", base.ai),
        switch_ai_us=float(costs.get("switch_ai_us", base.switch_ai_us)),
        switch_mmse_us=float(costs.get("switch_mmse_us", base.switch_mmse_us)),
        dt_us=float(costs.get("dt_us", base.dt_us)),
        framework_us=float(costs.get("framework_us", base.framework_us)),
    )


def cost_of(expert: ExpertId, constants: CostTable) -> ExpertCostProfile:
    if expert is ExpertId.MMSE:
        return constants.mmse
    if expert is ExpertId.AI:
        return constants.ai
    raise KeyError(f"unknown expert {expert!r}")


# ---------------------------------------------------------------- LS front end

def ls_estimate(rx: ResourceGrid, geometry: SlotGeometry) -> DmrsEstimate:
    """Per-pilot Y/X at comb REs, comb gaps filled by nearest neighbor
    (ties toward the lower subcarrier)."""
    if geometry.n_layers != 1:
        raise ConfigurationError("estimators support a single layer")
    comb = geometry.comb
    pilots = rx.known_dmrs
    if np.any(np.abs(pilots) == 0):
        raise ContractViolation("pilot magnitude 0")
    vals = np.empty((geometry.n_ant, geometry.n_layers, geometry.n_sc, geometry.n_dmrs),
                    dtype=complex)
    y = rx.values[:, comb, :][:, :, list(geometry.dmrs_symbols)]   # (ant, comb, dmrs)
    h_comb = y / pilots[None, :, :]
    # nearest comb position per subcarrier; odd subcarriers tie toward the
    # lower neighbor, which integer halving gives directly
    idx = np.arange(geometry.n_sc) // 2
    vals[:, 0, :, :] = h_comb[:, idx, :]
    mask = np.zeros(geometry.n_sc, dtype=bool)
    mask[comb] = True
    return DmrsEstimate(values=vals, stage=Stage.RAW_LS, comb_mask=mask,
                        geometry=geometry)


# ------------------------------------------------------------- MMSE expert

def _freq_correlation(delay_spread: float, n_sc: int, lags: np.ndarray) -> np.ndarray:
    p = pdp_powers(delay_spread)
    taps = np.arange(N_TAPS)
    return (p[None, :] * np.exp(-2j * np.pi * taps[None, :] * lags[:, None] / n_sc)).sum(axis=1)


@lru_cache(maxsize=16)
def _block_correlations(n_sc: int, block: int, assumed_delay_spread: float) -> tuple:
    """(R_hp, R_pp) for one frequency block; noise-independent, so cached
    separately from the filter (the estimated noise level changes per slot)."""
    comb = np.arange(0, block, 2)
    lags_hp = np.arange(block)[:, None] - comb[None, :]
    r_hp = _freq_correlation(assumed_delay_spread, n_sc, lags_hp.ravel()).reshape(lags_hp.shape)
    lags_pp = comb[:, None] - comb[None, :]
    r_pp = _freq_correlation(assumed_delay_spread, n_sc, lags_pp.ravel()).reshape(lags_pp.shape)
    return r_hp, r_pp


def _wiener_matrix(n_sc: int, block: int, noise_var: float, assumed_delay_spread: float
                   ) -> np.ndarray:
    """W such that h_block = W @ h_ls_comb for one frequency block."""
    r_hp, r_pp = _block_correlations(n_sc, block, assumed_delay_spread)
    comb = np.arange(0, block, 2)
    a = r_pp + (noise_var + RIDGE) * np.eye(len(comb))
    try:
        c, low = cho_factor(a)
    except np.linalg.LinAlgError as e:
        raise EstimatorError("regularized pilot Gram matrix is not positive definite",
                             condition_number=float(np.linalg.cond(a))) from e
    return r_hp @ cho_solve((c, low), np.eye(len(comb)))


def mmse_estimate(ls: DmrsEstimate, noise_var: float, scenario: ScenarioConfig,
                  block_prbs: int = 32) -> DmrsEstimate:
    """Wiener frequency interpolation from the comb pilots.

    Wide allocations are processed in equal frequency blocks (the fading is
    stationary across frequency, so every block reuses one cached filter).
    """
    if ls.stage is not Stage.RAW_LS:
        raise ContractViolation("mmse_estimate expects a RawLS input")
    if noise_var < 0:
        raise ConfigurationError("noise_var must be >= 0")
    geo = ls.geometry
    n_sc = geo.n_sc
    block = min(n_sc, 12 * block_prbs)
    if n_sc % block:
        block = n_sc  # uneven split; fall back to one block
    w = _wiener_matrix(n_sc, block, float(noise_var), float(scenario.assumed_delay_spread))
    comb_vals = ls.values[:, :, ls.comb_mask, :]        # (ant, layer, n_pilot, dmrs)
    out = np.empty_like(ls.values)
    pilots_per_block = block // 2
    for b in range(n_sc // block):
        seg = comb_vals[:, :, b * pilots_per_block:(b + 1) * pilots_per_block, :]
        out[:, :, b * block:(b + 1) * block, :] = np.einsum("sp,alpd->alsd", w, seg)
    return DmrsEstimate(values=out, stage=Stage.INTERPOLATED,
                        comb_mask=np.ones(n_sc, dtype=bool), geometry=geo)


# ------------------------------------------------------- denoiser (AI stand-in)

def denoiser_estimate(ls: DmrsEstimate, geometry: SlotGeometry,
                      truncation: int = 20) -> DmrsEstimate:
    """Delay-domain truncation: keep the first `truncation` taps of the
    comb-filled frequency response. Thermal noise is spread evenly over delay,
    and a late-arriving interferer sits entirely past the window, so both are
    discarded wholesale."""
    if ls.stage is not Stage.RAW_LS:
        raise ContractViolation("denoiser_estimate expects a RawLS input")
    if not 1 <= truncation <= geometry.n_sc:
        raise ConfigurationError(f"truncation {truncation} outside 1..{geometry.n_sc}")
    taps = np.fft.ifft(ls.values, axis=2)
    taps[:, :, truncation:, :] = 0.0
    out = np.fft.fft(taps, axis=2)
    return DmrsEstimate(values=out, stage=Stage.INTERPOLATED,
                        comb_mask=np.ones(geometry.n_sc, dtype=bool), geometry=geometry)


def estimate_noise_var(ls: DmrsEstimate, geometry: SlotGeometry,
                       guard: int = 16) -> float:
    """Noise level from delay taps beyond the guard, on the decimated comb
    response. With an 8-tap channel the tail is channel-free, so in clean
    conditions this tracks the thermal level. An interferer's excess-delay
    ghost lands in the tail as well and inflates the estimate; the Wiener
    filter then over-smooths, which is the intended conservative reaction."""
    if ls.stage is not Stage.RAW_LS:
        raise ContractViolation("estimate_noise_var expects a RawLS input")
    comb_vals = ls.values[:, :, geometry.comb, :]
    n_comb = comb_vals.shape[2]
    if not 1 <= guard < n_comb:
        raise ConfigurationError(f"guard {guard} outside 1..{n_comb - 1}")
    taps = np.fft.ifft(comb_vals, axis=2)
    tail = taps[:, :, guard:, :]
    return float(np.mean(np.abs(tail) ** 2) * n_comb)


def analytic_mmse_error(noise_var: float, delay_spread: float, n_sc: int) -> float:
    """Per-pilot MMSE error for in-model channels:
    sigma^2 tr((R_pp + sigma^2 I)^-1 R_pp) / n."""
    comb = np.arange(0, n_sc, 2)
    lags = comb[:, None] - comb[None, :]
    r_pp = _freq_correlation(delay_spread, n_sc, lags.ravel()).reshape(lags.shape)
    a = r_pp + noise_var * np.eye(len(comb))
    return float(np.real(noise_var * np.trace(np.linalg.solve(a, r_pp)) / len(comb)))
