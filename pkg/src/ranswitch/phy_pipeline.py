"""Per-slot PUSCH chain: expert execution, switch-select with memory
aliasing, equalization, link adaptation, CRC outcome, KPM emission.

The switch machinery (SwitchController) is deliberately independent of the
radio math so its slot-boundary semantics can be exercised with stub experts
at high volume.
"""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .expert_bank import (CostTable, DmrsEstimate, ExpertCostProfile, ExpertId,
                          Stage, denoiser_estimate, estimate_noise_var,
                          ls_estimate, mmse_estimate)
from .radio_scene import (ChannelProcess, ResourceGrid, ScenarioConfig,
                          SlotGeometry, interferer_process,
                          synthesize_uplink_slot, transmit_grid)
from .rng import stream
from .validation import ConfigurationError, ContractViolation, PipelineStateError


class ExecutionMode(enum.Enum):
    CONCURRENT = "concurrent"
    SELECTED_ONLY = "selected"


@dataclass
class ModeVar:
    mode: int = 1  # fail-safe default: MMSE until told otherwise

    def set(self, mode: int):
        if mode not in (0, 1):
            raise ContractViolation(f"mode must be 0 or 1, got {mode}")
        self.mode = mode


@dataclass
class ControlMessage:
    mode: int
    decided_at_ns: int
    deliverable_at_ns: int
    trigger: str = "policy"

    def __post_init__(self):
        if self.deliverable_at_ns < self.decided_at_ns:
            raise ContractViolation("deliverable_at precedes decided_at")


class ExpertBuffers:
    """Per-expert output buffers. Downstream stages read only through
    `downstream`, which aliases the AI buffer; selecting MMSE copies its
    output into that buffer."""

    def __init__(self, shape, dtype=complex):
        self.buffer_mmse = np.zeros(shape, dtype=dtype)
        self.buffer_ai = np.zeros(shape, dtype=dtype)
        self._populated = {ExpertId.MMSE: False, ExpertId.AI: False}

    def write(self, expert: ExpertId, values: np.ndarray):
        buf = self.buffer_mmse if expert is ExpertId.MMSE else self.buffer_ai
        buf[...] = values
        self._populated[expert] = True

    def populated(self, expert: ExpertId) -> bool:
        return self._populated[expert]

    def new_slot(self):
        self._populated = {ExpertId.MMSE: False, ExpertId.AI: False}

    @property
    def downstream(self) -> np.ndarray:
        return self.buffer_ai


def switch_select(buffers: ExpertBuffers, mode: ModeVar, costs: CostTable) -> float:
    """mode 1: copy the MMSE output into the AI-designated buffer;
    mode 0: no-op. Returns the charged kernel time in us."""
    if mode.mode == 1:
        if not buffers.populated(ExpertId.MMSE):
            raise PipelineStateError("MMSE buffer unpopulated at switch_select")
        buffers.buffer_ai[...] = buffers.buffer_mmse
    else:
        if not buffers.populated(ExpertId.AI):
            raise PipelineStateError("AI buffer unpopulated at switch_select")
    return costs.switch_cost_us(mode.mode)


class SwitchController:
    """Slot-boundary mode control.

    Concurrent mode applies a control message at the first slot boundary at
    or after its delivery time. Selected-only mode applies it one boundary
    later: each slot's execution set is committed at the previous boundary,
    so a newly selected expert first runs (and is read) one slot after it
    would under concurrent execution. Fail-safe reversions apply at the next
    boundary in either mode.
    """

    def __init__(self, exec_mode: ExecutionMode, slot_duration_ns: int):
        self.exec_mode = exec_mode
        self.slot_ns = int(slot_duration_ns)
        self.mode_var = ModeVar()
        self._pending: list[ControlMessage] = []
        self._forced: list[tuple[int, int, str]] = []  # (apply_at_ns, mode, trigger)
        self.last_delivery_ns: int | None = None
        self.applied: list[tuple[int, int, str]] = []  # (slot, mode, trigger)

    def deliver(self, msg: ControlMessage):
        self._pending.append(msg)
        self._pending.sort(key=lambda m: m.deliverable_at_ns)
        self.last_delivery_ns = max(self.last_delivery_ns or 0, msg.deliverable_at_ns)

    def force_mode(self, mode: int, at_ns: int, trigger: str = "failsafe"):
        self._forced.append((int(at_ns), mode, trigger))
        self._forced.sort(key=lambda f: f[0])

    def begin_slot(self, slot_index: int) -> int:
        """Apply due control traffic; returns the active mode for this slot."""
        t_start = slot_index * self.slot_ns
        cutoff = t_start
        if self.exec_mode is ExecutionMode.SELECTED_ONLY:
            cutoff = t_start - self.slot_ns
        while self._pending and self._pending[0].deliverable_at_ns <= cutoff:
            msg = self._pending.pop(0)
            if msg.mode != self.mode_var.mode:
                self.applied.append((slot_index, msg.mode, msg.trigger))
            self.mode_var.set(msg.mode)
        while self._forced and self._forced[0][0] <= t_start:
            _, mode, trigger = self._forced.pop(0)
            if mode != self.mode_var.mode:
                self.applied.append((slot_index, mode, trigger))
            self.mode_var.set(mode)
        return self.mode_var.mode

    def experts_to_run(self) -> tuple[ExpertId, ...]:
        if self.exec_mode is ExecutionMode.CONCURRENT:
            return (ExpertId.MMSE, ExpertId.AI)
        return (ExpertId.MMSE if self.mode_var.mode == 1 else ExpertId.AI,)


# ------------------------------------------------------------------ MCS table

@dataclass(frozen=True)
class McsTable:
    thresholds_db: tuple
    qam_order: tuple
    code_rate: tuple

    def __post_init__(self):
        t = self.thresholds_db
        if len(t) != len(self.qam_order) or len(t) != len(self.code_rate):
            raise ConfigurationError("MCS table columns must align")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ConfigurationError("MCS thresholds must be strictly increasing")
        se = [q * r for q, r in zip(self.qam_order, self.code_rate)]
        if any(b < a for a, b in zip(se, se[1:])):
            raise ConfigurationError("spectral efficiency must be non-decreasing")

    @property
    def n_mcs(self) -> int:
        return len(self.thresholds_db)


# Thresholds straddle the default-profile regime medians: Good-regime median
# mcs lands at 20 (MMSE) / 19 (denoiser) and Poor-regime at 11 (MMSE) / 12
# (denoiser). The low end keeps rungs in play down to deeply degraded SINR so
# heavy perturbation still moves the transport-block size.
DEFAULT_MCS_TABLE = McsTable(
    thresholds_db=(
        -9.0, -7.95, -6.9, -5.85, -4.8, -3.75, -2.7, -1.65, -0.6, 0.45,  # QPSK
        1.9, 3.6, 5.8, 6.6, 8.5, 10.5, 12.4,                             # 16QAM
        14.4, 16.4, 18.3, 19.5, 20.3, 21.1, 21.9, 22.7, 23.5, 24.3, 25.1, 25.9,  # 64QAM
    ),
    qam_order=(2,) * 10 + (4,) * 7 + (6,) * 12,
    code_rate=(
        0.12, 0.15, 0.19, 0.24, 0.30, 0.37, 0.44, 0.51, 0.59, 0.66,
        0.34, 0.38, 0.43, 0.48, 0.54, 0.60, 0.64,
        0.43, 0.46, 0.50, 0.54, 0.58, 0.63, 0.67, 0.72, 0.77, 0.82, 0.86, 0.93,
    ),
)

CB_SEGMENT_BITS = 8448
N_DATA_SYM = 11  # 14 symbols minus 3 DMRS


def link_adapt(post_eq_sinr_db: float, table: McsTable = DEFAULT_MCS_TABLE) -> int:
    """Largest mcs whose threshold <= SINR; floor at mcs 0."""
    idx = int(np.searchsorted(table.thresholds_db, post_eq_sinr_db, side="right")) - 1
    return max(idx, 0)


def transport_block(mcs: int, n_prb: int, table: McsTable = DEFAULT_MCS_TABLE):
    if not 0 <= mcs < table.n_mcs:
        raise ConfigurationError(f"mcs {mcs} outside table")
    qam = table.qam_order[mcs]
    rate = table.code_rate[mcs]
    tb_bytes = int(n_prb * 12 * N_DATA_SYM * qam * rate // 8)
    num_cb = max(1, math.ceil(tb_bytes * 8 / CB_SEGMENT_BITS))
    return tb_bytes, rate, qam, num_cb


def crc_pass_probability(post_eq_sinr_db: float, mcs: int,
                         table: McsTable = DEFAULT_MCS_TABLE,
                         margin_db: float = 6.0, scale_db: float = 2.0) -> float:
    """Logistic decode curve. The 50% point sits margin_db below the
    link-adaptation threshold; margin_db=0 centers it exactly there."""
    center = table.thresholds_db[mcs] - margin_db
    return 1.0 / (1.0 + math.exp(-(post_eq_sinr_db - center) / scale_db))


def crc_outcome(post_eq_sinr_db: float, mcs: int, slot_index: int, seed: int,
                table: McsTable = DEFAULT_MCS_TABLE,
                margin_db: float = 6.0, scale_db: float = 2.0) -> bool:
    p = crc_pass_probability(post_eq_sinr_db, mcs, table, margin_db, scale_db)
    u = float(stream(seed, "crc", slot_index).random())
    return u < p


# ------------------------------------------------------------------ equalizer

@lru_cache(maxsize=8)
def _time_interp_weights(dmrs_symbols: tuple, n_sym: int) -> np.ndarray:
    """(n_sym, n_dmrs) weights: linear between DMRS symbols, hold outside."""
    xp = np.asarray(dmrs_symbols, dtype=float)
    a = np.zeros((n_sym, len(xp)))
    for s in range(n_sym):
        if s <= xp[0]:
            a[s, 0] = 1.0
        elif s >= xp[-1]:
            a[s, -1] = 1.0
        else:
            k = int(np.searchsorted(xp, s, side="right")) - 1
            w = (s - xp[k]) / (xp[k + 1] - xp[k])
            a[s, k] = 1.0 - w
            a[s, k + 1] = w
    return a


def data_re_mask(geometry: SlotGeometry) -> np.ndarray:
    """(n_sc, n_sym) True on REs carrying data (everything but the pilots)."""
    mask = np.ones((geometry.n_sc, geometry.n_sym), dtype=bool)
    for sym in geometry.dmrs_symbols:
        mask[geometry.comb, sym] = False
    return mask


def equalize(rx: ResourceGrid, estimate: DmrsEstimate, noise_var: float,
             tx_grid: np.ndarray, sinr_cap_db: float = 60.0):
    """MRC/MMSE per-RE combining with linear time interpolation of the
    estimates. Returns (equalized data grid, post-equalization SINR in dB,
    measured against the known transmitted symbols)."""
    if estimate.stage is not Stage.INTERPOLATED:
        raise ContractViolation("equalize expects an Interpolated estimate")
    geo = estimate.geometry
    a = _time_interp_weights(tuple(geo.dmrs_symbols), geo.n_sym)
    h = np.einsum("asd,td->ast", estimate.values[:, 0, :, :], a)  # (ant, sc, sym)
    y = rx.values
    num = np.einsum("ast,ast->st", np.conj(h), y)
    den = np.einsum("ast,ast->st", np.conj(h), h).real + noise_var
    x_hat = num / den

    mask = data_re_mask(geo)
    xd = tx_grid[mask]
    xh = x_hat[mask]
    ref = np.vdot(xd, xd).real
    alpha = np.vdot(xd, xh) / ref
    err = xh - alpha * xd
    err_p = np.vdot(err, err).real
    if err_p <= 0:
        sinr_db = sinr_cap_db
    else:
        sinr_db = 10.0 * math.log10(abs(alpha) ** 2 * ref / err_p)
    return x_hat, min(sinr_db, sinr_cap_db)


# ------------------------------------------------------------------- KPM layer

KPM_FIELDS = (
    "slot_index", "phy_throughput", "mcs_index", "pdu_length", "ndi", "rsrp",
    "code_rate", "qam_order", "num_cb", "tb_size", "snr_db",
    "mac_throughput", "lcid4_throughput", "mac_rx_bytes", "lcid4_rx_bytes",
)


@dataclass(frozen=True)
class KpmRecord:
    slot_index: int
    phy_throughput: float
    mcs_index: int
    pdu_length: int
    ndi: int
    rsrp: float
    code_rate: float
    qam_order: int
    num_cb: int
    tb_size: int
    snr_db: float
    mac_throughput: float
    lcid4_throughput: float
    mac_rx_bytes: int
    lcid4_rx_bytes: int

    def row(self) -> list:
        return [getattr(self, f) for f in KPM_FIELDS]


@dataclass
class SlotOutcome:
    post_eq_sinr_db: float
    mcs: int
    tb_bytes: int
    crc_pass: bool
    active_expert: ExpertId
    kpm: KpmRecord
    slot_cost: ExpertCostProfile
    est_abs_mean: float  # E[|H_hat|] of the clean selected estimate (Eq. 2 scale)


class ThroughputWindow:
    """Sliding byte-rate window; divides by the filled length during warm-up."""

    def __init__(self, window_slots: int, slot_duration_s: float):
        self.window = int(window_slots)
        self.slot_s = slot_duration_s
        self._bytes: list[int] = []
        self._total = 0

    def push(self, n_bytes: int) -> float:
        self._bytes.append(n_bytes)
        self._total += n_bytes
        if len(self._bytes) > self.window:
            self._total -= self._bytes[-self.window - 1]
        n = min(len(self._bytes), self.window)
        return self._total * 8.0 / 1e6 / (n * self.slot_s)

    @property
    def lifetime_bytes(self) -> int:
        return sum(self._bytes)


def _lcid4_jitter(slot_index: int) -> float:
    """Deterministic traffic-mix wobble in [-1, 1], seed-independent."""
    h = hashlib.blake2b(f"lcid4:{slot_index}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") / float(1 << 64) * 2.0 - 1.0


@dataclass
class PipelineConfig:
    window_length: int = 100
    lcid4_fraction: float = 0.85
    lcid4_jitter: float = 0.03
    crc_margin_db: float = 6.0
    crc_scale_db: float = 2.0
    truncation: int = 20
    mac_header_bytes: int = 3
    sinr_cap_db: float = 60.0
    mmse_block_prbs: int = 32
    noise_guard: int = 16
    mcs_table: McsTable = DEFAULT_MCS_TABLE

    @classmethod
    def from_dict(cls, cfg: dict) -> "PipelineConfig":
        p = cfg.get("pipeline", {})
        kwargs = {k: p[k] for k in
                  ("window_length", "lcid4_fraction", "lcid4_jitter", "crc_margin_db",
                   "crc_scale_db", "truncation", "mac_header_bytes", "sinr_cap_db",
                   "mmse_block_prbs", "noise_guard") if k in p}
        return cls(**kwargs)


class Pipeline:
    """Single-owner per-slot execution state. Control messages arrive via
    deliver(); they are timestamped and applied only at slot boundaries."""

    def __init__(self, geometry: SlotGeometry, scenario: ScenarioConfig,
                 exec_mode: ExecutionMode = ExecutionMode.CONCURRENT,
                 costs: CostTable | None = None,
                 config: PipelineConfig | None = None):
        self.geometry = geometry
        self.scenario = scenario
        self.exec_mode = exec_mode
        self.costs = costs or CostTable()
        self.config = config or PipelineConfig()
        self.controller = SwitchController(exec_mode, geometry.slot_duration_ns)
        shape = (geometry.n_ant, geometry.n_layers, geometry.n_sc, geometry.n_dmrs)
        self.buffers = ExpertBuffers(shape)
        self.channel = ChannelProcess(geometry, scenario)
        self.interferer = interferer_process(geometry, scenario)
        slot_s = geometry.slot_duration_us * 1e-6
        self.mac_window = ThroughputWindow(self.config.window_length, slot_s)
        self.lcid4_window = ThroughputWindow(self.config.window_length, slot_s)
        self.cum_phy_bytes = 0
        self.slot_index = 0
        self._ndi = 0
        self.perturb = None  # optional hook: (slot, mmse_values) -> (values, est_abs_mean)

    def deliver(self, msg: ControlMessage):
        self.controller.deliver(msg)

    def set_scenario(self, scenario: ScenarioConfig):
        """Swap interference/regime parameters mid-run. The fading process
        itself must stay continuous, so its parameters cannot change."""
        old = self.scenario
        if (scenario.seed != old.seed
                or scenario.delay_spread != old.delay_spread
                or scenario.temporal_correlation != old.temporal_correlation
                or scenario.shadow_sigma_db != old.shadow_sigma_db
                or scenario.shadow_correlation != old.shadow_correlation
                or scenario.interference_excess_delay != old.interference_excess_delay):
            raise ConfigurationError(
                "mid-run scenario change cannot alter the channel process")
        self.scenario = scenario
        self.channel.scenario = scenario
        self.interferer.scenario = scenario

    def run_slot(self) -> SlotOutcome:
        slot = self.slot_index
        geo = self.geometry
        scen = self.scenario
        cfg = self.config
        mode = self.controller.begin_slot(slot)
        self.buffers.new_slot()

        h = self.channel.next_slot()
        # interferer fading advances every slot so regime flips stay continuous
        h_i = self.interferer.next_slot()
        rx = synthesize_uplink_slot(geo, h, scen, slot, interferer=h_i)
        ls = ls_estimate(rx, geo)
        nv = scen.noise_var(geo.n_ant)

        to_run = self.controller.experts_to_run()
        est_abs_mean = None
        for expert in to_run:
            if expert is ExpertId.MMSE:
                nv_est = estimate_noise_var(ls, geo, guard=cfg.noise_guard)
                est = mmse_estimate(ls, nv_est, scen, block_prbs=cfg.mmse_block_prbs)
                values = est.values
                if self.perturb is not None:
                    values, est_abs_mean = self.perturb(slot, values)
                self.buffers.write(ExpertId.MMSE, values)
            else:
                est = denoiser_estimate(ls, geo, truncation=min(cfg.truncation, geo.n_sc))
                self.buffers.write(ExpertId.AI, est.values)

        switch_us = switch_select(self.buffers, self.controller.mode_var, self.costs)
        downstream = self.buffers.downstream
        if est_abs_mean is None:
            est_abs_mean = float(np.mean(np.abs(downstream)))
        rsrp = float(np.mean(np.abs(downstream) ** 2))

        est = DmrsEstimate(values=downstream, stage=Stage.INTERPOLATED,
                           comb_mask=np.ones(geo.n_sc, dtype=bool), geometry=geo)
        tx = transmit_grid(geo, scen, slot)
        _, sinr_db = equalize(rx, est, nv, tx, sinr_cap_db=cfg.sinr_cap_db)

        mcs = link_adapt(sinr_db, cfg.mcs_table)
        tb_bytes, rate, qam, num_cb = transport_block(mcs, geo.n_prb, cfg.mcs_table)
        crc = crc_outcome(sinr_db, mcs, slot, scen.seed, cfg.mcs_table,
                          cfg.crc_margin_db, cfg.crc_scale_db)

        pdu = max(tb_bytes - cfg.mac_header_bytes, 0)
        mac_rx = pdu if crc else 0
        frac = min(max(cfg.lcid4_fraction + cfg.lcid4_jitter * _lcid4_jitter(slot), 0.0), 1.0)
        lcid4_rx = int(mac_rx * frac)
        if crc:
            self.cum_phy_bytes += tb_bytes
        mac_tput = self.mac_window.push(mac_rx)
        lcid4_tput = self.lcid4_window.push(lcid4_rx)
        elapsed_s = (slot + 1) * geo.slot_duration_us * 1e-6
        phy_tput = self.cum_phy_bytes * 8.0 / 1e6 / elapsed_s

        ndi = self._ndi
        if crc:
            self._ndi = 1 - self._ndi

        active = ExpertId.MMSE if mode == 1 else ExpertId.AI
        kpm = KpmRecord(
            slot_index=slot, phy_throughput=phy_tput, mcs_index=mcs, pdu_length=pdu,
            ndi=ndi, rsrp=rsrp, code_rate=rate, qam_order=qam, num_cb=num_cb,
            tb_size=tb_bytes, snr_db=sinr_db, mac_throughput=mac_tput,
            lcid4_throughput=lcid4_tput, mac_rx_bytes=mac_rx, lcid4_rx_bytes=lcid4_rx,
        )
        cost = self._slot_cost(active, switch_us)
        self.slot_index += 1
        return SlotOutcome(post_eq_sinr_db=sinr_db, mcs=mcs, tb_bytes=tb_bytes,
                           crc_pass=crc, active_expert=active, kpm=kpm,
                           slot_cost=cost, est_abs_mean=est_abs_mean)

    def _slot_cost(self, active: ExpertId, switch_us: float) -> ExpertCostProfile:
        c = self.costs
        if self.exec_mode is ExecutionMode.CONCURRENT:
            exec_us = c.mmse.exec_time_us + c.ai.exec_time_us + switch_us
            ref = c.ai  # conservative: both experts resident
        else:
            ref = c.mmse if active is ExpertId.MMSE else c.ai
            exec_us = ref.exec_time_us + switch_us
        return ExpertCostProfile(exec_time_us=exec_us, gpu_power_w=ref.gpu_power_w,
                                 gpu_utilization_pct=ref.gpu_utilization_pct)


def kpm_csv_rows(records) -> list[list]:
    return [r.row() for r in records]
