"""Slot pipeline mechanics: link adaptation, CRC, throughput windows,
equalizer, switch plumbing and per-slot cost charging."""
import math

import numpy as np
import pytest

from ranswitch.expert_bank import (CostTable, DmrsEstimate, ExpertId, Stage,
                                   denoiser_estimate, estimate_noise_var,
                                   ls_estimate, mmse_estimate)
from ranswitch.phy_pipeline import (DEFAULT_MCS_TABLE, ControlMessage,
                                    ExecutionMode, ExpertBuffers, McsTable,
                                    ModeVar, Pipeline, PipelineConfig,
                                    SwitchController, ThroughputWindow,
                                    _time_interp_weights, crc_outcome,
                                    crc_pass_probability, data_re_mask,
                                    equalize, link_adapt, switch_select,
                                    transport_block)
from ranswitch.radio_scene import (POOR, ScenarioConfig, SlotGeometry,
                                   generate_channel, generate_interferer,
                                   synthesize_uplink_slot, transmit_grid)
from ranswitch.validation import (ConfigurationError, ContractViolation,
                                  PipelineStateError)

SLOT_NS = 500_000


def tiny_setup(seed=0, regime="good", **scen_kw):
    geo = SlotGeometry(n_ant=2, n_prb=4)
    scen_kw.setdefault("interference_excess_delay", 8)
    scen = ScenarioConfig(regime=regime, seed=seed, **scen_kw)
    cfg = PipelineConfig(window_length=5, noise_guard=8)
    return geo, scen, cfg


# ----------------------------------------------------------------- MCS layer

def test_mcs_table_validation():
    with pytest.raises(ConfigurationError):
        McsTable(thresholds_db=(0.0, 1.0), qam_order=(2,), code_rate=(0.5, 0.6))
    with pytest.raises(ConfigurationError):
        McsTable(thresholds_db=(1.0, 1.0), qam_order=(2, 2), code_rate=(0.5, 0.6))
    with pytest.raises(ConfigurationError):  # efficiency dips
        McsTable(thresholds_db=(0.0, 1.0), qam_order=(2, 2), code_rate=(0.6, 0.5))


def test_link_adapt_thresholding():
    t = DEFAULT_MCS_TABLE
    assert link_adapt(-100.0, t) == 0
    assert link_adapt(t.thresholds_db[0] - 0.01, t) == 0
    for i in (0, 5, 11, 20):
        assert link_adapt(t.thresholds_db[i], t) == i
        if i + 1 < t.n_mcs:
            assert link_adapt((t.thresholds_db[i] + t.thresholds_db[i + 1]) / 2, t) == i
    assert link_adapt(1e6, t) == t.n_mcs - 1


def test_transport_block_arithmetic():
    t = DEFAULT_MCS_TABLE
    tb, rate, qam, cb = transport_block(0, 12, t)
    assert (qam, rate) == (2, 0.12)
    assert tb == int(12 * 12 * 11 * 2 * 0.12 // 8) == 47
    assert cb == 1
    tb28, _, _, cb28 = transport_block(t.n_mcs - 1, 12, t)
    assert cb28 == math.ceil(tb28 * 8 / 8448)
    with pytest.raises(ConfigurationError):
        transport_block(t.n_mcs, 12, t)


def test_crc_curve_center_and_monotonicity():
    t = DEFAULT_MCS_TABLE
    center = t.thresholds_db[10] - 6.0
    assert crc_pass_probability(center, 10, t) == pytest.approx(0.5)
    ps = [crc_pass_probability(s, 10, t) for s in np.linspace(-10, 30, 50)]
    assert all(b >= a for a, b in zip(ps, ps[1:]))


def test_crc_outcome_is_deterministic_and_calibrated():
    a = [crc_outcome(5.0, 10, slot, seed=3) for slot in range(200)]
    b = [crc_outcome(5.0, 10, slot, seed=3) for slot in range(200)]
    assert a == b
    # at the 50% point about half the slots pass
    t = DEFAULT_MCS_TABLE
    center = t.thresholds_db[10] - 6.0
    passes = sum(crc_outcome(center, 10, slot, seed=3) for slot in range(2000))
    assert 850 < passes < 1150


def test_throughput_window_warmup_and_steady_state():
    w = ThroughputWindow(window_slots=4, slot_duration_s=0.0005)
    assert w.push(1000) == pytest.approx(1000 * 8 / 1e6 / 0.0005)
    assert w.push(1000) == pytest.approx(2000 * 8 / 1e6 / (2 * 0.0005))
    w.push(1000)
    w.push(1000)
    # a zero pushes the oldest slot out of the window
    assert w.push(0) == pytest.approx(3000 * 8 / 1e6 / (4 * 0.0005))
    assert w.lifetime_bytes == 4000


def test_time_interp_weights():
    a = _time_interp_weights((0, 5, 10), 14)
    assert a.shape == (14, 3)
    assert np.allclose(a.sum(axis=1), 1.0)
    for j, sym in enumerate((0, 5, 10)):
        one_hot = np.zeros(3)
        one_hot[j] = 1.0
        assert np.array_equal(a[sym], one_hot)
    assert np.allclose(a[2], (0.6, 0.4, 0.0))
    assert np.array_equal(a[13], (0.0, 0.0, 1.0))  # hold past the last DMRS


def test_equalize_perfect_estimate_hits_the_cap():
    geo = SlotGeometry(n_ant=2, n_prb=4)
    scen = ScenarioConfig(seed=2, base_snr_db=math.inf, shadow_sigma_db=0.0,
                          interference_excess_delay=8)
    h = generate_channel(geo, scen, 0)
    rx = synthesize_uplink_slot(geo, h, scen, 0)
    est = DmrsEstimate(values=h[:, :, :, list(geo.dmrs_symbols)],
                       stage=Stage.INTERPOLATED,
                       comb_mask=np.ones(geo.n_sc, dtype=bool), geometry=geo)
    x = transmit_grid(geo, scen, 0)
    x_hat, sinr = equalize(rx, est, 0.0, x, sinr_cap_db=60.0)
    mask = data_re_mask(geo)
    assert np.allclose(x_hat[mask], x[mask])
    assert sinr == 60.0
    with pytest.raises(ContractViolation):
        raw = DmrsEstimate(values=est.values, stage=Stage.RAW_LS,
                           comb_mask=est.comb_mask, geometry=geo)
        equalize(rx, raw, 0.0, x)


# ------------------------------------------------------------ switch plumbing

def test_mode_var_and_control_message_validation():
    m = ModeVar()
    assert m.mode == 1  # fail-safe default
    m.set(0)
    assert m.mode == 0
    with pytest.raises(ContractViolation):
        m.set(2)
    with pytest.raises(ContractViolation):
        ControlMessage(mode=0, decided_at_ns=10, deliverable_at_ns=5)


def test_buffers_and_switch_select():
    buf = ExpertBuffers((2, 3))
    costs = CostTable()
    mmse_out = np.full((2, 3), 1 + 1j)
    ai_out = np.full((2, 3), 2 - 2j)
    buf.write(ExpertId.MMSE, mmse_out)
    buf.write(ExpertId.AI, ai_out)

    mode = ModeVar()
    assert switch_select(buf, mode, costs) == costs.switch_mmse_us
    assert np.array_equal(buf.downstream, mmse_out)  # copy into the read path

    buf.new_slot()
    buf.write(ExpertId.AI, ai_out)
    mode.set(0)
    assert switch_select(buf, mode, costs) == costs.switch_ai_us
    assert np.array_equal(buf.downstream, ai_out)
    assert buf.downstream is buf.buffer_ai  # downstream aliases the AI buffer

    buf.new_slot()
    with pytest.raises(PipelineStateError):
        switch_select(buf, ModeVar(), costs)  # MMSE never ran this slot
    with pytest.raises(PipelineStateError):
        switch_select(buf, mode, costs)  # AI never ran either


def controller_modes(exec_mode, deliveries, n_slots):
    ctl = SwitchController(exec_mode, SLOT_NS)
    for deliverable_ns, mode in deliveries:
        ctl.deliver(ControlMessage(mode=mode, decided_at_ns=deliverable_ns,
                                   deliverable_at_ns=deliverable_ns))
    return [ctl.begin_slot(n) for n in range(n_slots)]


def test_controller_concurrent_applies_at_next_boundary():
    # delivered mid slot 1 -> first boundary at or after is slot 2
    modes = controller_modes(ExecutionMode.CONCURRENT, [(SLOT_NS + 1, 0)], 5)
    assert modes == [1, 1, 0, 0, 0]
    # delivered exactly on the slot 2 boundary counts for slot 2
    modes = controller_modes(ExecutionMode.CONCURRENT, [(2 * SLOT_NS, 0)], 5)
    assert modes == [1, 1, 0, 0, 0]


def test_controller_selected_only_lags_one_boundary():
    modes = controller_modes(ExecutionMode.SELECTED_ONLY, [(SLOT_NS + 1, 0)], 5)
    assert modes == [1, 1, 1, 0, 0]
    modes = controller_modes(ExecutionMode.SELECTED_ONLY, [(2 * SLOT_NS, 0)], 5)
    assert modes == [1, 1, 1, 0, 0]


def test_controller_force_mode_is_immediate_in_both_exec_modes():
    for em in (ExecutionMode.CONCURRENT, ExecutionMode.SELECTED_ONLY):
        ctl = SwitchController(em, SLOT_NS)
        ctl.force_mode(0, at_ns=SLOT_NS + 1, trigger="failsafe")
        modes = [ctl.begin_slot(n) for n in range(4)]
        assert modes == [1, 1, 0, 0]
        assert ctl.applied == [(2, 0, "failsafe")]


def test_controller_experts_to_run():
    ctl = SwitchController(ExecutionMode.CONCURRENT, SLOT_NS)
    assert ctl.experts_to_run() == (ExpertId.MMSE, ExpertId.AI)
    ctl = SwitchController(ExecutionMode.SELECTED_ONLY, SLOT_NS)
    assert ctl.experts_to_run() == (ExpertId.MMSE,)
    ctl.mode_var.set(0)
    assert ctl.experts_to_run() == (ExpertId.AI,)


# ------------------------------------------------------------- full pipeline

def test_pipeline_slot_bookkeeping():
    geo, scen, cfg = tiny_setup(seed=4)
    pipe = Pipeline(geo, scen, ExecutionMode.CONCURRENT, config=cfg)
    passes = 0
    for n in range(30):
        out = pipe.run_slot()
        k = out.kpm
        assert k.slot_index == n
        tb, rate, qam, cb = transport_block(out.mcs, geo.n_prb, cfg.mcs_table)
        assert (k.tb_size, k.code_rate, k.qam_order, k.num_cb) == (tb, rate, qam, cb)
        assert k.pdu_length == max(tb - cfg.mac_header_bytes, 0)
        assert k.mac_rx_bytes == (k.pdu_length if out.crc_pass else 0)
        assert 0 <= k.lcid4_rx_bytes <= k.mac_rx_bytes
        assert k.ndi == passes % 2  # toggles only on a decoded block
        if out.crc_pass:
            passes += 1
        assert out.active_expert is ExpertId.MMSE  # nobody switched


def test_pipeline_downstream_matches_standalone_experts():
    # force one mode flip and check the element-exact downstream buffer
    geo, scen, cfg = tiny_setup(seed=5)
    pipe = Pipeline(geo, scen, ExecutionMode.CONCURRENT, config=cfg)
    pipe.deliver(ControlMessage(mode=0, decided_at_ns=3 * SLOT_NS,
                                deliverable_at_ns=3 * SLOT_NS))
    for slot in range(6):
        out = pipe.run_slot()
        h = generate_channel(geo, scen, slot)
        h_i = generate_interferer(geo, scen, slot)
        rx = synthesize_uplink_slot(geo, h, scen, slot, interferer=h_i)
        ls = ls_estimate(rx, geo)
        if slot < 3:
            nv = estimate_noise_var(ls, geo, guard=cfg.noise_guard)
            ref = mmse_estimate(ls, nv, scen, block_prbs=cfg.mmse_block_prbs)
            assert out.active_expert is ExpertId.MMSE
        else:
            ref = denoiser_estimate(ls, geo, truncation=min(cfg.truncation, geo.n_sc))
            assert out.active_expert is ExpertId.AI
        assert np.array_equal(pipe.buffers.downstream, ref.values)
        assert out.kpm.rsrp == float(np.mean(np.abs(ref.values) ** 2))


def test_pipeline_cost_charging_by_exec_mode():
    geo, scen, cfg = tiny_setup(seed=6)
    costs = CostTable()
    conc = Pipeline(geo, scen, ExecutionMode.CONCURRENT, costs, cfg)
    out = conc.run_slot()
    assert out.slot_cost.exec_time_us == pytest.approx(
        costs.mmse.exec_time_us + costs.ai.exec_time_us + costs.switch_mmse_us)
    assert out.slot_cost.gpu_power_w == costs.ai.gpu_power_w

    sel = Pipeline(geo, scen, ExecutionMode.SELECTED_ONLY, costs, cfg)
    out = sel.run_slot()
    assert out.slot_cost.exec_time_us == pytest.approx(
        costs.mmse.exec_time_us + costs.switch_mmse_us)
    assert out.slot_cost.gpu_power_w == costs.mmse.gpu_power_w


def test_set_scenario_guards_channel_continuity():
    geo, scen, cfg = tiny_setup(seed=7)
    pipe = Pipeline(geo, scen, ExecutionMode.CONCURRENT, config=cfg)
    pipe.run_slot()
    poor = ScenarioConfig(regime=POOR, seed=scen.seed,
                          interference_excess_delay=8,
                          interference_prb_mask=(True,) * geo.n_prb,
                          interference_power_db=0.0)
    pipe.set_scenario(poor)  # same fading parameters: allowed
    pipe.run_slot()
    with pytest.raises(ConfigurationError):
        pipe.set_scenario(ScenarioConfig(seed=scen.seed + 1,
                                         interference_excess_delay=8))
