"""Control-plane loop: latency model, indications, periodic decisions and
the fail-safe watchdog."""
import numpy as np
import pytest

from ranswitch.dapp_control import (Dapp, DappConfig, E3Indication,
                                    FailsafeMonitor, LatencyModel,
                                    TRIGGER_POLICY, failsafe_check,
                                    loop_latency, window_features,
                                    write_mode_trace)
from ranswitch.phy_pipeline import ControlMessage, KpmRecord
from ranswitch.switch_policy import LabeledDataset, train
from ranswitch.validation import ConfigurationError, ContractViolation

SLOT_NS = 500_000


def record(slot, mac=10.0):
    return KpmRecord(slot_index=slot, phy_throughput=5.0, mcs_index=12,
                     pdu_length=500, ndi=slot % 2, rsrp=1.0, code_rate=0.5,
                     qam_order=4, num_cb=1, tb_size=503, snr_db=10.0,
                     mac_throughput=mac, lcid4_throughput=0.85 * mac,
                     mac_rx_bytes=500, lcid4_rx_bytes=425)


def mac_tree(cut=5.0):
    # one-feature surrogate: high windowed MAC rate -> mode 1
    x = np.array([[0.0] * 6 + [cut - 1.0] + [0.0] * 3,
                  [0.0] * 6 + [cut + 1.0] + [0.0] * 3])
    return train(LabeledDataset(x, np.array([0, 1])), max_depth=1)


def test_latency_model_totals():
    lat = LatencyModel()
    assert loop_latency(lat) == pytest.approx(139.91, abs=1e-9)
    assert lat.decision_delay_ns() == 135_410
    with pytest.raises(ConfigurationError):
        LatencyModel(framework_overhead_us=-1.0)


def test_dapp_config_timeout():
    cfg = DappConfig()
    assert cfg.timeout_ns(SLOT_NS) == 10 * 100 * SLOT_NS
    assert DappConfig(failsafe_timeout_us=2.5).timeout_ns(SLOT_NS) == 2500
    with pytest.raises(ConfigurationError):
        DappConfig(decision_period_slots=0)
    with pytest.raises(ConfigurationError):
        DappConfig(failsafe_timeout_us=0.0)


def test_indication_validation():
    ok = E3Indication(kpm_window=(record(0), record(1)), emitted_at_ns=2 * SLOT_NS)
    assert ok.emitted_at_ns == 2 * SLOT_NS
    with pytest.raises(ContractViolation):
        E3Indication(kpm_window=(record(1), record(0)), emitted_at_ns=10 * SLOT_NS)
    with pytest.raises(ContractViolation):
        E3Indication(kpm_window=(record(3),), emitted_at_ns=3 * SLOT_NS)


def test_window_features_are_column_means():
    vec = window_features([record(0, mac=4.0), record(1, mac=8.0)])
    assert vec[6] == pytest.approx(6.0)  # mac_throughput slot
    assert vec[1] == pytest.approx(12.0)
    with pytest.raises(ContractViolation):
        window_features([])


def test_dapp_emits_on_the_decision_period():
    dapp = Dapp(mac_tree(), config=DappConfig(decision_period_slots=3,
                                              window_length_slots=3))
    out = []
    for slot in range(9):
        ind = E3Indication(kpm_window=(record(slot, mac=9.0),),
                           emitted_at_ns=(slot + 1) * SLOT_NS)
        out.append(dapp.on_indication(ind))
    msgs = [m for m in out if m is not None]
    assert [m is not None for m in out] == [False, False, True] * 3
    assert len(dapp.decisions) == 3
    assert all(m.trigger == TRIGGER_POLICY for m in msgs)
    # decision timestamping rides the latency model
    assert msgs[0].decided_at_ns == 3 * SLOT_NS + LatencyModel().decision_delay_ns()
    assert msgs[0].deliverable_at_ns == msgs[0].decided_at_ns
    assert all(m.mode == 1 for m in msgs)  # high MAC rate window


def test_dapp_mode_follows_the_window_mean():
    dapp = Dapp(mac_tree(cut=5.0), config=DappConfig(decision_period_slots=2,
                                                     window_length_slots=2))
    macs = [9.0, 9.0, 1.0, 1.0]
    msgs = []
    for slot, mac in enumerate(macs):
        ind = E3Indication(kpm_window=(record(slot, mac=mac),),
                           emitted_at_ns=(slot + 1) * SLOT_NS)
        m = dapp.on_indication(ind)
        if m:
            msgs.append(m)
    assert [m.mode for m in msgs] == [1, 0]


def test_failsafe_trips_once_and_rearms_on_traffic():
    mon = FailsafeMonitor(timeout_ns=1000)
    assert mon.check(500, 0) is None           # inside the window
    assert failsafe_check(mon, 1500, 1) is None  # quiet but already safe
    assert mon.check(1500, 0) == 1
    assert mon.events == [1500]
    assert mon.check(2000, 0) is None          # latched until traffic resumes
    mon.note_delivery(3000)
    assert mon.check(3500, 0) is None
    assert mon.check(4500, 0) == 1
    assert mon.events == [1500, 4500]


def test_write_mode_trace(tmp_path):
    msgs = [ControlMessage(mode=0, decided_at_ns=10, deliverable_at_ns=20,
                           trigger="policy"),
            ControlMessage(mode=1, decided_at_ns=30, deliverable_at_ns=30,
                           trigger="failsafe")]
    path = tmp_path / "trace.csv"
    write_mode_trace(msgs, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "decided_at_ns,deliverable_at_ns,mode,trigger"
    assert lines[1] == "10,20,0,policy"
    assert lines[2] == "30,30,1,failsafe"
