"""External control plane: consumes slot KPM indications, periodically runs
the tree policy over a sliding window, and emits mode messages through a
latency-modeled channel. Fail-safe reverts to MMSE when the control side
goes quiet.

Virtual time is integer nanoseconds throughout; latency constants are
given in microseconds and converted once.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .phy_pipeline import ControlMessage
from .switch_policy import FEATURE_ORDER, TreeModel, predict
from .validation import ConfigurationError, ContractViolation

TRIGGER_POLICY = "policy"
TRIGGER_FAILSAFE = "failsafe"


@dataclass(frozen=True)
class LatencyModel:
    framework_overhead_us: float = 135.0
    policy_inference_us: float = 0.41
    switch_exec_us: float = 4.5

    def __post_init__(self):
        for v in (self.framework_overhead_us, self.policy_inference_us,
                  self.switch_exec_us):
            if v < 0:
                raise ConfigurationError("latency components must be >= 0")

    def total_us(self) -> float:
        return (self.framework_overhead_us + self.policy_inference_us
                + self.switch_exec_us)

    def decision_delay_ns(self) -> int:
        """Indication-to-decision path: framework overhead plus inference.
        Switch execution is charged inside the pipeline."""
        return int(round(
            (self.framework_overhead_us + self.policy_inference_us) * 1000.0))


def loop_latency(lat: LatencyModel) -> float:
    return lat.total_us()


@dataclass(frozen=True)
class DappConfig:
    decision_period_slots: int = 100
    window_length_slots: int = 100
    failsafe_timeout_us: Optional[float] = None  # None: 10 decision periods

    def __post_init__(self):
        if self.decision_period_slots < 1 or self.window_length_slots < 1:
            raise ConfigurationError("periods must be positive")
        if self.failsafe_timeout_us is not None and self.failsafe_timeout_us <= 0:
            raise ConfigurationError("failsafe timeout must be positive")

    def timeout_ns(self, slot_duration_ns: int) -> int:
        if self.failsafe_timeout_us is not None:
            return int(round(self.failsafe_timeout_us * 1000.0))
        return 10 * self.decision_period_slots * slot_duration_ns


@dataclass(frozen=True)
class E3Indication:
    kpm_window: tuple
    emitted_at_ns: int
    slot_duration_ns: int = 500_000

    def __post_init__(self):
        slots = [r.slot_index for r in self.kpm_window]
        if any(b <= a for a, b in zip(slots, slots[1:])):
            raise ContractViolation("indication records must be in slot order")
        if slots and self.emitted_at_ns < (slots[-1] + 1) * self.slot_duration_ns:
            raise ContractViolation("indication emitted before its last slot ended")


def window_features(records, names=FEATURE_ORDER) -> np.ndarray:
    """Per-KPM mean over the window; the policy's input vector."""
    if not records:
        raise ContractViolation("empty KPM window")
    cols = np.array([[float(getattr(r, n)) for n in names] for r in records])
    return cols.mean(axis=0)


class Dapp:
    """Stateful decision loop. Feed one indication per slot (or batched);
    a ControlMessage comes back whenever the decision period has elapsed."""

    def __init__(self, tree: TreeModel, latency: LatencyModel | None = None,
                 config: DappConfig | None = None, feature_names=FEATURE_ORDER):
        self.tree = tree
        self.latency = latency or LatencyModel()
        self.config = config or DappConfig()
        self.feature_names = tuple(feature_names)
        self._window: deque = deque(maxlen=self.config.window_length_slots)
        self._since_decision = 0
        self.decisions: list = []

    def on_indication(self, ind: E3Indication) -> Optional[ControlMessage]:
        for rec in ind.kpm_window:
            self._window.append(rec)
            self._since_decision += 1
        if self._since_decision < self.config.decision_period_slots or not self._window:
            return None
        self._since_decision = 0
        vec = window_features(self._window, self.feature_names)
        mode = int(predict(self.tree, vec))
        decided = ind.emitted_at_ns + self.latency.decision_delay_ns()
        msg = ControlMessage(mode=mode, decided_at_ns=decided,
                             deliverable_at_ns=decided, trigger=TRIGGER_POLICY)
        self.decisions.append(msg)
        return msg


@dataclass
class FailsafeMonitor:
    """Watches the downlink. If nothing arrives within the timeout, asks for
    a revert to mode 1 once, until traffic resumes."""
    timeout_ns: int
    last_delivery_ns: int = 0
    events: list = field(default_factory=list)
    _tripped: bool = False

    def note_delivery(self, at_ns: int):
        self.last_delivery_ns = max(self.last_delivery_ns, int(at_ns))
        self._tripped = False

    def check(self, now_ns: int, current_mode: int) -> Optional[int]:
        if self._tripped or now_ns - self.last_delivery_ns <= self.timeout_ns:
            return None
        if current_mode == 1:
            # initial default already safe; nothing to flag
            return None
        self._tripped = True
        self.events.append(int(now_ns))
        return 1


def failsafe_check(monitor: FailsafeMonitor, now_ns: int,
                   current_mode: int) -> Optional[int]:
    return monitor.check(now_ns, current_mode)


def write_mode_trace(messages, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["decided_at_ns", "deliverable_at_ns", "mode", "trigger"])
        for m in messages:
            w.writerow([m.decided_at_ns, m.deliverable_at_ns, m.mode, m.trigger])
