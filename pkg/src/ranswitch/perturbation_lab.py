"""Controlled degradation of the MMSE estimates: calibrated noise injection,
the rho sweep, and monotonicity filtering of candidate KPMs.

All rho points share one seed, so every non-injected draw (channel, noise,
data, CRC) is common across points; only the injection scale varies. That
makes the per-point means directly comparable without Monte-Carlo jitter in
the orderings.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .expert_bank import DmrsEstimate, Stage
from .phy_pipeline import (KPM_FIELDS, ExecutionMode, Pipeline, PipelineConfig)
from .radio_scene import ScenarioConfig, SlotGeometry
from .rng import complex_normal, stream
from .validation import ConfigurationError

DEFAULT_RHO_GRID = tuple(i / 10.0 for i in range(21))

# every KpmRecord field except the slot counter, plus the injection scale
# diagnostics recorded alongside (the slot mean of |H_hat| and its square;
# the square is what the additive RSRP inflation tracks when the scale
# varies slot to slot)
CANDIDATE_KPMS = tuple(f for f in KPM_FIELDS if f != "slot_index")
EST_ABS_MEAN = "est_abs_mean"
EST_ABS_SQ = "est_abs_sq"


@dataclass(frozen=True)
class PerturbationConfig:
    rho_values: tuple = DEFAULT_RHO_GRID
    slots_per_point: int = 500
    seed: int = 0

    def __post_init__(self):
        rv = self.rho_values
        if any(not 0.0 <= r <= 2.0 for r in rv):
            raise ConfigurationError("rho values must lie in [0, 2]")
        if any(b <= a for a, b in zip(rv, rv[1:])):
            raise ConfigurationError("rho values must be sorted ascending")
        if self.slots_per_point < 1:
            raise ConfigurationError("slots_per_point must be >= 1")


@dataclass
class DegradationTable:
    kpm_names: tuple
    rho_values: tuple
    mean: np.ndarray   # (n_kpm, n_rho)
    ci95: np.ndarray   # 1.96 * stderr of the mean
    n: np.ndarray      # samples per cell; 0 where unknown (external fixtures)

    def series(self, kpm: str) -> np.ndarray:
        return self.mean[self.kpm_names.index(kpm)]

    def rows(self):
        for i, kpm in enumerate(self.kpm_names):
            for j, rho in enumerate(self.rho_values):
                yield kpm, rho, self.mean[i, j], self.ci95[i, j], int(self.n[i, j])

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["kpm", "rho", "mean", "ci95", "n"])
            for kpm, rho, mean, ci, n in self.rows():
                w.writerow([kpm, repr(float(rho)), repr(float(mean)), repr(float(ci)), n])

    @classmethod
    def read_csv(cls, path) -> "DegradationTable":
        by_kpm: dict[str, dict[float, tuple]] = {}
        order: list[str] = []
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                kpm = row["kpm"]
                if kpm not in by_kpm:
                    by_kpm[kpm] = {}
                    order.append(kpm)
                by_kpm[kpm][float(row["rho"])] = (float(row["mean"]), float(row["ci95"]),
                                                  int(row.get("n") or 0))
        rhos = sorted({r for d in by_kpm.values() for r in d})
        mean = np.array([[by_kpm[k][r][0] for r in rhos] for k in order])
        ci = np.array([[by_kpm[k][r][1] for r in rhos] for k in order])
        n = np.array([[by_kpm[k][r][2] for r in rhos] for k in order])
        return cls(tuple(order), tuple(rhos), mean, ci, n)


def _inject_values(values: np.ndarray, rho: float, seed: int, slot_index: int):
    """Core of Eq. 3: out = in + rho * mean(|in|) * CN(0,1)."""
    m = float(np.mean(np.abs(values)))
    if rho == 0.0:
        return values.copy(), m
    z = complex_normal(stream(seed, "inject", slot_index), values.shape)
    return values + rho * m * z, m


def inject_noise(h_mmse: DmrsEstimate, rho: float, seed: int,
                 slot_index: int = 0) -> DmrsEstimate:
    """Additive complex Gaussian perturbation scaled to rho * E[|H_hat|].
    The input estimate is untouched; rho = 0 returns a bit-exact copy."""
    if not 0.0 <= rho <= 2.0:
        raise ConfigurationError(f"rho={rho} outside [0, 2]")
    if h_mmse.stage is not Stage.INTERPOLATED:
        raise ConfigurationError("inject_noise expects an Interpolated estimate")
    out, _ = _inject_values(h_mmse.values, rho, seed, slot_index)
    return DmrsEstimate(values=out, stage=h_mmse.stage,
                        comb_mask=h_mmse.comb_mask.copy(), geometry=h_mmse.geometry)


def sweep(scenario: ScenarioConfig, pert: PerturbationConfig,
          geometry: SlotGeometry | None = None,
          pipeline_config: PipelineConfig | None = None) -> DegradationTable:
    """Runs the MMSE-only pipeline (switching and the second expert disabled)
    at each rho, injecting into the MMSE output before equalization."""
    geometry = geometry or SlotGeometry()
    names = CANDIDATE_KPMS + (EST_ABS_MEAN, EST_ABS_SQ)
    n_rho = len(pert.rho_values)
    mean = np.zeros((len(names), n_rho))
    ci = np.zeros((len(names), n_rho))
    n = np.zeros((len(names), n_rho), dtype=int)

    for j, rho in enumerate(pert.rho_values):
        pipe = Pipeline(geometry, scenario, exec_mode=ExecutionMode.SELECTED_ONLY,
                        config=pipeline_config)
        pipe.perturb = lambda slot, values, _r=rho: _inject_values(
            values, _r, scenario.seed, slot)
        cols = {name: np.empty(pert.slots_per_point) for name in names}
        for s in range(pert.slots_per_point):
            out = pipe.run_slot()
            for name in CANDIDATE_KPMS:
                cols[name][s] = getattr(out.kpm, name)
            cols[EST_ABS_MEAN][s] = out.est_abs_mean
            cols[EST_ABS_SQ][s] = out.est_abs_mean ** 2
        for i, name in enumerate(names):
            x = cols[name]
            mean[i, j] = x.mean()
            sd = x.std(ddof=1) if len(x) > 1 else 0.0
            ci[i, j] = 1.96 * sd / np.sqrt(len(x))
            n[i, j] = len(x)
    return DegradationTable(names, tuple(pert.rho_values), mean, ci, n)


@dataclass(frozen=True)
class TrendScore:
    spearman: float
    retained: bool
    degenerate: bool = False


def monotonicity_filter(table: DegradationTable, tau: float = 0.9) -> dict[str, TrendScore]:
    """Spearman rank correlation between rho and each KPM's mean; retains
    |spearman| >= tau. Sign is reported (RSRP trends positive by design)."""
    if not 0.0 < tau <= 1.0:
        raise ConfigurationError("tau must lie in (0, 1]")
    if len(table.rho_values) < 3:
        raise ConfigurationError("need at least 3 rho points")
    scores: dict[str, TrendScore] = {}
    rho = np.asarray(table.rho_values)
    for kpm in table.kpm_names:
        if kpm not in CANDIDATE_KPMS:
            continue  # injection-scale diagnostics ride along but are not KPMs
        series = table.series(kpm)
        if np.allclose(series, series[0], rtol=0.0, atol=0.0):
            scores[kpm] = TrendScore(spearman=float("nan"), retained=False, degenerate=True)
            continue
        s = float(stats.spearmanr(rho, series).statistic)
        scores[kpm] = TrendScore(spearman=s, retained=bool(abs(s) >= tau))
    return scores


def retained_kpms(scores: dict[str, TrendScore]) -> tuple:
    return tuple(k for k, v in scores.items() if v.retained)
