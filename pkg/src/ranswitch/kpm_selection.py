"""Redundancy analysis of the candidate KPM set: Pearson correlation,
average-linkage clustering on 1 - |r|, and representative selection.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.cluster import hierarchy
from scipy.spatial.distance import squareform

from .phy_pipeline import KPM_FIELDS
from .validation import ConfigurationError, ParamsMixin, check_2d_features

# phy_throughput is held out of the correlation stage and re-added to the
# final set afterwards; slot_index is bookkeeping, never a candidate
DEFAULT_EXCLUDE = ("phy_throughput",)
DEFAULT_PRIORITY = ("mcs_index",)
DEFAULT_THRESHOLD = 0.8


class ClusteringError(ValueError):
    """Raised when clustering input contains degenerate (undefined) entries."""


@dataclass(frozen=True)
class CorrelationMatrix:
    kpm_names: tuple
    r: np.ndarray
    degenerate: tuple = ()

    def __post_init__(self):
        n = len(self.kpm_names)
        if self.r.shape != (n, n):
            raise ConfigurationError("correlation matrix shape mismatch")
        if not np.allclose(np.diag(self.r), 1.0, atol=1e-12):
            raise ConfigurationError("correlation diagonal must be 1")
        finite = np.isfinite(self.r)
        if not np.array_equal(finite, finite.T) or not np.allclose(
                self.r[finite & finite.T], self.r.T[finite & finite.T], atol=1e-12):
            raise ConfigurationError("correlation matrix must be symmetric")
        vals = self.r[finite]
        if vals.size and (vals.min() < -1.0 - 1e-12 or vals.max() > 1.0 + 1e-12):
            raise ConfigurationError("correlation entries must lie in [-1, 1]")

    def entry(self, a: str, b: str) -> float:
        return float(self.r[self.kpm_names.index(a), self.kpm_names.index(b)])

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["kpm"] + list(self.kpm_names))
            for name, row in zip(self.kpm_names, self.r):
                w.writerow([name] + [repr(float(v)) for v in row])

    @classmethod
    def read_csv(cls, path) -> "CorrelationMatrix":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        names = tuple(rows[0][1:])
        r = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
        return cls(names, r)


@dataclass(frozen=True)
class ClusterResult:
    clusters: tuple              # tuple of member tuples, a partition
    threshold: float
    leaf_order: tuple = ()
    representatives: tuple = ()  # aligned with clusters once picked

    def __post_init__(self):
        flat = [m for c in self.clusters for m in c]
        if len(flat) != len(set(flat)):
            raise ConfigurationError("clusters must form a partition")
        if self.representatives:
            if len(self.representatives) != len(self.clusters):
                raise ConfigurationError("one representative per cluster required")
            for rep, members in zip(self.representatives, self.clusters):
                if rep not in members:
                    raise ConfigurationError(f"representative {rep} outside its cluster")


def default_candidates(exclude=DEFAULT_EXCLUDE) -> tuple:
    return tuple(f for f in KPM_FIELDS
                 if f != "slot_index" and f not in exclude)


def _columns(records, names):
    if isinstance(records, np.ndarray):
        x = check_2d_features(records, n_features=len(names))
        return x
    return np.array([[float(getattr(rec, n)) for n in names] for rec in records])


def pearson_matrix(records, names=None) -> CorrelationMatrix:
    """Sample Pearson r per KPM pair. Zero-variance columns are reported as
    degenerate and their off-diagonal entries left undefined (NaN)."""
    names = tuple(names) if names is not None else default_candidates()
    x = _columns(records, names)
    if x.shape[0] < 2:
        raise ConfigurationError("need at least 2 records for correlation")
    centered = x - x.mean(axis=0)
    sd = np.sqrt((centered ** 2).sum(axis=0))
    dead = sd == 0.0
    sd_safe = np.where(dead, 1.0, sd)
    r = (centered.T @ centered) / np.outer(sd_safe, sd_safe)
    r = np.clip(r, -1.0, 1.0)
    r[dead, :] = np.nan
    r[:, dead] = np.nan
    np.fill_diagonal(r, 1.0)
    return CorrelationMatrix(names, r,
                             degenerate=tuple(n for n, d in zip(names, dead) if d))


def hcluster(m: CorrelationMatrix, threshold: float = DEFAULT_THRESHOLD) -> ClusterResult:
    """Average-linkage clustering on d = 1 - |r|, cut at d = 1 - threshold.
    Also returns the dendrogram leaf order used to reorder report matrices."""
    if not 0.0 < threshold < 1.0:
        raise ConfigurationError("threshold must lie in (0, 1)")
    if m.degenerate:
        raise ClusteringError(
            "degenerate KPMs cannot be clustered: " + ", ".join(m.degenerate))
    names = m.kpm_names
    if len(names) == 1:
        return ClusterResult(clusters=(tuple(names),), threshold=threshold,
                             leaf_order=tuple(names))
    d = 1.0 - np.abs(m.r)
    np.fill_diagonal(d, 0.0)
    link = hierarchy.linkage(squareform(d, checks=False), method="average")
    labels = hierarchy.fcluster(link, t=1.0 - threshold, criterion="distance")
    leaf_order = tuple(names[i] for i in hierarchy.leaves_list(link))
    groups: dict[int, list] = {}
    for name, lab in zip(names, labels):
        groups.setdefault(int(lab), []).append(name)
    clusters = tuple(sorted((tuple(sorted(g)) for g in groups.values()),
                            key=lambda c: c[0]))
    return ClusterResult(clusters=clusters, threshold=threshold, leaf_order=leaf_order)


def _rank(name: str, priority) -> tuple:
    try:
        return (0, priority.index(name))
    except ValueError:
        return (1, name)


def pick_representatives(c: ClusterResult, priority=DEFAULT_PRIORITY) -> ClusterResult:
    """Per cluster, keeps the highest-priority member; members outside the
    priority list rank after listed ones, alphabetically."""
    if not c.clusters:
        raise ConfigurationError("no clusters to pick representatives from")
    reps = tuple(min(members, key=lambda n: _rank(n, priority))
                 for members in c.clusters)
    return ClusterResult(clusters=c.clusters, threshold=c.threshold,
                         leaf_order=c.leaf_order, representatives=reps)


def final_policy_set(*results: ClusterResult, readd=DEFAULT_EXCLUDE) -> tuple:
    """Union of representatives across clustering results, with the held-out
    KPMs re-added in front."""
    out = list(readd)
    for res in results:
        if not res.representatives:
            raise ConfigurationError("pick_representatives must run first")
        for rep in res.representatives:
            if rep not in out:
                out.append(rep)
    return tuple(out)


class KpmSelector(ParamsMixin):
    """Estimator wrapper over the correlation / clustering / representative
    stage.

    fit() computes the matrix and cluster structure from records, transform()
    projects records onto the selected KPM columns.
    """

    def __init__(self, threshold: float = DEFAULT_THRESHOLD,
                 priority=DEFAULT_PRIORITY, exclude=DEFAULT_EXCLUDE,
                 names=None):
        self.threshold = threshold
        self.priority = priority
        self.exclude = exclude
        self.names = names

    def _candidates(self) -> tuple:
        if self.names is not None:
            return tuple(n for n in self.names if n not in self.exclude)
        return default_candidates(self.exclude)

    def fit(self, records, y=None):
        names = self._candidates()
        self.matrix_ = pearson_matrix(records, names=names)
        clusters = hcluster(self.matrix_, self.threshold)
        self.clusters_ = pick_representatives(clusters, self.priority)
        self.selected_ = final_policy_set(self.clusters_, readd=self.exclude)
        return self

    def transform(self, records) -> np.ndarray:
        if not hasattr(self, "selected_"):
            raise ConfigurationError("KpmSelector is not fitted")
        if isinstance(records, np.ndarray):
            names = self.names if self.names is not None else \
                tuple(f for f in KPM_FIELDS if f != "slot_index")
            idx = [names.index(n) for n in self.selected_]
            return check_2d_features(records, n_features=len(names))[:, idx]
        return np.array([[float(getattr(rec, n)) for n in self.selected_]
                         for rec in records])

    def fit_transform(self, records, y=None) -> np.ndarray:
        return self.fit(records).transform(records)
