"""Ground-truth stability regions by exhaustive eigenvalue sweeps."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DroopTooSmall, InvalidConfig
from .netmodel import (
    DROOP_FLOOR_PCT,
    RING5_OMEGA_C,
    AdmittanceModel,
    DroopSetting,
    NetworkConfig,
    build_admittance,
)
from .smallsignal import verdict

# Grid lower bounds at or below the droop floor are moved up to this value.
GRID_CLAMP_PCT = 2 * DROOP_FLOOR_PCT


@dataclass(frozen=True, eq=False)
class GridSpec:
    target_source: int
    kf_range: tuple
    kv_range: tuple
    resolution: tuple
    fixed_droops: DroopSetting

    def __post_init__(self):
        for name, (lo, hi) in (("kf", self.kf_range), ("kv", self.kv_range)):
            if not lo < hi:
                raise InvalidConfig(f"{name} range must satisfy lo < hi, got [{lo}, {hi}]")
        if min(self.resolution) < 1:
            raise InvalidConfig("grid resolution must be at least 1 in each axis")
        if not 0 <= self.target_source < self.fixed_droops.n:
            raise InvalidConfig(f"target source {self.target_source} out of range")

    @staticmethod
    def _axis(rng, count):
        lo, hi = float(rng[0]), float(rng[1])
        lo = max(lo, GRID_CLAMP_PCT)
        if count == 1:
            return np.array([lo])
        return np.linspace(lo, hi, count)

    @property
    def kf_values(self):
        return self._axis(self.kf_range, self.resolution[0])

    @property
    def kv_values(self):
        return self._axis(self.kv_range, self.resolution[1])

    def point(self, kf, kv) -> DroopSetting:
        base = self.fixed_droops
        k_f = base.k_f_pct.copy()
        k_v = base.k_v_pct.copy()
        k_f[self.target_source] = kf
        k_v[self.target_source] = kv
        return DroopSetting(k_f, k_v, omega_c=base.omega_c, f0=base.f0, v0=base.v0)


@dataclass(frozen=True, eq=False)
class StabilityRegion:
    grid: GridSpec
    labels: np.ndarray
    config_id: str

    @property
    def stable_fraction(self):
        return float(self.labels.mean()) if self.labels.size else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kf_pct", "kv_pct", "stable"])
            for i, kf in enumerate(self.grid.kf_values):
                for j, kv in enumerate(self.grid.kv_values):
                    w.writerow([repr(float(kf)), repr(float(kv)), int(self.labels[i, j])])


@dataclass(frozen=True, eq=False)
class SampleBatch:
    rows: np.ndarray
    labels: np.ndarray
    config_id: str
    flagged: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(self.rows) != len(self.labels):
            raise InvalidConfig("rows and labels differ in length")
        if self.flagged is None:
            object.__setattr__(self, "flagged", np.zeros(len(self.labels), dtype=bool))

    def __len__(self):
        return len(self.labels)

    def to_csv(self, path):
        n = self.rows.shape[1] // 2 if len(self.rows) else 0
        header = [f"kf{i + 1}" for i in range(n)] + [f"kv{i + 1}" for i in range(n)] + ["stable"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row, lab in zip(self.rows, self.labels):
                w.writerow([repr(float(v)) for v in row] + [int(lab)])


def _run_indexed(fn, count, threads):
    """Evaluate fn(i) for i in range(count) into a bool array, order-independent."""
    out = np.zeros(count, dtype=bool)
    if threads <= 1 or count < 2:
        for i in range(count):
            out[i] = fn(i)
        return out

    def work(chunk):
        for i in chunk:
            out[i] = fn(i)

    chunks = np.array_split(np.arange(count), min(threads * 4, count))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(work, chunks))
    return out


def sweep(config: NetworkConfig, grid: GridSpec, threads: int = 1, adm: AdmittanceModel = None) -> StabilityRegion:
    adm = build_admittance(config) if adm is None else adm
    kf, kv = grid.kf_values, grid.kv_values
    n_kv = kv.size

    def label(idx):
        i, j = divmod(idx, n_kv)
        return verdict(adm, grid.point(kf[i], kv[j])).stable

    labels = _run_indexed(label, kf.size * n_kv, threads).reshape(kf.size, n_kv)
    return StabilityRegion(grid, labels, config.id)


def classify_droops(adm: AdmittanceModel, vec, omega_c=RING5_OMEGA_C, f0=50.0):
    """Label one 2N droop vector; returns (stable, flagged)."""
    try:
        droops = DroopSetting.from_vector(vec, omega_c=omega_c, f0=f0)
    except DroopTooSmall:
        return False, True
    return verdict(adm, droops).stable, False


def classify_samples(config: NetworkConfig, samples, threads: int = 1, omega_c=RING5_OMEGA_C) -> SampleBatch:
    rows = np.asarray(samples, dtype=float).reshape(len(samples), -1) if len(samples) else np.zeros((0, 2 * config.n_nodes))
    if rows.shape[1] != 2 * config.n_nodes:
        raise InvalidConfig(f"expected {2 * config.n_nodes} droop values per sample, got {rows.shape[1]}")
    adm = build_admittance(config)
    flagged = np.zeros(len(rows), dtype=bool)

    def label(i):
        stable, bad = classify_droops(adm, rows[i], omega_c=omega_c, f0=config.f0)
        flagged[i] = bad
        return stable

    labels = _run_indexed(label, len(rows), threads)
    return SampleBatch(rows, labels, config.id, flagged)


def uniform_droops(rng, count, n, kf_range, kv_range):
    """Uniform droop vectors [kf_1..kf_n, kv_1..kv_n] in percent."""
    kf = rng.uniform(kf_range[0], kf_range[1], size=(count, n))
    kv = rng.uniform(kv_range[0], kv_range[1], size=(count, n))
    return np.hstack([kf, kv])


def section_d_grid(config: NetworkConfig, resolution=(100, 100), omega_c=RING5_OMEGA_C) -> GridSpec:
    """Source-1 sweep over [0, 0.4]% x [0, 4]% with the others at 0.1% / 2%."""
    fixed = DroopSetting.uniform(config.n_nodes, 0.1, 2.0, omega_c=omega_c, f0=config.f0)
    return GridSpec(0, (0.0, 0.4), (0.0, 4.0), tuple(resolution), fixed)
