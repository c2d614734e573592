"""Training data: stable configurations flattened into scaled feature rows.

A row is the concatenation of four blocks

    y_mag (upper triangle incl. diagonal) | y_ang (same) | k_f | k_v

each divided by a single per-block factor (largest absolute value over the
whole dataset), so every feature lies in [-1, 1].
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AcceptanceTooLow,
    DegenerateBlock,
    FormatError,
    InvalidConfig,
    NonPhysical,
    ShapeMismatch,
)
from .netmodel import (
    DROOP_FLOOR_PCT,
    RING5_OMEGA_C,
    AdmittanceModel,
    DroopSetting,
    build_admittance,
)
from .oracle import GRID_CLAMP_PCT, classify_samples

BLOCKS = ("y_mag", "y_ang", "k_f", "k_v")
REPAIR_MODES = ("laplacian", "raw")
MIN_ACCEPTANCE = 1e-3
DATA_MAGIC = b"DSTBDATA"
DATA_VERSION = 1


@dataclass(frozen=True)
class FeatureLayout:
    n_nodes: int

    @property
    def tri(self):
        return self.n_nodes * (self.n_nodes + 1) // 2

    @property
    def lengths(self):
        return {"y_mag": self.tri, "y_ang": self.tri, "k_f": self.n_nodes, "k_v": self.n_nodes}

    @property
    def offsets(self):
        out, pos = {}, 0
        for name in BLOCKS:
            out[name] = pos
            pos += self.lengths[name]
        return out

    @property
    def total(self):
        return 2 * self.tri + 2 * self.n_nodes

    @property
    def network_width(self):
        """Width of the y_mag + y_ang prefix used as the cGAN condition."""
        return 2 * self.tri

    def block(self, name):
        start = self.offsets[name]
        return slice(start, start + self.lengths[name])

    def feature_names(self):
        iu = np.triu_indices(self.n_nodes)
        names = [f"ymag_{i + 1}_{j + 1}" for i, j in zip(*iu)]
        names += [f"yang_{i + 1}_{j + 1}" for i, j in zip(*iu)]
        names += [f"kf{i + 1}" for i in range(self.n_nodes)]
        names += [f"kv{i + 1}" for i in range(self.n_nodes)]
        return names


@dataclass(frozen=True)
class ScalingFactors:
    y_mag: float
    y_ang: float
    k_f: float
    k_v: float

    def __post_init__(self):
        for name in BLOCKS:
            if not getattr(self, name) > 0:
                raise DegenerateBlock(f"scaling factor for {name} must be positive")

    def vector(self, layout: FeatureLayout):
        out = np.empty(layout.total)
        for name in BLOCKS:
            out[layout.block(name)] = getattr(self, name)
        return out

    def to_dict(self):
        return {name: getattr(self, name) for name in BLOCKS}

    @classmethod
    def from_dict(cls, d):
        return cls(*(float(d[name]) for name in BLOCKS))


def raw_features(adm: AdmittanceModel, droops: DroopSetting) -> np.ndarray:
    """Unscaled feature vector."""
    iu = np.triu_indices(adm.n)
    return np.concatenate([adm.y_mag[iu], adm.y_ang[iu], droops.k_f_pct, droops.k_v_pct])


def encode(adm: AdmittanceModel, droops: DroopSetting, layout: FeatureLayout, scaling: ScalingFactors):
    if adm.n != layout.n_nodes or droops.n != layout.n_nodes:
        raise ShapeMismatch(f"layout is for {layout.n_nodes} nodes, got {adm.n} / {droops.n}")
    return raw_features(adm, droops) / scaling.vector(layout)


def _symmetric(upper, n):
    m = np.zeros((n, n))
    iu = np.triu_indices(n)
    m[iu] = upper
    m.T[iu] = upper
    return m


def decode(vector, layout: FeatureLayout, scaling: ScalingFactors, rho: float, repair="laplacian",
           omega_c=RING5_OMEGA_C, f0=50.0):
    """Invert ``encode``; returns (AdmittanceModel, DroopSetting).

    ``laplacian`` repair drops negative off-diagonal magnitudes (no line) and
    resets each diagonal entry of the complex admittance to minus the sum of
    the off-diagonal entries in its row.  ``raw`` keeps the values as given.
    """
    vec = np.asarray(vector, dtype=float)
    if vec.shape != (layout.total,):
        raise ShapeMismatch(f"expected a vector of width {layout.total}, got {vec.shape}")
    if repair not in REPAIR_MODES:
        raise ValueError(f"repair must be one of {REPAIR_MODES}")
    raw = vec * scaling.vector(layout)
    n = layout.n_nodes
    y_mag = _symmetric(raw[layout.block("y_mag")], n)
    y_ang = _symmetric(raw[layout.block("y_ang")], n)
    k_f = raw[layout.block("k_f")]
    k_v = raw[layout.block("k_v")]

    bad = np.concatenate([k_f, k_v]) <= DROOP_FLOOR_PCT
    if bad.any():
        raise NonPhysical(f"decoded droop gains at or below the {DROOP_FLOOR_PCT}% floor")

    if repair == "laplacian":
        off = ~np.eye(n, dtype=bool)
        y = np.where(off & (y_mag > 0), y_mag, 0.0) * np.exp(1j * y_ang)
        y[~off] = 0.0
        np.fill_diagonal(y, -y.sum(axis=1))
        adm = AdmittanceModel.from_complex(y, rho)
    else:
        if (y_mag < 0).any():
            raise NonPhysical("decoded admittance magnitude is negative")
        adm = AdmittanceModel(y_mag, y_ang, float(rho))
    droops = DroopSetting(k_f, k_v, omega_c=omega_c, f0=f0)
    return adm, droops


def fit_scaling(raw_rows, layout: FeatureLayout) -> ScalingFactors:
    rows = np.atleast_2d(np.asarray(raw_rows, dtype=float))
    if rows.size == 0:
        raise DegenerateBlock("cannot fit scaling factors on an empty dataset")
    if rows.shape[1] != layout.total:
        raise ShapeMismatch(f"rows have width {rows.shape[1]}, layout expects {layout.total}")
    factors = {}
    for name in BLOCKS:
        peak = float(np.abs(rows[:, layout.block(name)]).max())
        if peak == 0.0:
            raise DegenerateBlock(f"block {name} is identically zero")
        factors[name] = peak
    return ScalingFactors(**factors)


@dataclass(frozen=True)
class DroopRanges:
    """Per-source sampling rectangles in percent: rows of (kf_lo, kf_hi, kv_lo, kv_hi)."""

    bounds: tuple

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float)
        if b.ndim != 2 or b.shape[1] != 4:
            raise InvalidConfig("droop ranges need (kf_lo, kf_hi, kv_lo, kv_hi) per source")
        if (b[:, [0, 2]] <= DROOP_FLOOR_PCT).any():
            raise InvalidConfig(f"range lower bounds must exceed the {DROOP_FLOOR_PCT}% floor")
        if (b[:, [1, 3]] < b[:, [0, 2]]).any():
            raise InvalidConfig("range upper bound below lower bound")
        object.__setattr__(self, "bounds", tuple(tuple(float(v) for v in row) for row in b))

    @property
    def n(self):
        return len(self.bounds)

    def draw(self, rng, count):
        b = np.asarray(self.bounds)
        u = rng.random((count, 2 * self.n))
        lo = np.concatenate([b[:, 0], b[:, 2]])
        hi = np.concatenate([b[:, 1], b[:, 3]])
        return lo + u * (hi - lo)

    def to_list(self):
        return [list(r) for r in self.bounds]

    @classmethod
    def single_source(cls, n, target, kf_range, kv_range, fixed_kf, fixed_kv):
        clamp = lambda v: max(float(v), GRID_CLAMP_PCT)
        rows = [(fixed_kf, fixed_kf, fixed_kv, fixed_kv)] * n
        rows[target] = (clamp(kf_range[0]), kf_range[1], clamp(kv_range[0]), kv_range[1])
        return cls(tuple(rows))

    @classmethod
    def all_sources(cls, n, kf_range, kv_range):
        return cls(tuple((kf_range[0], kf_range[1], kv_range[0], kv_range[1]) for _ in range(n)))


def section_d_ranges(n=5):
    """Source 1 uniform over [0, 0.4]% x [0, 4]%, the rest fixed at 0.1% / 2%."""
    return DroopRanges.single_source(n, 0, (0.0, 0.4), (0.0, 4.0), 0.1, 2.0)


def varied_ranges(n=5):
    """Every source uniform over k_f in [0.1, 0.5]% and k_v in [1, 5]%."""
    return DroopRanges.all_sources(n, (0.1, 0.5), (1.0, 5.0))


@dataclass(eq=False)
class TrainingSet:
    rows: np.ndarray
    condition_ids: np.ndarray
    condition_vectors: np.ndarray
    config_ids: list
    rhos: list
    layout: FeatureLayout
    scaling: ScalingFactors
    seed: int = 0
    omega_c: float = RING5_OMEGA_C
    f0: float = 50.0
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    @property
    def n_conditions(self):
        return len(self.config_ids)

    def rows_for(self, condition):
        return self.rows[self.condition_ids == condition]

    def raw_rows(self):
        return self.rows * self.scaling.vector(self.layout)

    def decode_row(self, i, repair="raw"):
        c = int(self.condition_ids[i])
        return decode(self.rows[i], self.layout, self.scaling, self.rhos[c], repair, self.omega_c, self.f0)

    def header(self):
        return {
            "n_nodes": self.layout.n_nodes,
            "scaling": self.scaling.to_dict(),
            "config_ids": list(self.config_ids),
            "rhos": [float(r) for r in self.rhos],
            "seed": int(self.seed),
            "omega_c": self.omega_c,
            "f0": self.f0,
            "n_rows": int(len(self.rows)),
            "metadata": self.metadata,
        }

    def save(self, path):
        head = json.dumps(self.header(), sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(DATA_MAGIC)
            fh.write(struct.pack("<II", DATA_VERSION, len(head)))
            fh.write(head)
            fh.write(np.ascontiguousarray(self.rows, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.condition_ids, dtype="<i8").tobytes())
            fh.write(np.ascontiguousarray(self.condition_vectors, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        blob = Path(path).read_bytes()
        if blob[:8] != DATA_MAGIC:
            raise FormatError(f"{path} is not a droopstab dataset file")
        version, hlen = struct.unpack_from("<II", blob, 8)
        if version != DATA_VERSION:
            raise FormatError(f"unsupported dataset version {version}")
        head = json.loads(blob[16:16 + hlen])
        layout = FeatureLayout(head["n_nodes"])
        m, k = head["n_rows"], len(head["config_ids"])
        off = 16 + hlen
        need = off + 8 * (m * layout.total + m + k * layout.network_width)
        if len(blob) != need:
            raise FormatError(f"dataset file has {len(blob)} bytes, expected {need}")
        rows = np.frombuffer(blob, "<f8", m * layout.total, off).reshape(m, layout.total).copy()
        off += 8 * m * layout.total
        cond = np.frombuffer(blob, "<i8", m, off).copy()
        off += 8 * m
        vecs = np.frombuffer(blob, "<f8", k * layout.network_width, off).reshape(k, layout.network_width).copy()
        return cls(
            rows, cond, vecs, head["config_ids"], head["rhos"], layout,
            ScalingFactors.from_dict(head["scaling"]), head["seed"], head["omega_c"], head["f0"],
            head["metadata"],
        )

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.layout.feature_names() + ["condition"])
            for row, c in zip(self.rows, self.condition_ids):
                w.writerow([repr(float(v)) for v in row] + [self.config_ids[c]])


def sample_stable_dataset(configs, ranges: DroopRanges, count: int, seed: int, threads: int = 1,
                          omega_c=RING5_OMEGA_C, chunk: int = 2000) -> TrainingSet:
    """Rejection-sample ``count`` oracle-stable rows split equally over ``configs``."""
    configs = list(configs)
    if not configs:
        raise InvalidConfig("need at least one network configuration")
    if count % len(configs):
        raise InvalidConfig(f"count {count} is not divisible by {len(configs)} configurations")
    n = configs[0].n_nodes
    if any(c.n_nodes != n for c in configs) or ranges.n != n:
        raise ShapeMismatch("all configurations and droop ranges must share the node count")
    layout = FeatureLayout(n)
    quota = count // len(configs)

    adms = [build_admittance(c) for c in configs]
    raw_blocks, cond_blocks, acceptance = [], [], {}
    for k, (config, adm) in enumerate(zip(configs, adms)):
        rng = np.random.default_rng([seed, k])
        kept, drawn = [], 0
        while sum(len(x) for x in kept) < quota:
            cand = ranges.draw(rng, chunk)
            drawn += chunk
            labels = classify_samples(config, cand, threads=threads, omega_c=omega_c).labels
            kept.append(cand[labels])
            n_kept = sum(len(x) for x in kept)
            if n_kept / drawn < MIN_ACCEPTANCE and drawn >= 10 * chunk or (n_kept == 0 and drawn >= 5 * chunk):
                raise AcceptanceTooLow(
                    f"{config.id}: only {n_kept} of {drawn} draws stable; check the model and ranges"
                )
        droop_rows = np.vstack(kept)[:quota] if quota else np.zeros((0, 2 * n))
        acceptance[config.id] = (sum(len(x) for x in kept) / drawn) if drawn else None
        iu = np.triu_indices(n)
        net = np.concatenate([adm.y_mag[iu], adm.y_ang[iu]])
        raw_blocks.append(np.hstack([np.tile(net, (quota, 1)), droop_rows]))
        cond_blocks.append(np.full(quota, k, dtype=np.int64))

    raw = np.vstack(raw_blocks) if count else np.zeros((0, layout.total))
    if count:
        scaling = fit_scaling(raw, layout)
    else:
        scaling = ScalingFactors(1.0, 1.0, 1.0, 1.0)
    scale = scaling.vector(layout)
    rows = raw / scale
    iu = np.triu_indices(n)
    cond_vectors = np.array([
        np.concatenate([a.y_mag[iu], a.y_ang[iu]]) / scale[: layout.network_width] for a in adms
    ])
    meta = {"ranges": ranges.to_list(), "acceptance": acceptance, "count": count,
            "configs": [c.to_dict() for c in configs]}
    return TrainingSet(
        rows, np.concatenate(cond_blocks), cond_vectors, [c.id for c in configs],
        [a.rho for a in adms], layout, scaling, seed, omega_c, configs[0].f0, meta,
    )
