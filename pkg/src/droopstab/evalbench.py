"""Accuracy, coverage, timing and scalability measurements for trained models."""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .dataset import DroopRanges, decode, sample_stable_dataset, section_d_ranges
from .errors import BudgetExhausted, NonPhysical
from .gan import GanHyper, GanSpecs, TrainedModel, generate_features, generate_samples, train_cgan
from .netmodel import NetworkConfig
from .oracle import StabilityRegion, classify_samples, section_d_grid, sweep
from .smallsignal import verdict


@dataclass
class AccuracyReport:
    n_samples: int
    n_stable: int
    accuracy: float
    repair_mode: str
    per_config: dict = field(default_factory=dict)
    n_invalid: int = 0
    raw_accuracy: float = None  # same samples decoded without repair, when requested


@dataclass
class BenchReport:
    method: str
    config_id: str
    n_samples: int
    wall_seconds: float
    thread_count: int = 1
    scenario: str = "fixed"


@dataclass
class CoverageReport:
    config_id: str
    n_samples: int
    n_stable_cells: int
    n_hit_cells: int
    fraction: float


def stable_fraction(systems):
    """Count decoded systems the oracle calls stable; ``None`` entries count as unstable."""
    n_stable = 0
    for sys_ in systems:
        if sys_ is not None and verdict(*sys_).stable:
            n_stable += 1
    return n_stable


def _decode_all(features, layout, scaling, rho, repair, omega_c, f0):
    systems = []
    for row in np.atleast_2d(features):
        try:
            systems.append(decode(row, layout, scaling, rho, repair, omega_c, f0))
        except NonPhysical:
            systems.append(None)
    return systems


def accuracy_of_features(features, layout, scaling, rho, repair="laplacian", omega_c=31.41, f0=50.0):
    """Oracle-stable fraction of scaled feature rows; undecodable rows count as unstable."""
    features = np.asarray(features, dtype=float).reshape(-1, layout.total)
    systems = _decode_all(features, layout, scaling, rho, repair, omega_c, f0)
    n = len(systems)
    n_stable = stable_fraction(systems)
    return AccuracyReport(n, n_stable, n_stable / n if n else 0.0, repair,
                          n_invalid=sum(s is None for s in systems))


def accuracy(model: TrainedModel, condition=None, count=2000, seed=0, repair="laplacian", with_raw=False) -> AccuracyReport:
    """Generate, decode and classify.

    For a conditional model with no condition every condition is evaluated
    (``count`` samples each). ``with_raw`` also scores the unrepaired decode.
    """
    conditions = [condition]
    if model.conditional and condition is None:
        conditions = list(model.config_ids)
    total = stable = invalid = raw_stable = 0
    per = {}
    for k, cond in enumerate(conditions):
        batch = generate_samples(model, cond, count, seed + k, repair)
        n_stable = stable_fraction(batch.systems)
        key = cond if cond is not None else model.config_ids[0]
        if isinstance(key, (int, np.integer)):
            key = model.config_ids[int(key)]
        per[key] = n_stable / count if count else 0.0
        total += count
        stable += n_stable
        invalid += int((~batch.valid).sum())
        if with_raw and count:
            idx = model.condition_index(cond)
            raw = _decode_all(batch.features, model.layout, model.scaling, model.rho_for(idx), "raw",
                              model.omega_c, model.f0)
            raw_stable += stable_fraction(raw)
    raw_acc = raw_stable / total if (with_raw and total) else None
    return AccuracyReport(total, stable, stable / total if total else 0.0, repair, per, invalid, raw_acc)


def cell_index(values, centers):
    """Nearest grid-cell index for each value; -1 when outside the outer cell edges."""
    centers = np.asarray(centers, dtype=float)
    values = np.asarray(values, dtype=float)
    if centers.size == 1:
        return np.zeros(values.shape, dtype=int)
    edges = np.concatenate([[centers[0] - (centers[1] - centers[0]) / 2],
                            (centers[1:] + centers[:-1]) / 2,
                            [centers[-1] + (centers[-1] - centers[-2]) / 2]])
    idx = np.searchsorted(edges, values, side="right") - 1
    idx[(values < edges[0]) | (values > edges[-1])] = -1
    idx[idx == centers.size] = centers.size - 1
    return idx


def coverage_of_points(kf, kv, region: StabilityRegion) -> CoverageReport:
    i = cell_index(kf, region.grid.kf_values)
    j = cell_index(kv, region.grid.kv_values)
    inside = (i >= 0) & (j >= 0)
    hit = np.zeros(region.labels.shape, dtype=bool)
    hit[i[inside], j[inside]] = True
    stable = region.labels
    n_stable = int(stable.sum())
    n_hit = int((hit & stable).sum())
    return CoverageReport(region.config_id, int(np.size(kf)), n_stable, n_hit, n_hit / n_stable if n_stable else 0.0)


def coverage(model: TrainedModel, condition, count, reference: StabilityRegion, seed=0) -> CoverageReport:
    """Bin generated target-source droops into the reference grid (no decoding needed)."""
    if count == 0:
        return coverage_of_points(np.zeros(0), np.zeros(0), reference)
    feats = generate_features(model, condition, count, np.random.default_rng(seed))
    lay = model.layout
    t = reference.grid.target_source
    kf = feats[:, lay.offsets["k_f"] + t] * model.scaling.k_f
    kv = feats[:, lay.offsets["k_v"] + t] * model.scaling.k_v
    return coverage_of_points(kf, kv, reference)


def _timed(fn):
    start = time.perf_counter()
    out = fn()
    return max(time.perf_counter() - start, 1e-9), out


def bench_compare(config: NetworkConfig, model: TrainedModel, count=20000, threads=1, seed=0,
                  condition=None, ranges: DroopRanges = None, scenario="fixed"):
    """Wall time of oracle classification vs generator sampling for ``count`` samples.

    Returns ``(traditional, generative, ratio)``; ratio is None when undefined.
    """
    ranges = section_d_ranges(config.n_nodes) if ranges is None else ranges
    draws = ranges.draw(np.random.default_rng(seed), count)
    if model.conditional and condition is None:
        condition = config.id if config.id in model.config_ids else 0
    t_trad, _ = _timed(lambda: classify_samples(config, draws, threads=threads, omega_c=model.omega_c))
    t_gen, _ = _timed(lambda: generate_samples(model, condition, count, seed))
    trad = BenchReport("traditional", config.id, count, t_trad, threads, scenario)
    gen = BenchReport("generative", config.id, count, t_gen, 1, scenario)
    ratio = t_trad / t_gen if count else None
    return trad, gen, ratio


@dataclass
class ScalabilityRow:
    n_configs: int
    epochs_to_accuracy: int
    epochs_to_populated: int
    stop_epoch: int = None


def checkpoint_metrics(model, regions, eval_count, cover_count, seed):
    """Minimum accuracy and minimum coverage across all conditions of ``model``."""
    accs, covs = [], []
    for k, region in enumerate(regions):
        cond = k if model.conditional else None
        accs.append(accuracy(model, cond, eval_count, seed + k).accuracy)
        covs.append(coverage(model, cond, cover_count, region, seed + 100 + k).fraction)
    return min(accs), min(covs)


def scalability_experiment(config_counts, configs, hyper: GanHyper, specs: GanSpecs = GanSpecs(),
                           per_config=4000, ranges: DroopRanges = None, accuracy_threshold=0.95,
                           coverage_threshold=0.9, eval_count=500, cover_count=100000,
                           grid_resolution=(100, 100), data_seed=0, log=None):
    """Train one cGAN per configuration count and record when thresholds are first met.

    ``configs`` lists the available configurations; the first ``n`` are used
    for a row with ``n`` configurations. Coverage uses ``cover_count`` samples:
    at 20000 even an ideal sampler misses about 4 % of the 100x100 stable cells,
    which would put a 0.9 threshold inside the sampling noise.
    """
    ranges = section_d_ranges(configs[0].n_nodes) if ranges is None else ranges
    regions_all = [sweep(c, section_d_grid(c, grid_resolution)) for c in configs]
    rows = []
    for n in config_counts:
        chosen = configs[:n]
        data = sample_stable_dataset(chosen, ranges, per_config * n, data_seed)
        regions = regions_all[:n]
        state = {"acc": None, "cov": None}

        def on_eval(epoch, model, trace):
            acc, cov = checkpoint_metrics(model, regions, eval_count, cover_count, hyper.seed + epoch)
            if log is not None:
                log(n, epoch, trace.dc_values[-1], acc, cov)
            if state["acc"] is None and acc >= accuracy_threshold:
                state["acc"] = epoch
            if state["cov"] is None and cov >= coverage_threshold:
                state["cov"] = epoch
            if state["acc"] is not None and state["cov"] is not None:
                return False
            return True

        run_hyper = replace(hyper, extra_epochs=hyper.max_epochs)
        _, trace = train_cgan(data, run_hyper, specs, callback=on_eval)
        if state["acc"] is None or state["cov"] is None:
            raise BudgetExhausted(
                f"{n} configurations: thresholds not reached within {hyper.max_epochs} epochs "
                f"(accuracy epoch {state['acc']}, populated epoch {state['cov']})"
            )
        rows.append(ScalabilityRow(n, state["acc"], state["cov"], trace.stop_epoch))
    return rows


def write_reports_csv(reports, path):
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to write")
    names = [f.name for f in fields(reports[0])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for r in reports:
            d = asdict(r)
            w.writerow([d[k] if not isinstance(d[k], dict) else ";".join(f"{a}={b}" for a, b in d[k].items())
                        for k in names])


def scatter_svg(path, region: StabilityRegion = None, points=None, misclassified=None,
                width=480, height=400, title=""):
    """Dependency-free scatter plot: stable cells blue, samples red, wrong samples green."""
    margin = 50
    if region is not None:
        kf, kv = region.grid.kf_values, region.grid.kv_values
        x_lo, x_hi = float(kf[0]), float(kf[-1])
        y_lo, y_hi = float(kv[0]), float(kv[-1])
    else:
        pts = np.asarray(points if points is not None else np.zeros((1, 2)))
        x_lo, x_hi = float(pts[:, 0].min()), float(pts[:, 0].max())
        y_lo, y_hi = float(pts[:, 1].min()), float(pts[:, 1].max())
    x_hi = x_hi if x_hi > x_lo else x_lo + 1.0
    y_hi = y_hi if y_hi > y_lo else y_lo + 1.0
    sx = lambda x: margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)
    sy = lambda y: height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    if region is not None:
        cw = (width - 2 * margin) / max(len(kf) - 1, 1)
        ch = (height - 2 * margin) / max(len(kv) - 1, 1)
        for i, j in zip(*np.nonzero(region.labels)):
            out.append(f'<rect x="{sx(kf[i]) - cw / 2:.2f}" y="{sy(kv[j]) - ch / 2:.2f}" '
                       f'width="{cw:.2f}" height="{ch:.2f}" fill="#9ecae1"/>')
    for pts, color in ((points, "#d62728"), (misclassified, "#2ca02c")):
        if pts is None:
            continue
        for x, y in np.asarray(pts).reshape(-1, 2):
            out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="1.2" fill="{color}"/>')
    out.append(f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>')
    out.append(f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>')
    out.append(f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">k_f (%)  [{x_lo:.3g}, {x_hi:.3g}]</text>')
    out.append(f'<text x="14" y="{height / 2}" font-size="12" transform="rotate(-90 14 {height / 2})" '
               f'text-anchor="middle">k_v (%)  [{y_lo:.3g}, {y_hi:.3g}]</text>')
    if title:
        out.append(f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def labeled_projection(model: TrainedModel, condition, count, seed, target=0, repair="laplacian"):
    """Generated (k_f, k_v) of one source, split into oracle-stable and not."""
    batch = generate_samples(model, condition, count, seed, repair)
    n = model.layout.n_nodes
    pts = batch.droops[:, [target, n + target]]
    ok = np.array([s is not None and verdict(*s).stable for s in batch.systems], dtype=bool)
    return pts[ok], pts[~ok]
