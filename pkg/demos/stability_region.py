"""Map the stability region of source 1 on the five-bus ring.

Sweeps (k_f1, k_v1) over [0, 0.4] x [0, 4] percent with the other sources
held at 0.1 % / 2 %, prints where the boundary sits, and writes an SVG.
Also shows how a weakened line (y12 halved) moves that boundary.

    python demos/stability_region.py [out_dir]
"""
import sys
import time
from pathlib import Path

import numpy as np

from droopstab import evalbench as eb
from droopstab import netmodel as nm
from droopstab import oracle


def boundary_kv(region):
    """Largest stable k_v1 in each k_f1 column."""
    kv = region.grid.kv_values
    return np.array([kv[col].max() if col.any() else np.nan for col in region.labels])


def main(out_dir="demo_out"):
    out = Path(out_dir)
    out.mkdir(exist_ok=True)
    for spec in ("ring5", "ring5:y12/2"):
        cfg = nm.resolve_config(spec)
        start = time.perf_counter()
        region = oracle.sweep(cfg, oracle.section_d_grid(cfg))
        took = time.perf_counter() - start
        edge = boundary_kv(region)
        print(f"{spec}: {region.labels.mean():.0%} of the grid is stable ({took:.1f} s)")
        print(f"  largest stable k_v1 ranges from {np.nanmin(edge):.3f} % to {np.nanmax(edge):.3f} %")
        path = out / f"region_{spec.replace(':', '_').replace('/', '-')}.svg"
        eb.scatter_svg(path, region, title=f"{spec} stable region")
        print(f"  wrote {path}")


if __name__ == "__main__":
    main(*sys.argv[1:])
