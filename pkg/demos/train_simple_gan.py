"""Train a GAN on stable droop settings and check what it generates.

Builds the 4000-row training set, trains with the desk-scale preset until
the Chebyshev gap drops below 0.05, then labels fresh samples with the
eigenvalue oracle. Expect roughly ten minutes on one core.

    python demos/train_simple_gan.py [out_dir] [seed]
"""
import sys
from pathlib import Path

from droopstab import dataset as ds
from droopstab import evalbench as eb
from droopstab import gan
from droopstab import netmodel as nm
from droopstab import oracle


def progress(epoch, model, trace):
    if epoch % 200 == 0:
        losses = [trace.moving_average(k) for k in ("real_loss", "fake_loss", "g_loss")]
        print(f"epoch {epoch:5d}  d_c {trace.dc_values[-1]:.4f}  losses " + " ".join(f"{v:.3f}" for v in losses))


def main(out_dir="demo_out", seed="1"):
    seed = int(seed)
    out = Path(out_dir)
    out.mkdir(exist_ok=True)
    cfg = nm.ring5()
    data = ds.sample_stable_dataset([cfg], ds.section_d_ranges(), 4000, seed)
    print(f"training set: {len(data.rows)} stable rows of {data.layout.total} features")

    model, trace = gan.train_gan(data, gan.experiment_hyper("paper-d", seed), gan.experiment_specs("paper-d"), callback=progress)
    if trace.stop_epoch is None:
        print(f"d_c stayed above 0.05; trained the full {trace.epochs_run} epochs")
    else:
        print(f"stopping criterion met at epoch {trace.stop_epoch}")
    model.save(out / "gan.bin")

    rep = eb.accuracy(model, None, 2000, seed, with_raw=True)
    print(f"oracle says {rep.accuracy:.2%} of 2000 generated systems are stable (unrepaired: {rep.raw_accuracy:.2%})")

    region = oracle.sweep(cfg, oracle.section_d_grid(cfg))
    cov = eb.coverage(model, None, 20000, region, seed)
    print(f"20000 samples hit {cov.n_hit_cells} of {cov.n_stable_cells} stable grid cells")
    ok, bad = eb.labeled_projection(model, None, 5000, seed)
    eb.scatter_svg(out / "gan_samples.svg", region, ok, bad, title=f"generated samples, accuracy {rep.accuracy:.4f}")

    trad, fast, ratio = eb.bench_compare(cfg, model, 20000)
    print(f"20000 samples: oracle {trad.wall_seconds:.1f} s, generator {fast.wall_seconds:.2f} s ({ratio:.0f}x)")


if __name__ == "__main__":
    main(*sys.argv[1:])
