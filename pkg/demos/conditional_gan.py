"""One conditional GAN for two networks: the ring and the ring with y12 halved.

The condition vector is the scaled admittance block of each network, so the
generator learns where each network's boundary sits.

    python demos/conditional_gan.py [out_dir] [seed]
"""
import sys
from pathlib import Path

from droopstab import dataset as ds
from droopstab import evalbench as eb
from droopstab import gan
from droopstab import netmodel as nm
from droopstab import oracle


def main(out_dir="demo_out", seed="1"):
    seed = int(seed)
    out = Path(out_dir)
    out.mkdir(exist_ok=True)
    configs = [nm.ring5(), nm.resolve_config("ring5:y12/2")]
    data = ds.sample_stable_dataset(configs, ds.section_d_ranges(), 8000, seed)

    def progress(epoch, model, trace):
        if epoch % 200 == 0:
            gaps = " ".join(f"{v:.3f}" for v in trace.dc_per_config[-1])
            print(f"epoch {epoch:5d}  d_c per network {gaps}")

    model, trace = gan.train_cgan(data, gan.experiment_hyper("paper-e", seed), gan.experiment_specs("paper-e"), callback=progress)
    if trace.stop_epoch is None:
        print(f"d_c stayed above 0.05; trained the full {trace.epochs_run} epochs")
    else:
        print(f"stopping criterion met at epoch {trace.stop_epoch}")
    model.save(out / "cgan.bin")

    rep = eb.accuracy(model, None, 2000, seed)
    for k, cfg in enumerate(configs):
        ok, bad = eb.labeled_projection(model, k, 4000, seed + k)
        top = f"{ok[:, 1].max():.3f} %" if len(ok) else "n/a"
        print(f"{cfg.id}: accuracy {rep.per_config[cfg.id]:.2%}, highest generated stable k_v1 {top}")
        region = oracle.sweep(cfg, oracle.section_d_grid(cfg))
        name = cfg.id.replace(":", "_").replace("/", "-")
        eb.scatter_svg(out / f"cgan_{name}.svg", region, ok, bad, title=f"{cfg.id} conditional samples")


if __name__ == "__main__":
    main(*sys.argv[1:])
