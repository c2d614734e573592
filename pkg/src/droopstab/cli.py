"""Command-line front end: ``droopstab <command> ...``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path


from . import __version__
from . import dataset as ds
from . import evalbench as eb
from . import gan
from . import netmodel as nm
from . import oracle
from .errors import DroopstabError


def parse_grid_axis(text):
    """``lo:hi:n`` in percent."""
    try:
        lo, hi, n = text.split(":")
        return float(lo), float(hi), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi:n, got {text!r}") from None


def parse_widths(text):
    try:
        return tuple(int(v) for v in text.split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated widths, got {text!r}") from None


def default_threads():
    try:
        return max(1, int(os.environ.get("DROOPSTAB_THREADS", "1")))
    except ValueError:
        return 1


def config_hash(config: nm.NetworkConfig):
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


class Manifest:
    """Collects run metadata; written as ``<primary output>.manifest.json``."""

    def __init__(self, argv, command):
        self.data = {
            "command": command,
            "argv": list(argv),
            "version": __version__,
            "seeds": {},
            "configs": {},
            "outputs": [],
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }

    def seed(self, name, value):
        self.data["seeds"][name] = value

    def config(self, config):
        self.data["configs"][config.id] = config_hash(config)

    def output(self, path):
        self.data["outputs"].append(str(path))

    def write(self, primary):
        self.data["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        path = Path(str(primary) + ".manifest.json")
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        return path


def write_samples_csv(path, droops, valid):
    n = droops.shape[1] // 2 if droops.size else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"kf{i + 1}" for i in range(n)] + [f"kv{i + 1}" for i in range(n)] + ["valid"])
        for row, ok in zip(droops, valid):
            w.writerow([repr(float(v)) for v in row] + [int(ok)])


def save_training_outputs(out, model, trace, manifest):
    out = Path(out)
    model.save(out)
    losses = out.with_suffix(".losses.csv")
    dcs = out.with_suffix(".dc.csv")
    trace.losses_csv(losses)
    trace.dc_csv(dcs, model.config_ids)
    for p in (out, losses, dcs):
        manifest.output(p)
    return losses, dcs


# ---------------------------------------------------------------- commands

def cmd_net_show(args, manifest):
    config = nm.resolve_config(args.config)
    adm = nm.build_admittance(config)
    print(json.dumps(config.to_dict(), indent=2))
    print(f"z_base = {config.z_base:.6g} ohm, rho = R/X = {config.rho:.6g}")
    print("|Y_bus| (pu):")
    for row in adm.y_mag:
        print("  " + " ".join(f"{v:10.4f}" for v in row))
    if args.out:
        nm.save_config(config, args.out)
        manifest.config(config)
        manifest.output(args.out)
        return args.out
    return None


def cmd_sweep(args, manifest):
    config = nm.resolve_config(args.config)
    kf_lo, kf_hi, kf_n = args.kf
    kv_lo, kv_hi, kv_n = args.kv
    fixed = nm.DroopSetting.uniform(config.n_nodes, args.fixed_kf, args.fixed_kv, omega_c=args.omega_c, f0=config.f0)
    grid = oracle.GridSpec(args.target - 1, (kf_lo, kf_hi), (kv_lo, kv_hi), (kf_n, kv_n), fixed)
    region = oracle.sweep(config, grid, threads=args.threads)
    if args.format == "svg":
        eb.scatter_svg(args.out, region, title=f"{config.id} source {args.target}")
    else:
        region.to_csv(args.out)
    manifest.config(config)
    manifest.output(args.out)
    print(f"{region.labels.size} cells, stable fraction {region.stable_fraction:.4f}")
    return args.out


def ranges_for(name, n):
    if name == "varied":
        return ds.varied_ranges(n)
    return ds.section_d_ranges(n)


def cmd_dataset_gen(args, manifest):
    configs = [nm.resolve_config(c) for c in args.configs.split(",")]
    data = ds.sample_stable_dataset(configs, ranges_for(args.ranges, configs[0].n_nodes), args.count, args.seed,
                                    threads=args.threads)
    data.save(args.out)
    manifest.seed("dataset", args.seed)
    for c in configs:
        manifest.config(c)
    manifest.output(args.out)
    if args.csv:
        data.to_csv(args.csv)
        manifest.output(args.csv)
    counts = {cid: int((data.condition_ids == k).sum()) for k, cid in enumerate(data.config_ids)}
    print(f"{len(data)} rows: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return args.out


def hyper_from_args(args):
    return gan.GanHyper(
        learning_rate=args.lr, batch_size=args.batch, max_epochs=args.max_epochs, epsilon=args.eps,
        eval_every=args.eval_every, noise_dim=args.noise_dim, seed=args.seed, g_lr_scale=args.g_lr_scale,
        extra_epochs=args.extra_epochs, adam_beta1=args.adam_beta1,
    )


def specs_from_args(args):
    return gan.GanSpecs(generator_hidden=args.g_hidden, discriminator_hidden=args.d_hidden)


def cmd_train(args, manifest):
    data = ds.TrainingSet.load(args.data)
    hyper = hyper_from_args(args)
    train = gan.train_cgan if args.mode == "cgan" else gan.train_gan
    model, trace = train(data, hyper, specs_from_args(args))
    save_training_outputs(args.out, model, trace, manifest)
    manifest.seed("train", args.seed)
    manifest.data["dataset"] = str(args.data)
    final = trace.dc_values[-1] if trace.dc_values else float("nan")
    print(f"epochs {trace.epochs_run}, stop epoch {trace.stop_epoch}, final d_c {final:.4f}")
    return args.out


def load_condition(model, text):
    if text is None:
        return None
    return int(text) if text.isdigit() else text


def cmd_sample(args, manifest):
    model = gan.TrainedModel.load(args.model)
    cond = load_condition(model, args.condition)
    batch = gan.generate_samples(model, cond, args.count, args.seed, args.repair)
    if args.format == "svg":
        n = model.layout.n_nodes
        t = args.target - 1
        eb.scatter_svg(args.out, points=batch.droops[:, [t, n + t]], title="generated samples")
    else:
        write_samples_csv(args.out, batch.droops, batch.valid)
    manifest.seed("sample", args.seed)
    manifest.output(args.out)
    print(f"{args.count} samples, {int(batch.valid.sum())} decodable")
    return args.out


def cmd_eval_accuracy(args, manifest):
    model = gan.TrainedModel.load(args.model)
    rep = eb.accuracy(model, load_condition(model, args.condition), args.count, args.seed, args.repair,
                      with_raw=args.repair != "raw")
    print(f"accuracy {rep.accuracy:.4f} ({rep.n_stable}/{rep.n_samples}, repair={rep.repair_mode})")
    if rep.raw_accuracy is not None:
        print(f"raw accuracy {rep.raw_accuracy:.4f}")
    for cid, acc in rep.per_config.items():
        print(f"  {cid}: {acc:.4f}")
    if args.out:
        eb.write_reports_csv([rep], args.out)
        manifest.output(args.out)
        manifest.seed("eval", args.seed)
    return args.out


def cmd_eval_coverage(args, manifest):
    model = gan.TrainedModel.load(args.model)
    config = nm.resolve_config(args.config)
    cond = load_condition(model, args.condition)
    if model.conditional and cond is None:
        cond = config.id
    res = (args.resolution, args.resolution)
    region = oracle.sweep(config, oracle.section_d_grid(config, res, model.omega_c), threads=args.threads)
    rep = eb.coverage(model, cond, args.count, region, args.seed)
    print(f"coverage {rep.fraction:.4f} ({rep.n_hit_cells}/{rep.n_stable_cells} stable cells)")
    if args.out:
        if args.format == "svg":
            ok, bad = eb.labeled_projection(model, cond, min(args.count, 5000), args.seed)
            eb.scatter_svg(args.out, region, ok, bad, title=f"{config.id} coverage {rep.fraction:.3f}")
        else:
            eb.write_reports_csv([rep], args.out)
        manifest.config(config)
        manifest.output(args.out)
    return args.out


def cmd_bench(args, manifest):
    model = gan.TrainedModel.load(args.model)
    config = nm.resolve_config(args.config)
    ranges = ranges_for(args.scenario, config.n_nodes)
    cond = load_condition(model, args.condition)
    trad, gen, ratio = eb.bench_compare(config, model, args.count, args.threads, args.seed, cond, ranges, args.scenario)
    print(f"traditional {trad.wall_seconds:.3f} s, generative {gen.wall_seconds:.3f} s, "
          f"ratio {'undefined' if ratio is None else f'{ratio:.2f}'}")
    if args.out:
        eb.write_reports_csv([trad, gen], args.out)
        manifest.config(config)
        manifest.output(args.out)
    return args.out


def run_paper_d(out_dir, seed, max_epochs=3000, samples=20000, log=print):
    """Single-configuration pipeline: data, GAN, losses, samples, accuracy, plot."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = nm.ring5()
    data = ds.sample_stable_dataset([config], ds.section_d_ranges(config.n_nodes), 4000, seed)
    data.save(out / "train.bin")
    hyper = gan.experiment_hyper("paper-d", seed, max_epochs=max_epochs)
    model, trace = gan.train_gan(data, hyper, gan.experiment_specs("paper-d"))
    model.save(out / "model.bin")
    trace.losses_csv(out / "losses.csv")
    trace.dc_csv(out / "dc.csv", model.config_ids)
    batch = gan.generate_samples(model, None, samples, seed)
    write_samples_csv(out / "samples.csv", batch.droops, batch.valid)
    log(f"stop epoch {trace.stop_epoch}, epochs run {trace.epochs_run}")
    return config, data, model, trace, batch


def cmd_experiment_paper_d(args, manifest):
    out = Path(args.out)
    config, data, model, trace, batch = run_paper_d(out, args.seed, args.max_epochs, args.samples)
    rep = eb.accuracy(model, None, args.eval_count, args.seed, with_raw=True)
    eb.write_reports_csv([rep], out / "accuracy.csv")
    region = oracle.sweep(config, oracle.section_d_grid(config), threads=args.threads)
    ok, bad = eb.labeled_projection(model, None, min(args.samples, 5000), args.seed)
    eb.scatter_svg(out / "region.svg", region, ok, bad, title=f"GAN samples, accuracy {rep.accuracy:.4f}")
    print(f"accuracy {rep.accuracy:.4f} (raw {rep.raw_accuracy:.4f})")
    for name in ("train.bin", "model.bin", "losses.csv", "dc.csv", "samples.csv", "accuracy.csv", "region.svg"):
        manifest.output(out / name)
    manifest.seed("experiment", args.seed)
    manifest.config(config)
    return out / "run"


def cmd_experiment_paper_e(args, manifest):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    configs = [nm.resolve_config(c) for c in args.configs.split(",")]
    data = ds.sample_stable_dataset(configs, ds.section_d_ranges(configs[0].n_nodes), args.per_config * len(configs),
                                    args.seed, threads=args.threads)
    data.save(out / "train.bin")
    hyper = gan.experiment_hyper("paper-e", args.seed, max_epochs=args.max_epochs)
    model, trace = gan.train_cgan(data, hyper, gan.experiment_specs("paper-e"))
    save_training_outputs(out / "model.bin", model, trace, manifest)
    rep = eb.accuracy(model, None, args.eval_count, args.seed, with_raw=True)
    eb.write_reports_csv([rep], out / "accuracy.csv")
    print(f"stop epoch {trace.stop_epoch}; accuracy per configuration:")
    for k, config in enumerate(configs):
        acc = rep.per_config[config.id]
        print(f"  {config.id}: {acc:.4f}")
        region = oracle.sweep(config, oracle.section_d_grid(config), threads=args.threads)
        ok, bad = eb.labeled_projection(model, k, min(args.samples, 5000), args.seed + k)
        svg = out / f"region_{k + 1}.svg"
        eb.scatter_svg(svg, region, ok, bad, title=f"{config.id} accuracy {acc:.4f}")
        manifest.output(svg)
        manifest.config(config)
    manifest.output(out / "train.bin")
    manifest.output(out / "accuracy.csv")
    manifest.seed("experiment", args.seed)
    return out / "run"


def cmd_experiment_scalability(args, manifest):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    configs = [nm.resolve_config(c) for c in args.configs.split(",")]
    counts = [int(v) for v in args.counts.split(",")]
    if max(counts) > len(configs):
        raise DroopstabError(f"need {max(counts)} configurations, got {len(configs)}")
    hyper = gan.experiment_hyper("scalability", args.seed, max_epochs=args.max_epochs)

    def log(n, epoch, d_c, acc, cov):
        print(f"  configs={n} epoch={epoch} d_c={d_c:.4f} accuracy={acc:.4f} coverage={cov:.4f}", flush=True)

    rows = eb.scalability_experiment(counts, configs, hyper, gan.experiment_specs("scalability"), per_config=args.per_config,
                                     coverage_threshold=args.coverage, cover_count=args.cover_count,
                                     data_seed=args.seed, log=log)
    eb.write_reports_csv(rows, out / "scalability.csv")
    for r in rows:
        print(f"{r.n_configs} configs: accuracy at epoch {r.epochs_to_accuracy}, populated at epoch {r.epochs_to_populated}")
    manifest.output(out / "scalability.csv")
    manifest.seed("experiment", args.seed)
    for c in configs:
        manifest.config(c)
    return out / "scalability.csv"


# ---------------------------------------------------------------- parser

def add_train_options(p, lr=gan.GanHyper.learning_rate, batch=100):
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--batch", type=int, default=batch)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--eval-every", type=int, default=20)
    p.add_argument("--max-epochs", type=int, default=3000)
    p.add_argument("--extra-epochs", type=int, default=0)
    p.add_argument("--noise-dim", type=int, default=16)
    p.add_argument("--g-lr-scale", type=float, default=1.0)
    p.add_argument("--adam-beta1", type=float, default=gan.GanHyper.adam_beta1)
    p.add_argument("--g-hidden", type=parse_widths, default=gan.GanSpecs.generator_hidden)
    p.add_argument("--d-hidden", type=parse_widths, default=gan.GanSpecs.discriminator_hidden)


def build_parser():
    parser = argparse.ArgumentParser(prog="droopstab", description="Droop-controlled microgrid stability tools.")
    parser.add_argument("--version", action="version", version=f"droopstab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=default_threads())

    net = sub.add_parser("net", help="network configurations").add_subparsers(dest="sub", required=True)
    p = net.add_parser("show", parents=[common])
    p.add_argument("--config", default="ring5")
    p.add_argument("--out")
    p.set_defaults(func=cmd_net_show)

    p = sub.add_parser("sweep", parents=[common], help="grid sweep of one source's droops")
    p.add_argument("--config", default="ring5")
    p.add_argument("--target", type=int, default=1, help="1-based source index")
    p.add_argument("--kf", type=parse_grid_axis, default=(0.0, 0.4, 100))
    p.add_argument("--kv", type=parse_grid_axis, default=(0.0, 4.0, 100))
    p.add_argument("--fixed-kf", type=float, default=0.1)
    p.add_argument("--fixed-kv", type=float, default=2.0)
    p.add_argument("--omega-c", type=float, default=nm.RING5_OMEGA_C)
    p.add_argument("--format", choices=("csv", "svg"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    dsp = sub.add_parser("dataset", help="training data").add_subparsers(dest="sub", required=True)
    p = dsp.add_parser("gen", parents=[common])
    p.add_argument("--configs", default="ring5")
    p.add_argument("--count", type=int, default=4000)
    p.add_argument("--ranges", choices=("section-d", "varied"), default="section-d")
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_dataset_gen)

    p = sub.add_parser("train", parents=[common], help="train a GAN or cGAN")
    p.add_argument("--mode", choices=("gan", "cgan"), default="gan")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    add_train_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", parents=[common], help="draw samples from a trained generator")
    p.add_argument("--model", required=True)
    p.add_argument("--condition")
    p.add_argument("--count", type=int, default=20000)
    p.add_argument("--repair", choices=ds.REPAIR_MODES, default="laplacian")
    p.add_argument("--target", type=int, default=1)
    p.add_argument("--format", choices=("csv", "svg"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    ev = sub.add_parser("eval", help="accuracy and coverage").add_subparsers(dest="sub", required=True)
    p = ev.add_parser("accuracy", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--condition")
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--repair", choices=ds.REPAIR_MODES, default="laplacian")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_accuracy)
    p = ev.add_parser("coverage", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--config", default="ring5")
    p.add_argument("--condition")
    p.add_argument("--count", type=int, default=20000)
    p.add_argument("--resolution", type=int, default=100)
    p.add_argument("--format", choices=("csv", "svg"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_coverage)

    p = sub.add_parser("bench", parents=[common], help="oracle vs generator timing")
    p.add_argument("--model", required=True)
    p.add_argument("--config", default="ring5")
    p.add_argument("--condition")
    p.add_argument("--count", type=int, default=20000)
    p.add_argument("--scenario", choices=("fixed", "varied"), default="fixed")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    ex = sub.add_parser("experiment", help="canned end-to-end pipelines").add_subparsers(dest="sub", required=True)
    p = ex.add_parser("paper-d", parents=[common])
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--max-epochs", type=int, default=3000)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--eval-count", type=int, default=2000)
    p.set_defaults(func=cmd_experiment_paper_d)
    p = ex.add_parser("paper-e", parents=[common])
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--configs", default="ring5,ring5:y12/2,ring5:y23/2,ring5:y34/2")
    p.add_argument("--per-config", type=int, default=4000)
    p.add_argument("--max-epochs", type=int, default=4000)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--eval-count", type=int, default=2000)
    p.set_defaults(func=cmd_experiment_paper_e)
    p = ex.add_parser("scalability", parents=[common])
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--configs", default="ring5,ring5:y12/2,ring5:y23/2,ring5:y34/2")
    p.add_argument("--counts", default="1,2,4")
    p.add_argument("--per-config", type=int, default=4000)
    p.add_argument("--max-epochs", type=int, default=3000)
    p.add_argument("--coverage", type=float, default=0.9)
    p.add_argument("--cover-count", type=int, default=100000)
    p.set_defaults(func=cmd_experiment_scalability)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be at least 1")
    command = " ".join(a for a in (args.command, getattr(args, "sub", None)) if a)
    manifest = Manifest(argv, command)
    try:
        primary = args.func(args, manifest)
    except (DroopstabError, OSError, ValueError) as exc:
        print(f"droopstab {command}: error: {exc}", file=sys.stderr)
        return 1
    if primary is not None:
        manifest.write(primary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
