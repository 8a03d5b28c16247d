"""``ris-amc`` command line: gen, train, evaluate, optimize, spectrogram.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 non-finite loss.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, reports
from .cnn import build_model, evaluate, train
from .errors import EmptySet, FormatError, NonFiniteLoss, RisAmcError
from .impairments import generate_dataset, make_frame
from .optimizer import (
    AccuracyObjective,
    calibrate,
    make_eval_set,
    multi_user_sweep,
    pair_table_from_trace,
    run_search,
)
from .ris_channel import USERS, RISConfiguration, apply_channel, optimal_config, received_snr
from .sigsynth import SCHEMES

log = logging.getLogger("ris_amc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _existing(path):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{path} does not exist")
    return p


def _scenario(args):
    sc = io.load_scenario(_existing(args.scenario)) if args.scenario else io.Scenario()
    if getattr(args, "seed", None) is not None:
        sc = dataclasses.replace(
            sc, seed=args.seed,
            dataset=dataclasses.replace(sc.dataset, master_seed=args.seed),
            training=dataclasses.replace(sc.training, shuffle_seed=args.seed))
    return sc


def _meta(sc, **extra):
    return {"seed": sc.seed, "config_sha256": sc.sha256(), **extra}


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args):
    sc = _scenario(args)
    spec = sc.dataset
    if args.frames_per_class is not None:
        spec = dataclasses.replace(spec, frames_per_class=args.frames_per_class)
        sc = dataclasses.replace(sc, dataset=spec)
    ds = generate_dataset(spec)
    out = _out_dir(args)
    io.write_dataset(out / "dataset.bin", ds)
    print(f"wrote {len(ds)} frames to {out / 'dataset.bin'}")


def cmd_train(args):
    sc = _scenario(args)
    ds = io.read_dataset(_existing(args.data))
    cfg = sc.training
    if args.epochs is not None:
        cfg = dataclasses.replace(cfg, max_epochs=args.epochs)
    model = build_model(sc.architecture, seed=sc.seed)
    res = train(model, ds, cfg, progress=lambda r: print(
        f"epoch {r.epoch} lr {r.lr:g} loss {r.train_loss:.4f} acc {r.train_acc:.4f} val {r.val_acc:.4f}"))
    out = _out_dir(args)
    meta = _meta(sc, dataset_sha256=io.config_hash(ds.spec), best_epoch=res.best_epoch)
    io.write_checkpoint(out / "checkpoint.bin", res.best, meta)
    reports.write_history(out / "history.tsv", res.history, meta)
    print(f"best epoch {res.best_epoch}, val acc {res.history[res.best_epoch - 1].val_acc:.4f}")


def _channel_frames(sc, cfg, user, n_per_class, seed):
    """Fresh clean frames through the RIS link, one seeded generator per frame."""
    ev = make_eval_set(n_per_class, seed, sc.dataset.shaping)
    frames = np.stack([apply_channel(fr, cfg, sc.geometry, user, np.random.default_rng([seed, 17, i]),
                                     sc.dataset.profile).samples for i, fr in enumerate(ev.frames)])
    return frames, ev.labels


def cmd_evaluate(args):
    sc = _scenario(args)
    model, _ = io.read_checkpoint(_existing(args.checkpoint))
    if model.arch != sc.architecture:
        raise FormatError("checkpoint architecture does not match the scenario")
    if args.noise_floor_dbm is not None:
        sc = dataclasses.replace(sc, geometry=sc.geometry.replace(noise_floor_dbm=args.noise_floor_dbm))
    out = _out_dir(args)
    meta = _meta(sc)
    if args.data:
        ds = io.read_dataset(_existing(args.data))
        x, y = ds.subset(args.partition)
        if args.snr is not None:
            # re-impair the same frames at another SNR
            prof = dataclasses.replace(ds.spec.profile, snr_db=args.snr)
            spec = dataclasses.replace(ds.spec, profile=prof)
            mask = ds.partition == ("train", "val", "test").index(args.partition)
            x = np.stack([make_frame(SCHEMES[l], s, spec).samples
                          for l, s in zip(ds.labels[mask], ds.seeds[mask])])
        cm = evaluate(model, x, y)
        label = f"dataset {Path(args.data).name} partition={args.partition} snr_db={args.snr if args.snr is not None else ds.spec.profile.snr_db}"
        reports.write_confusion(out / f"confusion_{args.partition}.tsv", cm, label, meta)
        print(f"{label}: accuracy {cm.accuracy:.4f}")
        return
    configs = {}
    for spec in args.config or ["optimal"]:
        if spec == "optimal":
            for u in USERS:
                configs[f"optimal-{u}"] = optimal_config(sc.geometry, u)
        elif spec == "random":
            configs["random"] = RISConfiguration.random(sc.geometry.n_pixels, np.random.default_rng(sc.seed))
        else:
            configs[spec[:12]] = RISConfiguration.from_hex(spec, sc.geometry.n_pixels)
    n = sc.optimizer.report_frames_per_class
    for name, cfg in configs.items():
        for u in USERS:
            x, y = _channel_frames(sc, cfg, u, n, sc.optimizer.eval_seed + 1)
            cm = evaluate(model, x, y)
            snr = received_snr(cfg, sc.geometry, u)
            label = f"{u} config={name} hex={cfg.to_hex()} snr_db={snr:.3f}"
            reports.write_confusion(out / f"confusion_{u}_{name}.tsv", cm, label, meta)
            print(f"{label}: accuracy {cm.accuracy:.4f}")


def cmd_optimize(args):
    sc = _scenario(args)
    model, _ = io.read_checkpoint(_existing(args.checkpoint))
    opt = sc.optimizer
    budget = args.budget if args.budget is not None else opt.budget
    targets = args.target or list(opt.targets)
    out = _out_dir(args)
    ev = make_eval_set(opt.eval_frames_per_class, opt.eval_seed, sc.dataset.shaping)
    geom = sc.geometry
    if args.calibrate:
        cal = calibrate(model, geom, ev, opt.calibration_target, profile=sc.dataset.profile, seed=sc.seed)
        geom = cal.geometry
        reports.write_table(out / "calibration.tsv", "calibration", ["snr_db", "accuracy"],
                            zip(cal.grid_db, cal.curve),
                            _meta(sc, noise_floor_dbm=geom.noise_floor_dbm,
                                  predicted_user1=cal.predicted_mean_accuracy["user1"],
                                  predicted_user2=cal.predicted_mean_accuracy["user2"]))
    results = {}
    best_lines = []
    for target in targets:
        obj = AccuracyObjective(model, geom, ev, target, sc.dataset.profile, seed=sc.seed)
        res = run_search(obj, opt.strategy, budget, opt.max_sweeps, opt.restarts, sc.seed)
        results[target] = res
        meta = _meta(sc, target=target, strategy=opt.strategy, evaluations=res.evaluations,
                     noise_floor_dbm=geom.noise_floor_dbm)
        reports.write_trace(out / f"trace_{target}.tsv", res, meta)
        best_lines.append(f"{target}\t{res.best_value!r}\t{res.best_config.to_hex()}")
        print(f"{target}: start {res.trace[0].value:.3f} best {res.best_value:.3f} "
              f"after {res.evaluations} evaluations")
    (out / "best_configs.tsv").write_text(
        f"# ris-amc best-configs v{reports.REPORT_VERSION}\n# seed={sc.seed}\n# config_sha256={sc.sha256()}\n"
        "target\tvalue\tconfig_hex\n" + "\n".join(best_lines) + "\n")
    joint = [t for t in results if t not in USERS]
    if joint:
        table = pair_table_from_trace(results[joint[0]])
    else:
        objs = [AccuracyObjective(model, geom, ev, u, sc.dataset.profile, seed=sc.seed) for u in USERS]
        visited = [e.config for r in results.values() for e in r.trace]
        table = multi_user_sweep(objs[0], objs[1], visited)
    reports.write_pairs(out / "pairs.tsv", table, opt.pair_threshold, _meta(sc))
    print(f"{len(table.both_above(opt.pair_threshold))} visited configurations with both users "
          f"above {opt.pair_threshold}")


def cmd_spectrogram(args):
    ds = io.read_dataset(_existing(args.data))
    if not 0 <= args.index < len(ds):
        raise UsageError(f"record {args.index} not in [0, {len(ds)})")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    label = SCHEMES[ds.labels[args.index]].display
    reports.write_spectrogram(out, ds.samples[args.index], ds.spec.profile.sample_rate_hz,
                              {"record": args.index, "label": label, "seed": int(ds.seeds[args.index])})
    print(f"wrote {out}")


def build_parser():
    p = _Parser(prog="ris-amc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate the impaired dataset")
    g.add_argument("--scenario")
    g.add_argument("--seed", type=int)
    g.add_argument("--frames-per-class", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train the CNN on a dataset")
    t.add_argument("--scenario")
    t.add_argument("--seed", type=int)
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="confusion matrices for a dataset partition or RIS configurations")
    e.add_argument("--scenario")
    e.add_argument("--seed", type=int)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data")
    e.add_argument("--partition", default="test", choices=("train", "val", "test"))
    e.add_argument("--snr", type=float, help="re-impair the partition at this SNR (dB)")
    e.add_argument("--config", action="append", help="'optimal', 'random' or a hex configuration")
    e.add_argument("--noise-floor-dbm", type=float, help="override the scenario noise floor (e.g. a calibrated one)")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    o = sub.add_parser("optimize", help="search RIS configurations for classification accuracy")
    o.add_argument("--scenario")
    o.add_argument("--seed", type=int)
    o.add_argument("--checkpoint", required=True)
    o.add_argument("--target", action="append", choices=("user1", "user2", "joint-min", "joint-mean"))
    o.add_argument("--budget", type=int)
    o.add_argument("--calibrate", action="store_true", help="recalibrate the noise floor first")
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_optimize)

    s = sub.add_parser("spectrogram", help="time-frequency grid of one dataset record")
    s.add_argument("--data", required=True)
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectrogram)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"ris-amc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLoss as exc:
        print(f"ris-amc: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RisAmcError, EmptySet, OSError, ValueError, KeyError) as exc:
        print(f"ris-amc: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
