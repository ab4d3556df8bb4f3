"""Command-line entry point.

Subcommands: train, predict, evaluate, experiment, manifest-check.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

Stochastic subcommands require an explicit --seed; there is no wall-clock
default, so every published number can be replayed.  Each run echoes its
effective configuration as `# config key=value` lines.

Evaluation CSV columns: page, tpa, fgpa, fgpe, foreground_pixels,
total_pixels; the last row pools pixel counts over all pages (micro
average).  Setting FOLIOSEG_ORACLE=1 switches the tensor ops to their
naive-loop reference implementations.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import experiments as exp
from . import plots
from .errors import DataError, NumericError
from .metrics import evaluate, pool
from .model import FcnConfig, load_params, predict_labels, save_params
from .pixmap import check_manifest, encode_label_mask, load_manifest, read_pixmap, write_pixmap
from .postprocess import apply_bitmask, connected_components, mode_relabel
from .preprocess import NetInputSpec
from .training import TrainConfig, load_samples, save_loss_curve, train_on_samples


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _echo_config(args: argparse.Namespace) -> None:
    for key in sorted(vars(args)):
        if key == "func":
            continue
        print(f"# config {key}={getattr(args, key)}")


def _int_list(text: str) -> tuple:
    return tuple(int(t) for t in text.split(","))


def _net_spec(args) -> NetInputSpec:
    return NetInputSpec(target_width=args.net_width, target_height=args.net_height)


def _fcn_config(args, num_classes: int) -> FcnConfig:
    return FcnConfig(
        num_classes=num_classes,
        encoder_filters=args.encoder_filters,
        decoder_filters=args.decoder_filters,
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-test"
    try:
        probe.touch()
        probe.unlink()
    except OSError as e:
        raise DataError(f"output directory {out} is not writable: {e}") from None
    return out


# ---------------------------------------------------------------------------
# Subcommands


def cmd_train(args) -> int:
    _echo_config(args)
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    samples = load_samples(manifest, _net_spec(args))
    if args.split:
        samples = [s for s in samples if s.split == args.split]
    tcfg = TrainConfig(
        iterations=args.iters,
        seed=args.seed,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        batch_size=args.batch,
        checkpoint_interval=args.checkpoint_interval,
    )
    cfg = _fcn_config(args, manifest.num_classes)

    def interval_ckpt(it, params):
        save_params(out / f"model_iter{it:06d}.ckpt", params)

    params, curve = train_on_samples(samples, cfg, tcfg, _net_spec(args),
                                     checkpoint_fn=interval_ckpt)
    save_params(out / "model.ckpt", params)
    save_loss_curve(out / "loss.csv", curve)
    plots.plot_loss_curve(out / "loss.png", curve)
    print(f"final loss {curve[-1].loss:.6f} after {curve[-1].iteration} iterations")
    print(f"wrote {out / 'model.ckpt'}, {out / 'loss.csv'}, {out / 'loss.png'}")
    return 0


def cmd_predict(args) -> int:
    _echo_config(args)
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    params = load_params(args.checkpoint)
    if params.config.num_classes != manifest.num_classes:
        raise DataError(
            f"checkpoint has {params.config.num_classes} classes but manifest "
            f"palette has {manifest.num_classes}"
        )
    spec = _net_spec(args)
    for image in args.images:
        page = read_pixmap(image)
        pred = predict_labels(params, page, spec)
        stem = Path(image).stem
        write_pixmap(out / f"{stem}_pred.png", encode_label_mask(pred, manifest.palette))
        if args.postproc:
            from .preprocess import binarize_otsu

            bin_full = binarize_otsu(page.to_gray())
            masked = apply_bitmask(pred, bin_full)
            relabeled = mode_relabel(masked, connected_components(bin_full, args.connectivity))
            write_pixmap(out / f"{stem}_post.png", encode_label_mask(relabeled, manifest.palette))
        print(f"predicted {image} -> {out / (stem + '_pred.png')}")
    return 0


def cmd_evaluate(args) -> int:
    _echo_config(args)
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    params = load_params(args.checkpoint)
    if params.config.num_classes != manifest.num_classes:
        raise DataError("checkpoint/manifest class count mismatch")
    spec = _net_spec(args)
    samples = load_samples(manifest, spec)
    if args.split:
        samples = [s for s in samples if s.split == args.split]
    if not samples:
        raise DataError("no pages to evaluate")
    rows = []
    reports = []
    for s, rec in zip(samples, [r for r in manifest.records if not args.split or r.split == args.split]):
        pred = predict_labels(params, s.page, spec)
        if args.postproc:
            masked = apply_bitmask(pred, s.bin_full)
            pred = mode_relabel(masked, connected_components(s.bin_full, args.connectivity))
        rep = evaluate(s.gt_full, pred, s.bin_full, manifest.num_classes)
        reports.append(rep)
        rows.append([rec.image_path.name, rep.tpa, rep.fgpa, rep.fgpe, rep.foreground, rep.total])
    pooled = pool(reports)
    with open(out / "evaluation.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["page", "tpa", "fgpa", "fgpe", "foreground_pixels", "total_pixels"])
        for row in rows:
            w.writerow([row[0]] + [("" if v is None else f"{v:.10g}") for v in row[1:]])
        w.writerow(["POOLED",
                    f"{pooled.tpa:.10g}",
                    "" if pooled.fgpa is None else f"{pooled.fgpa:.10g}",
                    "" if pooled.fgpe is None else f"{pooled.fgpe:.10g}",
                    pooled.foreground, pooled.total])
    print(f"pooled tpa={pooled.tpa:.4f} fgpa="
          f"{'n/a' if pooled.fgpa is None else f'{pooled.fgpa:.4f}'} over {len(rows)} pages")
    print(f"wrote {out / 'evaluation.csv'}")
    return 0


def cmd_experiment(args) -> int:
    _echo_config(args)
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    spec = _net_spec(args)
    ecfg = exp.ExperimentConfig(
        fcn=_fcn_config(args, manifest.num_classes),
        train=TrainConfig(iterations=args.iters, seed=args.seed, learning_rate=args.lr,
                          optimizer=args.optimizer, batch_size=args.batch),
        master_seed=args.seed,
        folds=args.folds,
        train_fraction=args.fraction,
        postproc=args.postproc,
        connectivity=args.connectivity,
        net_spec=spec,
        jobs=args.jobs,
    )
    samples = load_samples(manifest, spec)

    if args.mode == "monte-carlo":
        outcomes, agg = exp.monte_carlo_cv(samples, ecfg)
        exp.write_results_csv(out / "results.csv", outcomes)
        for variant, stats in agg.items():
            for metric, (mean, std) in stats.items():
                pm = "" if std is None else f" +- {std:.4f}"
                print(f"{variant} {metric}: {mean:.4f}{pm}")
    elif args.mode in ("sweep-absolute", "sweep-relative"):
        kind = args.mode.removeprefix("sweep-")
        grid = None
        if args.grid:
            grid = tuple(float(g) if kind == "relative" else int(g) for g in args.grid.split(","))
        sweep = exp.size_sweep(samples, ecfg, kind, grid)
        outcomes = [o for p in sweep.points for o in p.outcomes]
        exp.write_results_csv(out / "results.csv", outcomes)
        for variant in ecfg.variants():
            suffix = "" if variant == "raw" else "_postproc"
            exp.write_summary_csv(out / f"summary{suffix}.csv", sweep, variant)
            plots.plot_sweep(out / f"sweep{suffix}.png", sweep, variant)
        if ecfg.postproc == "both":
            plots.plot_postproc_comparison(out / "postproc_comparison.png", sweep)
        for pv, reason in sweep.skipped:
            print(f"skipped point {pv}: {reason}")
        for p in sweep.points:
            for variant in ecfg.variants():
                lo, avg, hi = p.fgpe_stats(variant)
                print(f"point {p.point_value} ({variant}): fgpe min/avg/max = "
                      f"{lo:.4f}/{avg:.4f}/{hi:.4f}")
    elif args.mode == "fixed-split":
        params, curve, outcome = exp.fixed_split_eval(samples, ecfg)
        save_params(out / "model.ckpt", params)
        save_loss_curve(out / "loss.csv", curve)
        plots.plot_loss_curve(out / "loss.png", curve)
        exp.write_results_csv(out / "results.csv", [outcome])
        for variant, rep in outcome.reports.items():
            fgpa = "n/a" if rep.fgpa is None else f"{rep.fgpa:.4f}"
            print(f"{variant}: tpa={rep.tpa:.4f} fgpa={fgpa} "
                  f"({outcome.n_train} train / {outcome.n_test} test pages)")
    else:
        raise DataError(f"unknown experiment mode {args.mode!r}")
    print(f"wrote results to {out}")
    return 0


def cmd_manifest_check(args) -> int:
    manifest = load_manifest(args.manifest)
    problems = check_manifest(manifest)
    splits = {None: 0, "train": 0, "test": 0}
    for r in manifest.records:
        splits[r.split] += 1
    print(f"manifest '{manifest.name}': {len(manifest.records)} records, "
          f"{manifest.num_classes} classes "
          f"(train={splits['train']}, test={splits['test']}, unsplit={splits[None]})")
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        raise DataError(f"{len(problems)} missing file(s)")
    print("ok")
    return 0


# ---------------------------------------------------------------------------


def _add_common_net(p):
    p.add_argument("--net-width", type=int, default=260, help="network input width")
    p.add_argument("--net-height", type=int, default=390, help="network input height")


def _add_model_args(p):
    p.add_argument("--encoder-filters", type=_int_list, default=(40, 60, 120, 160, 240))
    p.add_argument("--decoder-filters", type=_int_list, default=(240, 120, 60))


def _add_train_args(p):
    p.add_argument("--iters", type=int, required=True, help="optimizer steps")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--batch", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="folioseg", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--split", choices=["train", "test"], default=None,
                   help="restrict to records with this split tag")
    p.add_argument("--checkpoint-interval", type=int, default=0)
    _add_train_args(p)
    _add_model_args(p)
    _add_common_net(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict label masks for pages")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True, help="manifest supplying the label palette")
    p.add_argument("--out", required=True)
    p.add_argument("--postproc", action="store_true",
                   help="also write the component-relabeled variant")
    p.add_argument("--connectivity", type=int, choices=[4, 8], default=8)
    p.add_argument("images", nargs="+")
    _add_common_net(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a checkpoint against ground truth")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "test"], default=None)
    p.add_argument("--postproc", action="store_true")
    p.add_argument("--connectivity", type=int, choices=[4, 8], default=8)
    _add_common_net(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="cross-validation and size sweeps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True, help="master seed")
    p.add_argument("--mode", required=True,
                   choices=["monte-carlo", "sweep-absolute", "sweep-relative", "fixed-split"])
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--fraction", type=float, default=0.5,
                   help="train fraction for monte-carlo mode")
    p.add_argument("--grid", default=None,
                   help="comma-separated sweep points overriding the default grid")
    p.add_argument("--postproc", choices=["on", "off", "both"], default="both")
    p.add_argument("--connectivity", type=int, choices=[4, 8], default=8)
    p.add_argument("--jobs", type=int, default=1, help="parallel fold workers")
    _add_train_args(p)
    _add_model_args(p)
    _add_common_net(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("manifest-check", help="validate a manifest and its files")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_manifest_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
