"""Command-line entry point: ``gradsplit {train,sweep,quality,stability,basin}``.

Every subcommand accepts ``--config FILE``, a JSON object whose keys are
flag names (dashes or underscores).  Values from the file override values
given on the command line.  Each run writes its CSV output and a
``manifest.json`` with the resolved settings into ``--out-dir``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .basin import BasinSpec, analytic_basin_ratio, monte_carlo_basin
from .data import (DEFAULT_NOISE_SIGMA, LabeledDataset, gaussian_noise_dataset,
                   load_cifar10_split, make_subsets, mix_noise, synthetic_blobs)
from .errors import ConfigError, GradsplitError
from .harness import (StopRule, TrialConfig, dataset_quality_score, emit_csv, sweep_dataset_size,
                      sweep_noise_fraction, train_model)
from .models import ModelConfig, load_checkpoint, save_checkpoint
from .objectives import KINDS, ObjectiveSpec
from .stability import StabilityProbe, stability_radius, write_stability_csv

log = logging.getLogger("gradsplit")


# -- argument groups -------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file of flag values; overrides the command line")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, default=Path("runs"))
    p.add_argument("-v", "--verbose", action="store_true")


def _add_data(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data", choices=["blobs", "noise", "mixed", "cifar"], default="blobs")
    g.add_argument("--n-train", type=int, default=1280)
    g.add_argument("--n-test", type=int, default=1280)
    g.add_argument("--dim", type=int, default=256, help="input dimension for blobs/noise/mixed")
    g.add_argument("--classes", type=int, default=10)
    g.add_argument("--separation", type=float, default=10.0)
    g.add_argument("--blob-sigma", type=float, default=0.1)
    g.add_argument("--blob-rank", type=int, help="rank of the within-class spread (default: full)")
    g.add_argument("--noise-sigma", type=float, default=DEFAULT_NOISE_SIGMA)
    g.add_argument("--noise-fraction", type=float, default=0.5, help="for --data mixed")
    g.add_argument("--mix-test", action="store_true",
                   help="also mix noise into the test set (default: train set only)")
    g.add_argument("--cifar-dir", type=Path, help="directory of CIFAR-10 binary batches")
    g.add_argument("--size-class", choices=["2.5k", "5k", "10k"],
                   help="CIFAR subset size; overrides --n-train/--n-test")


def _add_trial(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--arch", choices=["mlp", "convnet5"], default="mlp")
    g.add_argument("--hidden", type=_int_list, default=(64,), help="comma-separated widths/channels")
    g.add_argument("--activation", choices=["relu", "tanh"], default="relu")
    g.add_argument("--no-softmax-head", action="store_true")
    g = p.add_argument_group("objective")
    g.add_argument("--objective", choices=KINDS, default="standard")
    g.add_argument("--k", type=float, default=0.11)
    g.add_argument("--l", type=float, default=0.0)
    g.add_argument("--u", type=float, default=1.0)
    g = p.add_argument_group("optimizer")
    g.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    g.add_argument("--lr", type=float, default=1e-4)
    g.add_argument("--batch-size", type=int, default=256)
    g.add_argument("--max-epochs", type=int, default=100)
    g = p.add_argument_group("stop rule (no thresholds = run all epochs)")
    g.add_argument("--stop-train-acc", type=float)
    g.add_argument("--stop-test-acc-max", type=float)
    g.add_argument("--stop-test-acc-min", type=float)
    g.add_argument("--stop-overfit-gap", type=float)


def _int_list(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradsplit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one trial and write its learning curve")
    _add_common(p)
    _add_data(p)
    _add_trial(p)
    p.add_argument("--save-model", action="store_true", help="also write model.npz")

    p = sub.add_parser("sweep", help="epochs-to-memorize over dataset sizes or noise fractions")
    _add_common(p)
    _add_data(p)
    _add_trial(p)
    p.add_argument("--over", choices=["size", "noise-fraction"], required=True)
    p.add_argument("--values", required=True,
                   help="comma-separated train sizes (or size classes for cifar) or fractions")
    p.add_argument("--seeds", type=_int_list, default=(0, 1, 2, 3, 4))
    p.set_defaults(objective="capped")

    p = sub.add_parser("quality", help="epoch gap between split overfitting and standard learning")
    _add_common(p)
    _add_data(p)
    _add_trial(p)

    p = sub.add_parser("stability", help="stability radius of a trained or checkpointed model")
    _add_common(p)
    _add_data(p)
    _add_trial(p)
    p.add_argument("--checkpoint", type=Path, help="evaluate this model.npz instead of training")
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--directions", type=int, default=64)
    p.add_argument("--radii", type=_float_list,
                   default=[0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0])

    p = sub.add_parser("basin", help="analytic and Monte Carlo basin ratios of the two-well landscape")
    _add_common(p)
    p.add_argument("--n", type=_int_list, default=(1, 2, 5), help="comma-separated dimensions")
    p.add_argument("--s-a", type=float, default=2.0)
    p.add_argument("--s-b", type=float, default=4.0)
    p.add_argument("--m-slope", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--mc-max-n", type=int, default=8,
                   help="skip Monte Carlo above this dimension (basins become too small to hit)")
    return parser


def resolve_args(argv=None) -> argparse.Namespace:
    """Parse ``argv`` and apply ``--config`` overrides."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in overrides.items():
            dest = key.replace("-", "_")
            if dest in ("config", "command") or not hasattr(args, dest):
                raise ConfigError(f"unknown config key {key!r} for {args.command}")
            current = getattr(args, dest)
            if dest == "hidden" or dest == "seeds" or dest == "n":
                value = _int_list(value)
            elif dest == "radii":
                value = _float_list(value)
            elif isinstance(current, Path) or dest in ("out_dir", "cifar_dir", "checkpoint"):
                value = Path(value)
            setattr(args, dest, value)
    return args


# -- builders ----------------------------------------------------------------------

def make_datasets(args, seed: int, n_train: int | None = None, n_test: int | None = None,
                  fraction: float | None = None) -> tuple[LabeledDataset, LabeledDataset]:
    n_train = args.n_train if n_train is None else n_train
    n_test = args.n_test if n_test is None else n_test
    if args.data == "cifar":
        if args.cifar_dir is None:
            raise ConfigError("--data cifar needs --cifar-dir")
        train, test = load_cifar10_split(args.cifar_dir)
        if args.size_class:
            return make_subsets(train, test, size_class=args.size_class)
        return train.head(n_train), test.head(n_test)
    # train and test come from independent streams of one distribution
    s_train, s_test = 1000 * seed + 1, 1000 * seed + 2
    if args.data == "noise":
        return (gaussian_noise_dataset((args.dim,), n_train, args.classes, args.noise_sigma, s_train),
                gaussian_noise_dataset((args.dim,), n_test, args.classes, args.noise_sigma, s_test))
    train = synthetic_blobs(n_train, args.classes, args.dim, args.separation, s_train, args.blob_sigma,
                            args.blob_rank)
    test = synthetic_blobs(n_test, args.classes, args.dim, args.separation, s_test, args.blob_sigma,
                           args.blob_rank)
    if args.data == "mixed" or fraction is not None:
        f = args.noise_fraction if fraction is None else fraction
        train = mix_noise(train, f, args.noise_sigma, s_train + 500)
        if args.mix_test or f == 1.0:
            test = mix_noise(test, f, args.noise_sigma, s_test + 500)
    return train, test


def model_config(args, input_shape) -> ModelConfig:
    return ModelConfig(args.arch, tuple(input_shape), args.classes, tuple(args.hidden), args.activation,
                       not args.no_softmax_head, args.seed)


def trial_config(args, train: LabeledDataset, test: LabeledDataset) -> TrialConfig:
    stop = StopRule(args.stop_train_acc, args.stop_test_acc_max, args.stop_test_acc_min,
                    args.stop_overfit_gap)
    if all(v is None for v in (stop.train_acc, stop.test_acc_max, stop.test_acc_min, stop.overfit_gap)):
        stop = StopRule(fixed_epochs=True)
    return TrialConfig(
        model=model_config(args, train.sample_shape),
        objective=ObjectiveSpec(args.objective, args.k, args.l, args.u),
        train=train, test=test, optimizer=args.optimizer, lr=args.lr,
        batch_size=args.batch_size, max_epochs=args.max_epochs, stop_rule=stop, seed=args.seed,
    )


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def write_manifest(out_dir: Path, args, **extra) -> Path:
    resolved = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k != "config"}
    manifest = {"version": __version__, "command": args.command, "arguments": resolved}
    manifest.update({k: v for k, v in extra.items()})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


# -- subcommands -------------------------------------------------------------------

def cmd_train(args) -> int:
    train, test = make_datasets(args, args.seed)
    cfg = trial_config(args, train, test)
    model, record = train_model(cfg)
    emit_csv(record, args.out_dir / "trial.csv")
    if args.save_model:
        save_checkpoint(model, args.out_dir / "model.npz")
    outcome = asdict(record.outcome)
    write_manifest(args.out_dir, args, trial=cfg.to_dict(), outcome=outcome)
    last = record.rows[-1]
    print(f"epochs={len(record.rows)} train_acc={last.train_acc:.4f} test_acc={last.test_acc:.4f} "
          f"epochs_to_threshold={outcome['epochs_to_threshold']}")
    return 0


def cmd_sweep(args) -> int:
    if args.objective != "capped":
        raise ConfigError("sweep measures epochs_to_memorize and needs --objective capped")
    if args.over == "size":
        if args.data == "cifar":
            values = [v.strip() for v in str(args.values).split(",")]

            def make(size, seed):
                args_local = argparse.Namespace(**{**vars(args), "size_class": size})
                return make_datasets(args_local, seed)
        else:
            values = [int(v) for v in _float_list(args.values)]

            def make(size, seed):
                return make_datasets(args, seed, n_train=size, n_test=size)
        sweep = sweep_dataset_size
    else:
        values = _float_list(args.values)

        def make(fraction, seed):
            return make_datasets(args, seed, fraction=fraction)
        sweep = sweep_noise_fraction
    train, test = make(values[0], args.seeds[0])
    rows = sweep(trial_config(args, train, test), values, make, seeds=args.seeds)
    path = args.out_dir / "sweep.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "seed", "epochs_to_memorize"])
        for row in rows:
            for seed, e in zip(args.seeds, row.epochs):
                w.writerow([row.setting, seed, "" if e is None else e])
    medians = {str(r.setting): r.median for r in rows}
    write_manifest(args.out_dir, args, medians=medians)
    for r in rows:
        print(f"{r.setting}: epochs={r.epochs} median={r.median}")
    return 0


def cmd_quality(args) -> int:
    train, test = make_datasets(args, args.seed)
    q = dataset_quality_score(train, test, model_config(args, train.sample_shape),
                              max_epochs=args.max_epochs, lr=args.lr, batch_size=args.batch_size,
                              optimizer=args.optimizer, seed=args.seed)
    result = asdict(q)
    path = args.out_dir / "quality.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(result))
        w.writerow(["" if v is None else v for v in result.values()])
    write_manifest(args.out_dir, args, quality=result)
    print(f"score={q.score} split_epochs={q.split_epochs} standard_epochs={q.standard_epochs}"
          f"{' indeterminate' if q.indeterminate else ''}")
    return 0


def cmd_stability(args) -> int:
    train, test = make_datasets(args, args.seed)
    if args.checkpoint is not None:
        model = load_checkpoint(args.checkpoint)
    else:
        cfg = trial_config(args, train, test)
        model, _ = train_model(cfg)
        save_checkpoint(model, args.out_dir / "model.npz")
    probe = StabilityProbe(args.delta, args.directions, tuple(args.radii), args.seed)
    report = stability_radius(model, train, probe)
    write_stability_csv(report, args.out_dir / "stability.csv")
    write_manifest(args.out_dir, args, stability_radius=report.stability_radius,
                   base_loss=report.base_loss)
    print(f"stability_radius={report.stability_radius:g} base_loss={report.base_loss:.6g}")
    return 0


def cmd_basin(args) -> int:
    path = args.out_dir / "basin.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "analytic_log_ratio", "mc_fraction_a", "mc_fraction_b", "stderr"])
        for n in args.n:
            spec = BasinSpec(n, args.s_a, args.s_b, args.m_slope)
            log_ratio = analytic_basin_ratio(spec).log
            if n <= args.mc_max_n:
                est = monte_carlo_basin(spec, args.samples, args.lr, seed=args.seed)
                mc = [f"{est.fraction_a:.9g}", f"{est.fraction_b:.9g}", f"{est.stderr_a:.9g}"]
            else:
                mc = ["", "", ""]
            w.writerow([n, f"{log_ratio:.12g}", *mc])
            print(f"n={n} log_ratio={log_ratio:.6g} " + (f"mc_a={mc[0]} mc_b={mc[1]}" if mc[0] else ""))
    write_manifest(args.out_dir, args)
    return 0


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "quality": cmd_quality,
            "stability": cmd_stability, "basin": cmd_basin}


def main(argv=None) -> int:
    try:
        args = resolve_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.out_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args)
    except GradsplitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
