"""Command-line interface.

Subcommands::

    ttfsnet train     --config run.ini [--out metrics.csv] [--seed N] [--subset N]
    ttfsnet sweep     --config run.ini [--out sweep.csv] [--workers N] [--subset N]
    ttfsnet gradcheck --config run.ini [--out grad.csv] [--subset N]
                      [--v-hats 0.5,0.9,...] [--n-steps 1000000,...]
    ttfsnet raster    --config run.ini --checkpoint model.ckpt [--out raster.csv] [--subset N]
    ttfsnet eval      --config run.ini --checkpoint model.ckpt [--out eval.csv] [--subset N]

Datasets are looked up under ``$TTFS_DATA_DIR/<dataset>/`` (default
``./data``); Iris ships with the package and needs no files. Every CSV
starts with ``#``-prefixed lines echoing the full effective run
configuration, so result files are self-describing.

Exit codes: 0 success, 2 usage, 3 bad config, 4 dataset problem,
5 checkpoint problem.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_CHECKPOINT = 5


def _data_dir() -> Path:
    return Path(os.environ.get("TTFS_DATA_DIR", "data"))


def _load_datasets(cfg, subset: int):
    """(train, test) Datasets per the run config, subset rows if asked."""
    from .data import Dataset, cifar10_dataset, iris_dataset, mnist_dataset

    if cfg.dataset == "iris":
        ds = iris_dataset(cfg.tau_in)
        train, test = ds, ds
    elif cfg.dataset == "mnist":
        d = _data_dir() / "mnist"
        train = mnist_dataset(d, "train", cfg.tau_in)
        test = mnist_dataset(d, "test", cfg.tau_in)
    elif cfg.dataset == "cifar10":
        d = _data_dir() / "cifar10"
        train = cifar10_dataset(d, "train", cfg.tau_in,
                                augment_seed=cfg.augment_seed)
        test = cifar10_dataset(d, "test", cfg.tau_in)
    else:
        raise ValueError(f"unknown dataset {cfg.dataset!r}")
    if subset > 0:
        train = train.subset(subset)
        test = test.subset(max(subset // 5, min(subset, 1000)))
    return train, test


def _write_csv(path: Path, cfg, header: Sequence[str],
               rows: Sequence[Sequence]) -> None:
    from .config import config_lines

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in config_lines(cfg):
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _spec_for(cfg, input_shape, seed: int):
    from .layers import build_network
    return build_network(cfg.architecture, input_shape, cfg.model(),
                         padding=cfg.padding, seed=seed)


def _load_compatible_checkpoint(path: str, dataset):
    from .checkpoint import CheckpointError, load_checkpoint
    spec = load_checkpoint(path)
    n_in = int(np.prod(spec.input_shape))
    if n_in != dataset.times.shape[1]:
        raise CheckpointError(
            f"{path}: checkpoint expects {n_in} inputs but the dataset "
            f"provides {dataset.times.shape[1]}")
    return spec


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_train(args, cfg) -> int:
    from .checkpoint import save_checkpoint
    from .training import train

    train_ds, test_ds = _load_datasets(cfg, args.subset or cfg.subset)
    seed = cfg.seed if args.seed is None else args.seed
    spec = _spec_for(cfg, train_ds.input_shape, seed)
    tcfg = cfg.train_config(seed=seed)

    def progress(row):
        print(f"epoch {row.epoch}: cost {row.train_cost:+.4f} "
              f"accuracy {row.test_accuracy:.4f} "
              f"sparsity {row.mean_sparsity:.4f}", flush=True)
        return False

    rows = train(spec, train_ds.times, train_ds.labels, tcfg,
                 test_ds.times, test_ds.labels, callback=progress)

    out_dir = Path(cfg.output_dir)
    n_hidden = len(rows[0].layer_sparsity) if rows else 0
    header = (["epoch", "train_cost", "test_accuracy"]
              + [f"sparsity_l{i + 1}" for i in range(n_hidden)]
              + ["mean_sparsity"])
    table = [[r.epoch, repr(r.train_cost), repr(r.test_accuracy)]
             + [repr(s) for s in r.layer_sparsity]
             + [repr(r.mean_sparsity)] for r in rows]
    out = Path(args.out) if args.out else out_dir / "metrics.csv"
    _write_csv(out, cfg, header, table)
    ckpt = out_dir / "model.ckpt"
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, spec)
    print(f"wrote {out} and {ckpt}")
    return 0


def _cmd_sweep(args, cfg) -> int:
    from .experiments import run_sweep

    train_ds, test_ds = _load_datasets(cfg, args.subset or cfg.subset)
    rows = run_sweep(cfg, train_ds, test_ds, workers=args.workers)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "sweep.csv"
    _write_csv(out, cfg,
               ["parameter", "value", "seed", "layer", "sparsity",
                "accuracy", "train_cost"],
               [[r.parameter, repr(r.value), r.seed, r.layer,
                 repr(r.sparsity), repr(r.accuracy), repr(r.train_cost)]
                for r in rows])
    print(f"wrote {out}")
    return 0


def _parse_float_list(text: str, flag: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise SystemExit(f"invalid {flag} list: {text!r}")


def _cmd_gradcheck(args, cfg) -> int:
    from .experiments import gradient_error

    train_ds, _ = _load_datasets(cfg, 0)
    n = args.subset or cfg.subset or train_ds.n_samples
    times = train_ds.times[:n]
    seed = cfg.seed if args.seed is None else args.seed
    spec = _spec_for(cfg, train_ds.input_shape, seed)
    v_hats = _parse_float_list(args.v_hats, "--v-hats")
    n_steps = [int(x) for x in _parse_float_list(args.n_steps, "--n-steps")]
    rows = gradient_error(spec, times, cfg.cost, v_hats, n_steps,
                          horizon=cfg.horizon)
    out = (Path(args.out) if args.out
           else Path(cfg.output_dir) / "gradcheck.csv")
    _write_csv(out, cfg, ["v_hat", "n_steps", "layer", "error", "excluded"],
               [[repr(r.v_hat), r.n_steps, r.layer, repr(r.error),
                 r.excluded] for r in rows])
    print(f"wrote {out}")
    return 0


def _cmd_raster(args, cfg) -> int:
    from .experiments import raster_rows

    _, test_ds = _load_datasets(cfg, 0)
    n = args.subset or cfg.subset or 16
    spec = _load_compatible_checkpoint(args.checkpoint, test_ds)
    horizon = cfg.horizon if cfg.horizon else 2.0 * cfg.cost.t_ref
    rows = raster_rows(spec, test_ds.times[:n], horizon)
    out = (Path(args.out) if args.out
           else Path(cfg.output_dir) / "raster.csv")
    _write_csv(out, cfg, ["sample", "layer", "neuron", "time"],
               [[s, l, j, repr(t)] for s, l, j, t in rows])
    print(f"wrote {out}")
    return 0


def _cmd_eval(args, cfg) -> int:
    from .training import evaluate

    _, test_ds = _load_datasets(cfg, args.subset or cfg.subset)
    spec = _load_compatible_checkpoint(args.checkpoint, test_ds)
    tcfg = cfg.train_config()
    acc, per_layer, mean_sp = evaluate(spec, test_ds.times, test_ds.labels,
                                       tcfg)
    print(f"accuracy {acc:.4f}  mean_sparsity {mean_sp:.4f}  "
          + "  ".join(f"l{i + 1} {s:.4f}" for i, s in enumerate(per_layer)))
    if args.out:
        _write_csv(Path(args.out), cfg,
                   ["accuracy"] + [f"sparsity_l{i + 1}"
                                   for i in range(len(per_layer))]
                   + ["mean_sparsity"],
                   [[repr(acc)] + [repr(s) for s in per_layer]
                    + [repr(mean_sp)]])
        print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttfsnet",
        description="Event-driven training of time-to-first-spike networks")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", required=True,
                       help="INI run configuration file")
        p.add_argument("--out", default=None, help="output CSV path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--subset", type=int, default=None,
                       help="use only the first N samples")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel training jobs (sweep only)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True,
                           help="trained model checkpoint")

    common(sub.add_parser("train", help="train one network"))
    common(sub.add_parser("sweep",
                          help="train across a parameter sweep and seeds"))
    grad = sub.add_parser("gradcheck",
                          help="integral-vs-limit gradient convergence table")
    common(grad)
    grad.add_argument("--v-hats", default="0.5,0.9,0.99,0.999,0.9999",
                      help="comma-separated comparison levels")
    grad.add_argument("--n-steps", default="1000000",
                      help="comma-separated Riemann step counts")
    common(sub.add_parser("raster",
                          help="export firing times for a few samples"),
           checkpoint=True)
    common(sub.add_parser("eval",
                          help="accuracy/sparsity of a checkpoint"),
           checkpoint=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    from .checkpoint import CheckpointError
    from .config import ConfigError, load_run_config
    from .data import DataFormatError

    args = _build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config)
        if args.command == "train":
            return _cmd_train(args, cfg)
        if args.command == "sweep":
            return _cmd_sweep(args, cfg)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args, cfg)
        if args.command == "raster":
            return _cmd_raster(args, cfg)
        if args.command == "eval":
            return _cmd_eval(args, cfg)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
