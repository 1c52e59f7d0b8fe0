"""Command-line entry point.

Commands::

    gen-synth      write a rotating-dot dataset (text event files + manifest.json)
    preprocess     turn a manifest into Event Cloud arrays (train.npz / test.npz)
    train          train from a manifest or preprocessed arrays
    eval           evaluate a checkpoint
    macs           per-layer MACs for frequency and conv-baseline variants
    bench-preproc  time representation construction on a synthetic stream
    grad-check     finite-difference check of a tiny end-to-end network

Every command takes ``--config``, ``--seed`` and ``--out``. Exit status is 0
on success, 1 for user or configuration errors, 2 for internal failures.
The EC_THREADS environment variable caps worker and BLAS threads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, autodiff as ad, events as E, model as M, train as T
from .config import ConfigError, RunConfig, load_config

log = logging.getLogger("eventcloud")


class UsageError(Exception):
    pass


class InvariantFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


USER_ERRORS = (UsageError, ConfigError, FileNotFoundError, E.EventFormatError, ad.ShapeError,
               ValueError, KeyError, T.TrainingDiverged)


# --------------------------------------------------------------------------
# helpers

def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.train.seed = args.seed
    return cfg


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(args, cfg: RunConfig) -> tuple[T.Dataset, T.Dataset | None]:
    """Preprocessed arrays from --data, or a manifest from --manifest / the config."""
    if getattr(args, "data", None):
        d = Path(args.data)
        train_path, test_path = d / "train.npz", d / "test.npz"
        if not train_path.is_file():
            raise FileNotFoundError(f"no train.npz under {d}")
        train = T.Dataset.load(train_path)
        test = T.Dataset.load(test_path) if test_path.is_file() else None
        return train, test
    manifest = getattr(args, "manifest", None) or cfg.data.manifest
    if manifest is None:
        raise UsageError("give --manifest, --data, or [data] manifest in the config")
    splits = T.read_manifest(manifest)
    if "train" not in splits:
        raise ValueError(f"manifest {manifest} has no 'train' split")
    window = cfg.window()
    train = T.build_dataset(splits["train"], cfg.network.points, window)
    test = T.build_dataset(splits["test"], cfg.network.points, window) if splits.get("test") else None
    return train, test


def _thread_limit():
    n = os.environ.get("EC_THREADS")
    if not n:
        return None
    try:
        n = int(n)
    except ValueError:
        raise UsageError(f"EC_THREADS must be an integer, got {n!r}") from None
    if n < 1:
        raise UsageError("EC_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(n)


# --------------------------------------------------------------------------
# commands

def cmd_gen_synth(args) -> int:
    if args.classes != 2:
        raise UsageError("the rotating-dot generator has exactly 2 classes (clockwise, counterclockwise)")
    if args.samples < 2:
        raise UsageError("--samples must be >= 2")
    if not 0 < args.test_fraction < 1:
        raise UsageError("--test-fraction must lie in (0, 1)")
    out = _out_dir(args, "synth")
    seed = 0 if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    labels = np.arange(args.samples) % args.classes
    seeds = rng.integers(0, 2**31, size=args.samples)
    order = rng.permutation(args.samples)
    n_test = max(1, int(round(args.samples * args.test_fraction)))
    test_ids = set(order[:n_test].tolist())
    manifest = {"train": [], "test": []}
    (out / "events").mkdir(exist_ok=True)
    for i in range(args.samples):
        stream = E.synth_rotating_dot(int(labels[i]), args.events, int(seeds[i]), size=args.size)
        name = f"events/sample_{i:05d}.txt"
        E.save_text_events(out / name, stream)
        manifest["test" if i in test_ids else "train"].append({"path": name, "label": int(labels[i])})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {args.samples} samples to {out} "
          f"(train={len(manifest['train'])} test={len(manifest['test'])})")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    train, test = _load_data(args, cfg)
    out = _out_dir(args, "preprocessed")
    train.save(out / "train.npz")
    if test is not None:
        test.save(out / "test.npz")
    print(f"train_samples={len(train)} test_samples={0 if test is None else len(test)} "
          f"points={cfg.network.points} out={out}")
    return 0


def _apply_train_flags(args, cfg: RunConfig) -> None:
    for flag, key in (("epochs", "epochs"), ("lr", "lr0"), ("batch_size", "batch_size")):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg.train, key, v)
    T.TrainConfig(**vars(cfg.train))  # re-validate


def cmd_train(args) -> int:
    cfg = _config(args)
    _apply_train_flags(args, cfg)
    cfg.network.validate()
    train, test = _load_data(args, cfg)
    out = _out_dir(args, "run")
    params = T.params_from_checkpoint(args.checkpoint, cfg.network) if args.checkpoint else None
    (out / "config.json").write_text(json.dumps({"network": cfg.network.to_dict(),
                                                 "train": vars(cfg.train)}, indent=1, default=list) + "\n")
    with open(out / "train.log", "w", encoding="utf-8") as fh:
        def on_epoch(record):
            line = T.format_log(record)
            print(line, flush=True)
            fh.write(line + "\n")
            fh.flush()
        result = T.train(cfg.network, train, cfg.train, test, out, on_epoch=on_epoch, params=params)
    print(f"best_checkpoint={result.best_checkpoint}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint")
    params = T.params_from_checkpoint(args.checkpoint, cfg.network)
    train, test = _load_data(args, cfg)
    data = test if (test is not None and args.split == "test") else train
    report = T.evaluate(params, data, cfg.network)
    line = f"split={args.split} samples={report.count} " + report.as_kv()
    print(line)
    if args.out:
        (_out_dir(args, ".") / "metrics.txt").write_text(line + "\n", encoding="utf-8")
    return 0


def cmd_macs(args) -> int:
    cfg = _config(args)
    net = M.DATASETS[args.dataset].network() if args.dataset else cfg.network
    table = analysis.macs_report(net)
    text = table.to_text()
    print(text)
    if args.out:
        out = _out_dir(args, ".")
        (out / "macs.txt").write_text(text + "\n", encoding="utf-8")
        if args.csv:
            (out / "macs.csv").write_text(table.to_csv(), encoding="utf-8")
    elif args.csv:
        print(table.to_csv(), end="")
    return 0


def cmd_bench_preproc(args) -> int:
    seed = 0 if args.seed is None else args.seed
    if args.input:
        stream = E.load_events(args.input)
    else:
        stream = E.synth_rotating_dot(0, args.events, seed, size=args.size) if args.events else E.EventStream.empty(args.size, args.size)
    # timings are only meaningful single-threaded
    from threadpoolctl import threadpool_limits
    with threadpool_limits(1):
        report = analysis.bench_preprocessing(stream, repetitions=args.repetitions,
                                              bins=args.bins, points=args.points)
    text = report.to_text()
    print(text)
    if args.out:
        (_out_dir(args, ".") / "bench.txt").write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_grad_check(args) -> int:
    seed = 0 if args.seed is None else args.seed
    cfg = M.NetworkConfig(points=32, stages=2, embed_dim=8, groups_stage1=16, K=4, classes=3, head_hidden=16)
    worst = None
    lines = []
    for r in range(args.restarts):
        params = M.init_params(cfg, seed + r)
        clouds = np.stack([E.sample_event_cloud(E.synth_rotating_dot(i % 2, 200, 1000 * (seed + r) + i), 32).coords
                           for i in range(3)])
        labels = np.array([0, 1, 2])
        report = ad.check_gradients(lambda: T.loss_fn(M.forward(params, clouds, cfg), labels, cfg),
                                    list(params.values()), max_entries=args.entries,
                                    rng=np.random.default_rng(seed + r))
        lines.append(f"restart={r} {report}")
        print(lines[-1], flush=True)
        if worst is None or report.max_rel_error > worst.max_rel_error:
            worst = report
    summary = f"restarts={args.restarts} max_rel_error={worst.max_rel_error:.3e} passed={worst.passed}"
    print(summary)
    if args.out:
        (_out_dir(args, ".") / "grad_check.txt").write_text("\n".join(lines + [summary]) + "\n")
    if not worst.passed:
        raise InvariantFailure(f"gradient check failed: {worst}")
    return 0


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eventcloud", description="Event Cloud frequency-aware network toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def command(name, func, help_text, checkpoint=False):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="INI config file with [data]/[network]/[train] sections")
        p.add_argument("--seed", type=int, help="random seed (default: 0, or the config's train seed)")
        p.add_argument("--out", help="output directory")
        if checkpoint:
            p.add_argument("--checkpoint", help="parameter checkpoint file")
        p.set_defaults(func=func)
        return p

    p = command("gen-synth", cmd_gen_synth, "generate a rotating-dot dataset")
    p.add_argument("--classes", type=int, default=2, help="number of classes (must be 2)")
    p.add_argument("--samples", type=int, default=500, help="recordings to generate")
    p.add_argument("--events", type=int, default=2000, help="events per recording")
    p.add_argument("--size", type=int, default=64, help="sensor width and height in pixels")
    p.add_argument("--test-fraction", type=float, default=0.2, help="fraction held out for test")

    for name, func, text in (("preprocess", cmd_preprocess, "build Event Cloud arrays from a manifest"),
                             ("train", cmd_train, "train a network"),
                             ("eval", cmd_eval, "evaluate a checkpoint")):
        p = command(name, func, text, checkpoint=name != "preprocess")
        p.add_argument("--manifest", help="JSON manifest of event files and labels")
        p.add_argument("--data", help="directory holding train.npz/test.npz from preprocess")
        if name == "train":
            p.add_argument("--epochs", type=int, help="override [train] epochs")
            p.add_argument("--lr", type=float, help="override [train] lr0")
            p.add_argument("--batch-size", type=int, help="override [train] batch_size")
        if name == "eval":
            p.add_argument("--split", choices=("train", "test"), default="test", help="split to evaluate")

    p = command("macs", cmd_macs, "report per-layer MACs")
    p.add_argument("--dataset", choices=sorted(M.DATASETS), help="use a dataset's default network")
    p.add_argument("--csv", action="store_true", help="also emit CSV (macs.csv under --out)")

    p = command("bench-preproc", cmd_bench_preproc, "benchmark representation construction")
    p.add_argument("--events", type=int, default=100_000, help="synthetic stream length")
    p.add_argument("--size", type=int, default=128, help="synthetic sensor size")
    p.add_argument("--input", help="event file to benchmark instead of a synthetic stream")
    p.add_argument("--repetitions", type=int, default=7, help="timed runs per kind (>= 5)")
    p.add_argument("--bins", type=int, default=analysis.VOXEL_BINS, help="voxel grid time bins")
    p.add_argument("--points", type=int, default=1024, help="Event Cloud length")

    p = command("grad-check", cmd_grad_check, "finite-difference check of a tiny network")
    p.add_argument("--restarts", type=int, default=20, help="random restarts")
    p.add_argument("--entries", type=int, default=8, help="sampled entries per parameter")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limit = _thread_limit()
        try:
            return args.func(args)
        finally:
            if limit is not None:
                limit.restore_original_limits()
    except InvariantFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except USER_ERRORS as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        log.debug("internal failure", exc_info=True)
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
