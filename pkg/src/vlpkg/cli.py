"""Command-line entry point.

Subcommands: preprocess, train, eval, report, sweep. Every run prints its
fully resolved configuration and cache hashes first, so two runs with equal
opening blocks are reproductions of each other.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (CONFIG_KEYS, ConfigError, DEFAULT_SEARCH_SPACE,
                     TrainConfig, build_config, canonical_key,
                     parse_config_file, parse_value)
from .data import DatasetError, augment_reciprocal, load_dataset
from .distances import CacheError, DistanceIndex, compute_distances, hash_file
from .evaluation import (evaluate, format_table, read_report, report_lines,
                         write_ranks, write_report)
from .models import load_checkpoint
from .reference import ReferenceTable, select_references
from .sampling import PreSampler
from .training import train

logger = logging.getLogger("vlpkg")

DIST_CACHE = "dist.vlpd"
REFS_CACHE = "refs.vlpr"

_EMPTY_TAILS = np.array([], dtype=np.int64)


class _NoFilter:
    """Debug stand-in for FilterIndex: the unfiltered ranking setting."""

    def tails(self, h, r):
        return _EMPTY_TAILS


def cache_dir_for(dataset_dir):
    """Cache directory: the dataset dir, or $VLP_CACHE_DIR/<name>-<hash8>."""
    override = os.environ.get("VLP_CACHE_DIR")
    if not override:
        return Path(dataset_dir)
    from .distances import fnv1a64

    abspath = os.path.abspath(dataset_dir)
    tag = f"{os.path.basename(abspath)}-{fnv1a64(abspath.encode()) & 0xFFFFFFFF:08x}"
    path = Path(override) / tag
    path.mkdir(parents=True, exist_ok=True)
    return path


def load_augmented(dataset_dir):
    kg = augment_reciprocal(load_dataset(dataset_dir))
    train_hash = hash_file(Path(dataset_dir) / "train.txt")
    return kg, train_hash


class CacheStatus:
    def __init__(self):
        self.lines = []
        self.dist_rebuilt = False

    def note(self, name, path, state, extra=""):
        self.lines.append((name, f"{path} ({state}{extra})"))


def ensure_distances(kg, dataset_dir, cap, threads, train_hash, status,
                     auto=True):
    path = cache_dir_for(dataset_dir) / DIST_CACHE
    if path.is_file():
        try:
            index = DistanceIndex.load(path)
            if (index.train_hash == train_hash and index.cap == cap
                    and index.n_entities == kg.n_entities):
                status.note("dist-cache", path, "hit")
                return index
            reason = "stale"
        except CacheError as exc:
            logger.warning("%s", exc)
            reason = "corrupt"
    else:
        reason = "missing"
    if not auto:
        raise CacheError(f"{path}: {reason} distance cache and --no-auto given"
                         " (run `vlpkg preprocess` first)")
    logger.info("building distance cache (%s): %s", reason, path)
    index = compute_distances(kg, cap=cap, threads=threads,
                              train_hash=train_hash)
    index.save(path)
    status.note("dist-cache", path, f"built, was {reason}")
    status.dist_rebuilt = True
    return index


def ensure_references(kg, dataset_dir, index, n_refs, train_hash, status,
                      auto=True):
    path = cache_dir_for(dataset_dir) / REFS_CACHE
    if path.is_file() and not status.dist_rebuilt:
        try:
            table = ReferenceTable.load(path)
            if table.train_hash == train_hash and table.n_refs == n_refs:
                status.note("refs-cache", path, "hit")
                return table
            reason = "stale"
        except CacheError as exc:
            logger.warning("%s", exc)
            reason = "corrupt"
    elif status.dist_rebuilt:
        reason = "distances rebuilt"
    else:
        reason = "missing"
    if not auto:
        raise CacheError(f"{path}: {reason} reference cache and --no-auto"
                         " given (run `vlpkg preprocess` first)")
    logger.info("building reference cache (%s): %s", reason, path)
    table = select_references(kg, index, n_refs=n_refs, train_hash=train_hash)
    table.save(path)
    status.note("refs-cache", path, f"built, was {reason}")
    return table


def echo_config(cfg, train_hash, status, extra=(), keys=None):
    print("# effective configuration")
    for key, value in cfg.to_items():
        if keys is None or key in keys:
            print(f"{key} = {value}")
    print("# caches")
    print(f"train-hash = {train_hash:#018x}")
    for name, value in status.lines:
        print(f"{name} = {value}")
    for name, value in extra:
        print(f"{name} = {value}")


# ---------------------------------------------------------------------------
# argument plumbing

_CHOICES = {
    "model": ("transe", "distmult", "complex", "rotate"),
    "mode": ("hlp", "vlp"),
    "sampler": ("uniform", "selfadv", "red"),
    "norm": ("l1", "l2"),
    "postweight-score": ("fg", "f"),
}

_FLAG_HELP = {
    "dataset": "dataset directory with train.txt/valid.txt/test.txt",
    "model": "scoring model",
    "mode": "hlp: plain triple scoring; vlp: reference aggregation",
    "sampler": "negative sampler",
    "dim": "embedding dimension (per complex component)",
    "batch": "batch size",
    "lr": "Adam learning rate",
    "steps": "total optimization steps",
    "gamma": "margin in the sampled loss",
    "lambda": "weight of f_g inside the combined score f",
    "alpha": "weight of the sampled loss in the total loss",
    "alpha0": "pre-sampling temperature",
    "alpha1": "post-sampling rise temperature",
    "alpha2": "post-sampling fall temperature",
    "tau": "post-sampling margin",
    "negs": "negatives per positive",
    "refs": "references per query (N)",
    "cap": "graph-distance truncation",
    "seed": "rng seed (runs are pure functions of config + seed)",
    "threads": "worker threads for preprocessing/training/evaluation",
    "out": "output directory",
    "norm": "transe distance norm",
    "eval-every": "validation period in steps (0: only at the end)",
    "postweight-score": "score feeding post-weights",
    "no-pre": "disable distance-based pre-sampling (red only)",
    "no-post": "disable relative-distance post-weights (red only)",
}


def add_config_flags(parser, keys=None):
    from .config import _BOOL_KEYS, _FLOAT_KEYS, _INT_KEYS

    for key in sorted(CONFIG_KEYS) if keys is None else keys:
        flag = f"--{key}"
        kwargs = {"default": None, "help": _FLAG_HELP.get(key, key),
                  "dest": key.replace("-", "_")}
        if key in _BOOL_KEYS:
            parser.add_argument(flag, action="store_const", const=True, **kwargs)
            continue
        if key in _INT_KEYS:
            kwargs["type"] = int
        elif key in _FLOAT_KEYS:
            kwargs["type"] = float
        if key in _CHOICES:
            kwargs["choices"] = _CHOICES[key]
        parser.add_argument(flag, **kwargs)


def cli_values(args, keys=None):
    values = {}
    for key in CONFIG_KEYS if keys is None else keys:
        attr = key.replace("-", "_")
        value = getattr(args, attr, None)
        if value is not None:
            values[key] = value
    return values


def resolve_config(args, keys=None):
    file_values = None
    if getattr(args, "config", None):
        file_values = parse_config_file(args.config)
    return build_config(file_values, cli_values(args, keys))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vlpkg",
        description="Knowledge-graph completion with reference-aggregating "
                    "models and distance-aware negative sampling.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess",
                       help="build the distance and reference caches")
    add_config_flags(p, ["dataset", "cap", "refs", "alpha0", "threads"])
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="config file (key = value lines)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--no-auto", action="store_true",
                   help="fail instead of building missing caches")
    add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", default="combined-f",
                   choices=("combined", "combined-f", "fg-only", "fc-only"),
                   help="score used for ranking")
    p.add_argument("--split", default="test",
                   choices=("test", "valid", "overall", "distance",
                            "relation", "rmp"),
                   help="data split to evaluate, or a breakdown table to "
                        "print (breakdowns imply the test split)")
    p.add_argument("--dump-ranks", action="store_true",
                   help="also write ranks.tsv (h, r, t, rank, bucket)")
    p.add_argument("--unfiltered", action="store_true",
                   help="debug: rank without removing known-true tails")
    p.add_argument("--no-auto", action="store_true")
    add_config_flags(p, ["dataset", "lambda", "refs", "cap", "threads",
                         "norm", "out"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="print tables from a report.tsv")
    p.add_argument("report", help="path to a report.tsv")
    p.add_argument("--section", default="all",
                   choices=("overall", "distance", "relation", "rmp", "all"))
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="grid-search over config keys")
    p.add_argument("--config", help="base config file")
    p.add_argument("--grid", help="grid file (key = v1,v2,... lines); "
                                  "defaults to the standard search space")
    p.add_argument("--no-auto", action="store_true")
    add_config_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(args):
    cfg = resolve_config(args, keys=["dataset", "cap", "refs", "alpha0",
                                     "threads"])
    if not cfg.dataset:
        raise ConfigError(["--dataset is required"])
    kg, train_hash = load_augmented(cfg.dataset)
    status = CacheStatus()
    index = ensure_distances(kg, cfg.dataset, cfg.cap, cfg.threads,
                             train_hash, status)
    ensure_references(kg, cfg.dataset, index, cfg.refs, train_hash, status)
    echo_config(cfg, train_hash, status, extra=[
        ("entities", kg.n_entities),
        ("relations", kg.n_relations),
        ("source-rows", index.n_entities),
    ], keys={"dataset", "cap", "refs", "alpha0", "threads"})
    return 0


def _prepare(cfg, auto):
    kg, train_hash = load_augmented(cfg.dataset)
    status = CacheStatus()
    index = None
    table = None
    presampler = None
    needs_dist = cfg.mode == "vlp" or cfg.sampler.pre_mode == "distance"
    if needs_dist:
        index = ensure_distances(kg, cfg.dataset, cfg.cap, cfg.threads,
                                 train_hash, status, auto=auto)
    if cfg.mode == "vlp":
        table = ensure_references(kg, cfg.dataset, index, cfg.refs,
                                  train_hash, status, auto=auto)
    if cfg.sampler.pre_mode == "distance":
        presampler = PreSampler(index, cfg.sampler.alpha0)
    return kg, train_hash, status, index, table, presampler


def cmd_train(args):
    cfg = resolve_config(args)
    if not cfg.dataset:
        raise ConfigError(["--dataset is required"])
    kg, train_hash, status, index, table, presampler = _prepare(
        cfg, auto=not args.no_auto)
    echo_config(cfg, train_hash, status)
    os.makedirs(cfg.out, exist_ok=True)
    with open(Path(cfg.out) / "config.txt", "w", encoding="utf-8") as handle:
        for key, value in cfg.to_items():
            handle.write(f"{key} = {value}\n")
    result = train(cfg, kg, table=table, presampler=presampler,
                   dist_index=index, out_dir=cfg.out, resume=args.resume,
                   train_hash=train_hash)
    report = evaluate(result.store, kg, "valid", table=table,
                      dist_index=index, lam=cfg.lam, mode=cfg.eval_mode,
                      filter_index=None, threads=cfg.threads)
    print(f"final checkpoint: {result.final_path}")
    print(format_table(report))
    return 0


def cmd_eval(args):
    cfg = resolve_config(args, keys=["dataset", "lambda", "refs", "cap",
                                     "threads", "norm", "out"])
    if not cfg.dataset:
        raise ConfigError(["--dataset is required"])
    mode = "combined-f" if args.mode == "combined" else args.mode
    split = "valid" if args.split == "valid" else "test"
    section = (args.split if args.split in ("overall", "distance", "relation",
                                            "rmp") else "overall")

    store, _, step, ck_hash = load_checkpoint(args.checkpoint)
    store.norm = cfg.norm
    kg, train_hash = load_augmented(cfg.dataset)
    if ck_hash and ck_hash != train_hash:
        raise CacheError(
            f"checkpoint was trained on train-hash {ck_hash:#018x} but "
            f"{cfg.dataset} hashes to {train_hash:#018x}")
    if store.n_entities != kg.n_entities or store.n_relations != kg.n_relations:
        raise CacheError(
            f"checkpoint shape ({store.n_entities} entities, "
            f"{store.n_relations} relations) does not match dataset "
            f"({kg.n_entities}, {kg.n_relations})")

    status = CacheStatus()
    auto = not args.no_auto
    index = ensure_distances(kg, cfg.dataset, cfg.cap, cfg.threads,
                             train_hash, status, auto=auto)
    table = None
    if mode in ("combined-f", "fc-only"):
        table = ensure_references(kg, cfg.dataset, index, cfg.refs,
                                  train_hash, status, auto=auto)
    echo_config(cfg, train_hash, status, extra=[
        ("checkpoint", args.checkpoint),
        ("checkpoint-step", step),
        ("eval-mode", mode),
        ("split", split),
    ])

    filter_index = _NoFilter() if args.unfiltered else None
    report = evaluate(store, kg, split, table=table, dist_index=index,
                      lam=cfg.lam, mode=mode, filter_index=filter_index,
                      threads=cfg.threads, keep_ranks=args.dump_ranks)

    out_dir = Path(cfg.out if cfg.out != "run" else
                   os.path.dirname(os.path.abspath(args.checkpoint)))
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.tsv"
    write_report(report, report_path)
    print(f"report: {report_path}")
    if args.dump_ranks:
        ranks_path = out_dir / "ranks.tsv"
        write_ranks(report.ranks, ranks_path)
        print(f"ranks: {ranks_path}")
    print(format_table(report, "overall"))
    if section != "overall":
        print()
        print(format_table(report, section))
    return 0


def cmd_report(args):
    rows = read_report(args.report)
    sections = ([args.section] if args.section != "all"
                else ["overall", "distance", "relation", "rmp"])
    blocks = []
    for section in sections:
        cells = [(key, count, value) for sec, key, count, value in rows
                 if sec == section]
        if not cells:
            continue
        width = max(len(str(c[0])) for c in cells)
        lines = [f"[{section}]",
                 f"{'cell'.ljust(width)}  {'count':>8}  {'value':>8}"]
        for key, count, value in cells:
            lines.append(f"{str(key).ljust(width)}  {count:>8}  {value:>8.4f}")
        blocks.append("\n".join(lines))
    print("\n\n".join(blocks))
    return 0


def parse_grid_file(path):
    """Grid file: config syntax where each value is a comma list."""
    grid = {}
    problems = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                problems.append(f"{path}:{line_no}: expected key = v1,v2,...")
                continue
            raw_key, raw_values = line.split("=", 1)
            key = canonical_key(raw_key)
            if key not in CONFIG_KEYS:
                problems.append(f"{path}:{line_no}: unknown key "
                                f"{raw_key.strip()!r}")
                continue
            try:
                grid[key] = [parse_value(key, v)
                             for v in raw_values.split(",") if v.strip()]
            except ConfigError as exc:
                problems.extend(f"{path}:{line_no}: {p}" for p in exc.problems)
    if problems:
        raise ConfigError(problems)
    return grid


def default_grid():
    return {canonical_key(k): list(v) for k, v in DEFAULT_SEARCH_SPACE.items()}


def cmd_sweep(args):
    from .config import apply_values

    base = resolve_config(args)
    if not base.dataset:
        raise ConfigError(["--dataset is required"])
    grid = parse_grid_file(args.grid) if args.grid else default_grid()
    keys = sorted(grid)
    combos = list(itertools.product(*(grid[k] for k in keys)))
    print(f"# sweep over {keys}: {len(combos)} runs")

    os.makedirs(base.out, exist_ok=True)
    summary_path = Path(base.out) / "sweep.tsv"
    rows = []
    for i, combo in enumerate(combos):
        values = dict(zip(keys, combo))
        cfg = apply_values(base, values)
        cfg.out = str(Path(base.out) / f"sweep-{i:03d}")
        cfg.validated()
        kg, train_hash, status, index, table, presampler = _prepare(
            cfg, auto=not args.no_auto)
        echo_config(cfg, train_hash, status,
                    extra=[("sweep-run", f"{i + 1}/{len(combos)}")])
        result = train(cfg, kg, table=table, presampler=presampler,
                       dist_index=index, out_dir=cfg.out,
                       train_hash=train_hash)
        rows.append(list(combo) + [result.final_valid_mrr])
        print(f"run {i}: " + " ".join(f"{k}={v}" for k, v in values.items())
              + f" -> valid MRR {result.final_valid_mrr:.4f}")
    with open(summary_path, "w", encoding="utf-8") as handle:
        handle.write("\t".join(keys + ["valid_mrr"]) + "\n")
        for row in rows:
            handle.write("\t".join(str(v) for v in row) + "\n")
    print(f"summary: {summary_path}")
    return 0


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 1
    except (DatasetError, CacheError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_main():
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
