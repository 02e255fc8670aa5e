"""Filtered ranking evaluation and report assembly.

Every (h, r) test query ranks all entities as candidate tails, removes
other known-true tails (filtered protocol), and scores the gold tail with
the average-tie rank 1 + #strictly-greater + #equal-others / 2. Reports
carry the overall metrics plus per-distance-bucket, per-relation and
per-mapping-property breakdowns; head-direction cells come from reciprocal
relation ids re-labeled with the base relation's class.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field

import numpy as np

from .data import (FilterIndex, base_relation, distance_bucket,
                   is_reciprocal_relation, rmp_classify)
from .models import score_fg_all
from .reference import context_vector, cosine_all

EVAL_MODES = ("combined-f", "fg-only", "fc-only")

HITS_AT = (1, 3, 10)

BUCKET_LABELS = {1: "1", 2: "2", 3: "3", 4: ">=4"}


@dataclass
class RankResult:
    head: int
    relation: int
    tail: int
    rank: float
    bucket: int | None = None
    rmp: str | None = None
    direction: str = "tail"


@dataclass
class Cell:
    count: int = 0
    inv_sum: float = 0.0

    def add(self, rank):
        self.count += 1
        self.inv_sum += 1.0 / rank

    @property
    def mrr(self):
        return self.inv_sum / self.count if self.count else float("nan")


@dataclass
class EvalReport:
    n: int = 0
    mrr: float = float("nan")
    hits: dict = field(default_factory=dict)
    per_bucket: dict = field(default_factory=dict)     # bucket -> Cell
    per_relation: dict = field(default_factory=dict)   # relation name -> Cell
    per_rmp: dict = field(default_factory=dict)        # (direction, class) -> Cell
    ranks: list = field(default_factory=list)          # RankResults (optional)


def candidate_scores(store, h, r, mode, lam, table=None):
    """Score vector over all entities for one query, per evaluation mode.

    The combined mode adds the vectors in 64-bit so that any single entry
    equals the scalar f_c + lam * f_g computed in python floats.
    """
    if mode not in EVAL_MODES:
        raise ValueError(f"mode must be one of {EVAL_MODES}, got {mode!r}")
    if mode == "fg-only":
        return score_fg_all(store, h, r)
    t_prime = context_vector(store, table, h, r)
    fc = cosine_all(t_prime, store.entities).astype(np.float64)
    if mode == "fc-only":
        return fc
    return fc + lam * score_fg_all(store, h, r).astype(np.float64)


def rank_from_scores(scores, gold, known_tails):
    """Average-tie filtered rank of the gold tail."""
    gold_score = scores[gold]
    keep = np.ones(len(scores), dtype=bool)
    keep[known_tails] = False
    keep[gold] = True
    kept = scores[keep]
    greater = int((kept > gold_score).sum())
    ties = int((kept == gold_score).sum()) - 1  # the gold itself ties trivially
    return 1.0 + greater + 0.5 * ties


def rank_triple(store, triple, filter_index, mode="fg-only", lam=0.5,
                table=None, dist_index=None, rmp=None):
    """RankResult for a single test triple (see module docstring)."""
    h, r, t = (int(x) for x in triple)
    scores = candidate_scores(store, h, r, mode, lam, table=table)
    rank = rank_from_scores(scores, t, filter_index.tails(h, r))
    bucket = (distance_bucket(dist_index.distance(h, t))
              if dist_index is not None else None)
    return RankResult(head=h, relation=r, tail=t, rank=rank, bucket=bucket,
                      rmp=None if rmp is None else rmp.get(r))


def evaluate(store, kg, split="test", table=None, dist_index=None, lam=0.5,
             mode="fg-only", filter_index=None, threads=1, keep_ranks=False):
    """Rank every triple of a split and aggregate the full report."""
    triples = kg.split(split)
    if filter_index is None:
        filter_index = FilterIndex(kg)
    classes = rmp_classify(kg)

    def rank_rows(rows):
        out = []
        for row in rows:
            h, r, t = (int(x) for x in triples[row])
            scores = candidate_scores(store, h, r, mode, lam, table=table)
            rank = rank_from_scores(scores, t, filter_index.tails(h, r))
            bucket = (distance_bucket(dist_index.distance(h, t))
                      if dist_index is not None else None)
            direction = "head" if is_reciprocal_relation(kg, r) else "tail"
            out.append(RankResult(
                head=h, relation=r, tail=t, rank=rank, bucket=bucket,
                rmp=classes.get(base_relation(kg, r)), direction=direction))
        return out

    rows = np.arange(len(triples))
    if threads > 1 and len(rows) > 4 * threads:
        chunks = np.array_split(rows, 4 * threads)
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(rank_rows, chunks))
        results = [r for part in parts for r in part]
    else:
        results = rank_rows(rows)

    report = EvalReport(n=len(results))
    if not results:
        return report
    ranks = np.array([r.rank for r in results])
    report.mrr = float((1.0 / ranks).mean())
    report.hits = {k: float((ranks <= k).mean()) for k in HITS_AT}
    rel_names = kg.vocab.relation_names
    for r in results:
        if r.bucket is not None:
            report.per_bucket.setdefault(r.bucket, Cell()).add(r.rank)
        report.per_relation.setdefault(rel_names[r.relation], Cell()).add(r.rank)
        if r.rmp is not None:
            report.per_rmp.setdefault((r.direction, r.rmp), Cell()).add(r.rank)
    if keep_ranks:
        report.ranks = results
    return report


# ---------------------------------------------------------------------------
# serialization


def report_lines(report):
    """report.tsv lines: section, key, count, value."""
    lines = [("overall", "MRR", report.n, f"{report.mrr:.6f}")]
    for k in HITS_AT:
        lines.append(("overall", f"H@{k}", report.n, f"{report.hits[k]:.6f}"))
    for bucket in sorted(report.per_bucket):
        cell = report.per_bucket[bucket]
        lines.append(("distance", BUCKET_LABELS[bucket], cell.count,
                      f"{cell.mrr:.6f}"))
    for name in sorted(report.per_relation):
        cell = report.per_relation[name]
        lines.append(("relation", name, cell.count, f"{cell.mrr:.6f}"))
    for direction, cls in sorted(report.per_rmp):
        cell = report.per_rmp[(direction, cls)]
        lines.append(("rmp", f"{direction}/{cls}", cell.count,
                      f"{cell.mrr:.6f}"))
    return lines


def write_report(report, path):
    with open(path, "w", encoding="utf-8") as handle:
        for section, key, count, value in report_lines(report):
            handle.write(f"{section}\t{key}\t{count}\t{value}\n")


def read_report(path):
    """Parse a report.tsv back into its rows."""
    rows = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.rstrip("\n")
            if not line:
                continue
            section, key, count, value = line.split("\t")
            rows.append((section, key, int(count), float(value)))
    return rows


def format_table(report, section="overall"):
    """Human-readable aligned table for one report section."""
    if section == "overall":
        rows = [("MRR", report.n, report.mrr)]
        rows += [(f"H@{k}", report.n, report.hits[k]) for k in HITS_AT]
    elif section == "distance":
        rows = [(BUCKET_LABELS[b], c.count, c.mrr)
                for b, c in sorted(report.per_bucket.items())]
    elif section == "relation":
        rows = [(name, c.count, c.mrr)
                for name, c in sorted(report.per_relation.items())]
    elif section == "rmp":
        rows = [(f"{d}/{cls}", c.count, c.mrr)
                for (d, cls), c in sorted(report.per_rmp.items())]
    else:
        raise ValueError(f"unknown report section {section!r}")
    if not rows:
        return f"({section}: no cells)"
    width = max(len(str(r[0])) for r in rows)
    out = [f"{'cell'.ljust(width)}  {'count':>8}  {'MRR':>8}"]
    for key, count, mrr in rows:
        out.append(f"{str(key).ljust(width)}  {count:>8}  {mrr:>8.4f}")
    return "\n".join(out)


def write_ranks(results, path):
    """ranks.tsv: one line per test triple (h, r, t, rank, bucket)."""
    with open(path, "w", encoding="utf-8") as handle:
        for r in results:
            bucket = "" if r.bucket is None else BUCKET_LABELS[r.bucket]
            handle.write(f"{r.head}\t{r.relation}\t{r.tail}\t{r.rank:g}\t{bucket}\n")


def random_baseline(kg, filter_index=None):
    """Analytic mean and variance of MRR under random scoring.

    For a query with m kept candidates the rank is uniform on 1..m, so
    E[1/rank] = H_m / m; the variance follows from E[1/rank^2]. Queries are
    independent, so the MRR over the test set is normal-ish with the
    returned mean and variance (used for 3-sigma sanity bounds).
    """
    if filter_index is None:
        filter_index = FilterIndex(kg)
    means = []
    variances = []
    for h, r, t in kg.test:
        m = kg.n_entities - len(filter_index.tails(int(h), int(r))) + 1
        inv = 1.0 / np.arange(1, m + 1)
        mean = inv.mean()
        means.append(mean)
        variances.append((inv * inv).mean() - mean * mean)
    n = len(means)
    return float(np.mean(means)), float(np.sum(variances) / (n * n))


def reference_sweep(cfg, kg, n_values, dist_index, train_hash=0, out_dir=None):
    """Train and evaluate once per reference count N; returns [(N, MRR)].

    N = 0 runs the same pipeline with empty reference lists (the aggregator
    pools nothing), not a separate code path.
    """
    from dataclasses import replace

    from .reference import select_references
    from .sampling import PreSampler
    from .training import train

    if not len(n_values):
        raise ValueError("n_values must be non-empty")
    rows = []
    for n in n_values:
        sub = replace(cfg, refs=int(n), sampler=replace(cfg.sampler))
        table = select_references(kg, dist_index, n_refs=int(n),
                                  train_hash=train_hash)
        presampler = (PreSampler(dist_index, sub.sampler.alpha0)
                      if sub.sampler.pre_mode == "distance" else None)
        sub_out = None if out_dir is None else f"{out_dir}/refs-{int(n)}"
        result = train(sub, kg, table=table, presampler=presampler,
                       dist_index=dist_index, out_dir=sub_out,
                       train_hash=train_hash)
        report = evaluate(result.store, kg, "test", table=table,
                          dist_index=dist_index, lam=sub.lam,
                          mode=sub.eval_mode, threads=sub.threads)
        rows.append((int(n), report.mrr))
    return rows
