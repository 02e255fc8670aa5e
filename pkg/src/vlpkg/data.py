"""Dataset ingestion: vocabularies, indexed triple stores, reciprocal
augmentation, filtered-candidate sets and relation mapping properties.

Datasets are directories with ``train.txt``, ``valid.txt`` and ``test.txt``,
one ``head<TAB>relation<TAB>tail`` triple per line.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

SPLIT_FILES = ("train.txt", "valid.txt", "test.txt")

RMP_CLASSES = ("1-1", "1-N", "N-1", "N-N")

# tph/hpt threshold separating "1" from "N" on each axis
RMP_THRESHOLD = 1.5

RECIPROCAL_SUFFIX = "^-1"


class DatasetError(Exception):
    """Base class for dataset ingestion failures."""


class DatasetNotFoundError(DatasetError):
    """A split file is missing or the training split is empty."""


class ParseError(DatasetError):
    """A line does not have exactly three TAB-separated fields."""

    def __init__(self, path, line_no, line):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(
            f"{path}:{line_no}: expected 3 TAB-separated fields, got {line!r}"
        )


@dataclass(frozen=True)
class Vocabulary:
    """Bijective name<->id maps with contiguous ids, sorted by name."""

    entity_names: tuple
    relation_names: tuple
    entity_ids: dict = field(repr=False)
    relation_ids: dict = field(repr=False)

    @classmethod
    def from_names(cls, entities, relations):
        ent = tuple(sorted(set(entities)))
        rel = tuple(sorted(set(relations)))
        return cls(
            entity_names=ent,
            relation_names=rel,
            entity_ids={name: i for i, name in enumerate(ent)},
            relation_ids={name: i for i, name in enumerate(rel)},
        )

    @property
    def n_entities(self):
        return len(self.entity_names)

    @property
    def n_relations(self):
        return len(self.relation_names)


class KnowledgeGraph:
    """Immutable indexed triple store with train/valid/test splits.

    Triples are ``(head, relation, tail)`` id rows in int64 arrays, one array
    per split, deduplicated and sorted so that nothing downstream depends on
    the order of lines in the input files.
    """

    def __init__(self, vocab, train, valid, test, reciprocal=False,
                 unknown_entities=(), unknown_relations=()):
        self.vocab = vocab
        self.train = _as_triple_array(train)
        self.valid = _as_triple_array(valid)
        self.test = _as_triple_array(test)
        self.reciprocal = reciprocal
        # valid/test names absent from train; kept and ranked normally
        self.unknown_entities = tuple(unknown_entities)
        self.unknown_relations = tuple(unknown_relations)
        self._rel_pairs = None
        self._adjacency = None
        self._head_freq = None

    @property
    def n_entities(self):
        return self.vocab.n_entities

    @property
    def n_relations(self):
        n = self.vocab.n_relations
        return n  # vocab already contains reciprocal names when augmented

    def split(self, name):
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise ValueError(f"unknown split {name!r}") from None

    def relation_pairs(self, relation):
        """Training (head, tail) pairs of one relation, sorted by (head, tail)."""
        if self._rel_pairs is None:
            pairs = {}
            tr = self.train
            order = np.lexsort((tr[:, 2], tr[:, 0], tr[:, 1]))
            tr = tr[order]
            bounds = np.searchsorted(tr[:, 1], np.arange(self.n_relations + 1))
            for r in range(self.n_relations):
                pairs[r] = np.ascontiguousarray(tr[bounds[r]:bounds[r + 1]][:, [0, 2]])
            self._rel_pairs = pairs
        return self._rel_pairs[relation]

    def adjacency(self, entity):
        """Training edges touching ``entity`` as (relation, neighbor, direction)
        rows; direction 0 = outgoing (entity is head), 1 = incoming."""
        if self._adjacency is None:
            tr = self.train
            out_rows = np.stack(
                [tr[:, 0], tr[:, 1], tr[:, 2], np.zeros(len(tr), dtype=np.int64)], axis=1
            )
            in_rows = np.stack(
                [tr[:, 2], tr[:, 1], tr[:, 0], np.ones(len(tr), dtype=np.int64)], axis=1
            )
            both = np.concatenate([out_rows, in_rows])
            both = both[np.lexsort((both[:, 3], both[:, 2], both[:, 1], both[:, 0]))]
            bounds = np.searchsorted(both[:, 0], np.arange(self.n_entities + 1))
            self._adjacency = (both, bounds)
        rows, bounds = self._adjacency
        return rows[bounds[entity]:bounds[entity + 1], 1:]

    def entity_frequency(self):
        """Occurrences of each entity in training triples (head or tail)."""
        if self._head_freq is None:
            counts = np.bincount(self.train[:, 0], minlength=self.n_entities)
            counts += np.bincount(self.train[:, 2], minlength=self.n_entities)
            self._head_freq = counts
        return self._head_freq

    def undirected_edges(self):
        """Deduplicated undirected relation-agnostic training edges (m, 2)."""
        tr = self.train
        lo = np.minimum(tr[:, 0], tr[:, 2])
        hi = np.maximum(tr[:, 0], tr[:, 2])
        edges = np.unique(np.stack([lo, hi], axis=1), axis=0)
        return edges


def _as_triple_array(triples):
    arr = np.asarray(triples, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("triples must be an (n, 3) array")
    arr = np.unique(arr, axis=0)
    return arr


def _read_split(path):
    triples = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(path, line_no, line)
            triples.append(tuple(fields))
    return triples


def load_dataset(directory):
    """Load a dataset directory into a :class:`KnowledgeGraph`.

    Entity and relation ids are dense, contiguous and assigned in
    lexicographic name order over all three splits. Triples are deduplicated
    within each split. Valid/test names that never occur in train are kept
    (they rank normally) and reported on ``unknown_entities`` /
    ``unknown_relations``.
    """
    directory = Path(directory)
    paths = [directory / name for name in SPLIT_FILES]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise DatasetNotFoundError(f"missing dataset files: {', '.join(missing)}")

    raw = [_read_split(p) for p in paths]
    if not raw[0]:
        raise DatasetNotFoundError(f"empty training split: {paths[0]}")

    entities = set()
    relations = set()
    for split in raw:
        for h, r, t in split:
            entities.add(h)
            entities.add(t)
            relations.add(r)
    vocab = Vocabulary.from_names(entities, relations)

    train_entities = {n for h, r, t in raw[0] for n in (h, t)}
    train_relations = {r for _, r, _ in raw[0]}
    unknown_entities = sorted(entities - train_entities)
    unknown_relations = sorted(relations - train_relations)
    if unknown_entities:
        logger.warning(
            "%d valid/test entities never occur in train (kept, ranked normally)",
            len(unknown_entities),
        )
    if unknown_relations:
        logger.warning(
            "%d valid/test relations never occur in train", len(unknown_relations)
        )

    splits = [
        [(vocab.entity_ids[h], vocab.relation_ids[r], vocab.entity_ids[t])
         for h, r, t in split]
        for split in raw
    ]
    return KnowledgeGraph(
        vocab, *splits,
        unknown_entities=unknown_entities,
        unknown_relations=unknown_relations,
    )


def augment_reciprocal(kg):
    """Add a mirrored triple (t, r + |R|, h) to every split for every (h, r, t).

    All downstream prediction then answers tail queries only; head queries are
    served through the mirrored relation, and metrics over the augmented test
    set equal the usual head/tail average.
    """
    if kg.reciprocal:
        raise DatasetError("graph is already reciprocal-augmented")
    n_rel = kg.vocab.n_relations
    names = kg.vocab.relation_names + tuple(
        f"{name}{RECIPROCAL_SUFFIX}" for name in kg.vocab.relation_names
    )
    vocab = Vocabulary(
        entity_names=kg.vocab.entity_names,
        relation_names=names,
        entity_ids=kg.vocab.entity_ids,
        relation_ids={name: i for i, name in enumerate(names)},
    )

    def mirror(split):
        if len(split) == 0:
            return split
        flipped = np.stack(
            [split[:, 2], split[:, 1] + n_rel, split[:, 0]], axis=1
        )
        return np.concatenate([split, flipped])

    return KnowledgeGraph(
        vocab,
        mirror(kg.train), mirror(kg.valid), mirror(kg.test),
        reciprocal=True,
        unknown_entities=kg.unknown_entities,
        unknown_relations=kg.unknown_relations,
    )


def base_relation(kg, relation):
    """Original relation id for a possibly-reciprocal relation id."""
    if not kg.reciprocal:
        return relation
    half = kg.n_relations // 2
    return relation if relation < half else relation - half


def is_reciprocal_relation(kg, relation):
    return kg.reciprocal and relation >= kg.n_relations // 2


class FilterIndex:
    """All known-true tails per (head, relation) over train + valid + test."""

    def __init__(self, kg):
        buckets = {}
        for split in (kg.train, kg.valid, kg.test):
            for h, r, t in split:
                buckets.setdefault((int(h), int(r)), set()).add(int(t))
        self._tails = {
            key: np.array(sorted(vals), dtype=np.int64)
            for key, vals in buckets.items()
        }

    def tails(self, head, relation):
        return self._tails.get((int(head), int(relation)), _EMPTY_IDS)


_EMPTY_IDS = np.array([], dtype=np.int64)


def filter_candidates(kg, head, relation, index=None):
    """Tails t' with (head, relation, t') in any split (the filtered protocol)."""
    if index is None:
        index = FilterIndex(kg)
    return index.tails(head, relation)


def rmp_classify(kg):
    """Classify every relation as 1-1 / 1-N / N-1 / N-N from training triples.

    Uses average tails-per-head and heads-per-tail with a threshold of
    ``RMP_THRESHOLD`` on each axis. A relation without training triples is
    classified from its reciprocal with the axes swapped, else 1-1.
    """
    classes = {}
    pending = []
    for r in range(kg.n_relations):
        pairs = kg.relation_pairs(r)
        if len(pairs) == 0:
            pending.append(r)
            continue
        tph = len(pairs) / len(np.unique(pairs[:, 0]))
        hpt = len(pairs) / len(np.unique(pairs[:, 1]))
        many_tails = tph >= RMP_THRESHOLD
        many_heads = hpt >= RMP_THRESHOLD
        classes[r] = RMP_CLASSES[2 * many_heads + many_tails]
    half = kg.n_relations // 2 if kg.reciprocal else 0
    for r in pending:
        partner = None
        if kg.reciprocal:
            partner = r - half if r >= half else r + half
        if partner in classes:
            classes[r] = _swap_rmp(classes[partner])
        else:
            classes[r] = "1-1"
    return classes


def _swap_rmp(cls):
    return {"1-1": "1-1", "1-N": "N-1", "N-1": "1-N", "N-N": "N-N"}[cls]


def distance_split(kg, index):
    """Assign test triples to head-tail distance buckets {1, 2, 3, >=4}.

    Returns a dict mapping bucket (int; 4 stands for >=4) to row indices into
    ``kg.test``. Distance is measured on the undirected training graph; a
    self-loop test triple (distance 0) lands in bucket 1.
    """
    buckets = {1: [], 2: [], 3: [], 4: []}
    for row, (h, _, t) in enumerate(kg.test):
        buckets[distance_bucket(index.distance(int(h), int(t)))].append(row)
    return {k: np.array(v, dtype=np.int64) for k, v in buckets.items()}


def distance_bucket(d):
    if d <= 1:
        return 1
    return int(min(d, 4))
