"""Triple scoring models over a shared query/answer form.

Every model scores (h, r, t) as ``similarity(query(h, r), answer(t))`` where
``query`` is a relation-conditioned map of the head embedding and ``answer``
is the entity embedding itself:

* transe    query = h + r,            similarity = -||q - k||   (real)
* distmult  query = r * h,            similarity = <q, k>       (real)
* complex   query = r * h (complex),  similarity = Re<q, conj k> (complex)
* rotate    query = e^{i phi} * h,    similarity = -||q - k||   (complex)

Complex vectors are stored realified as [real | imag] halves, which makes
the complex similarity an ordinary dot product and the rotate distance an
ordinary euclidean norm over twice the nominal dimension.

Single-query scoring kernels (`score_fg`, `score_fg_all`) use elementwise
multiply-and-reduce only, so the vectorised all-entities score of a tail is
bit-identical to the scalar score of that tail.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

DEFAULT_GAMMA = 6.0

CHECKPOINT_MAGIC = b"VLPC"
CHECKPOINT_VERSION = 1


class ModelKind(str, Enum):
    TRANSE = "transe"
    DISTMULT = "distmult"
    COMPLEX = "complex"
    ROTATE = "rotate"


_KIND_CODES = {
    ModelKind.TRANSE: 0,
    ModelKind.DISTMULT: 1,
    ModelKind.COMPLEX: 2,
    ModelKind.ROTATE: 3,
}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


def is_complex_kind(kind):
    return kind in (ModelKind.COMPLEX, ModelKind.ROTATE)


def is_distance_kind(kind):
    """Models whose similarity is a negated distance (vs a dot product)."""
    return kind in (ModelKind.TRANSE, ModelKind.ROTATE)


def entity_width(kind, dim):
    """Realified entity vector width for nominal dimension ``dim``."""
    return 2 * dim if is_complex_kind(kind) else dim


def relation_width(kind, dim):
    if kind == ModelKind.COMPLEX:
        return 2 * dim
    return dim  # transe/distmult real vectors; rotate stores phases


@dataclass
class AggregatorParams:
    """Weights of the reference aggregator (kept with the model parameters
    so a single checkpoint restores everything)."""

    w_node: np.ndarray  # (d_a, d_k) applied to reference answer embeddings
    w_edge: np.ndarray  # (d_a, d_k) applied to query-difference vectors
    w_agg: np.ndarray   # (d_k, d_a + d_k) applied to [pooled ; query]

    @property
    def d_a(self):
        return self.w_node.shape[0]

    @property
    def d_k(self):
        return self.w_node.shape[1]


@dataclass
class ParameterStore:
    kind: ModelKind
    dim: int
    entities: np.ndarray   # (n_entities, d_k)
    relations: np.ndarray  # (n_relations, relation_width)
    agg: AggregatorParams
    norm: str = "l2"       # transe distance norm; rotate is always l2

    @property
    def n_entities(self):
        return self.entities.shape[0]

    @property
    def n_relations(self):
        return self.relations.shape[0]

    @property
    def d_k(self):
        return self.entities.shape[1]

    @property
    def dtype(self):
        return self.entities.dtype

    def param_arrays(self):
        """All trainable arrays in canonical checkpoint order."""
        return [self.entities, self.relations,
                self.agg.w_node, self.agg.w_edge, self.agg.w_agg]

    def copy(self):
        agg = AggregatorParams(self.agg.w_node.copy(), self.agg.w_edge.copy(),
                               self.agg.w_agg.copy())
        return replace(self, entities=self.entities.copy(),
                       relations=self.relations.copy(), agg=agg)


def init_parameters(kind, dim, n_entities, n_relations, seed, gamma=DEFAULT_GAMMA,
                    d_a=None, dtype=np.float32, norm="l2"):
    """Seed-determined uniform initialisation.

    Distance models use the margin-scaled bound (gamma + 2) / dim, dot models
    the familiar 6 / sqrt(dim). Rotate relation phases are uniform in
    [-pi, pi]. Aggregator weights use uniform Glorot bounds.
    """
    kind = ModelKind(kind)
    if norm not in ("l1", "l2"):
        raise ValueError(f"norm must be l1 or l2, got {norm!r}")
    d_k = entity_width(kind, dim)
    if d_a is None:
        d_a = d_k
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    if is_distance_kind(kind):
        bound = (gamma + 2.0) / dim
    else:
        bound = 6.0 / np.sqrt(dim)

    entities = rng.uniform(-bound, bound, size=(n_entities, d_k))
    if kind == ModelKind.ROTATE:
        relations = rng.uniform(-np.pi, np.pi, size=(n_relations, dim))
    else:
        relations = rng.uniform(-bound, bound,
                                size=(n_relations, relation_width(kind, dim)))

    def glorot(fan_out, fan_in):
        b = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-b, b, size=(fan_out, fan_in)).astype(dtype)

    agg = AggregatorParams(
        w_node=glorot(d_a, d_k),
        w_edge=glorot(d_a, d_k),
        w_agg=glorot(d_k, d_a + d_k),
    )
    return ParameterStore(
        kind=kind,
        dim=dim,
        entities=entities.astype(dtype),
        relations=relations.astype(dtype),
        agg=agg,
        norm=norm,
    )


def _split(x):
    d = x.shape[-1] // 2
    return x[..., :d], x[..., d:]


def query_embed(store, h, r):
    """Relation-conditioned query vector q = query(h, r), shape (d_k,)."""
    return query_batch(store, np.asarray([h]), np.asarray([r]))[0]


def answer_embed(store, t):
    """Answer vector of a candidate tail (its entity embedding)."""
    return store.entities[t]


def query_batch(store, h_ids, r_ids):
    """Query vectors for id arrays of equal shape; returns (..., d_k)."""
    h = store.entities[h_ids]
    r = store.relations[r_ids]
    kind = store.kind
    if kind == ModelKind.TRANSE:
        return h + r
    if kind == ModelKind.DISTMULT:
        return h * r
    if kind == ModelKind.COMPLEX:
        hr, hi = _split(h)
        rr, ri = _split(r)
        return np.concatenate([hr * rr - hi * ri, hr * ri + hi * rr], axis=-1)
    # rotate: multiply by unit-modulus e^{i phi}
    hr, hi = _split(h)
    c, s = np.cos(r), np.sin(r)
    return np.concatenate([hr * c - hi * s, hr * s + hi * c], axis=-1)


def query_pullback(store, h_ids, r_ids, upstream):
    """Chain an upstream gradient on q back to (d_head, d_relation) rows.

    upstream has shape (..., d_k); returns arrays shaped like the h and r
    embedding rows respectively (callers scatter-add them into tables).
    """
    kind = store.kind
    if kind == ModelKind.TRANSE:
        return upstream, upstream
    h = store.entities[h_ids]
    r = store.relations[r_ids]
    if kind == ModelKind.DISTMULT:
        return upstream * r, upstream * h
    if kind == ModelKind.COMPLEX:
        hr, hi = _split(h)
        rr, ri = _split(r)
        ur, ui = _split(upstream)
        dh = np.concatenate([ur * rr + ui * ri, -ur * ri + ui * rr], axis=-1)
        dr = np.concatenate([ur * hr + ui * hi, -ur * hi + ui * hr], axis=-1)
        return dh, dr
    hr, hi = _split(h)
    c, s = np.cos(r), np.sin(r)
    ur, ui = _split(upstream)
    dh = np.concatenate([ur * c + ui * s, -ur * s + ui * c], axis=-1)
    qr = hr * c - hi * s
    qi = hr * s + hi * c
    dphi = ur * (-qi) + ui * qr
    return dh, dphi


def _distance_norm(store):
    return store.norm if store.kind == ModelKind.TRANSE else "l2"


def similarity(kind, q, k, norm="l2"):
    """Scalar similarity of a query vector and an answer vector."""
    q = np.asarray(q)
    k = np.asarray(k)
    if q.shape != k.shape:
        raise ValueError(f"query/answer shape mismatch: {q.shape} vs {k.shape}")
    if is_distance_kind(kind):
        delta = k - q
        if kind == ModelKind.TRANSE and norm == "l1":
            return -np.abs(delta).sum(axis=-1)
        return -np.sqrt((delta * delta).sum(axis=-1))
    return (q * k).sum(axis=-1)


def score_fg(store, h, r, t):
    """Triple score f_g(h, r, t) as a python float."""
    q = query_embed(store, h, r)
    return float(similarity(store.kind, q, store.entities[t],
                            norm=_distance_norm(store)))


def score_fg_all(store, h, r):
    """f_g(h, r, t') for every entity t', shape (n_entities,).

    Row t of the result is bit-identical to ``score_fg(store, h, r, t)``.
    """
    q = query_embed(store, h, r)
    ent = store.entities
    if is_distance_kind(store.kind):
        delta = ent - q
        if store.kind == ModelKind.TRANSE and store.norm == "l1":
            return -np.abs(delta).sum(axis=1)
        return -np.sqrt((delta * delta).sum(axis=1))
    return (q * ent).sum(axis=1)


def pair_scores(store, q, k):
    """Similarity along the last axis of broadcast-compatible q and k."""
    if is_distance_kind(store.kind):
        delta = k - q
        if store.kind == ModelKind.TRANSE and store.norm == "l1":
            return -np.abs(delta).sum(axis=-1)
        return -np.sqrt((delta * delta).sum(axis=-1))
    return (q * k).sum(axis=-1)


def pair_score_pullback(store, q, k, upstream):
    """Gradient of ``upstream * pair_scores(q, k)`` wrt q and k.

    upstream broadcasts against the score shape; returns (dq, dk) shaped like
    q and k. The distance gradient at delta == 0 uses the zero subgradient.
    """
    u = np.asarray(upstream)[..., None]
    if is_distance_kind(store.kind):
        delta = k - q
        if store.kind == ModelKind.TRANSE and store.norm == "l1":
            g = -np.sign(delta)
        else:
            n = np.sqrt((delta * delta).sum(axis=-1, keepdims=True))
            with np.errstate(invalid="ignore", divide="ignore"):
                g = np.where(n > 0, -delta / np.where(n > 0, n, 1), 0.0)
        dk = u * g
        return -dk, dk
    return u * k, u * q


@dataclass
class ScoreGrad:
    d_head: np.ndarray
    d_relation: np.ndarray
    d_tail: np.ndarray


def grad_fg(store, h, r, t, upstream=1.0):
    """Analytic gradient of ``upstream * f_g(h, r, t)`` wrt the three rows."""
    h_arr = np.asarray([h])
    r_arr = np.asarray([r])
    q = query_batch(store, h_arr, r_arr)
    k = store.entities[[t]]
    dq, dk = pair_score_pullback(store, q, k, np.asarray([upstream]))
    dh, dr = query_pullback(store, h_arr, r_arr, dq)
    return ScoreGrad(dh[0], dr[0], dk[0])


# ---------------------------------------------------------------------------
# checkpoint io


def _write_array(handle, arr):
    handle.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_checkpoint(path, store, moments=None, step=0, train_hash=0):
    """Serialize parameters (+ optimizer moments) to the binary format.

    moments is an (m_list, v_list) pair congruent with ``param_arrays()``;
    zeros are written when absent so the layout is fixed.
    """
    params = store.param_arrays()
    if moments is None:
        m_list = [np.zeros_like(a) for a in params]
        v_list = [np.zeros_like(a) for a in params]
    else:
        m_list, v_list = moments
    space = 1 if is_complex_kind(store.kind) else 0
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<IBBIQQQ", CHECKPOINT_VERSION,
                                 _KIND_CODES[store.kind], space, store.dim,
                                 store.n_entities, store.n_relations,
                                 train_hash))
        for arr in params:
            _write_array(handle, arr)
        for arr in m_list:
            _write_array(handle, arr)
        for arr in v_list:
            _write_array(handle, arr)
        handle.write(struct.pack("<Q", step))


def load_checkpoint(path):
    """Read a checkpoint; returns (store, (m, v), step, train_hash).

    The aggregator width d_a is not in the header; it is recovered from the
    byte count of the trailing float payload.
    """
    from .distances import CacheError

    header = 4 + struct.calcsize("<IBBIQQQ")
    with open(path, "rb") as handle:
        data = handle.read()
    if len(data) < header + 8 or data[:4] != CHECKPOINT_MAGIC:
        raise CacheError(f"{path}: not a checkpoint file")
    version, code, space, dim, n_ent, n_rel, train_hash = struct.unpack_from(
        "<IBBIQQQ", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CacheError(f"{path}: unsupported checkpoint version {version}")
    if code not in _CODE_KINDS:
        raise CacheError(f"{path}: unknown model code {code}")
    kind = _CODE_KINDS[code]
    if space != (1 if is_complex_kind(kind) else 0):
        raise CacheError(f"{path}: embedding-space flag disagrees with model")
    payload = len(data) - header - 8
    if payload < 0 or payload % 4:
        raise CacheError(f"{path}: truncated checkpoint")
    n_floats = payload // 4
    d_k = entity_width(kind, dim)
    base = n_ent * d_k + n_rel * relation_width(kind, dim)
    if n_floats % 3:
        raise CacheError(f"{path}: checkpoint float count not divisible by 3")
    agg_floats = n_floats // 3 - base
    # agg holds 2 (d_a, d_k) maps and one (d_k, d_a + d_k) map
    d_a, rem = divmod(agg_floats - d_k * d_k, 3 * d_k)
    if rem or d_a <= 0:
        raise CacheError(f"{path}: inconsistent aggregator payload")

    shapes = [(n_ent, d_k), (n_rel, relation_width(kind, dim)),
              (d_a, d_k), (d_a, d_k), (d_k, d_a + d_k)]
    pos = header
    groups = []
    for _ in range(3):
        arrays = []
        for shape in shapes:
            count = shape[0] * shape[1]
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
            arrays.append(arr.reshape(shape).copy())
            pos += 4 * count
        groups.append(arrays)
    (step,) = struct.unpack_from("<Q", data, pos)
    params, m_list, v_list = groups
    store = ParameterStore(
        kind=kind, dim=dim, entities=params[0], relations=params[1],
        agg=AggregatorParams(params[2], params[3], params[4]),
    )
    return store, (m_list, v_list), step, train_hash
