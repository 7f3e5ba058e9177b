"""Knowledge-graph embedding baselines: TransE, DistMult, ComplEx, RotatE.

Numpy throughout, with hand-derived gradients (checked against finite
differences in the test suite) and two losses: margin ranking and
self-adversarial softplus. Complex-valued tables store interleaved
(real, imag) pairs; RotatE relations are phases, so their moduli are 1 by
construction. Scores are "higher is more plausible" for every model.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from ._kernels import adagrad_update, sgd_update
from .benchmarks.ranking import RankMode, RankQuery, rank_metrics
from .benchmarks.textbench import TextBenchSplit
from .errors import IoFailure, UnknownId, VocabMismatch


class ModelKind(str, Enum):
    TRANSE = "transe"
    DISTMULT = "distmult"
    COMPLEX = "complex"
    ROTATE = "rotate"


class LossKind(str, Enum):
    MARGIN = "margin"
    SELF_ADVERSARIAL = "self_adversarial"


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAGRAD = "adagrad"


@dataclass
class TrainConfig:
    # lr 0.1 because adagrad's per-coordinate travel is bounded by lr*2*sqrt(updates);
    # desk-scale runs (a few hundred epochs) never converge at 0.01
    lr: float = 0.1
    margin: float = 6.0
    negatives: int = 16
    batch_size: int = 128
    epochs: int = 200
    loss: LossKind = LossKind.MARGIN
    optimizer: OptimizerKind = OptimizerKind.ADAGRAD
    adversarial_temp: float = 1.0

    def __post_init__(self):
        self.loss = LossKind(self.loss)
        self.optimizer = OptimizerKind(self.optimizer)
        if self.lr <= 0 or self.negatives < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("lr, negatives, batch_size and epochs must be positive")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")


def _widths(kind: ModelKind, dim: int) -> tuple[int, int]:
    if kind in (ModelKind.COMPLEX, ModelKind.ROTATE):
        ent = 2 * dim
    else:
        ent = dim
    if kind is ModelKind.COMPLEX:
        rel = 2 * dim
    elif kind is ModelKind.ROTATE:
        rel = dim  # phases
    else:
        rel = dim
    return ent, rel


@dataclass
class EmbeddingModel:
    kind: ModelKind
    dim: int
    entities: np.ndarray
    relations: np.ndarray
    seed: int
    entity_vocab: list[str] = field(default_factory=list)
    relation_vocab: list[str] = field(default_factory=list)
    # adagrad accumulators, created on first update; not part of checkpoints
    _ent_accum: Optional[np.ndarray] = None
    _rel_accum: Optional[np.ndarray] = None

    @property
    def n_entities(self) -> int:
        return self.entities.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relations.shape[0]

    def entity_index(self, label: str) -> int:
        try:
            return self.entity_vocab.index(label)
        except ValueError:
            raise UnknownId(f"unknown entity {label!r}") from None

    def relation_index(self, label: str) -> int:
        try:
            return self.relation_vocab.index(label)
        except ValueError:
            raise UnknownId(f"unknown relation {label!r}") from None


def init_embedding_model(kind: ModelKind, dim: int, n_entities: int, n_relations: int,
                         seed: int, entity_vocab: Optional[Sequence[str]] = None,
                         relation_vocab: Optional[Sequence[str]] = None) -> EmbeddingModel:
    """Uniform init in [-6/sqrt(dim), 6/sqrt(dim)]; RotatE phases in (-pi, pi]."""
    kind = ModelKind(kind)
    if dim <= 0:
        raise ValueError("dim must be > 0")
    ent_w, rel_w = _widths(kind, dim)
    bound = 6.0 / np.sqrt(dim)
    rng = np.random.default_rng(seed)
    entities = rng.uniform(-bound, bound, size=(n_entities, ent_w))
    if kind is ModelKind.ROTATE:
        relations = np.pi - rng.uniform(0.0, 2.0 * np.pi, size=(n_relations, rel_w))
    else:
        relations = rng.uniform(-bound, bound, size=(n_relations, rel_w))
    if entity_vocab is None:
        entity_vocab = [str(i) for i in range(n_entities)]
    if relation_vocab is None:
        relation_vocab = [str(i) for i in range(n_relations)]
    if len(entity_vocab) != n_entities or len(relation_vocab) != n_relations:
        raise VocabMismatch("vocab lengths do not match table sizes")
    return EmbeddingModel(kind=kind, dim=dim, entities=entities, relations=relations,
                          seed=seed, entity_vocab=list(entity_vocab),
                          relation_vocab=list(relation_vocab))


# ------------------------------------------------------------------- scoring

def _split_complex(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return v[..., 0::2], v[..., 1::2]


def scores(model: EmbeddingModel, h: np.ndarray, r: np.ndarray,
           t: np.ndarray) -> np.ndarray:
    """Vectorized plausibility scores for aligned index arrays."""
    E, R = model.entities, model.relations
    eh, er, et = E[h], R[r], E[t]
    if model.kind is ModelKind.TRANSE:
        return -np.linalg.norm(eh + er - et, axis=-1)
    if model.kind is ModelKind.DISTMULT:
        return np.sum(eh * er * et, axis=-1)
    if model.kind is ModelKind.COMPLEX:
        hr, hi = _split_complex(eh)
        rr, ri = _split_complex(er)
        tr, ti = _split_complex(et)
        return np.sum(hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr,
                      axis=-1)
    hr, hi = _split_complex(eh)
    tr, ti = _split_complex(et)
    cos_t, sin_t = np.cos(er), np.sin(er)
    u_re = hr * cos_t - hi * sin_t - tr
    u_im = hr * sin_t + hi * cos_t - ti
    return -np.sqrt(np.sum(u_re * u_re + u_im * u_im, axis=-1))


def score_triplet(model: EmbeddingModel, head: str, relation: str, tail: str) -> float:
    h = np.array([model.entity_index(head)])
    r = np.array([model.relation_index(relation)])
    t = np.array([model.entity_index(tail)])
    return float(scores(model, h, r, t)[0])


def _interleave(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    out = np.empty(re.shape[:-1] + (2 * re.shape[-1],), dtype=np.float64)
    out[..., 0::2] = re
    out[..., 1::2] = im
    return out


def _scores_with_grads(model: EmbeddingModel, h: np.ndarray, r: np.ndarray,
                       t: np.ndarray):
    """Scores plus per-triple gradients wrt the three embedding rows."""
    E, R = model.entities, model.relations
    eh, er, et = E[h], R[r], E[t]
    if model.kind is ModelKind.TRANSE:
        d = eh + er - et
        norm = np.linalg.norm(d, axis=-1, keepdims=True)
        unit = np.where(norm > 0, d / np.where(norm == 0, 1.0, norm), 0.0)
        s = -norm[..., 0]
        return s, -unit, -unit, unit
    if model.kind is ModelKind.DISTMULT:
        s = np.sum(eh * er * et, axis=-1)
        return s, er * et, eh * et, eh * er
    if model.kind is ModelKind.COMPLEX:
        hr, hi = _split_complex(eh)
        rr, ri = _split_complex(er)
        tr, ti = _split_complex(et)
        s = np.sum(hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr, axis=-1)
        gh = _interleave(rr * tr + ri * ti, rr * ti - ri * tr)
        gr = _interleave(hr * tr + hi * ti, hr * ti - hi * tr)
        gt = _interleave(hr * rr - hi * ri, hr * ri + hi * rr)
        return s, gh, gr, gt
    hr, hi = _split_complex(eh)
    tr, ti = _split_complex(et)
    cos_t, sin_t = np.cos(er), np.sin(er)
    p = hr * cos_t - hi * sin_t
    q = hr * sin_t + hi * cos_t
    u_re, u_im = p - tr, q - ti
    norm = np.sqrt(np.sum(u_re * u_re + u_im * u_im, axis=-1, keepdims=True))
    safe = np.where(norm == 0, 1.0, norm)
    v_re = np.where(norm > 0, u_re / safe, 0.0)
    v_im = np.where(norm > 0, u_im / safe, 0.0)
    s = -norm[..., 0]
    gh = _interleave(-(v_re * cos_t + v_im * sin_t), v_re * sin_t - v_im * cos_t)
    gr = v_re * q - v_im * p
    gt = _interleave(v_re, v_im)
    return s, gh, gr, gt


# --------------------------------------------------------------------- losses

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _loss_and_weights(s_pos: np.ndarray, s_neg: np.ndarray, config: TrainConfig):
    """Batch loss plus d(loss)/d(score) for positives and negatives."""
    n_pos, n_neg = s_neg.shape
    if config.loss is LossKind.MARGIN:
        viol = config.margin - s_pos[:, None] + s_neg
        active = viol > 0
        total = n_pos * n_neg
        loss = float(np.where(active, viol, 0.0).sum() / total)
        w_pos = -active.sum(axis=1).astype(np.float64) / total
        w_neg = active.astype(np.float64) / total
        return loss, w_pos, w_neg
    alpha = config.adversarial_temp
    shifted = alpha * s_neg
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)  # constant wrt gradients
    loss_pos = _softplus(-(config.margin + s_pos))
    loss_neg = np.sum(p * _softplus(s_neg + config.margin), axis=1)
    loss = float((loss_pos + loss_neg).mean())
    w_pos = (_sigmoid(config.margin + s_pos) - 1.0) / n_pos
    w_neg = p * _sigmoid(s_neg + config.margin) / n_pos
    return loss, w_pos, w_neg


def _accumulate(rows: np.ndarray, grads: np.ndarray):
    uniq, inverse = np.unique(rows, return_inverse=True)
    acc = np.zeros((uniq.size, grads.shape[1]), dtype=np.float64)
    np.add.at(acc, inverse, grads)
    return uniq, acc


def _sparse_gradients(model: EmbeddingModel, positives: np.ndarray,
                      negatives: np.ndarray, config: TrainConfig):
    pos = np.asarray(positives, dtype=np.int64)
    neg = np.asarray(negatives, dtype=np.int64)
    n_pos, n_neg = neg.shape[0], neg.shape[1]

    s_pos, gh_p, gr_p, gt_p = _scores_with_grads(model, pos[:, 0], pos[:, 1], pos[:, 2])
    flat = neg.reshape(-1, 3)
    s_neg_flat, gh_n, gr_n, gt_n = _scores_with_grads(model, flat[:, 0], flat[:, 1],
                                                      flat[:, 2])
    s_neg = s_neg_flat.reshape(n_pos, n_neg)

    loss, w_pos, w_neg = _loss_and_weights(s_pos, s_neg, config)
    w_neg_flat = w_neg.reshape(-1)

    ent_rows = np.concatenate([pos[:, 0], pos[:, 2], flat[:, 0], flat[:, 2]])
    ent_grads = np.concatenate([gh_p * w_pos[:, None], gt_p * w_pos[:, None],
                                gh_n * w_neg_flat[:, None], gt_n * w_neg_flat[:, None]])
    rel_rows = np.concatenate([pos[:, 1], flat[:, 1]])
    rel_grads = np.concatenate([gr_p * w_pos[:, None], gr_n * w_neg_flat[:, None]])

    ent_rows, ent_grads = _accumulate(ent_rows, ent_grads)
    rel_rows, rel_grads = _accumulate(rel_rows, rel_grads)
    return loss, ent_rows, ent_grads, rel_rows, rel_grads


def batch_loss(model: EmbeddingModel, positives: np.ndarray, negatives: np.ndarray,
               config: TrainConfig):
    """Loss plus dense gradients over both tables; the finite-difference
    reference point for the analytic derivatives."""
    loss, ent_rows, ent_grads, rel_rows, rel_grads = _sparse_gradients(
        model, positives, negatives, config)
    d_ent = np.zeros_like(model.entities)
    d_rel = np.zeros_like(model.relations)
    d_ent[ent_rows] = ent_grads
    d_rel[rel_rows] = rel_grads
    return loss, d_ent, d_rel


# ------------------------------------------------------------------- training

class NegativeSampler:
    """Uniform head-or-tail corruption, filtered against known positives."""

    def __init__(self, known: set, n_entities: int):
        self.known = known
        self.n_entities = n_entities

    def draw(self, positives: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
        pos = np.asarray(positives, dtype=np.int64)
        out = np.empty((pos.shape[0], k, 3), dtype=np.int64)
        for i, (h, r, t) in enumerate(pos):
            for j in range(k):
                corrupt_head = bool(rng.integers(2))
                for _ in range(100):
                    cand = int(rng.integers(self.n_entities))
                    triple = (cand, r, t) if corrupt_head else (h, r, cand)
                    if triple not in self.known:
                        break
                else:
                    # dense neighborhoods: scan from a random start
                    start = int(rng.integers(self.n_entities))
                    for off in range(self.n_entities):
                        cand = (start + off) % self.n_entities
                        triple = (cand, r, t) if corrupt_head else (h, r, cand)
                        if triple not in self.known:
                            break
                out[i, j] = triple
        return out


def train_step(model: EmbeddingModel, positives: np.ndarray,
               sampler: NegativeSampler, config: TrainConfig,
               rng: np.random.Generator) -> float:
    negatives = sampler.draw(positives, config.negatives, rng)
    loss, ent_rows, ent_grads, rel_rows, rel_grads = _sparse_gradients(
        model, positives, negatives, config)
    if config.optimizer is OptimizerKind.ADAGRAD:
        if model._ent_accum is None:
            model._ent_accum = np.zeros_like(model.entities)
            model._rel_accum = np.zeros_like(model.relations)
        adagrad_update(model.entities, model._ent_accum, ent_rows, ent_grads,
                       config.lr, 1e-10)
        adagrad_update(model.relations, model._rel_accum, rel_rows, rel_grads,
                       config.lr, 1e-10)
    else:
        sgd_update(model.entities, ent_rows, ent_grads, config.lr)
        sgd_update(model.relations, rel_rows, rel_grads, config.lr)
    return loss


def train(model: EmbeddingModel, triples: np.ndarray, config: TrainConfig,
          seed: int = 0) -> list[float]:
    """Epoch loop over shuffled mini-batches; returns per-epoch mean losses."""
    triples = np.asarray(triples, dtype=np.int64)
    known = {tuple(row) for row in triples.tolist()}
    sampler = NegativeSampler(known, model.n_entities)
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(triples.shape[0])
        losses = []
        for start in range(0, triples.shape[0], config.batch_size):
            batch = triples[order[start:start + config.batch_size]]
            losses.append(train_step(model, batch, sampler, config, rng))
        history.append(float(np.mean(losses)))
    return history


# ------------------------------------------------------------------ evaluation

def triples_to_indices(model: EmbeddingModel,
                       rows: Sequence[tuple[str, str, str]]) -> np.ndarray:
    ent = {label: i for i, label in enumerate(model.entity_vocab)}
    rel = {label: i for i, label in enumerate(model.relation_vocab)}
    missing = sorted({h for h, _, t in rows if h not in ent}
                     | {t for _, _, t in rows if t not in ent}
                     | {r for _, r, _ in rows if r not in rel})
    if missing:
        raise VocabMismatch(f"labels outside model vocab: {missing[:5]}")
    return np.array([(ent[h], rel[r], ent[t]) for h, r, t in rows], dtype=np.int64)


def evaluate_link_prediction(model: EmbeddingModel, split: TextBenchSplit,
                             filtered: bool = True) -> dict:
    """Head and tail queries over the full entity vocabulary, pooled."""
    test_idx = triples_to_indices(model, split.test)
    triples_to_indices(model, split.train)  # vocab check for the whole split
    known = split.all_triples()
    all_e = np.arange(model.n_entities)

    queries = []
    for (h_label, r_label, t_label), (h, r, t) in zip(split.test, test_idx):
        head_scores = scores(model, all_e, np.full_like(all_e, r), np.full_like(all_e, t))
        queries.append(RankQuery(
            mode=RankMode.HEAD, fixed=(r_label, t_label), gold=h_label,
            scores={model.entity_vocab[i]: float(head_scores[i])
                    for i in range(model.n_entities)}))
        tail_scores = scores(model, np.full_like(all_e, h), np.full_like(all_e, r), all_e)
        queries.append(RankQuery(
            mode=RankMode.TAIL, fixed=(h_label, r_label), gold=t_label,
            scores={model.entity_vocab[i]: float(tail_scores[i])
                    for i in range(model.n_entities)}))
    return rank_metrics(queries, filtered=filtered, known_triplets=known)


# ----------------------------------------------------------------- checkpoints

_MAGIC = b"VKEM\x01"
_KIND_CODES = {ModelKind.TRANSE: 0, ModelKind.DISTMULT: 1,
               ModelKind.COMPLEX: 2, ModelKind.ROTATE: 3}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


def save_checkpoint(model: EmbeddingModel, path: str):
    """Binary layout: magic, kind, dim, vocab sizes, seed, then both tables
    as little-endian float64."""
    header = struct.pack("<5sBIIIq", _MAGIC, _KIND_CODES[model.kind], model.dim,
                         model.n_entities, model.n_relations, model.seed)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(model.entities, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(model.relations, dtype="<f8").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str, entity_vocab: Optional[Sequence[str]] = None,
                    relation_vocab: Optional[Sequence[str]] = None) -> EmbeddingModel:
    header_size = struct.calcsize("<5sBIIIq")
    try:
        with open(path, "rb") as fh:
            header = fh.read(header_size)
            if len(header) < header_size:
                raise IoFailure(f"checkpoint {path} is truncated")
            magic, code, dim, n_ent, n_rel, seed = struct.unpack("<5sBIIIq", header)
            if magic != _MAGIC:
                raise IoFailure(f"{path} is not an embedding checkpoint")
            kind = _CODE_KINDS.get(code)
            if kind is None:
                raise IoFailure(f"{path}: unknown model kind code {code}")
            ent_w, rel_w = _widths(kind, dim)
            ent_bytes = fh.read(n_ent * ent_w * 8)
            rel_bytes = fh.read(n_rel * rel_w * 8)
            if len(ent_bytes) != n_ent * ent_w * 8 or len(rel_bytes) != n_rel * rel_w * 8:
                raise IoFailure(f"checkpoint {path} is truncated")
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    entities = np.frombuffer(ent_bytes, dtype="<f8").reshape(n_ent, ent_w).copy()
    relations = np.frombuffer(rel_bytes, dtype="<f8").reshape(n_rel, rel_w).copy()
    if entity_vocab is not None and len(entity_vocab) != n_ent:
        raise VocabMismatch(f"checkpoint has {n_ent} entities, vocab has "
                            f"{len(entity_vocab)}")
    if relation_vocab is not None and len(relation_vocab) != n_rel:
        raise VocabMismatch(f"checkpoint has {n_rel} relations, vocab has "
                            f"{len(relation_vocab)}")
    return EmbeddingModel(
        kind=kind, dim=dim, entities=entities, relations=relations, seed=seed,
        entity_vocab=list(entity_vocab) if entity_vocab is not None
        else [str(i) for i in range(n_ent)],
        relation_vocab=list(relation_vocab) if relation_vocab is not None
        else [str(i) for i in range(n_rel)])
