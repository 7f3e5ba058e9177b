"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written differently from the library code:
complex arithmetic instead of expanded real forms, sorted candidate lists
instead of tie counting, frozen-weight losses for finite differencing.
"""

import numpy as np

from visknow.embeddings import (EmbeddingModel, LossKind, ModelKind,
                                TrainConfig, batch_loss)


def oracle_scores(kind: ModelKind, eh: np.ndarray, er: np.ndarray,
                  et: np.ndarray) -> np.ndarray:
    """Triplet scores recomputed via numpy complex arithmetic."""
    if kind is ModelKind.TRANSE:
        return -np.sqrt(np.square(eh + er - et).sum(axis=-1))
    if kind is ModelKind.DISTMULT:
        return np.einsum("...d,...d,...d->...", eh, er, et)
    if kind is ModelKind.COMPLEX:
        h = eh[..., 0::2] + 1j * eh[..., 1::2]
        r = er[..., 0::2] + 1j * er[..., 1::2]
        t = et[..., 0::2] + 1j * et[..., 1::2]
        return np.real(np.sum(h * r * np.conj(t), axis=-1))
    if kind is ModelKind.ROTATE:
        h = eh[..., 0::2] + 1j * eh[..., 1::2]
        t = et[..., 0::2] + 1j * et[..., 1::2]
        diff = h * np.exp(1j * er) - t
        return -np.sqrt(np.sum(np.abs(diff) ** 2, axis=-1))
    raise ValueError(kind)


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def oracle_batch_loss(kind: ModelKind, entities: np.ndarray,
                      relations: np.ndarray, pos: np.ndarray, neg: np.ndarray,
                      config: TrainConfig, frozen_p: np.ndarray = None) -> float:
    """Loss recomputed from raw tables; `frozen_p` pins the self-adversarial
    softmax weights so finite differences match the stop-gradient convention."""
    def s(rows):
        return oracle_scores(kind, entities[rows[:, 0]], relations[rows[:, 1]],
                             entities[rows[:, 2]])

    s_pos = s(pos)
    flat = neg.reshape(-1, 3)
    s_neg = s(flat).reshape(neg.shape[0], neg.shape[1])
    if config.loss is LossKind.MARGIN:
        viol = np.maximum(0.0, config.margin - s_pos[:, None] + s_neg)
        return float(viol.sum() / viol.size)
    p = frozen_p if frozen_p is not None \
        else _softmax_rows(config.adversarial_temp * s_neg)
    pos_term = np.logaddexp(0.0, -(config.margin + s_pos))
    neg_term = np.sum(p * np.logaddexp(0.0, s_neg + config.margin), axis=1)
    return float((pos_term + neg_term).mean())


def kink_distance(kind: ModelKind, entities: np.ndarray, relations: np.ndarray,
                  pos: np.ndarray, neg: np.ndarray, config: TrainConfig) -> float:
    """Distance to the nearest non-differentiable point of the loss surface.

    Margin loss is kinked where a violation hits zero; distance-based scores
    are kinked where their norm hits zero. Configurations too close to either
    make finite differences meaningless and should be redrawn.
    """
    def s(rows):
        return oracle_scores(kind, entities[rows[:, 0]], relations[rows[:, 1]],
                             entities[rows[:, 2]])

    s_pos = s(pos)
    flat = neg.reshape(-1, 3)
    s_neg = s(flat).reshape(neg.shape[0], neg.shape[1])
    dist = np.inf
    if config.loss is LossKind.MARGIN:
        viol = config.margin - s_pos[:, None] + s_neg
        dist = min(dist, float(np.min(np.abs(viol))))
        if not np.any(viol > 0):
            return 0.0  # flat region: gradient trivially zero, skip
    if kind in (ModelKind.TRANSE, ModelKind.ROTATE):
        dist = min(dist, float(np.min(-s_pos)), float(np.min(-s_neg)))
    return dist


def finite_difference_check(model: EmbeddingModel, pos: np.ndarray,
                            neg: np.ndarray, config: TrainConfig,
                            eps: float = 1e-6) -> float:
    """Relative error between analytic gradients and central differences of
    the independently recomputed loss. Only rows touched by the batch are
    differenced; one untouched row is spot-checked for exact zero."""
    loss, d_ent, d_rel = batch_loss(model, pos, neg, config)

    frozen_p = None
    if config.loss is LossKind.SELF_ADVERSARIAL:
        flat = neg.reshape(-1, 3)
        s_neg = oracle_scores(model.kind, model.entities[flat[:, 0]],
                              model.relations[flat[:, 1]],
                              model.entities[flat[:, 2]])
        frozen_p = _softmax_rows(
            config.adversarial_temp * s_neg.reshape(neg.shape[0], neg.shape[1]))

    # the two loss computations must agree before gradients mean anything
    base = oracle_batch_loss(model.kind, model.entities, model.relations,
                             pos, neg, config, frozen_p)
    assert abs(base - loss) <= 1e-12 * max(1.0, abs(loss))

    touched_ents = sorted({int(v) for v in np.concatenate(
        [pos[:, 0], pos[:, 2], neg[..., 0].ravel(), neg[..., 2].ravel()])})
    touched_rels = sorted({int(v) for v in
                           np.concatenate([pos[:, 1], neg[..., 1].ravel()])})

    fd_ent = np.zeros_like(d_ent)
    for row in touched_ents:
        for col in range(model.entities.shape[1]):
            E = model.entities.copy()
            E[row, col] += eps
            up = oracle_batch_loss(model.kind, E, model.relations, pos, neg,
                                   config, frozen_p)
            E[row, col] -= 2 * eps
            down = oracle_batch_loss(model.kind, E, model.relations, pos, neg,
                                     config, frozen_p)
            fd_ent[row, col] = (up - down) / (2 * eps)
    fd_rel = np.zeros_like(d_rel)
    for row in touched_rels:
        for col in range(model.relations.shape[1]):
            R = model.relations.copy()
            R[row, col] += eps
            up = oracle_batch_loss(model.kind, model.entities, R, pos, neg,
                                   config, frozen_p)
            R[row, col] -= 2 * eps
            down = oracle_batch_loss(model.kind, model.entities, R, pos, neg,
                                     config, frozen_p)
            fd_rel[row, col] = (up - down) / (2 * eps)

    untouched = [i for i in range(model.n_entities) if i not in touched_ents]
    if untouched:
        assert np.all(d_ent[untouched[0]] == 0.0)

    analytic = np.concatenate([d_ent.ravel(), d_rel.ravel()])
    numeric = np.concatenate([fd_ent.ravel(), fd_rel.ravel()])
    denom = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)),
                1e-8)
    return float(np.linalg.norm(analytic - numeric)) / denom


def sorted_list_rank(score_map: dict, gold: str, filtered_out: set) -> int:
    """Pessimistic rank by materializing the full sorted candidate list.

    Candidates sort by descending score; the gold entry loses every tie, so
    its 1-based position is the pessimistic rank.
    """
    rows = [(candidate, score) for candidate, score in score_map.items()
            if candidate == gold or candidate not in filtered_out]
    rows.sort(key=lambda cs: (-cs[1], cs[0] == gold, cs[0]))
    for position, (candidate, _) in enumerate(rows, start=1):
        if candidate == gold:
            return position
    raise AssertionError("gold candidate missing from score map")
