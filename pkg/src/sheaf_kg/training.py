"""Margin-ranking training: negative sampling, analytic gradients, optimizers.

Training minimizes, per batch,

    sum over (positive, corrupted) pairs of max(0, s_pos + margin - s_neg)
    + alpha * orthogonality penalty of the section matrices,

taking an SGD or Adagrad step followed by exact constraint re-projection.
Runs are bitwise deterministic for a fixed seed in single-threaded mode.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, SamplingError, TrainingAbortError
from .kgdata import TRAIN, KnowledgeGraph, TripleIndex, build_index
from .model import (
    Model,
    SectionMatrix,
    KnowledgeSheaf,
    orthogonality_penalty,
    project_constraints_inplace,
    relation_discrepancy,
    triple_score,
)
from .seeds import substream

logger = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adagrad")
ADAGRAD_EPS = 1e-10


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 512
    learning_rate: float = 0.1
    negatives_per_positive: int = 1
    margin: float = 1.0
    alpha: float = 0.0
    seed: int = 0
    optimizer: str = "adagrad"
    # Optional cap on entity column norms, re-projected after each step.
    # Squared-distance scores satisfy the margin under any global inflation
    # of the embedding, so unbounded training can trade structure for scale;
    # the cap removes that escape without pinning norms exactly.
    max_entity_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.negatives_per_positive < 1:
            raise ConfigError("negatives_per_positive must be >= 1")
        if self.margin <= 0:
            raise ConfigError("margin must be > 0")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if self.max_entity_norm is not None and self.max_entity_norm <= 0:
            raise ConfigError("max_entity_norm must be > 0 when set")


@dataclass
class TrainReport:
    epoch_mean_loss: list[float] = field(default_factory=list)
    epoch_orthogonality: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    relation_discrepancy: dict[str, float] = field(default_factory=dict)


def margin_loss(pos_score: float, neg_score: float, margin: float) -> float:
    """Hinge on the score gap: max(0, pos + margin - neg)."""
    if margin <= 0:
        raise ConfigError("margin must be > 0")
    return max(0.0, pos_score + margin - neg_score)


def grad_shv(sheaf: KnowledgeSheaf, sections: SectionMatrix, h: int, r: int, t: int):
    """Analytic gradients of the non-translational score.

    Returns a dict with blocks ``x_h``, ``x_t``, ``head_map``, ``tail_map``.
    For a self-loop triple (h == t) the two entity blocks must be summed by
    the caller.
    """
    head, tail = sheaf.head_maps[r], sheaf.tail_maps[r]
    diff = head @ sections.blocks[h] - tail @ sections.blocks[t]
    return {
        "x_h": 2.0 * head.T @ diff,
        "x_t": -2.0 * tail.T @ diff,
        "head_map": 2.0 * diff @ sections.blocks[h].T,
        "tail_map": -2.0 * diff @ sections.blocks[t].T,
    }


def grad_shvt(sheaf: KnowledgeSheaf, sections: SectionMatrix, h: int, r: int, t: int):
    """Analytic gradients of the translational score (adds ``translation``)."""
    if sheaf.translations is None:
        raise ConfigError("translational gradients need a translational sheaf")
    head, tail = sheaf.head_maps[r], sheaf.tail_maps[r]
    diff = head @ sections.blocks[h] + sheaf.translations[r] - tail @ sections.blocks[t]
    return {
        "x_h": 2.0 * head.T @ diff,
        "x_t": -2.0 * tail.T @ diff,
        "head_map": 2.0 * diff @ sections.blocks[h].T,
        "tail_map": -2.0 * diff @ sections.blocks[t].T,
        "translation": 2.0 * diff,
    }


def triple_grads(sheaf, sections, h, r, t):
    return (grad_shvt if sheaf.translational else grad_shv)(sheaf, sections, h, r, t)


def sample_negatives(
    kg: KnowledgeGraph,
    index: TripleIndex,
    triple,
    k: int,
    rng: np.random.Generator,
) -> list[tuple[int, int, int]]:
    """Corrupt head or tail (fair coin) with a uniform same-type entity.

    Draws that reproduce a known training triple are rejected and resampled
    up to 100 times, after which the last draw is kept. If the chosen slot's
    type has a single entity the other slot is corrupted instead; if both
    types do, sampling fails.
    """
    if k < 1:
        raise ConfigError("need k >= 1 negatives")
    h, r, t = (int(x) for x in triple)
    head_pool = kg.entities_of_type(kg.schema.head_type[r])
    tail_pool = kg.entities_of_type(kg.schema.tail_type[r])
    out = []
    for _ in range(k):
        corrupt_head = bool(rng.integers(0, 2))
        pool = head_pool if corrupt_head else tail_pool
        if len(pool) <= 1:
            corrupt_head = not corrupt_head
            pool = head_pool if corrupt_head else tail_pool
            if len(pool) <= 1:
                raise SamplingError(
                    f"cannot corrupt triple ({h},{r},{t}): both endpoint types are singletons"
                )
        for _attempt in range(100):
            e = int(pool[rng.integers(0, len(pool))])
            candidate = (e, r, t) if corrupt_head else (h, r, e)
            if candidate not in index:
                break
        out.append(candidate)
    return out


def _sgd_update(param, grad, _acc, lr):
    param -= lr * grad


def _adagrad_update(param, grad, acc, lr):
    acc += grad * grad
    param -= lr * grad / (np.sqrt(acc) + ADAGRAD_EPS)


def _uniform_dims(model: Model) -> bool:
    schema = model.schema
    d = schema.vertex_dim[0]
    de = schema.edge_dim[0] if schema.n_relations else d
    return all(v == d for v in schema.vertex_dim) and all(e == de for e in schema.edge_dim)


class _StackedParams:
    """Training state over stacked parameter arrays (uniform dims only)."""

    def __init__(self, model: Model, config: TrainConfig):
        sheaf, sections = model.sheaf, model.sections
        self.X = np.stack(sections.blocks).astype(float)
        self.RH = np.stack(sheaf.head_maps).astype(float)
        self.RT = np.stack(sheaf.tail_maps).astype(float)
        self.T = None
        if sheaf.translations is not None:
            self.T = np.stack(sheaf.translations).astype(float)
        self.map_trainable = np.array(
            [0.0 if c == "identity" else 1.0 for c in sheaf.constraints]
        )
        self.constraints = sheaf.constraints
        self.gX = np.zeros_like(self.X)
        self.gRH = np.zeros_like(self.RH)
        self.gRT = np.zeros_like(self.RT)
        self.gT = None if self.T is None else np.zeros_like(self.T)
        self.update = _adagrad_update if config.optimizer == "adagrad" else _sgd_update
        self.acc = {
            name: np.zeros_like(getattr(self, name))
            for name in ("X", "RH", "RT")
        }
        if self.T is not None:
            self.acc["T"] = np.zeros_like(self.T)

    def step(self, pos, neg, config: TrainConfig):
        self.gX[...] = 0.0
        self.gRH[...] = 0.0
        self.gRT[...] = 0.0
        if self.gT is not None:
            self.gT[...] = 0.0
        loss, n_active = _kernels.margin_grads(
            self.X, self.RH, self.RT, self.T, pos, neg, config.margin,
            self.gX, self.gRH, self.gRT, self.gT, self.map_trainable,
        )
        if not np.isfinite(loss):
            return loss, n_active
        if config.alpha != 0.0:
            _kernels.orthogonality_grad_numpy(self.X, self.gX, config.alpha)
        lr = config.learning_rate
        self.update(self.X, self.gX, self.acc["X"], lr)
        self.update(self.RH, self.gRH, self.acc["RH"], lr)
        self.update(self.RT, self.gRT, self.acc["RT"], lr)
        if self.T is not None:
            self.update(self.T, self.gT, self.acc["T"], lr)
        self._project()
        if config.max_entity_norm is not None:
            norms = np.linalg.norm(self.X, axis=1, keepdims=True)
            np.maximum(norms, config.max_entity_norm, out=norms)
            self.X *= config.max_entity_norm / norms
        return loss, n_active

    def _project(self):
        from .model import orthonormal_columns

        for r, kind in enumerate(self.constraints):
            if kind == "shared":
                self.RT[r] = self.RH[r]
            elif kind == "antisymmetric":
                self.RT[r] = -self.RH[r]
            elif kind == "orthogonal":
                self.RH[r] = orthonormal_columns(self.RH[r])
                self.RT[r] = orthonormal_columns(self.RT[r])

    def orthogonality(self) -> float:
        m = self.X.shape[2]
        gram = np.einsum("ndm,ndk->nmk", self.X, self.X) - np.eye(m)
        return float(np.sum(gram * gram))

    def write_back(self, model: Model) -> None:
        for i in range(model.n_entities):
            model.sections.blocks[i] = self.X[i].copy()
        for r in range(model.schema.n_relations):
            model.sheaf.head_maps[r] = self.RH[r].copy()
            model.sheaf.tail_maps[r] = self.RT[r].copy()
            if self.T is not None:
                model.sheaf.translations[r] = self.T[r].copy()


class _GenericParams:
    """Per-block training state for ragged (multi-dimension) schemas."""

    def __init__(self, model: Model, config: TrainConfig):
        self.model = model
        self.update = _adagrad_update if config.optimizer == "adagrad" else _sgd_update
        sheaf, sections = model.sheaf, model.sections
        self.acc_x = [np.zeros_like(b) for b in sections.blocks]
        self.acc_rh = [np.zeros_like(m) for m in sheaf.head_maps]
        self.acc_rt = [np.zeros_like(m) for m in sheaf.tail_maps]
        self.acc_t = (
            None
            if sheaf.translations is None
            else [np.zeros_like(t) for t in sheaf.translations]
        )

    def step(self, pos, neg, config: TrainConfig):
        sheaf, sections = self.model.sheaf, self.model.sections
        gx: dict[int, np.ndarray] = {}
        grh: dict[int, np.ndarray] = {}
        grt: dict[int, np.ndarray] = {}
        gt: dict[int, np.ndarray] = {}
        loss = 0.0
        n_active = 0

        def add(store, key, value):
            if key in store:
                store[key] += value
            else:
                store[key] = value.copy()

        for (hp, rp, tp), (hn, rn, tn) in zip(pos, neg):
            s_pos = triple_score(sheaf, sections, hp, rp, tp)
            s_neg = triple_score(sheaf, sections, hn, rn, tn)
            if not (np.isfinite(s_pos) and np.isfinite(s_neg)):
                return float("nan"), n_active
            margin = s_pos + config.margin - s_neg
            if margin <= 0.0:
                continue
            loss += margin
            n_active += 1
            for sign, (h, r, t) in ((1.0, (hp, rp, tp)), (-1.0, (hn, rn, tn))):
                g = triple_grads(sheaf, sections, h, r, t)
                add(gx, h, sign * g["x_h"])
                add(gx, t, sign * g["x_t"])
                if sheaf.constraints[r] != "identity":
                    add(grh, r, sign * g["head_map"])
                    add(grt, r, sign * g["tail_map"])
                if "translation" in g:
                    add(gt, r, sign * g["translation"])

        if not np.isfinite(loss):
            return loss, n_active
        if config.alpha != 0.0:
            for v, blk in enumerate(sections.blocks):
                gram = blk.T @ blk - np.eye(sections.columns)
                add(gx, v, (4.0 * config.alpha) * (blk @ gram))

        lr = config.learning_rate
        for v in sorted(gx):
            self.update(sections.blocks[v], gx[v], self.acc_x[v], lr)
        for r in sorted(grh):
            self.update(sheaf.head_maps[r], grh[r], self.acc_rh[r], lr)
        for r in sorted(grt):
            self.update(sheaf.tail_maps[r], grt[r], self.acc_rt[r], lr)
        for r in sorted(gt):
            self.update(sheaf.translations[r], gt[r], self.acc_t[r], lr)
        project_constraints_inplace(sheaf)
        if config.max_entity_norm is not None:
            cap = config.max_entity_norm
            for blk in sections.blocks:
                norms = np.linalg.norm(blk, axis=0, keepdims=True)
                blk *= cap / np.maximum(norms, cap)
        return loss, n_active

    def orthogonality(self) -> float:
        return orthogonality_penalty(self.model.sections)

    def write_back(self, model: Model) -> None:
        pass  # parameters are updated in place


def _first_bad_relation(model, pos, neg) -> str:
    """Name the relation of the first pair with a non-finite score."""
    for row in np.concatenate([pos, neg]):
        s = triple_score(model.sheaf, model.sections, int(row[0]), int(row[1]), int(row[2]))
        if not np.isfinite(s):
            return model.schema.relation_types[int(row[1])]
    return "<unknown>"


def train(kg: KnowledgeGraph, config: TrainConfig, model: Model) -> tuple[Model, TrainReport]:
    """Run the optimizer loop on ``model`` in place and return it with a report.

    Identity-constrained maps receive no updates; all other constraints are
    re-projected exactly after every step.
    """
    triples = kg.triples_of(TRAIN)
    if len(triples) == 0:
        raise ConfigError("training split is empty")
    index = build_index(kg, splits=(TRAIN,))
    shuffle_rng = substream(config.seed, "shuffle")
    neg_rng = substream(config.seed, "negatives")
    k = config.negatives_per_positive

    state = (
        _StackedParams(model, config) if _uniform_dims(model) else _GenericParams(model, config)
    )
    report = TrainReport()
    start = time.perf_counter()
    n = len(triples)
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        n_pairs = 0
        for batch_no, lo in enumerate(range(0, n, config.batch_size)):
            batch = triples[perm[lo:lo + config.batch_size]]
            neg_rows = []
            for triple in batch:
                neg_rows.extend(sample_negatives(kg, index, triple, k, neg_rng))
            pos = np.repeat(batch, k, axis=0).astype(np.int64)
            neg = np.asarray(neg_rows, dtype=np.int64).reshape(len(pos), 3)
            loss, _ = state.step(pos, neg, config)
            if not np.isfinite(loss):
                state.write_back(model)
                raise TrainingAbortError(
                    epoch, batch_no, _first_bad_relation(model, pos, neg)
                )
            epoch_loss += loss
            n_pairs += len(pos)
        report.epoch_mean_loss.append(epoch_loss / n_pairs)
        report.epoch_orthogonality.append(state.orthogonality())
    state.write_back(model)
    report.wall_time = time.perf_counter() - start
    report.relation_discrepancy = relation_discrepancy(model.sheaf, model.sections, kg)
    logger.info(
        "trained %d epochs on %d triples in %.2fs (final mean loss %.6f)",
        config.epochs, n, report.wall_time, report.epoch_mean_loss[-1],
    )
    return model, report
