"""Learnable sheaf embeddings: restriction-map pairs, section matrices, scoring.

A trained model couples a :class:`KnowledgeSheaf` (one head/tail restriction
map per relation, optionally a translation block) with a
:class:`SectionMatrix` (one ``d x m`` block per entity whose columns are
independently learned embeddings). Scores are summed over the ``m`` columns.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, SchemaError, ShapeError
from .kgdata import KnowledgeGraph, Schema
from .seeds import substream

logger = logging.getLogger(__name__)

CONSTRAINTS = ("free", "shared", "identity", "orthogonal", "antisymmetric")
VARIANTS = ("shv", "shvt")

ORTHOGONALITY_TOL = 1e-6


@dataclass
class ModelConfig:
    """Hyperparameters describing a model family."""

    variant: str = "shv"
    sections: int = 1
    alpha: float = 0.0
    margin: float = 1.0
    entity_dim: int = 32
    relation_dim: int = 32
    constraint: str = "free"
    constraint_overrides: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.sections < 1:
            raise ConfigError("sections must be >= 1")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.margin <= 0:
            raise ConfigError("margin must be > 0")
        if self.entity_dim < 1 or self.relation_dim < 1:
            raise ConfigError("dimensions must be >= 1")
        for c in (self.constraint, *self.constraint_overrides.values()):
            if c not in CONSTRAINTS:
                raise ConfigError(f"unknown constraint {c!r}; valid: {CONSTRAINTS}")

    def constraints_for(self, schema: Schema) -> tuple[str, ...]:
        unknown = set(self.constraint_overrides) - set(schema.relation_types)
        if unknown:
            raise ConfigError(f"constraint overrides for unknown relations: {sorted(unknown)}")
        return tuple(
            self.constraint_overrides.get(name, self.constraint)
            for name in schema.relation_types
        )


@dataclass
class KnowledgeSheaf:
    """Per-relation restriction maps with constraint tags (and translations)."""

    schema: Schema
    head_maps: list[np.ndarray]  # per relation, (edge_dim, head_vertex_dim)
    tail_maps: list[np.ndarray]
    constraints: tuple[str, ...]
    translations: list[np.ndarray] | None = None  # per relation, (edge_dim, sections)

    def __post_init__(self):
        n = self.schema.n_relations
        if not (len(self.head_maps) == len(self.tail_maps) == len(self.constraints) == n):
            raise ShapeError("per-relation tables must match the schema's relation count")
        for r in range(n):
            de = self.schema.edge_dim[r]
            if self.head_maps[r].shape != (de, self.schema.head_dim(r)):
                raise ShapeError(f"relation {r}: head map shape {self.head_maps[r].shape}")
            if self.tail_maps[r].shape != (de, self.schema.tail_dim(r)):
                raise ShapeError(f"relation {r}: tail map shape {self.tail_maps[r].shape}")
        if self.translations is not None and len(self.translations) != n:
            raise ShapeError("translations must have one block per relation")

    @property
    def translational(self) -> bool:
        return self.translations is not None

    def copy(self) -> "KnowledgeSheaf":
        return KnowledgeSheaf(
            schema=self.schema,
            head_maps=[m.copy() for m in self.head_maps],
            tail_maps=[m.copy() for m in self.tail_maps],
            constraints=self.constraints,
            translations=None if self.translations is None else [t.copy() for t in self.translations],
        )

    def check_constraints(self, tol: float = ORTHOGONALITY_TOL) -> None:
        """Raise unless every constraint tag is actually satisfied."""
        for r, kind in enumerate(self.constraints):
            head, tail = self.head_maps[r], self.tail_maps[r]
            if kind == "shared" and not np.array_equal(head, tail):
                raise ConfigError(f"relation {r}: shared maps differ")
            if kind == "antisymmetric" and not np.array_equal(head, -tail):
                raise ConfigError(f"relation {r}: antisymmetric maps violate head == -tail")
            if kind == "identity":
                d = self.schema.edge_dim[r]
                if head.shape != (d, d) or not (
                    np.array_equal(head, np.eye(d)) and np.array_equal(tail, np.eye(d))
                ):
                    raise ConfigError(f"relation {r}: identity maps are not the identity")
            if kind == "orthogonal":
                for m, side in ((head, "head"), (tail, "tail")):
                    gram = m.T @ m
                    err = float(np.linalg.norm(gram - np.eye(m.shape[1])))
                    if err > tol:
                        raise ConfigError(
                            f"relation {r}: {side} map orthogonality error {err:.2e} > {tol}"
                        )


@dataclass
class SectionMatrix:
    """Per-entity embedding blocks; column ``j`` holds section ``j``."""

    columns: int
    blocks: list[np.ndarray]  # per entity, (vertex_dim, columns)

    def __post_init__(self):
        if self.columns < 1:
            raise ShapeError("need at least one section column")
        for i, blk in enumerate(self.blocks):
            if blk.ndim != 2 or blk.shape[1] != self.columns:
                raise ShapeError(f"entity {i}: block shape {blk.shape}, expected (*, {self.columns})")

    @property
    def n_entities(self) -> int:
        return len(self.blocks)

    def copy(self) -> "SectionMatrix":
        return SectionMatrix(self.columns, [b.copy() for b in self.blocks])


@dataclass
class Model:
    """Everything a checkpoint holds: config, vocabulary, and parameters."""

    config: ModelConfig
    schema: Schema
    entities: tuple[str, ...]
    entity_type: np.ndarray
    sheaf: KnowledgeSheaf
    sections: SectionMatrix
    seed: int = 0

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    def entity_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.entities)}

    def entities_of_type(self, type_idx: int) -> np.ndarray:
        return np.nonzero(self.entity_type == type_idx)[0]

    def copy(self) -> "Model":
        return Model(
            config=replace(self.config),
            schema=self.schema,
            entities=self.entities,
            entity_type=self.entity_type,
            sheaf=self.sheaf.copy(),
            sections=self.sections.copy(),
            seed=self.seed,
        )


def orthonormal_columns(m: np.ndarray) -> np.ndarray:
    """Nearest column-orthonormal matrix (polar factor) of ``m``.

    Rank-deficient inputs still yield a deterministic orthonormal result
    (the SVD supplies the completion) but are flagged in the log.
    """
    if m.shape[0] < m.shape[1]:
        raise ConfigError(
            f"cannot orthonormalize columns of a {m.shape} matrix: fewer rows than columns"
        )
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s[0] == 0.0 or s[-1] <= s[0] * 1e-12:
        logger.warning("orthonormalizing a rank-deficient matrix; completion is SVD-determined")
    return u @ vt


def _init_relation_maps(rng, schema, r, kind):
    de = schema.edge_dim[r]
    dh, dt = schema.head_dim(r), schema.tail_dim(r)
    if kind == "identity":
        if not (de == dh == dt):
            raise ConfigError(
                f"relation {schema.relation_types[r]!r}: identity constraint needs "
                f"equal square dims, got edge {de}, head {dh}, tail {dt}"
            )
        return np.eye(de), np.eye(de)
    if kind in ("shared", "antisymmetric"):
        if dh != dt:
            raise ConfigError(
                f"relation {schema.relation_types[r]!r}: {kind} constraint needs "
                "matching head/tail dims"
            )
        head = rng.normal(size=(de, dh)) / np.sqrt(dh * de)
        return head, (head.copy() if kind == "shared" else -head)
    if kind == "orthogonal":
        if de < dh or de < dt:
            raise ConfigError(
                f"relation {schema.relation_types[r]!r}: orthogonal constraint needs "
                "edge dim >= vertex dims"
            )
        head = orthonormal_columns(rng.normal(size=(de, dh)))
        tail = orthonormal_columns(rng.normal(size=(de, dt)))
        return head, tail
    head = rng.normal(size=(de, dh)) / np.sqrt(dh * de)
    tail = rng.normal(size=(de, dt)) / np.sqrt(dt * de)
    return head, tail


def init_model(
    config: ModelConfig,
    schema: Schema,
    entity_types: np.ndarray,
    seed: int,
) -> tuple[KnowledgeSheaf, SectionMatrix]:
    """Seed-deterministic parameter initialization.

    Entity columns are Gaussian scaled by 1/sqrt(d) and normalized to unit
    norm; free maps are Gaussian scaled by 1/sqrt(d * d_e); orthogonal maps
    orthonormalize a Gaussian draw; identity maps are exact. Draw order is
    entities by index, then relations by index (head, tail, translation).
    """
    rng = substream(seed, "init")
    m = config.sections
    blocks = []
    for type_idx in np.asarray(entity_types, dtype=np.int64):
        d = schema.vertex_dim[int(type_idx)]
        x = rng.normal(size=(d, m)) / np.sqrt(d)
        norms = np.linalg.norm(x, axis=0)
        norms[norms == 0.0] = 1.0
        blocks.append(x / norms)
    constraints = config.constraints_for(schema)
    head_maps, tail_maps = [], []
    for r in range(schema.n_relations):
        head, tail = _init_relation_maps(rng, schema, r, constraints[r])
        head_maps.append(head)
        tail_maps.append(tail)
    translations = None
    if config.variant == "shvt":
        translations = [
            rng.normal(size=(schema.edge_dim[r], m)) / np.sqrt(schema.edge_dim[r])
            for r in range(schema.n_relations)
        ]
    sheaf = KnowledgeSheaf(
        schema=schema,
        head_maps=head_maps,
        tail_maps=tail_maps,
        constraints=constraints,
        translations=translations,
    )
    return sheaf, SectionMatrix(m, blocks)


def init_for_kg(config: ModelConfig, kg: KnowledgeGraph, seed: int) -> Model:
    """Initialize a full model bundle for a loaded knowledge graph."""
    sheaf, sections = init_model(config, kg.schema, kg.entity_type, seed)
    return Model(
        config=config,
        schema=kg.schema,
        entities=kg.entities,
        entity_type=kg.entity_type.copy(),
        sheaf=sheaf,
        sections=sections,
        seed=seed,
    )


def score_shv(sheaf: KnowledgeSheaf, sections: SectionMatrix, h: int, r: int, t: int) -> float:
    """Squared disagreement of head and tail embeddings in the relation's stalk."""
    diff = sheaf.head_maps[r] @ sections.blocks[h] - sheaf.tail_maps[r] @ sections.blocks[t]
    return float(np.sum(diff * diff))


def score_shvt(sheaf: KnowledgeSheaf, sections: SectionMatrix, h: int, r: int, t: int) -> float:
    """Translational score: disagreement after adding the relation's offset."""
    if sheaf.translations is None:
        raise ConfigError("translational score requested but the sheaf has no translations")
    diff = (
        sheaf.head_maps[r] @ sections.blocks[h]
        + sheaf.translations[r]
        - sheaf.tail_maps[r] @ sections.blocks[t]
    )
    return float(np.sum(diff * diff))


def triple_score(sheaf: KnowledgeSheaf, sections: SectionMatrix, h: int, r: int, t: int) -> float:
    return (score_shvt if sheaf.translational else score_shv)(sheaf, sections, h, r, t)


def project_constraints(sheaf: KnowledgeSheaf) -> KnowledgeSheaf:
    """Return a copy with every constraint re-established exactly.

    shared/antisymmetric tails are recopied (negated) from heads, orthogonal
    maps are replaced by their polar factors, identity and free maps pass
    through untouched.
    """
    out = sheaf.copy()
    project_constraints_inplace(out)
    return out


def project_constraints_inplace(sheaf: KnowledgeSheaf) -> None:
    for r, kind in enumerate(sheaf.constraints):
        if kind == "shared":
            sheaf.tail_maps[r][...] = sheaf.head_maps[r]
        elif kind == "antisymmetric":
            sheaf.tail_maps[r][...] = -sheaf.head_maps[r]
        elif kind == "orthogonal":
            sheaf.head_maps[r][...] = orthonormal_columns(sheaf.head_maps[r])
            sheaf.tail_maps[r][...] = orthonormal_columns(sheaf.tail_maps[r])


def orthogonality_penalty(sections: SectionMatrix) -> float:
    """Total squared deviation of each entity's column Gram matrix from identity."""
    m = sections.columns
    eye = np.eye(m)
    total = 0.0
    for blk in sections.blocks:
        g = blk.T @ blk - eye
        total += float(np.sum(g * g))
    return total


def relation_discrepancy(
    sheaf: KnowledgeSheaf, sections: SectionMatrix, kg: KnowledgeGraph
) -> dict[str, float]:
    """Mean triple score per relation over the training split.

    Relations with no training triples are absent from the result.
    """
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for h, r, t in kg.triples_of("train"):
        r = int(r)
        sums[r] = sums.get(r, 0.0) + triple_score(sheaf, sections, int(h), r, int(t))
        counts[r] = counts.get(r, 0) + 1
    return {
        kg.schema.relation_types[r]: sums[r] / counts[r] for r in sorted(sums)
    }


def resize_edge_stalk(sheaf: KnowledgeSheaf, relation, new_dim: int, seed: int) -> KnowledgeSheaf:
    """Change one relation's edge stalk dimension (row count of its maps).

    Shrinking keeps the leading rows exactly; growing appends freshly
    initialized rows drawn from the ``resize`` stream of ``seed``. The
    translation block, when present, is resized the same way.
    """
    schema = sheaf.schema
    r = relation if isinstance(relation, int) else schema.relation_index(relation)
    if not 0 <= r < schema.n_relations:
        raise SchemaError(f"relation index {r} out of range")
    if new_dim < 1:
        raise ConfigError("new_dim must be >= 1")
    kind = sheaf.constraints[r]
    if kind == "identity":
        raise ConfigError("cannot resize an identity-constrained relation (maps must stay square)")
    dh, dt = schema.head_dim(r), schema.tail_dim(r)
    if kind == "orthogonal" and new_dim < max(dh, dt):
        raise ConfigError("orthogonal maps need edge dim >= vertex dims; refusing to shrink below")

    old = schema.edge_dim[r]
    new_edge_dims = list(schema.edge_dim)
    new_edge_dims[r] = new_dim
    new_schema = replace(schema, edge_dim=tuple(new_edge_dims))
    rng = substream(seed, "resize")

    def resized(mat: np.ndarray, scale: float) -> np.ndarray:
        if new_dim <= old:
            return mat[:new_dim].copy()
        extra = rng.normal(size=(new_dim - old, mat.shape[1])) * scale
        return np.concatenate([mat, extra], axis=0)

    head_maps = [m.copy() for m in sheaf.head_maps]
    tail_maps = [m.copy() for m in sheaf.tail_maps]
    translations = None if sheaf.translations is None else [t.copy() for t in sheaf.translations]
    head_maps[r] = resized(sheaf.head_maps[r], 1.0 / np.sqrt(dh * new_dim))
    if kind == "shared":
        tail_maps[r] = head_maps[r].copy()
    elif kind == "antisymmetric":
        tail_maps[r] = -head_maps[r]
    else:
        tail_maps[r] = resized(sheaf.tail_maps[r], 1.0 / np.sqrt(dt * new_dim))
    if translations is not None:
        translations[r] = resized(sheaf.translations[r], 1.0 / np.sqrt(new_dim))
    return KnowledgeSheaf(
        schema=new_schema,
        head_maps=head_maps,
        tail_maps=tail_maps,
        constraints=sheaf.constraints,
        translations=translations,
    )
