"""Typed knowledge graphs: schemas, triple files, vocabularies, and indexes.

Triple files follow the usual benchmark convention: UTF-8 text, one triple
per line, exactly two TAB separators (``head<TAB>relation<TAB>tail``), no
header. Entities and relations are interned into dense 0-based indices in
order of first appearance, which makes loading deterministic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError, TripleParseError, ValidationError

logger = logging.getLogger(__name__)

TRAIN, VALID, TEST = "train", "valid", "test"
SPLITS = (TRAIN, VALID, TEST)
_SPLIT_CODE = {name: i for i, name in enumerate(SPLITS)}


@dataclass(frozen=True)
class Schema:
    """Entity/relation typing plus stalk dimensions.

    ``head_type``/``tail_type`` index into ``entity_types`` per relation;
    ``vertex_dim`` is indexed by entity type, ``edge_dim`` by relation.
    """

    entity_types: tuple[str, ...]
    relation_types: tuple[str, ...]
    head_type: tuple[int, ...]
    tail_type: tuple[int, ...]
    vertex_dim: tuple[int, ...]
    edge_dim: tuple[int, ...]

    def __post_init__(self):
        n_types = len(self.entity_types)
        if n_types == 0:
            raise SchemaError("schema needs at least one entity type")
        if len(set(self.entity_types)) != n_types:
            raise SchemaError("duplicate entity type names")
        if len(set(self.relation_types)) != len(self.relation_types):
            raise SchemaError("duplicate relation names")
        for seq, label in ((self.head_type, "head_type"), (self.tail_type, "tail_type")):
            if len(seq) != len(self.relation_types):
                raise SchemaError(f"{label} must have one entry per relation")
            for s in seq:
                if not 0 <= s < n_types:
                    raise SchemaError(f"{label} references unknown entity type index {s}")
        if len(self.vertex_dim) != n_types or len(self.edge_dim) != len(self.relation_types):
            raise SchemaError("dimension tables must match type/relation counts")
        if any(d < 1 for d in self.vertex_dim) or any(d < 1 for d in self.edge_dim):
            raise SchemaError("all stalk dimensions must be >= 1")

    @property
    def n_relations(self) -> int:
        return len(self.relation_types)

    @property
    def n_entity_types(self) -> int:
        return len(self.entity_types)

    def relation_index(self, name: str) -> int:
        try:
            return self.relation_types.index(name)
        except ValueError:
            raise SchemaError(f"relation {name!r} absent from schema") from None

    def entity_type_index(self, name: str) -> int:
        try:
            return self.entity_types.index(name)
        except ValueError:
            raise SchemaError(f"entity type {name!r} absent from schema") from None

    def head_dim(self, r: int) -> int:
        return self.vertex_dim[self.head_type[r]]

    def tail_dim(self, r: int) -> int:
        return self.vertex_dim[self.tail_type[r]]


def default_schema(
    n_relations: int,
    entity_dim: int,
    relation_dim: int,
    relation_names: tuple[str, ...] | None = None,
) -> Schema:
    """Single-entity-type schema with uniform dimensions.

    Every relation maps the sole type to itself. When ``relation_names`` is
    omitted, placeholder names ``r0..r{n-1}`` are generated.
    """
    if entity_dim < 1 or relation_dim < 1:
        raise SchemaError("dimensions must be >= 1")
    if relation_names is None:
        relation_names = tuple(f"r{i}" for i in range(n_relations))
    if len(relation_names) != n_relations:
        raise SchemaError("relation_names length must equal n_relations")
    return Schema(
        entity_types=("entity",),
        relation_types=tuple(relation_names),
        head_type=(0,) * n_relations,
        tail_type=(0,) * n_relations,
        vertex_dim=(entity_dim,),
        edge_dim=(relation_dim,) * n_relations,
    )


@dataclass
class VocabBuilder:
    """Mutable entity interner; order of first appearance is preserved."""

    names: list[str] = field(default_factory=list)
    types: list[int] = field(default_factory=list)
    _index: dict[str, int] = field(default_factory=dict)

    def intern(self, name: str, type_idx: int) -> int:
        idx = self._index.get(name)
        if idx is None:
            idx = len(self.names)
            self.names.append(name)
            self.types.append(type_idx)
            self._index[name] = idx
        elif self.types[idx] != type_idx:
            raise ValidationError(
                f"entity {name!r} seen with conflicting types "
                f"{self.types[idx]} and {type_idx}"
            )
        return idx

    def lookup(self, name: str) -> int | None:
        return self._index.get(name)

    def __len__(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class KnowledgeGraph:
    """Immutable typed triple store with train/valid/test split tags."""

    schema: Schema
    entities: tuple[str, ...]
    entity_type: np.ndarray  # (n_entities,) int64, index into schema.entity_types
    triples: np.ndarray  # (n_triples, 3) int64 rows (head, relation, tail)
    split: np.ndarray  # (n_triples,) int8, codes per SPLITS order

    def __post_init__(self):
        self.entity_type.setflags(write=False)
        self.triples.setflags(write=False)
        self.split.setflags(write=False)
        self.validate()

    def validate(self):
        n = len(self.entities)
        if self.entity_type.shape != (n,):
            raise ValidationError("entity_type must align with entities")
        if np.any(self.entity_type < 0) or np.any(self.entity_type >= self.schema.n_entity_types):
            raise ValidationError("entity type index out of range")
        if self.triples.ndim != 2 or self.triples.shape[1] != 3:
            raise ValidationError("triples must be an (n, 3) array")
        if self.split.shape != (self.triples.shape[0],):
            raise ValidationError("split must align with triples")
        if self.triples.size:
            h, r, t = self.triples[:, 0], self.triples[:, 1], self.triples[:, 2]
            if h.min() < 0 or t.min() < 0 or max(h.max(), t.max()) >= n:
                raise ValidationError("entity index out of range")
            if r.min() < 0 or r.max() >= self.schema.n_relations:
                raise ValidationError("relation index out of range")
            head_types = np.asarray(self.schema.head_type)[r]
            tail_types = np.asarray(self.schema.tail_type)[r]
            bad = np.nonzero(
                (self.entity_type[h] != head_types) | (self.entity_type[t] != tail_types)
            )[0]
            if bad.size:
                i = int(bad[0])
                raise ValidationError(
                    f"type-inconsistent triple #{i}: "
                    f"({self.entities[h[i]]}, {self.schema.relation_types[r[i]]}, "
                    f"{self.entities[t[i]]})"
                )

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    def split_mask(self, split: str) -> np.ndarray:
        return self.split == _SPLIT_CODE[split]

    def triples_of(self, split: str) -> np.ndarray:
        return self.triples[self.split_mask(split)]

    def entities_of_type(self, type_idx: int) -> np.ndarray:
        return np.nonzero(self.entity_type == type_idx)[0]

    def entity_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.entities)}


@dataclass(frozen=True)
class TripleIndex:
    """Adjacency maps over a fixed triple set; membership agrees with a scan."""

    by_head_relation: dict[tuple[int, int], frozenset[int]]
    by_tail_relation: dict[tuple[int, int], frozenset[int]]
    triple_set: frozenset[tuple[int, int, int]]

    def tails(self, h: int, r: int) -> frozenset[int]:
        return self.by_head_relation.get((h, r), frozenset())

    def heads(self, t: int, r: int) -> frozenset[int]:
        return self.by_tail_relation.get((t, r), frozenset())

    def __contains__(self, triple) -> bool:
        return tuple(triple) in self.triple_set


def build_index(kg: KnowledgeGraph, splits: tuple[str, ...] = SPLITS) -> TripleIndex:
    """Index the union of the requested splits for neighbor/membership queries."""
    mask = np.zeros(len(kg.split), dtype=bool)
    for s in splits:
        mask |= kg.split_mask(s)
    by_hr: dict[tuple[int, int], set[int]] = {}
    by_tr: dict[tuple[int, int], set[int]] = {}
    triple_set = set()
    for h, r, t in kg.triples[mask]:
        h, r, t = int(h), int(r), int(t)
        by_hr.setdefault((h, r), set()).add(t)
        by_tr.setdefault((t, r), set()).add(h)
        triple_set.add((h, r, t))
    return TripleIndex(
        by_head_relation={k: frozenset(v) for k, v in by_hr.items()},
        by_tail_relation={k: frozenset(v) for k, v in by_tr.items()},
        triple_set=frozenset(triple_set),
    )


def read_type_labels(path) -> dict[str, str]:
    """Read a sidecar ``entity<TAB>type`` file."""
    labels: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise TripleParseError(path, lineno, f"expected 2 tab-separated fields, got {len(parts)}")
            labels[parts[0]] = parts[1]
    return labels


def load_triples(
    path,
    schema: Schema,
    split: str,
    vocab: VocabBuilder,
    type_labels: dict[str, str] | None = None,
) -> list[tuple[int, int, int]]:
    """Parse one triple file, interning entities into ``vocab``.

    With a single-type schema unseen entities get that type; otherwise the
    sidecar ``type_labels`` mapping must cover them.
    """
    if split not in _SPLIT_CODE:
        raise ValueError(f"unknown split {split!r}")

    def type_of(name: str, lineno: int) -> int:
        if schema.n_entity_types == 1:
            return 0
        if type_labels is None or name not in type_labels:
            raise ValidationError(
                f"{path}:{lineno}: entity {name!r} needs a type label "
                "(multi-type schema without sidecar entry)"
            )
        return schema.entity_type_index(type_labels[name])

    triples: list[tuple[int, int, int]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise TripleParseError(
                    path, lineno, f"expected 3 tab-separated fields, got {len(parts)}"
                )
            head_name, rel_name, tail_name = parts
            r = schema.relation_index(rel_name)
            h = vocab.intern(head_name, type_of(head_name, lineno))
            t = vocab.intern(tail_name, type_of(tail_name, lineno))
            if vocab.types[h] != schema.head_type[r] or vocab.types[t] != schema.tail_type[r]:
                raise ValidationError(
                    f"{path}:{lineno}: triple ({head_name}, {rel_name}, {tail_name}) "
                    "violates the schema's head/tail typing"
                )
            triples.append((h, r, t))
    return triples


def assemble_kg(
    schema: Schema,
    vocab: VocabBuilder,
    fragments: dict[str, list[tuple[int, int, int]]],
) -> KnowledgeGraph:
    """Combine per-split triple lists into a KnowledgeGraph.

    Duplicate triples (within or across splits) are dropped with a warning;
    the first occurrence, in train -> valid -> test order, wins.
    """
    seen: set[tuple[int, int, int]] = set()
    rows: list[tuple[int, int, int]] = []
    codes: list[int] = []
    dropped = 0
    for split in SPLITS:
        for triple in fragments.get(split, ()):  # preserves file order
            if triple in seen:
                dropped += 1
                continue
            seen.add(triple)
            rows.append(triple)
            codes.append(_SPLIT_CODE[split])
    if dropped:
        logger.warning("dropped %d duplicate triple(s) during assembly", dropped)
    triples = np.asarray(rows, dtype=np.int64).reshape(len(rows), 3)
    return KnowledgeGraph(
        schema=schema,
        entities=tuple(vocab.names),
        entity_type=np.asarray(vocab.types, dtype=np.int64),
        triples=triples,
        split=np.asarray(codes, dtype=np.int8),
    )


def load_dataset(
    schema: Schema,
    train_path,
    valid_path=None,
    test_path=None,
    type_path=None,
) -> KnowledgeGraph:
    """Load train (+ optional valid/test) files into one KnowledgeGraph."""
    type_labels = read_type_labels(type_path) if type_path else None
    vocab = VocabBuilder()
    fragments = {TRAIN: load_triples(train_path, schema, TRAIN, vocab, type_labels)}
    n_train_entities = len(vocab)
    if valid_path:
        fragments[VALID] = load_triples(valid_path, schema, VALID, vocab, type_labels)
    if test_path:
        fragments[TEST] = load_triples(test_path, schema, TEST, vocab, type_labels)
    if len(vocab) > n_train_entities:
        logger.warning(
            "%d entity(ies) first appear outside the training split",
            len(vocab) - n_train_entities,
        )
    return assemble_kg(schema, vocab, fragments)


def scan_relation_names(*paths) -> tuple[str, ...]:
    """Collect relation names from triple files in order of first appearance."""
    names: list[str] = []
    seen: set[str] = set()
    for path in paths:
        if path is None:
            continue
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise TripleParseError(
                        path, lineno, f"expected 3 tab-separated fields, got {len(parts)}"
                    )
                if parts[1] not in seen:
                    seen.add(parts[1])
                    names.append(parts[1])
    return tuple(names)


def write_triples(kg: KnowledgeGraph, path, split: str) -> None:
    """Write one split back to the TAB-separated file format."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in kg.triples_of(split):
            fh.write(
                f"{kg.entities[int(h)]}\t{kg.schema.relation_types[int(r)]}\t{kg.entities[int(t)]}\n"
            )
