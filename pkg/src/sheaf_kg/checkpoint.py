"""Checkpoint persistence: a text manifest plus one binary tensor file.

A checkpoint with prefix ``P`` consists of ``P.manifest`` (UTF-8 ``key=value``
lines carrying the config, the schema, constraint tags, and the interning
tables) and ``P.tensors`` (little-endian float64 tensors in manifest order:
entities by index, then head/tail maps per relation, then translations; each
tensor is prefixed by its rank and shape as little-endian uint64). Round
trips are bit-exact.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .kgdata import Schema
from .model import KnowledgeSheaf, Model, ModelConfig, SectionMatrix

MAGIC = b"SHKGTNSR"
FORMAT = "sheaf-kg-checkpoint-v1"

_DIM_DTYPE = np.dtype("<u8")
_DATA_DTYPE = np.dtype("<f8")


def manifest_path(prefix) -> Path:
    return Path(str(prefix) + ".manifest")


def tensor_path(prefix) -> Path:
    return Path(str(prefix) + ".tensors")


def _write_tensor(fh, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype=_DATA_DTYPE)
    fh.write(np.asarray([arr.ndim], dtype=_DIM_DTYPE).tobytes())
    fh.write(np.asarray(arr.shape, dtype=_DIM_DTYPE).tobytes())
    fh.write(arr.tobytes())


def _read_tensor(fh, path) -> np.ndarray:
    raw = fh.read(_DIM_DTYPE.itemsize)
    if len(raw) != _DIM_DTYPE.itemsize:
        raise CheckpointError(f"{path}: truncated tensor header")
    ndim = int(np.frombuffer(raw, dtype=_DIM_DTYPE)[0])
    if ndim > 8:
        raise CheckpointError(f"{path}: implausible tensor rank {ndim}")
    raw = fh.read(ndim * _DIM_DTYPE.itemsize)
    if len(raw) != ndim * _DIM_DTYPE.itemsize:
        raise CheckpointError(f"{path}: truncated tensor shape")
    shape = tuple(int(s) for s in np.frombuffer(raw, dtype=_DIM_DTYPE))
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(count * _DATA_DTYPE.itemsize)
    if len(raw) != count * _DATA_DTYPE.itemsize:
        raise CheckpointError(f"{path}: truncated tensor data")
    return np.frombuffer(raw, dtype=_DATA_DTYPE).reshape(shape).copy()


def _manifest_lines(model: Model) -> list[str]:
    cfg, schema = model.config, model.schema
    lines = [
        f"format={FORMAT}",
        f"variant={cfg.variant}",
        f"sections={cfg.sections}",
        f"alpha={cfg.alpha!r}",
        f"margin={cfg.margin!r}",
        f"seed={model.seed}",
        f"n_entity_types={schema.n_entity_types}",
    ]
    for name, dim in zip(schema.entity_types, schema.vertex_dim):
        lines.append(f"entity_type={name}")
        lines.append(f"vertex_dim={dim}")
    lines.append(f"n_relations={schema.n_relations}")
    for r, name in enumerate(schema.relation_types):
        lines.append(f"relation={name}")
        lines.append(f"head_type={schema.entity_types[schema.head_type[r]]}")
        lines.append(f"tail_type={schema.entity_types[schema.tail_type[r]]}")
        lines.append(f"edge_dim={schema.edge_dim[r]}")
        lines.append(f"constraint={model.sheaf.constraints[r]}")
    lines.append(f"n_entities={model.n_entities}")
    for name, type_idx in zip(model.entities, model.entity_type):
        lines.append(f"entity={name}")
        lines.append(f"entity_type_of={schema.entity_types[int(type_idx)]}")
    return lines


class _ManifestReader:
    def __init__(self, path):
        self.path = path
        with open(path, encoding="utf-8") as fh:
            self.lines = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        self.pos = 0

    def take(self, key: str) -> str:
        if self.pos >= len(self.lines):
            raise CheckpointError(f"{self.path}: manifest ended while expecting {key!r}")
        line = self.lines[self.pos]
        k, sep, value = line.partition("=")
        if not sep or k != key:
            raise CheckpointError(f"{self.path}: expected {key!r}, found {line!r}")
        self.pos += 1
        return value

    def done(self) -> None:
        if self.pos != len(self.lines):
            raise CheckpointError(f"{self.path}: trailing manifest content at line {self.pos + 1}")


def save_model(model: Model, prefix) -> None:
    """Write ``prefix``.manifest and ``prefix``.tensors."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    manifest_path(prefix).write_text("\n".join(_manifest_lines(model)) + "\n", encoding="utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    for blk in model.sections.blocks:
        _write_tensor(buf, blk)
    for r in range(model.schema.n_relations):
        _write_tensor(buf, model.sheaf.head_maps[r])
        _write_tensor(buf, model.sheaf.tail_maps[r])
    if model.sheaf.translations is not None:
        for t in model.sheaf.translations:
            _write_tensor(buf, t)
    tensor_path(prefix).write_bytes(buf.getvalue())


def load_model(prefix) -> Model:
    """Read a checkpoint pair back into a Model, verifying integrity."""
    mpath, tpath = manifest_path(prefix), tensor_path(prefix)
    if not mpath.exists():
        raise CheckpointError(f"missing manifest file {mpath}")
    if not tpath.exists():
        raise CheckpointError(f"missing tensor file {tpath}")
    reader = _ManifestReader(mpath)
    fmt = reader.take("format")
    if fmt != FORMAT:
        raise CheckpointError(f"{mpath}: unsupported format {fmt!r}")
    variant = reader.take("variant")
    sections = int(reader.take("sections"))
    alpha = float(reader.take("alpha"))
    margin = float(reader.take("margin"))
    seed = int(reader.take("seed"))

    n_types = int(reader.take("n_entity_types"))
    type_names, vertex_dims = [], []
    for _ in range(n_types):
        type_names.append(reader.take("entity_type"))
        vertex_dims.append(int(reader.take("vertex_dim")))
    type_idx = {name: i for i, name in enumerate(type_names)}

    n_relations = int(reader.take("n_relations"))
    rel_names, head_types, tail_types, edge_dims, constraints = [], [], [], [], []
    for _ in range(n_relations):
        rel_names.append(reader.take("relation"))
        head_types.append(type_idx[reader.take("head_type")])
        tail_types.append(type_idx[reader.take("tail_type")])
        edge_dims.append(int(reader.take("edge_dim")))
        constraints.append(reader.take("constraint"))

    n_entities = int(reader.take("n_entities"))
    entity_names, entity_types = [], []
    for _ in range(n_entities):
        entity_names.append(reader.take("entity"))
        entity_types.append(type_idx[reader.take("entity_type_of")])
    reader.done()

    schema = Schema(
        entity_types=tuple(type_names),
        relation_types=tuple(rel_names),
        head_type=tuple(head_types),
        tail_type=tuple(tail_types),
        vertex_dim=tuple(vertex_dims),
        edge_dim=tuple(edge_dims),
    )
    config = ModelConfig(
        variant=variant,
        sections=sections,
        alpha=alpha,
        margin=margin,
        entity_dim=vertex_dims[0],
        relation_dim=edge_dims[0] if edge_dims else vertex_dims[0],
        constraint=constraints[0] if constraints else "free",
        constraint_overrides={
            name: c for name, c in zip(rel_names, constraints)
        },
    )

    with open(tpath, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{tpath}: bad magic bytes")
        blocks = []
        for i in range(n_entities):
            blk = _read_tensor(fh, tpath)
            expected = (vertex_dims[entity_types[i]], sections)
            if blk.shape != expected:
                raise CheckpointError(
                    f"{tpath}: entity tensor {i} has shape {blk.shape}, manifest says {expected}"
                )
            blocks.append(blk)
        head_maps, tail_maps = [], []
        for r in range(n_relations):
            head = _read_tensor(fh, tpath)
            tail = _read_tensor(fh, tpath)
            if head.shape != (edge_dims[r], vertex_dims[head_types[r]]) or tail.shape != (
                edge_dims[r],
                vertex_dims[tail_types[r]],
            ):
                raise CheckpointError(f"{tpath}: relation tensor {r} shape mismatch")
            head_maps.append(head)
            tail_maps.append(tail)
        translations = None
        if variant == "shvt":
            translations = []
            for r in range(n_relations):
                t = _read_tensor(fh, tpath)
                if t.shape != (edge_dims[r], sections):
                    raise CheckpointError(f"{tpath}: translation tensor {r} shape mismatch")
                translations.append(t)
        if fh.read(1):
            raise CheckpointError(f"{tpath}: trailing bytes after the last tensor")

    sheaf = KnowledgeSheaf(
        schema=schema,
        head_maps=head_maps,
        tail_maps=tail_maps,
        constraints=tuple(constraints),
        translations=translations,
    )
    return Model(
        config=config,
        schema=schema,
        entities=tuple(entity_names),
        entity_type=np.asarray(entity_types, dtype=np.int64),
        sheaf=sheaf,
        sections=SectionMatrix(sections, blocks),
        seed=seed,
    )
