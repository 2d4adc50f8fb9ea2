"""Complex query answering over trained sheaf embeddings.

Seven query templates are supported: path queries (1p/2p/3p), intersections
(2i/3i), and the mixed forms ip (intersect, then project) and pi (project,
then intersect). A query is answered by instantiating its template graph
with the model's per-relation restriction maps, eliminating interior
vertices through the Schur complement of the graph's Laplacian, and ranking
every type-compatible candidate entity by the resulting boundary quadratic
form (plus an offset-linear term for translational models). Lower is better.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import BudgetExceededError, ConfigError, QueryError
from .model import Model, KnowledgeSheaf
from .sheaf import (
    SheafOnGraph,
    affine_offset,
    assemble_laplacian,
    coboundary_matrix,
    psd_pinv,
)

STRUCTURES = ("1p", "2p", "3p", "2i", "3i", "ip", "pi")

# template edges are (head_vertex, relation_slot, tail_vertex)
_TEMPLATES = {
    "1p": dict(n=2, edges=((0, 0, 1),), anchors=(0,), target=1),
    "2p": dict(n=3, edges=((0, 0, 1), (1, 1, 2)), anchors=(0,), target=2),
    "3p": dict(n=4, edges=((0, 0, 1), (1, 1, 2), (2, 2, 3)), anchors=(0,), target=3),
    "2i": dict(n=3, edges=((0, 0, 2), (1, 1, 2)), anchors=(0, 1), target=2),
    "3i": dict(n=4, edges=((0, 0, 3), (1, 1, 3), (2, 2, 3)), anchors=(0, 1, 2), target=3),
    "ip": dict(n=4, edges=((0, 0, 2), (1, 1, 2), (2, 2, 3)), anchors=(0, 1), target=3),
    "pi": dict(n=4, edges=((0, 0, 1), (1, 1, 3), (2, 2, 3)), anchors=(0, 2), target=3),
}

STRUCTURE_ARITY = {tag: (len(t["anchors"]), len(t["edges"])) for tag, t in _TEMPLATES.items()}


@dataclass(frozen=True)
class Query:
    structure: str
    anchors: tuple[int, ...]
    relations: tuple[int, ...]
    answers: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise QueryError(f"unknown query structure {self.structure!r}")
        n_anchors, n_relations = STRUCTURE_ARITY[self.structure]
        if len(self.anchors) != n_anchors or len(self.relations) != n_relations:
            raise QueryError(
                f"{self.structure} queries take {n_anchors} anchor(s) and "
                f"{n_relations} relation(s), got {len(self.anchors)} and {len(self.relations)}"
            )


@dataclass(frozen=True)
class QueryGraph:
    """A tiny template graph with anchor/interior/target vertex roles."""

    n_vertices: int
    edges: tuple[tuple[int, int, int], ...]  # (head_vertex, relation, tail_vertex)
    anchor_vertices: tuple[int, ...]
    target_vertex: int
    vertex_types: tuple[int, ...]

    @property
    def boundary(self) -> tuple[int, ...]:
        return self.anchor_vertices + (self.target_vertex,)

    @property
    def interior(self) -> tuple[int, ...]:
        b = set(self.boundary)
        return tuple(v for v in range(self.n_vertices) if v not in b)


def build_query_graph(query: Query, schema) -> QueryGraph:
    """Instantiate the structure template and type its vertices via the schema."""
    template = _TEMPLATES[query.structure]
    vertex_types: list[int | None] = [None] * template["n"]
    edges = []
    for head_v, slot, tail_v in template["edges"]:
        r = query.relations[slot]
        if not 0 <= r < schema.n_relations:
            raise QueryError(f"relation index {r} out of range")
        for v, need in ((head_v, schema.head_type[r]), (tail_v, schema.tail_type[r])):
            if vertex_types[v] is None:
                vertex_types[v] = need
            elif vertex_types[v] != need:
                raise QueryError(
                    f"{query.structure} query is type-inconsistent at template vertex {v}: "
                    f"{schema.entity_types[vertex_types[v]]} vs {schema.entity_types[need]}"
                )
        edges.append((head_v, r, tail_v))
    return QueryGraph(
        n_vertices=template["n"],
        edges=tuple(edges),
        anchor_vertices=template["anchors"],
        target_vertex=template["target"],
        vertex_types=tuple(int(t) for t in vertex_types),
    )


def query_sheaf(qg: QueryGraph, sheaf: KnowledgeSheaf):
    """The knowledge sheaf pulled back onto the query graph.

    Restriction maps are shared by reference with the per-relation maps;
    returns ``(sheaf_on_graph, offsets)`` where ``offsets`` lists each edge's
    translation block for translational models, else None.
    """
    schema = sheaf.schema
    vertex_dims = tuple(schema.vertex_dim[t] for t in qg.vertex_types)
    edge_dims = tuple(schema.edge_dim[r] for _, r, _ in qg.edges)
    head_maps = tuple(sheaf.head_maps[r] for _, r, _ in qg.edges)
    tail_maps = tuple(sheaf.tail_maps[r] for _, r, _ in qg.edges)
    graph = SheafOnGraph(
        vertex_dims=vertex_dims,
        edges=tuple((u, v) for u, _, v in qg.edges),
        edge_dims=edge_dims,
        head_maps=head_maps,
        tail_maps=tail_maps,
    )
    offsets = None
    if sheaf.translational:
        offsets = [sheaf.translations[r] for _, r, _ in qg.edges]
    return graph, offsets


@dataclass(frozen=True)
class Ranking:
    """Candidates sorted ascending by (value, entity index)."""

    entity_ids: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.entity_ids.setflags(write=False)
        self.values.setflags(write=False)
        object.__setattr__(
            self, "_pos", {int(e): i for i, e in enumerate(self.entity_ids)}
        )

    def __len__(self) -> int:
        return len(self.entity_ids)

    def __contains__(self, entity) -> bool:
        return int(entity) in self._pos

    def position(self, entity: int) -> int:
        """0-based position of an entity in the sorted order."""
        try:
            return self._pos[int(entity)]
        except KeyError:
            raise QueryError(f"entity {entity} not present in ranking") from None

    def value_of(self, entity: int) -> float:
        return float(self.values[self.position(entity)])

    def top(self, k: int) -> list[tuple[int, float]]:
        k = min(k, len(self))
        return [(int(self.entity_ids[i]), float(self.values[i])) for i in range(k)]


def ranking_from_scores(candidates: np.ndarray, values: np.ndarray) -> Ranking:
    order = np.lexsort((candidates, values))
    return Ranking(entity_ids=candidates[order].copy(), values=values[order].copy())


def _anchor_blocks(model: Model, qg: QueryGraph, anchor_entities) -> list[np.ndarray]:
    blocks = []
    for v, entity in zip(qg.anchor_vertices, anchor_entities):
        entity = int(entity)
        if not 0 <= entity < model.n_entities:
            raise QueryError(f"anchor entity index {entity} out of range")
        if int(model.entity_type[entity]) != qg.vertex_types[v]:
            raise QueryError(
                f"anchor {model.entities[entity]!r} has type "
                f"{model.schema.entity_types[int(model.entity_type[entity])]}, "
                f"query vertex needs {model.schema.entity_types[qg.vertex_types[v]]}"
            )
        blocks.append(model.sections.blocks[entity])
    return blocks


def answer_query_graph(qg: QueryGraph, model: Model, anchor_entities) -> Ranking:
    """Rank all candidate entities of the target's type for a query graph.

    The Schur complement over the boundary is computed once; each candidate
    costs one small quadratic form.
    """
    if len(anchor_entities) != len(qg.anchor_vertices):
        raise QueryError("anchor count does not match the query graph")
    graph, offsets = query_sheaf(qg, model.sheaf)
    lap = assemble_laplacian(graph)
    boundary = list(qg.boundary)
    interior = list(qg.interior)

    voff = graph.vertex_offsets
    b_slices = [slice(voff[v], voff[v + 1]) for v in boundary]
    dim_b = sum(graph.vertex_dims[v] for v in boundary)

    l_bb = lap.submatrix(boundary)
    if interior:
        l_uu = lap.submatrix(interior)
        l_ub = lap.submatrix(interior, boundary)
        pinv_uu = psd_pinv(l_uu)
        schur = l_bb - l_ub.T @ pinv_uu @ l_ub
        schur = (schur + schur.T) / 2.0
    else:
        schur = l_bb

    # Linear term from translations: l = (delta E)^T b with E the extension map.
    lin = None
    if offsets is not None:
        ext = np.zeros((graph.total_vertex_dim, dim_b))
        pos = 0
        for v, sl in zip(boundary, b_slices):
            d = graph.vertex_dims[v]
            ext[sl, pos:pos + d] = np.eye(d)
            pos += d
        if interior:
            correction = -pinv_uu @ l_ub  # (dim_U, dim_B)
            upos = 0
            for v in interior:
                d = graph.vertex_dims[v]
                ext[voff[v]:voff[v + 1], :] = correction[upos:upos + d]
                upos += d
        b_mat = np.concatenate(offsets, axis=0)  # (total_edge_dim, m)
        lin = (coboundary_matrix(graph) @ ext).T @ b_mat  # (dim_b, m)

    anchors = _anchor_blocks(model, qg, anchor_entities)
    y_a = np.concatenate(anchors, axis=0) if anchors else np.zeros((0, model.sections.columns))
    dim_a = y_a.shape[0]
    s_aa = schur[:dim_a, :dim_a]
    s_at = schur[:dim_a, dim_a:]
    s_tt = schur[dim_a:, dim_a:]

    const = float(np.sum(y_a * (s_aa @ y_a)))
    w = s_at.T @ y_a  # (dim_t, m)
    if lin is not None:
        const -= 2.0 * float(np.sum(lin[:dim_a] * y_a))
        w = w - lin[dim_a:]

    candidates = model.entities_of_type(qg.vertex_types[qg.target_vertex])
    if candidates.size == 0:
        raise QueryError("no entities of the target's type exist")
    xc = np.stack([model.sections.blocks[int(c)] for c in candidates])
    quad = np.einsum("cdm,de,cem->c", xc, s_tt, xc)
    linear = 2.0 * np.einsum("cdm,dm->c", xc, w)
    values = const + linear + quad
    return ranking_from_scores(candidates.astype(np.int64), values)


def answer_query(query: Query, model: Model) -> Ranking:
    """Harmonic-extension answering for one of the seven template structures."""
    qg = build_query_graph(query, model.schema)
    return answer_query_graph(qg, model, query.anchors)


def naive_traversal_score(query: Query, model: Model) -> Ranking:
    """Baseline for path queries: add up translations along the chain.

    Requires a translational model whose restriction maps along the query's
    relations are identity-constrained; only 1p/2p/3p structures make sense.
    """
    if query.structure not in ("1p", "2p", "3p"):
        raise QueryError(f"naive traversal does not support {query.structure!r} structures")
    sheaf = model.sheaf
    if not sheaf.translational:
        raise ConfigError("naive traversal needs a translational model")
    for r in query.relations:
        if sheaf.constraints[r] != "identity":
            raise ConfigError(
                f"naive traversal needs identity maps; relation "
                f"{model.schema.relation_types[r]!r} is {sheaf.constraints[r]!r}"
            )
    qg = build_query_graph(query, model.schema)
    blocks = _anchor_blocks(model, qg, query.anchors)
    target = blocks[0] + sum(sheaf.translations[r] for r in query.relations)
    candidates = model.entities_of_type(qg.vertex_types[qg.target_vertex])
    xc = np.stack([model.sections.blocks[int(c)] for c in candidates])
    diff = target[None, :, :] - xc
    values = np.einsum("cdm,cdm->c", diff, diff)
    return ranking_from_scores(candidates.astype(np.int64), values)


def entity_chaining_exact(query: Query, model: Model, budget: int = 10**6) -> Ranking:
    """Exact discrete optimum over interior entity assignments.

    For every candidate target, minimizes the summed edge scores over all
    tuples of *known entities* at the interior vertices. Serves as the
    upper-bound oracle for the harmonic relaxation; values use the same
    constant-offset convention as ``answer_query`` so the two are directly
    comparable (and coincide when the interior is empty).
    """
    qg = build_query_graph(query, model.schema)
    sheaf = model.sheaf
    interior = qg.interior
    pools = [model.entities_of_type(qg.vertex_types[v]) for v in interior]
    n_tuples = 1
    for p in pools:
        n_tuples *= len(p)
    if n_tuples > budget:
        raise BudgetExceededError(
            f"entity chaining needs {n_tuples} interior tuples, budget is {budget}"
        )

    candidates = model.entities_of_type(qg.vertex_types[qg.target_vertex])
    if candidates.size == 0:
        raise QueryError("no entities of the target's type exist")
    xc = np.stack([model.sections.blocks[int(c)] for c in candidates])

    anchor_of = dict(zip(qg.anchor_vertices, (int(a) for a in query.anchors)))
    _anchor_blocks(model, qg, query.anchors)  # validates anchor types
    target = qg.target_vertex

    def head_term(e_idx, vec):
        out = sheaf.head_maps[qg.edges[e_idx][1]] @ vec
        if sheaf.translational:
            out = out + sheaf.translations[qg.edges[e_idx][1]]
        return out

    best = np.full(len(candidates), np.inf)
    for assignment in product(*(range(len(p)) for p in pools)):
        entity_at = dict(anchor_of)
        for v, choice, pool in zip(interior, assignment, pools):
            entity_at[v] = int(pool[choice])
        fixed = 0.0
        target_vec = np.zeros(len(candidates))
        for e_idx, (u, r, v) in enumerate(qg.edges):
            if u != target and v != target:
                h_blk = model.sections.blocks[entity_at[u]]
                t_blk = model.sections.blocks[entity_at[v]]
                diff = head_term(e_idx, h_blk) - sheaf.tail_maps[r] @ t_blk
                fixed += float(np.sum(diff * diff))
            elif v == target:  # u -> target
                a = head_term(e_idx, model.sections.blocks[entity_at[u]])
                proj = np.einsum("ij,cjm->cim", sheaf.tail_maps[r], xc)
                diff = a[None, :, :] - proj
                target_vec += np.einsum("cim,cim->c", diff, diff)
            else:  # target -> v
                t_blk = sheaf.tail_maps[r] @ model.sections.blocks[entity_at[v]]
                proj = np.einsum("ij,cjm->cim", sheaf.head_maps[r], xc)
                if sheaf.translational:
                    proj = proj + sheaf.translations[r][None, :, :]
                diff = proj - t_blk[None, :, :]
                target_vec += np.einsum("cim,cim->c", diff, diff)
        best = np.minimum(best, fixed + target_vec)

    if sheaf.translational:
        graph, offsets = query_sheaf(qg, sheaf)
        lap = assemble_laplacian(graph)
        best = best - affine_offset(lap, graph, offsets, list(qg.boundary))
    return ranking_from_scores(candidates.astype(np.int64), best)


def read_queries(path, entity_index: dict[str, int], schema) -> list[Query]:
    """Parse a TAB-separated query file.

    Line format: structure tag, comma-separated anchor entity names,
    comma-separated relation names, comma-separated answer entity names
    (possibly empty).
    """
    queries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise QueryError(f"{path}:{lineno}: expected 4 tab-separated fields")
            tag, anchor_s, rel_s, answer_s = parts

            def resolve_entity(name):
                if name not in entity_index:
                    raise QueryError(f"{path}:{lineno}: unknown entity {name!r}")
                return entity_index[name]

            anchors = tuple(resolve_entity(n) for n in anchor_s.split(",") if n)
            relations = tuple(schema.relation_index(n) for n in rel_s.split(",") if n)
            answers = frozenset(resolve_entity(n) for n in answer_s.split(",") if n)
            queries.append(Query(tag, anchors, relations, answers))
    return queries


def write_queries(queries, path, entity_names, relation_names) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(
                "\t".join(
                    (
                        q.structure,
                        ",".join(entity_names[a] for a in q.anchors),
                        ",".join(relation_names[r] for r in q.relations),
                        ",".join(entity_names[a] for a in sorted(q.answers)),
                    )
                )
                + "\n"
            )
