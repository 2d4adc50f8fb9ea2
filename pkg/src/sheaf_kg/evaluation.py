"""Filtered ranking metrics and test-query construction.

Each query contributes one rank per true answer, filtered against the
query's other true answers. Metrics (MRR, Hits@K) are reported as fractions
in [0, 1]; multi-seed aggregation uses the population standard deviation.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, QueryError
from .kgdata import TEST, TRAIN, KnowledgeGraph, TripleIndex, build_index
from .model import Model
from .query import (
    STRUCTURE_ARITY,
    Query,
    Ranking,
    answer_query,
    entity_chaining_exact,
    naive_traversal_score,
)

logger = logging.getLogger(__name__)

METHODS = ("harmonic", "naive", "chaining")


def filtered_rank(ranking: Ranking, answer: int, other_answers=frozenset()) -> int:
    """1-based rank of ``answer`` ignoring the other true answers.

    Candidates count as ahead when their (value, entity index) pair sorts
    strictly before the answer's, matching the ranking's own tie-break.
    """
    pos = ranking.position(answer)  # raises if absent
    ahead = pos - sum(
        1 for a in other_answers if a != answer and a in ranking and ranking.position(a) < pos
    )
    return ahead + 1


def mrr(ranks) -> float:
    """Mean reciprocal rank."""
    ranks = list(ranks)
    if not ranks:
        raise EvaluationError("MRR of an empty rank list")
    return float(np.mean([1.0 / r for r in ranks]))


def hits_at_k(ranks, k: int) -> float:
    """Fraction of ranks at or below ``k``."""
    if k < 1:
        raise EvaluationError("k must be >= 1")
    ranks = list(ranks)
    if not ranks:
        raise EvaluationError("Hits@K of an empty rank list")
    return float(np.mean([1.0 if r <= k else 0.0 for r in ranks]))


@dataclass(frozen=True)
class StructureMetrics:
    mrr: float
    hits1: float
    hits10: float
    n_ranks: int
    n_queries: int


@dataclass(frozen=True)
class MetricReport:
    per_structure: dict[str, StructureMetrics]

    def structures(self):
        return sorted(self.per_structure)


def _traverse_answers(index: TripleIndex, structure: str, anchors, relations) -> set[int]:
    """All entities satisfying the query template against the indexed triples."""
    a = anchors
    r = relations
    if structure == "1p":
        return set(index.tails(a[0], r[0]))
    if structure == "2p":
        return {t for u in index.tails(a[0], r[0]) for t in index.tails(u, r[1])}
    if structure == "3p":
        return {
            t
            for u in index.tails(a[0], r[0])
            for v in index.tails(u, r[1])
            for t in index.tails(v, r[2])
        }
    if structure == "2i":
        return set(index.tails(a[0], r[0])) & set(index.tails(a[1], r[1]))
    if structure == "3i":
        return (
            set(index.tails(a[0], r[0]))
            & set(index.tails(a[1], r[1]))
            & set(index.tails(a[2], r[2]))
        )
    if structure == "ip":
        mid = set(index.tails(a[0], r[0])) & set(index.tails(a[1], r[1]))
        return {t for u in mid for t in index.tails(u, r[2])}
    if structure == "pi":
        via_path = {t for u in index.tails(a[0], r[0]) for t in index.tails(u, r[1])}
        return via_path & set(index.tails(a[1], r[2]))
    raise QueryError(f"unknown structure {structure!r}")


def build_easy_queries(
    kg: KnowledgeGraph,
    index: TripleIndex,
    structure: str,
    count: int,
    rng: np.random.Generator,
) -> list[Query]:
    """Sample queries whose constituent triples are known to the model.

    Constituent triples are drawn from the train and test splits; every
    entity and relation a query mentions must occur in at least one training
    triple, and a 1p query's single triple must itself be a test triple.
    ``index`` must cover the full graph; it supplies the answer sets. Fewer
    than ``count`` queries may be returned (with a warning) when the graph
    cannot support the structure.
    """
    if structure not in STRUCTURE_ARITY:
        raise QueryError(f"unknown structure {structure!r}")
    train = kg.triples_of(TRAIN)
    if len(train) == 0:
        raise EvaluationError("easy-query construction needs a nonempty training split")
    train_entities = set(train[:, 0]) | set(train[:, 2])
    train_relations = set(train[:, 1])
    pool = np.concatenate([train, kg.triples_of(TEST)], axis=0)
    pool_index = build_index(kg, splits=(TRAIN, TEST))
    test_triples = kg.triples_of(TEST)

    def known(*entities, relations=()):
        return all(e in train_entities for e in entities) and all(
            r in train_relations for r in relations
        )

    def sample_edge_from(h, r):
        tails = sorted(pool_index.tails(h, r))
        return tails[rng.integers(0, len(tails))] if tails else None

    queries: dict[tuple, Query] = {}
    attempts = 0
    max_attempts = max(200, 60 * count)
    while len(queries) < count and attempts < max_attempts:
        attempts += 1
        if structure == "1p":
            if len(test_triples) == 0:
                break
            h, r, t = (int(x) for x in test_triples[rng.integers(0, len(test_triples))])
            anchors, relations = (h,), (r,)
            if not known(h, t, relations=(r,)):
                continue
        else:
            h, r, t = (int(x) for x in pool[rng.integers(0, len(pool))])
            if structure in ("2p", "3p"):
                chain = [(h, r, t)]
                ok = True
                for _ in range(int(structure[0]) - 1):
                    r2 = int(rng.integers(0, kg.schema.n_relations))
                    nxt = sample_edge_from(chain[-1][2], r2)
                    if nxt is None:
                        ok = False
                        break
                    chain.append((chain[-1][2], r2, int(nxt)))
                if not ok:
                    continue
                anchors = (chain[0][0],)
                relations = tuple(e[1] for e in chain)
                mentioned = [v for e in chain for v in (e[0], e[2])]
            elif structure in ("2i", "3i"):
                n_branches = int(structure[0])
                branches = [(h, r)]
                for _ in range(n_branches - 1):
                    r2 = int(rng.integers(0, kg.schema.n_relations))
                    hs = sorted(pool_index.heads(t, r2))
                    if not hs:
                        branches = None
                        break
                    branches.append((int(hs[rng.integers(0, len(hs))]), r2))
                if branches is None or len({(a, b) for a, b in branches}) < n_branches:
                    continue
                anchors = tuple(b[0] for b in branches)
                relations = tuple(b[1] for b in branches)
                mentioned = list(anchors) + [t]
            elif structure == "ip":
                # two edges into an intersection vertex, one edge out of it
                u = t
                r2 = int(rng.integers(0, kg.schema.n_relations))
                hs = sorted(pool_index.heads(u, r2))
                if not hs:
                    continue
                a2 = int(hs[rng.integers(0, len(hs))])
                if (a2, r2) == (h, r):
                    continue
                r3 = int(rng.integers(0, kg.schema.n_relations))
                t_final = sample_edge_from(u, r3)
                if t_final is None:
                    continue
                anchors, relations = (h, a2), (r, r2, r3)
                mentioned = [h, a2, u, int(t_final)]
            elif structure == "pi":
                # a0 -r0-> u -r1-> t and a1 -r2-> t
                u = t
                r2 = int(rng.integers(0, kg.schema.n_relations))
                t_final = sample_edge_from(u, r2)
                if t_final is None:
                    continue
                r3 = int(rng.integers(0, kg.schema.n_relations))
                hs = sorted(pool_index.heads(int(t_final), r3))
                if not hs:
                    continue
                a2 = int(hs[rng.integers(0, len(hs))])
                anchors, relations = (h, a2), (r, r2, r3)
                mentioned = [h, u, int(t_final), a2]
            if not known(*mentioned, relations=relations):
                continue
        key = (structure, anchors, relations)
        if key in queries:
            continue
        answers = _traverse_answers(index, structure, anchors, relations)
        if not answers:
            continue
        queries[key] = Query(structure, anchors, relations, frozenset(int(x) for x in answers))
    result = list(queries.values())
    if len(result) < count:
        logger.warning(
            "built %d/%d easy %s queries (graph too sparse for more)",
            len(result), count, structure,
        )
    return result


def _rank_query(model: Model, query: Query, method: str) -> Ranking:
    if method == "harmonic":
        return answer_query(query, model)
    if method == "naive":
        return naive_traversal_score(query, model)
    if method == "chaining":
        return entity_chaining_exact(query, model)
    raise EvaluationError(f"unknown evaluation method {method!r}; valid: {METHODS}")


def evaluate(
    model: Model,
    queries,
    method: str = "harmonic",
    threads: int = 1,
) -> MetricReport:
    """Rank every query, filter each answer, and aggregate per structure.

    ``threads > 1`` evaluates disjoint queries concurrently; the reduction
    into the report is ordered, so results do not depend on thread count.
    """
    queries = list(queries)
    if not queries:
        raise EvaluationError("no queries to evaluate")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rankings = list(pool.map(lambda q: _rank_query(model, q, method), queries))
    else:
        rankings = [_rank_query(model, q, method) for q in queries]

    ranks_by_structure: dict[str, list[int]] = {}
    count_by_structure: dict[str, int] = {}
    for q, ranking in zip(queries, rankings):
        count_by_structure[q.structure] = count_by_structure.get(q.structure, 0) + 1
        bucket = ranks_by_structure.setdefault(q.structure, [])
        for answer in sorted(q.answers):
            bucket.append(filtered_rank(ranking, answer, q.answers))
    per_structure = {
        tag: StructureMetrics(
            mrr=mrr(ranks),
            hits1=hits_at_k(ranks, 1),
            hits10=hits_at_k(ranks, 10),
            n_ranks=len(ranks),
            n_queries=count_by_structure[tag],
        )
        for tag, ranks in ranks_by_structure.items()
    }
    return MetricReport(per_structure=per_structure)


def aggregate_reports(reports) -> dict[str, dict[str, tuple[float, float]]]:
    """Per-structure mean and population std of each metric across seeds."""
    reports = list(reports)
    if not reports:
        raise EvaluationError("no reports to aggregate")
    tags = sorted({tag for rep in reports for tag in rep.per_structure})
    out: dict[str, dict[str, tuple[float, float]]] = {}
    for tag in tags:
        metrics = {}
        for name in ("mrr", "hits1", "hits10"):
            vals = [
                getattr(rep.per_structure[tag], name)
                for rep in reports
                if tag in rep.per_structure
            ]
            metrics[name] = (float(np.mean(vals)), float(np.std(vals)))
        out[tag] = metrics
    return out


def write_report(aggregated, path, counts=None) -> None:
    """Flat machine-readable report: structure, metric, mean, std per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for tag in sorted(aggregated):
            for name, (mean, std) in sorted(aggregated[tag].items()):
                fh.write(f"{tag}\t{name}\t{mean!r}\t{std!r}\n")
            if counts and tag in counts:
                fh.write(f"{tag}\tn_queries\t{counts[tag]!r}\t0.0\n")


def format_report_table(aggregated) -> str:
    """Aligned percentage table for stdout."""
    lines = [f"{'structure':<10} {'MRR%':>8} {'H@1%':>8} {'H@10%':>8} {'±MRR%':>8}"]
    for tag in sorted(aggregated):
        m = aggregated[tag]
        lines.append(
            f"{tag:<10} {100 * m['mrr'][0]:>8.2f} {100 * m['hits1'][0]:>8.2f} "
            f"{100 * m['hits10'][0]:>8.2f} {100 * m['mrr'][1]:>8.2f}"
        )
    return "\n".join(lines)
