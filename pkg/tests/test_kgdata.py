import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sheaf_kg.errors import SchemaError, TripleParseError, ValidationError
from sheaf_kg.kgdata import (
    KnowledgeGraph,
    Schema,
    VocabBuilder,
    assemble_kg,
    build_index,
    default_schema,
    load_dataset,
    load_triples,
    read_type_labels,
    scan_relation_names,
    write_triples,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadTriples:
    def test_minimal_file(self, tmp_path):
        path = write(tmp_path / "t.tsv", "a\tlikes\tb\n")
        schema = default_schema(1, 4, 4, relation_names=("likes",))
        vocab = VocabBuilder()
        triples = load_triples(path, schema, "train", vocab)
        assert triples == [(0, 0, 1)]
        assert vocab.names == ["a", "b"]

    def test_empty_file(self, tmp_path):
        path = write(tmp_path / "t.tsv", "")
        schema = default_schema(1, 4, 4)
        vocab = VocabBuilder()
        assert load_triples(path, schema, "train", vocab) == []
        assert len(vocab) == 0

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = write(tmp_path / "t.tsv", "a\tlikes\n")
        schema = default_schema(1, 4, 4, relation_names=("likes",))
        with pytest.raises(TripleParseError) as err:
            load_triples(path, schema, "train", VocabBuilder())
        assert err.value.line_number == 1

    def test_unknown_relation_is_schema_error(self, tmp_path):
        path = write(tmp_path / "t.tsv", "a\thates\tb\n")
        schema = default_schema(1, 4, 4, relation_names=("likes",))
        with pytest.raises(SchemaError):
            load_triples(path, schema, "train", VocabBuilder())

    def test_type_inconsistent_triple_is_identified(self, tmp_path):
        schema = Schema(
            entity_types=("person", "city"),
            relation_types=("lives_in",),
            head_type=(0,),
            tail_type=(1,),
            vertex_dim=(4, 3),
            edge_dim=(3,),
        )
        path = write(tmp_path / "t.tsv", "alice\tlives_in\tparis\nparis\tlives_in\talice\n")
        labels = {"alice": "person", "paris": "city"}
        with pytest.raises(ValidationError) as err:
            load_triples(path, schema, "train", VocabBuilder(), labels)
        assert "paris" in str(err.value)

    def test_multi_type_requires_sidecar(self, tmp_path):
        schema = Schema(
            entity_types=("person", "city"),
            relation_types=("lives_in",),
            head_type=(0,),
            tail_type=(1,),
            vertex_dim=(4, 3),
            edge_dim=(3,),
        )
        path = write(tmp_path / "t.tsv", "alice\tlives_in\tparis\n")
        with pytest.raises(ValidationError):
            load_triples(path, schema, "train", VocabBuilder(), None)

    def test_type_label_file(self, tmp_path):
        path = write(tmp_path / "types.tsv", "alice\tperson\nparis\tcity\n")
        assert read_type_labels(path) == {"alice": "person", "paris": "city"}


class TestDefaultSchema:
    def test_benchmark_style_dims(self):
        schema = default_schema(2, 64, 64)
        assert schema.n_entity_types == 1
        assert schema.n_relations == 2
        assert schema.vertex_dim == (64,)
        assert schema.edge_dim == (64, 64)

    def test_smallest_legal(self):
        schema = default_schema(1, 1, 1)
        assert schema.vertex_dim == (1,) and schema.edge_dim == (1,)

    def test_nell_style_dims(self):
        schema = default_schema(5, 32, 32)
        assert all(d == 32 for d in schema.edge_dim)

    def test_dims_must_be_positive(self):
        with pytest.raises(SchemaError):
            default_schema(1, 0, 4)


class TestTripleIndex:
    def _kg(self, triples, n_entities=3, n_relations=1):
        schema = default_schema(n_relations, 2, 2)
        return KnowledgeGraph(
            schema=schema,
            entities=tuple(f"e{i}" for i in range(n_entities)),
            entity_type=np.zeros(n_entities, dtype=np.int64),
            triples=np.asarray(triples, dtype=np.int64).reshape(len(triples), 3),
            split=np.zeros(len(triples), dtype=np.int8),
        )

    def test_single_triple(self):
        index = build_index(self._kg([(0, 0, 1)]))
        assert index.tails(0, 0) == {1}
        assert index.heads(1, 0) == {0}
        assert (0, 0, 1) in index

    def test_empty(self):
        index = build_index(self._kg([]))
        assert index.tails(0, 0) == frozenset()
        assert (0, 0, 1) not in index

    def test_multiple_tails(self):
        index = build_index(self._kg([(0, 0, 1), (0, 0, 2)]))
        assert index.tails(0, 0) == {1, 2}

    def test_membership_matches_scan_on_large_graph(self, rng):
        n, m = 300, 10_000
        triples = np.stack(
            [rng.integers(0, n, m), rng.integers(0, 4, m), rng.integers(0, n, m)], axis=1
        )
        kg = self._kg(triples.tolist(), n_entities=n, n_relations=4)
        index = build_index(kg)
        scan = {tuple(row) for row in triples.tolist()}
        probes = np.stack(
            [rng.integers(0, n, 2000), rng.integers(0, 4, 2000), rng.integers(0, n, 2000)],
            axis=1,
        )
        for row in probes.tolist():
            assert (tuple(row) in index) == (tuple(row) in scan)

    @given(
        triples=st.lists(
            st.tuples(
                st.integers(0, 5), st.integers(0, 2), st.integers(0, 5)
            ),
            max_size=40,
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_neighbor_queries_match_scan(self, triples):
        triples = list(dict.fromkeys(triples))
        kg = self._kg(triples, n_entities=6, n_relations=3)
        index = build_index(kg)
        for h in range(6):
            for r in range(3):
                assert index.tails(h, r) == {t for hh, rr, t in triples if hh == h and rr == r}


class TestAssembly:
    def test_duplicates_are_dropped_with_warning(self, caplog):
        schema = default_schema(1, 2, 2)
        vocab = VocabBuilder()
        a = vocab.intern("a", 0)
        b = vocab.intern("b", 0)
        with caplog.at_level(logging.WARNING):
            kg = assemble_kg(schema, vocab, {"train": [(a, 0, b), (a, 0, b)], "test": [(a, 0, b)]})
        assert len(kg.triples) == 1
        assert kg.split[0] == 0  # first occurrence (train) wins
        assert any("duplicate" in rec.message for rec in caplog.records)

    def test_round_trip_preserves_index_sets(self, tmp_path, rng):
        schema = default_schema(3, 4, 4)
        n = 40
        rows = {(int(rng.integers(0, 12)), int(rng.integers(0, 3)), int(rng.integers(0, 12)))
                for _ in range(n)}
        vocab = VocabBuilder()
        triples = [(vocab.intern(f"e{h}", 0), r, vocab.intern(f"e{t}", 0)) for h, r, t in rows]
        kg = assemble_kg(schema, vocab, {"train": triples})
        path = tmp_path / "out.tsv"
        write_triples(kg, path, "train")
        reloaded = load_dataset(schema, path)
        assert build_index(reloaded).triple_set == build_index(kg).triple_set == {
            tuple(map(int, row)) for row in kg.triples
        }

    def test_loaded_graphs_are_type_consistent(self, tmp_path, rng):
        lines = []
        for _ in range(60):
            lines.append(f"e{rng.integers(0, 20)}\tr{rng.integers(0, 2)}\te{rng.integers(0, 20)}")
        path = write(tmp_path / "t.tsv", "\n".join(lines) + "\n")
        schema = default_schema(2, 4, 4)
        kg = load_dataset(schema, path)
        kg.validate()  # would raise on any inconsistency

    def test_interning_follows_first_appearance(self, tmp_path):
        path = write(tmp_path / "t.tsv", "z\tr0\ta\na\tr0\tz\nb\tr0\tz\n")
        kg = load_dataset(default_schema(1, 2, 2), path)
        assert kg.entities == ("z", "a", "b")

    def test_scan_relation_names(self, tmp_path):
        p1 = write(tmp_path / "a.tsv", "a\tlikes\tb\nb\thates\ta\n")
        p2 = write(tmp_path / "b.tsv", "a\tknows\tb\na\tlikes\tb\n")
        assert scan_relation_names(p1, p2) == ("likes", "hates", "knows")
