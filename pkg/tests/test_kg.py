import gzip
import random

import pytest

from lmkg.kg import (
    KnowledgeGraph,
    MalformedTripleError,
    Term,
    ingest_ntriples,
    parse_term_text,
)
from synth import random_kg


class TestIngest:
    def test_single_line(self):
        kg = ingest_ntriples("<a> <p> <b> .")
        assert kg.triple_count == 1
        assert kg.d == 2
        assert kg.b == 1

    def test_duplicate_dropped_and_counted(self):
        kg = ingest_ntriples("<a> <p> <b> .\n<a> <p> <b> .")
        assert kg.triple_count == 1
        assert kg.report.duplicates == 1
        assert kg.report.triples_kept == 1

    def test_distinct_literals_stay_distinct(self):
        # verbatim term equality: same value, different datatype -> two terms
        kg = ingest_ntriples('<a> <p> "x"^^<t> .\n<a> <p> "x" .')
        assert kg.triple_count == 2
        assert kg.d == 3
        assert kg.b == 1
        assert Term("literal", '"x"^^<t>') != Term("literal", '"x"')
        assert kg.node_id(Term("literal", '"x"^^<t>')) is not None
        assert kg.node_id(Term("literal", '"x"')) is not None

    def test_language_tag_and_blank_nodes(self):
        kg = ingest_ntriples('_:b1 <p> "hello"@en .')
        assert kg.triple_count == 1
        assert kg.node_id(Term("blank", "b1")) == 1
        assert kg.node_id(Term("literal", '"hello"@en')) == 2

    def test_comments_and_blank_lines(self):
        kg = ingest_ntriples("# header\n\n<a> <p> <b> .  # trailing\n")
        assert kg.triple_count == 1
        assert kg.report.lines_read == 3

    def test_malformed_fail_carries_line_number(self):
        with pytest.raises(MalformedTripleError) as err:
            ingest_ntriples("<a> <p> <b> .\n<a> <p> .\n")
        assert err.value.line_no == 2

    def test_malformed_skip_mode_counts(self):
        kg = ingest_ntriples("<a> <p> <b> .\nth is junk\n<a> <p> <c> .\n", on_error="skip_and_count")
        assert kg.triple_count == 2
        assert kg.report.malformed == 1

    def test_literal_subject_rejected(self):
        with pytest.raises(MalformedTripleError):
            ingest_ntriples('"s" <p> <b> .')

    def test_non_utf8_rejected(self):
        with pytest.raises(ValueError, match="UTF-8"):
            ingest_ntriples(b"<a> <p> <\xff\xfe> .")

    def test_gzip_detected_by_magic(self):
        data = gzip.compress(b"<a> <p> <b> .\n")
        kg = ingest_ntriples(data)
        assert kg.triple_count == 1

    def test_deterministic_id_assignment(self):
        text = "<a> <p> <b> .\n<c> <q> <a> .\n"
        kg1 = ingest_ntriples(text)
        kg2 = ingest_ntriples(text)
        for i in range(1, kg1.d + 1):
            assert kg1.node_term(i) == kg2.node_term(i)

    def test_first_appearance_order(self):
        kg = ingest_ntriples("<a> <p> <b> .")
        assert kg.node_id(Term("iri", "a")) == 1
        assert kg.node_id(Term("iri", "b")) == 2


class TestDictionary:
    def test_round_trip(self):
        kg = ingest_ntriples("<a> <p> <b> .")
        assert kg.node_term(1) == Term("iri", "a")
        assert kg.node_term(kg.node_id(Term("iri", "b"))) == Term("iri", "b")
        assert kg.pred_term(kg.pred_id(Term("iri", "p"))) == Term("iri", "p")

    def test_unknown_term_is_none(self):
        kg = ingest_ntriples("<a> <p> <b> .")
        assert kg.node_id(Term("iri", "zzz")) is None
        assert kg.pred_id(Term("iri", "zzz")) is None

    def test_out_of_range_id_raises(self):
        kg = ingest_ntriples("<a> <p> <b> .")
        with pytest.raises(ValueError):
            kg.node_term(3)
        with pytest.raises(ValueError):
            kg.pred_term(0)

    def test_parse_term_text_round_trip(self):
        for term in (Term("iri", "x/y#z"), Term("literal", '"v"^^<t>'), Term("blank", "n7")):
            assert parse_term_text(term.render()) == term


class TestStats:
    def test_empty(self):
        kg = ingest_ntriples("")
        assert kg.stats() == (0, 0, 0, 0, 0)

    def test_single(self):
        kg = ingest_ntriples("<a> <p> <b> .")
        assert kg.stats() == (1, 2, 1, 1, 1)

    def test_three_triples(self):
        # {(a,p,b),(a,p,c),(d,q,b)}: 4 nodes, 2 preds, a emits 2, b receives 2
        kg = ingest_ntriples("<a> <p> <b> .\n<a> <p> <c> .\n<d> <q> <b> .\n")
        assert kg.stats() == (3, 4, 2, 2, 2)


class TestInvariants:
    def test_term_round_trip_per_triple(self):
        text = '<a> <p> "lit"@en .\n_:x <p> <a> .\n'
        kg = ingest_ntriples(text)
        rendered = set()
        for s, p, o in kg.iter_triples():
            rendered.add((kg.node_term(s).render(), kg.pred_term(p).render(), kg.node_term(o).render()))
        assert ('<a>', '<p>', '"lit"@en') in rendered
        assert ('_:x', '<p>', '<a>') in rendered

    @pytest.mark.parametrize("seed", range(5))
    def test_index_entry_counts(self, seed):
        kg = random_kg(random.Random(seed), 300, 80, 6)
        assert sum(len(kg.out(s)) for s in kg.subjects()) == kg.triple_count
        objects = {o for _, _, o in kg.iter_triples()}
        assert sum(len(kg.inn(o)) for o in objects) == kg.triple_count

    @pytest.mark.parametrize("seed", range(3))
    def test_reingest_serialization_isomorphic(self, seed):
        kg = random_kg(random.Random(seed), 120, 40, 4)
        kg2 = ingest_ntriples(kg.to_ntriples())
        as_terms = lambda g: {
            (g.node_term(s), g.pred_term(p), g.node_term(o)) for s, p, o in g.iter_triples()
        }
        assert as_terms(kg) == as_terms(kg2)

    def test_snapshot_round_trip(self, tmp_path):
        kg = random_kg(random.Random(7), 200, 50, 5)
        path = tmp_path / "kg.bin"
        size = kg.save(path)
        assert size == path.stat().st_size
        kg2 = KnowledgeGraph.load(path)
        assert set(kg.iter_triples()) == set(kg2.iter_triples())
        assert all(kg.node_term(i) == kg2.node_term(i) for i in range(1, kg.d + 1))

    def test_snapshot_corruption_detected(self, tmp_path):
        from lmkg.serialize import ContainerError

        kg = ingest_ntriples("<a> <p> <b> .")
        path = tmp_path / "kg.bin"
        kg.save(path)
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ContainerError):
            KnowledgeGraph.load(path)
