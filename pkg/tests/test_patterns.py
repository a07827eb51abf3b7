import random

import pytest

from lmkg.kg import Term, ingest_ntriples
from lmkg.patterns import (
    QueryPattern,
    Slot,
    UnknownTermError,
    UnsupportedTopologyError,
    VariableReuseError,
    canonical_key,
    canonicalize_pattern,
    count_matches,
    make_chain,
    make_star,
    parse_query_text,
    pattern_from_json,
    pattern_to_json,
    population_size,
)
from oracles import naive_count
from synth import random_kg


class TestParse:
    def test_star_example(self, book_kg):
        qp = parse_query_text("?x <hasAuthor> <StephenKing> . ?x <genre> <Horror> .", book_kg)
        assert qp.topology == "star"
        assert qp.k == 2
        assert qp.nodes[0] == Slot.variable(0)
        assert all(s.is_bound for s in qp.preds)

    def test_chain_example(self, book_kg):
        qp = parse_query_text("?x <hasAuthor> ?y . ?y <bornIn> <USA> .", book_kg)
        assert qp.topology == "chain"
        assert qp.k == 2
        assert qp.nodes[0] == Slot.variable(0)
        assert qp.nodes[1] == Slot.variable(1)
        assert qp.nodes[2].is_bound
        assert qp.nodes[2].bound_id == book_kg.node_id(Term("iri", "USA"))

    def test_disconnected_rejected(self, book_kg):
        with pytest.raises(UnsupportedTopologyError):
            parse_query_text("?a <genre> ?b . ?c <bornIn> ?d .", book_kg)

    def test_unknown_term(self, book_kg):
        with pytest.raises(UnknownTermError):
            parse_query_text("?x <hasAuthor> <Nobody> .", book_kg)

    def test_variable_reuse_rejected(self, book_kg):
        # same object variable in two star branches is non-structural reuse
        with pytest.raises(VariableReuseError):
            parse_query_text("?x <hasAuthor> ?y . ?x <genre> ?y .", book_kg)

    def test_self_loop_rejected(self, book_kg):
        with pytest.raises(VariableReuseError):
            parse_query_text("?x <hasAuthor> ?x .", book_kg)

    def test_single_triple_defaults_to_star(self, book_kg):
        qp = parse_query_text("?x <genre> <Horror> .", book_kg)
        assert qp.topology == "star"
        chain = parse_query_text("?x <genre> <Horror> .", book_kg, topology="chain")
        assert chain.topology == "chain"

    def test_bound_subject_star(self, book_kg):
        qp = parse_query_text("<Book1> <hasAuthor> ?a . <Book1> <genre> ?g .", book_kg)
        assert qp.topology == "star"
        assert qp.nodes[0].is_bound

    def test_trailing_dot_optional(self, book_kg):
        qp = parse_query_text("?x <genre> <Horror>", book_kg)
        assert qp.k == 1


class TestCanonicalize:
    def test_pairs_sorted(self):
        qp = make_star(Slot.variable(0), [(Slot.bound(2), Slot.bound(5)), (Slot.bound(1), Slot.bound(9))])
        canon = canonicalize_pattern(qp)
        assert [(p.bound_id, o.bound_id) for p, o in canon.star_pairs()] == [(1, 9), (2, 5)]

    def test_duplicate_bound_pairs_collapse(self):
        qp = make_star(Slot.variable(0), [(Slot.bound(1), Slot.bound(9)), (Slot.bound(1), Slot.bound(9))])
        canon = canonicalize_pattern(qp)
        assert canon.k == 1

    def test_chain_order_preserved(self):
        qp = make_chain([Slot.variable(0), Slot.variable(1), Slot.bound(7)], [Slot.bound(1), Slot.bound(2)])
        assert canonicalize_pattern(qp) == qp

    def test_vars_order_before_bound(self):
        qp = make_star(Slot.variable(0), [(Slot.bound(1), Slot.bound(2)), (Slot.bound(1), Slot.variable(1))])
        canon = canonicalize_pattern(qp)
        pairs = canon.star_pairs()
        assert pairs[0][1].var is not None
        assert pairs[1][1].bound_id == 2

    def test_idempotent_and_count_preserving(self, four_triple_kg):
        rng = random.Random(3)
        for _ in range(50):
            k = rng.randint(1, 3)
            pairs = []
            next_var = 1
            for _ in range(k):
                p = Slot.bound(rng.randint(1, 2)) if rng.random() < 0.7 else Slot.variable(next_var)
                next_var += 1 if not p.is_bound else 0
                o = Slot.bound(rng.randint(1, 5)) if rng.random() < 0.7 else Slot.variable(next_var)
                next_var += 1 if not o.is_bound else 0
                pairs.append((p, o))
            qp = make_star(Slot.variable(0), pairs)
            canon = canonicalize_pattern(qp)
            assert canonicalize_pattern(canon) == canon
            assert count_matches(four_triple_kg, canon) == count_matches(four_triple_kg, qp)

    def test_permutation_invariant_key(self):
        a = make_star(Slot.variable(0), [(Slot.bound(1), Slot.variable(1)), (Slot.bound(2), Slot.bound(5))])
        b = make_star(Slot.variable(0), [(Slot.bound(2), Slot.bound(5)), (Slot.bound(1), Slot.variable(1))])
        assert canonical_key(canonicalize_pattern(a)) == canonical_key(canonicalize_pattern(b))


class TestCountMatches:
    def test_star_single_pair(self, four_triple_kg):
        qp = make_star(Slot.variable(0), [(Slot.bound(1), Slot.bound(2))])
        assert count_matches(four_triple_kg, qp) == 2

    def test_chain_two_steps(self, four_triple_kg):
        qp = make_chain(
            [Slot.variable(0), Slot.variable(1), Slot.variable(2)],
            [Slot.bound(1), Slot.bound(2)],
        )
        assert count_matches(four_triple_kg, qp) == 2

    def test_fully_bound(self, four_triple_kg):
        hit = make_star(Slot.bound(1), [(Slot.bound(1), Slot.bound(2))])
        assert count_matches(four_triple_kg, hit) == 1
        miss = make_star(Slot.bound(1), [(Slot.bound(2), Slot.bound(2))])
        assert count_matches(four_triple_kg, miss) == 0

    def test_no_match_returns_zero(self, four_triple_kg):
        qp = make_chain([Slot.bound(5), Slot.variable(0)], [Slot.variable(1)])
        assert count_matches(four_triple_kg, qp) == 0


class TestPopulation:
    def test_star_k1_is_triple_count(self, four_triple_kg):
        assert population_size(four_triple_kg, "star", 1) == 4

    def test_star_k2(self, four_triple_kg):
        assert population_size(four_triple_kg, "star", 2) == 1

    def test_chain_k2(self, four_triple_kg):
        assert population_size(four_triple_kg, "chain", 2) == 2

    def test_chain_identity(self, four_triple_kg):
        unbound = make_chain(
            [Slot.variable(0), Slot.variable(1), Slot.variable(2)],
            [Slot.variable(3), Slot.variable(4)],
        )
        assert population_size(four_triple_kg, "chain", 2) == count_matches(four_triple_kg, unbound)


def _random_pattern(rng, kg, topology, k, n_unbound):
    """Random shape with exactly n_unbound variable slots (clamped)."""
    n_slots = 2 * k + 1
    unbound = set(rng.sample(range(n_slots), min(n_unbound, n_slots)))
    slots = []
    for i in range(n_slots):
        if i in unbound:
            slots.append(Slot.variable(i))
        elif i % 2 == 1:
            slots.append(Slot.bound(rng.randint(1, kg.b)))
        else:
            slots.append(Slot.bound(rng.randint(1, kg.d)))
    return QueryPattern(topology, tuple(slots[0::2]), tuple(slots[1::2]))


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(4))
    def test_matches_naive_enumeration(self, seed):
        rng = random.Random(seed)
        kg = random_kg(rng, rng.randint(30, 120), rng.randint(10, 30), 3)
        for _ in range(40):
            topology = rng.choice(["star", "chain"])
            k = rng.randint(1, 3)
            qp = _random_pattern(rng, kg, topology, k, rng.randint(0, 3))
            assert count_matches(kg, qp) == naive_count(kg, qp), (topology, k, qp)

    def test_monotone_under_binding(self):
        rng = random.Random(11)
        kg = random_kg(rng, 80, 20, 3)
        for _ in range(25):
            topology = rng.choice(["star", "chain"])
            k = rng.randint(1, 2)
            qp = _random_pattern(rng, kg, topology, k, rng.randint(1, 3))
            base = count_matches(kg, qp)
            slots = list(qp.slots())
            var_idx = [i for i, s in enumerate(slots) if not s.is_bound]
            i = rng.choice(var_idx)
            domain = kg.b if i % 2 == 1 else kg.d
            slots[i] = Slot.bound(rng.randint(1, domain))
            bound = QueryPattern(topology, tuple(slots[0::2]), tuple(slots[1::2]))
            assert count_matches(kg, bound) <= base

    def test_sum_over_single_var_bindings(self):
        rng = random.Random(5)
        kg = random_kg(rng, 60, 15, 2)
        qp = _random_pattern(rng, kg, "star", 2, 1)
        var_pos = [i for i, s in enumerate(qp.slots()) if not s.is_bound]
        assert len(var_pos) == 1
        i = var_pos[0]
        domain = kg.b if i % 2 == 1 else kg.d
        total = 0
        for x in range(1, domain + 1):
            slots = list(qp.slots())
            slots[i] = Slot.bound(x)
            total += count_matches(kg, QueryPattern(qp.topology, tuple(slots[0::2]), tuple(slots[1::2])))
        assert total == count_matches(kg, qp)


class TestJsonForm:
    def test_round_trip(self, book_kg):
        qp = parse_query_text("?x <hasAuthor> <StephenKing> . ?x <genre> <Horror> .", book_kg)
        canon = canonicalize_pattern(qp)
        obj = pattern_to_json(canon, book_kg)
        assert obj["topology"] == "star"
        assert [s["role"] for s in obj["slots"]] == ["subject", "pred", "object", "pred", "object"]
        back = pattern_from_json(obj, book_kg)
        assert back == canon

    def test_unknown_term_in_json(self, book_kg):
        obj = {
            "topology": "star",
            "k": 1,
            "slots": [
                {"role": "subject", "bound": None},
                {"role": "pred", "bound": "<nope>"},
                {"role": "object", "bound": None},
            ],
        }
        with pytest.raises(UnknownTermError):
            pattern_from_json(obj, book_kg)
