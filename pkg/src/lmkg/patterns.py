"""Star and chain basic graph patterns: parsing, canonical form, and exact
cardinality counting over a KnowledgeGraph.

Counting uses homomorphism semantics: a match is an assignment of every
variable slot to a graph id such that each instantiated triple exists.
Distinct variables may bind the same id and a single KG triple may witness
several pattern triples.

Both topologies share one slot layout: ``nodes`` holds k+1 node slots and
``preds`` k predicate slots. Triple i is (nodes[0], preds[i], nodes[i+1])
for a star and (nodes[i], preds[i], nodes[i+1]) for a chain, so the
interleaved sequence n0, p0, n1, p1, ..., p(k-1), nk enumerates all 2k+1
slots in canonical order for either topology.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .kg import KnowledgeGraph, Term, parse_term_text

UINT64_MAX = 2**64 - 1

TOPOLOGIES = ("star", "chain")


class PatternError(ValueError):
    pass


class UnknownTermError(PatternError):
    """A bound term that does not resolve in the graph dictionaries.

    Such a query necessarily has cardinality 0; callers may catch this and
    report 0 instead of failing.
    """

    def __init__(self, term: Term):
        super().__init__(f"unknown term {term.render()}")
        self.term = term


class UnsupportedTopologyError(PatternError):
    pass


class VariableReuseError(PatternError):
    pass


@dataclass(frozen=True, slots=True)
class Slot:
    """Either a bound id (>= 1) or a positional variable."""

    bound_id: int | None = None
    var: int | None = None

    def __post_init__(self):
        if (self.bound_id is None) == (self.var is None):
            raise ValueError("slot must be exactly one of bound or variable")
        if self.bound_id is not None and self.bound_id < 1:
            raise ValueError(f"bound id must be >= 1, got {self.bound_id}")
        if self.var is not None and self.var < 0:
            raise ValueError(f"variable position must be >= 0, got {self.var}")

    @staticmethod
    def bound(i: int) -> "Slot":
        return Slot(bound_id=i)

    @staticmethod
    def variable(pos: int) -> "Slot":
        return Slot(var=pos)

    @property
    def is_bound(self) -> bool:
        return self.bound_id is not None

    def sort_key(self):
        # variables order before bound ids
        if self.var is not None:
            return (0, self.var)
        return (1, self.bound_id)


@dataclass(frozen=True)
class QueryPattern:
    topology: str
    nodes: tuple[Slot, ...]
    preds: tuple[Slot, ...]

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        if len(self.preds) < 1:
            raise ValueError("pattern needs at least one triple")
        if len(self.nodes) != len(self.preds) + 1:
            raise ValueError("node count must be k + 1")
        positions = [s.var for s in self.slots() if s.var is not None]
        if len(positions) != len(set(positions)):
            raise ValueError("variable positions must be distinct")

    @property
    def k(self) -> int:
        return len(self.preds)

    def slots(self) -> tuple[Slot, ...]:
        """All 2k+1 slots in interleaved canonical order."""
        out = [self.nodes[0]]
        for i in range(self.k):
            out.append(self.preds[i])
            out.append(self.nodes[i + 1])
        return tuple(out)

    def triples(self) -> list[tuple[Slot, Slot, Slot]]:
        subj = lambda i: self.nodes[0] if self.topology == "star" else self.nodes[i]
        return [(subj(i), self.preds[i], self.nodes[i + 1]) for i in range(self.k)]

    def star_pairs(self) -> list[tuple[Slot, Slot]]:
        if self.topology != "star":
            raise ValueError("not a star pattern")
        return list(zip(self.preds, self.nodes[1:]))

    @property
    def is_bound(self) -> bool:
        return all(s.is_bound for s in self.slots())

    def var_count(self) -> int:
        return sum(1 for s in self.slots() if not s.is_bound)


def make_star(subject: Slot, pairs) -> QueryPattern:
    pairs = list(pairs)
    return QueryPattern("star", (subject, *[o for _, o in pairs]), tuple(p for p, _ in pairs))


def make_chain(nodes, preds) -> QueryPattern:
    return QueryPattern("chain", tuple(nodes), tuple(preds))


# -- parsing ----------------------------------------------------------------


def _tokenize_query(text: str):
    """Yield ('var', name) / ('term', Term) / ('dot', None) tokens."""
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c in " \t\r\n":
            i += 1
            continue
        if c == ".":
            yield ("dot", None)
            i += 1
            continue
        if c == "?":
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            if j == i + 1:
                raise PatternError("empty variable name")
            yield ("var", text[i + 1 : j])
            i = j
            continue
        if c == "<":
            j = text.find(">", i + 1)
            if j < 0:
                raise PatternError("unterminated IRI")
            yield ("term", Term("iri", text[i + 1 : j]))
            i = j + 1
            continue
        if c == '"':
            j = i + 1
            while j < n:
                if text[j] == "\\":
                    j += 2
                    continue
                if text[j] == '"':
                    break
                j += 1
            if j >= n:
                raise PatternError("unterminated literal")
            j += 1
            if text.startswith("^^<", j):
                k = text.find(">", j + 3)
                if k < 0:
                    raise PatternError("unterminated datatype IRI")
                j = k + 1
            elif text.startswith("@", j):
                k = j + 1
                while k < n and (text[k].isalnum() or text[k] == "-"):
                    k += 1
                j = k
            yield ("term", Term("literal", text[i:j]))
            i = j
            continue
        if text.startswith("_:", i):
            j = i + 2
            while j < n and (text[j].isalnum() or text[j] in "_-."):
                j += 1
            yield ("term", Term("blank", text[i + 2 : j]))
            i = j
            continue
        raise PatternError(f"unexpected character {c!r} in query text")


def _statements(text: str):
    """Group tokens into (s, p, o) token triples."""
    stmts, current = [], []
    for tok in _tokenize_query(text):
        if tok[0] == "dot":
            if len(current) != 3:
                raise PatternError(f"statement has {len(current)} terms, expected 3")
            stmts.append(tuple(current))
            current = []
        else:
            current.append(tok)
    if current:
        if len(current) != 3:
            raise PatternError(f"statement has {len(current)} terms, expected 3")
        stmts.append(tuple(current))
    if not stmts:
        raise PatternError("empty query")
    return stmts


def parse_query_text(text: str, kg: KnowledgeGraph, topology: str | None = None) -> QueryPattern:
    """Parse the textual pattern grammar against a graph's dictionaries.

    Statements are `.`-separated triples of `?name`, `<IRI>`, or literal
    tokens. The triple set must form one star (shared subject) or one chain
    (each object is the next statement's subject). A single statement
    defaults to star unless ``topology`` says otherwise.
    """
    stmts = _statements(text)
    k = len(stmts)

    is_star = all(s[0] == stmts[0][0] for s in stmts)
    is_chain = all(stmts[i][2] == stmts[i + 1][0] for i in range(k - 1))
    if topology is None:
        if is_star:
            shape = "star"
        elif is_chain:
            shape = "chain"
        else:
            raise UnsupportedTopologyError("triples form neither a star nor a chain")
    else:
        if topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {topology!r}")
        if topology == "star" and not is_star:
            raise UnsupportedTopologyError("triples do not share one subject")
        if topology == "chain" and not is_chain:
            raise UnsupportedTopologyError("objects do not chain into subjects")
        shape = topology

    # Collapse structurally shared positions into the unified slot lists:
    # the shared star subject and each chain link occupy a single slot.
    node_tokens = [stmts[0][0]] + [s[2] for s in stmts]
    pred_tokens = [s[1] for s in stmts]

    # Any variable may occupy exactly one unified slot.
    seen: dict[str, tuple[str, int]] = {}
    for kind, idx_list in (("node", node_tokens), ("pred", pred_tokens)):
        for i, tok in enumerate(idx_list):
            if tok[0] != "var":
                continue
            key = tok[1]
            here = (kind, i)
            if key in seen and seen[key] != here:
                raise VariableReuseError(f"variable ?{key} reused outside structural sharing")
            seen[key] = here

    # Variable numbering follows first appearance in the original text.
    var_order: dict[str, int] = {}
    for s_tok, p_tok, o_tok in stmts:
        for tok in (s_tok, p_tok, o_tok):
            if tok[0] == "var" and tok[1] not in var_order:
                var_order[tok[1]] = len(var_order)

    def resolve(tok, space: str) -> Slot:
        if tok[0] == "var":
            return Slot.variable(var_order[tok[1]])
        term = tok[1]
        tid = kg.node_id(term) if space == "node" else kg.pred_id(term)
        if tid is None:
            raise UnknownTermError(term)
        return Slot.bound(tid)

    nodes = tuple(resolve(t, "node") for t in node_tokens)
    preds = tuple(resolve(t, "pred") for t in pred_tokens)
    return QueryPattern(shape, nodes, preds)


# -- canonical form ----------------------------------------------------------


def _renumber_vars(qp: QueryPattern) -> QueryPattern:
    mapping: dict[int, int] = {}
    for s in qp.slots():
        if s.var is not None and s.var not in mapping:
            mapping[s.var] = len(mapping)

    def remap(s: Slot) -> Slot:
        return s if s.is_bound else Slot.variable(mapping[s.var])

    return QueryPattern(qp.topology, tuple(remap(s) for s in qp.nodes), tuple(remap(s) for s in qp.preds))


def canonicalize_pattern(qp: QueryPattern) -> QueryPattern:
    """Fixed slot ordering used by encoders, training data, and buffer keys.

    Star: duplicate fully-bound (pred, obj) pairs collapse to one, then
    pairs sort ascending with variables before bound ids. Chain order is
    already canonical. Variable positions are renumbered by first
    appearance in the resulting slot order, which makes the form a fixed
    point and independent of input pair order.
    """
    if qp.topology == "chain":
        return _renumber_vars(qp)
    pairs = qp.star_pairs()
    deduped: list[tuple[Slot, Slot]] = []
    seen_bound: set[tuple[int, int]] = set()
    for p, o in pairs:
        if p.is_bound and o.is_bound:
            key = (p.bound_id, o.bound_id)
            if key in seen_bound:
                continue
            seen_bound.add(key)
        deduped.append((p, o))
    deduped.sort(key=lambda po: (po[0].sort_key(), po[1].sort_key()))
    return _renumber_vars(make_star(qp.nodes[0], deduped))


# -- exact counting ----------------------------------------------------------


def _star_count(kg: KnowledgeGraph, qp: QueryPattern) -> int:
    subj = qp.nodes[0]
    pairs = qp.star_pairs()
    candidates = (subj.bound_id,) if subj.is_bound else kg.subjects()
    total = 0
    for s in candidates:
        out = kg.out(s)
        if not out:
            continue
        acc = 1
        for p_slot, o_slot in pairs:
            if p_slot.is_bound and o_slot.is_bound:
                c = 1 if (s, p_slot.bound_id, o_slot.bound_id) in kg else 0
            elif p_slot.is_bound:
                c = len(kg.out_with_pred(s, p_slot.bound_id))
            elif o_slot.is_bound:
                c = kg.pred_count_between(s, o_slot.bound_id)
            else:
                c = len(out)
            acc *= c
            if acc == 0:
                break
        total += acc
    return total


def _chain_count(kg: KnowledgeGraph, qp: QueryPattern) -> int:
    first = qp.nodes[0]
    if first.is_bound:
        frontier = {first.bound_id: 1}
    else:
        frontier = {s: 1 for s in kg.subjects()}
    for i in range(qp.k):
        p_slot = qp.preds[i]
        o_slot = qp.nodes[i + 1]
        nxt: dict[int, int] = {}
        for x, w in frontier.items():
            edges = kg.out_with_pred(x, p_slot.bound_id) if p_slot.is_bound else kg.out(x)
            if o_slot.is_bound:
                target = o_slot.bound_id
                hits = sum(1 for _, y in edges if y == target)
                if hits:
                    nxt[target] = nxt.get(target, 0) + w * hits
            else:
                for _, y in edges:
                    nxt[y] = nxt.get(y, 0) + w
        if not nxt:
            return 0
        frontier = nxt
    return sum(frontier.values())


def count_matches(kg: KnowledgeGraph, qp: QueryPattern) -> int:
    """Exact number of variable assignments embedding qp in kg."""
    if qp.topology == "star":
        return _star_count(kg, qp)
    return _chain_count(kg, qp)


def chain_walk_counts(kg: KnowledgeGraph, k: int) -> list[list[int]]:
    """walks[j][x] = number of j-edge walks starting at node x (index 0 unused)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    size = kg.d + 1
    tables = [[1] * size]
    tables[0][0] = 0
    for _ in range(k):
        prev = tables[-1]
        cur = [0] * size
        for s in kg.subjects():
            cur[s] = sum(prev[y] for _, y in kg.out(s))
        tables.append(cur)
    return tables


def population_size(kg: KnowledgeGraph, topology: str, k: int) -> int:
    """Number of canonical bound instances of the shape.

    Star instances are a subject plus k distinct sorted (pred, obj) pairs;
    chain instances are k-edge walks. Exact integer arithmetic; values
    beyond 64-bit unsigned raise OverflowError.
    """
    if topology not in TOPOLOGIES:
        raise ValueError(f"unknown topology {topology!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    if topology == "star":
        total = sum(math.comb(kg.out_degree(s), k) for s in kg.subjects())
    else:
        total = sum(chain_walk_counts(kg, k)[k][1:])
    if total > UINT64_MAX:
        raise OverflowError(f"population size {total} exceeds 64-bit unsigned range")
    return total


# -- JSON wire form ----------------------------------------------------------


def _slot_roles(k: int) -> list[str]:
    roles = ["subject"]
    for _ in range(k):
        roles.extend(["pred", "object"])
    return roles


def pattern_to_json(qp: QueryPattern, kg: KnowledgeGraph) -> dict:
    """Render slots in canonical order with bound ids resolved to term text."""
    slots = []
    for role, slot in zip(_slot_roles(qp.k), qp.slots()):
        if slot.is_bound:
            term = kg.pred_term(slot.bound_id) if role == "pred" else kg.node_term(slot.bound_id)
            slots.append({"role": role, "bound": term.render()})
        else:
            slots.append({"role": role, "bound": None})
    return {"topology": qp.topology, "k": qp.k, "slots": slots}


def pattern_from_json(obj: dict, kg: KnowledgeGraph) -> QueryPattern:
    topology = obj["topology"]
    k = int(obj["k"])
    slots_json = obj["slots"]
    if len(slots_json) != 2 * k + 1:
        raise PatternError(f"expected {2 * k + 1} slots, got {len(slots_json)}")
    roles = _slot_roles(k)
    slots: list[Slot] = []
    next_var = 0
    for role, sj in zip(roles, slots_json):
        if sj.get("role") != role:
            raise PatternError(f"slot role {sj.get('role')!r}, expected {role!r}")
        bound = sj.get("bound")
        if bound is None:
            slots.append(Slot.variable(next_var))
            next_var += 1
        else:
            term = parse_term_text(bound)
            tid = kg.pred_id(term) if role == "pred" else kg.node_id(term)
            if tid is None:
                raise UnknownTermError(term)
            slots.append(Slot.bound(tid))
    nodes = tuple(slots[0::2])
    preds = tuple(slots[1::2])
    return QueryPattern(topology, nodes, preds)


def canonical_key(qp: QueryPattern) -> str:
    """Id-level serialization of a canonical pattern; used for dedupe and
    exact-match buffer lookups within one graph."""
    ids = [s.bound_id if s.is_bound else None for s in qp.slots()]
    return json.dumps({"topology": qp.topology, "k": qp.k, "ids": ids}, sort_keys=True)
