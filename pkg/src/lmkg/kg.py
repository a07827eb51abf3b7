"""Dictionary-encoded in-memory RDF knowledge graph.

Triples come from an N-Triples subset and are interned into dense 1-based
integer ids. Subjects and objects share a single node id space; predicates
have their own. Id 0 is reserved everywhere to mean "unbound/absent".
A graph is immutable once built and safe to share across threads.
"""

from __future__ import annotations

import gzip
import os
from bisect import bisect_left
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .serialize import read_container, write_container

KG_MAGIC = b"LMKGKG\x00"
KG_VERSION = 1

_TERM_KINDS = ("iri", "literal", "blank")
_KIND_CODE = {"iri": 0, "literal": 1, "blank": 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


class MalformedTripleError(ValueError):
    """A line that does not parse as a triple; carries its 1-based line number."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


@dataclass(frozen=True, slots=True)
class Term:
    """An RDF term. kind is one of iri | literal | blank.

    lexical holds the IRI without angle brackets, the full literal with its
    quotes and any datatype/language tag verbatim, or the blank-node label.
    Terms compare by exact (kind, lexical) equality; literal values are
    never normalized, so "x" and "x"^^<t> are distinct terms.
    """

    kind: str
    lexical: str

    def __post_init__(self):
        if self.kind not in _TERM_KINDS:
            raise ValueError(f"unknown term kind {self.kind!r}")
        if not self.lexical:
            raise ValueError("empty lexical form")

    def render(self) -> str:
        """N-Triples surface form."""
        if self.kind == "iri":
            return f"<{self.lexical}>"
        if self.kind == "blank":
            return f"_:{self.lexical}"
        return self.lexical


def parse_term_text(text: str) -> Term:
    """Inverse of Term.render for a single already-isolated token."""
    text = text.strip()
    if text.startswith("<") and text.endswith(">") and len(text) > 2:
        return Term("iri", text[1:-1])
    if text.startswith("_:") and len(text) > 2:
        return Term("blank", text[2:])
    if text.startswith('"'):
        return Term("literal", text)
    raise ValueError(f"cannot parse term {text!r}")


@dataclass(frozen=True)
class IngestReport:
    lines_read: int
    triples_kept: int
    duplicates: int
    malformed: int


class GraphStats(NamedTuple):
    triple_count: int
    d: int
    b: int
    max_out_degree: int
    max_in_degree: int


class KnowledgeGraph:
    """Immutable set of (s, p, o) id triples with dictionaries and indexes.

    out_index maps each subject to its sorted (pred, obj) pairs, in_index
    maps each object to its sorted (subj, pred) pairs; both cover every
    triple exactly once.
    """

    def __init__(self, node_terms, pred_terms, triples, report: IngestReport | None = None):
        self._node_terms: tuple[Term, ...] = tuple(node_terms)
        self._pred_terms: tuple[Term, ...] = tuple(pred_terms)
        self._node_ids = {t: i + 1 for i, t in enumerate(self._node_terms)}
        self._pred_ids = {t: i + 1 for i, t in enumerate(self._pred_terms)}
        if len(self._node_ids) != len(self._node_terms):
            raise ValueError("duplicate node terms")
        if len(self._pred_ids) != len(self._pred_terms):
            raise ValueError("duplicate predicate terms")
        self._triples = frozenset(tuple(t) for t in triples)
        d, b = len(self._node_terms), len(self._pred_terms)
        out: dict[int, list] = {}
        inn: dict[int, list] = {}
        for s, p, o in self._triples:
            if not (1 <= s <= d and 1 <= p <= b and 1 <= o <= d):
                raise ValueError(f"triple ({s},{p},{o}) outside dictionary ranges")
            out.setdefault(s, []).append((p, o))
            inn.setdefault(o, []).append((s, p))
        for lst in out.values():
            lst.sort()
        for lst in inn.values():
            lst.sort()
        self._out = {s: tuple(v) for s, v in sorted(out.items())}
        self._in = {o: tuple(v) for o, v in sorted(inn.items())}
        self._subjects = tuple(sorted(self._out))
        self.report = report

    # -- construction ------------------------------------------------------

    @classmethod
    def from_term_triples(cls, term_triples, report_extra=None) -> "KnowledgeGraph":
        """Build a graph from (Term, Term, Term) triples in first-appearance order."""
        node_terms: list[Term] = []
        pred_terms: list[Term] = []
        node_ids: dict[Term, int] = {}
        pred_ids: dict[Term, int] = {}
        triples: set[tuple[int, int, int]] = set()
        duplicates = 0

        def intern(term, ids, terms):
            i = ids.get(term)
            if i is None:
                terms.append(term)
                i = len(terms)
                ids[term] = i
            return i

        for s, p, o in term_triples:
            si = intern(s, node_ids, node_terms)
            pi = intern(p, pred_ids, pred_terms)
            oi = intern(o, node_ids, node_terms)
            t = (si, pi, oi)
            if t in triples:
                duplicates += 1
            else:
                triples.add(t)
        report = None
        if report_extra is not None:
            lines_read, malformed = report_extra
            report = IngestReport(lines_read, len(triples), duplicates, malformed)
        return cls(node_terms, pred_terms, triples, report)

    # -- basic queries -----------------------------------------------------

    @property
    def d(self) -> int:
        return len(self._node_terms)

    @property
    def b(self) -> int:
        return len(self._pred_terms)

    @property
    def triple_count(self) -> int:
        return len(self._triples)

    def __contains__(self, triple) -> bool:
        return tuple(triple) in self._triples

    def iter_triples(self):
        """Deterministic (sorted) iteration over id triples."""
        return iter(sorted(self._triples))

    def subjects(self) -> tuple[int, ...]:
        """Node ids with at least one outgoing edge, ascending."""
        return self._subjects

    def out(self, s: int) -> tuple:
        return self._out.get(s, ())

    def inn(self, o: int) -> tuple:
        return self._in.get(o, ())

    def out_degree(self, s: int) -> int:
        return len(self._out.get(s, ()))

    def out_with_pred(self, s: int, p: int) -> tuple:
        """Sorted (p, o) pairs of subject s restricted to predicate p."""
        pairs = self._out.get(s, ())
        lo = bisect_left(pairs, (p,))
        hi = bisect_left(pairs, (p + 1,))
        return pairs[lo:hi]

    def pred_count_between(self, s: int, o: int) -> int:
        """Number of predicates p with (s, p, o) in the graph."""
        pairs = self._in.get(o, ())
        lo = bisect_left(pairs, (s,))
        hi = bisect_left(pairs, (s + 1,))
        return hi - lo

    # -- dictionaries ------------------------------------------------------

    def node_id(self, term: Term) -> int | None:
        return self._node_ids.get(term)

    def pred_id(self, term: Term) -> int | None:
        return self._pred_ids.get(term)

    def node_term(self, i: int) -> Term:
        if not 1 <= i <= self.d:
            raise ValueError(f"node id {i} out of range [1, {self.d}]")
        return self._node_terms[i - 1]

    def pred_term(self, i: int) -> Term:
        if not 1 <= i <= self.b:
            raise ValueError(f"predicate id {i} out of range [1, {self.b}]")
        return self._pred_terms[i - 1]

    def stats(self) -> GraphStats:
        max_out = max((len(v) for v in self._out.values()), default=0)
        max_in = max((len(v) for v in self._in.values()), default=0)
        return GraphStats(self.triple_count, self.d, self.b, max_out, max_in)

    # -- round trips -------------------------------------------------------

    def to_ntriples(self) -> str:
        lines = []
        for s, p, o in self.iter_triples():
            lines.append(
                f"{self._node_terms[s - 1].render()} {self._pred_terms[p - 1].render()} "
                f"{self._node_terms[o - 1].render()} ."
            )
        return "\n".join(lines) + ("\n" if lines else "")

    def _term_tables(self, terms):
        kinds = np.array([_KIND_CODE[t.kind] for t in terms], dtype=np.uint8)
        blobs = [t.lexical.encode("utf-8") for t in terms]
        offsets = np.zeros(len(terms) + 1, dtype=np.uint64)
        for i, bb in enumerate(blobs):
            offsets[i + 1] = offsets[i] + len(bb)
        data = np.frombuffer(b"".join(blobs), dtype=np.uint8).copy() if blobs else np.zeros(0, dtype=np.uint8)
        return kinds, offsets, data

    def save(self, path) -> int:
        """Write a binary snapshot; returns byte size."""
        nk, no, nd = self._term_tables(self._node_terms)
        pk, po, pd = self._term_tables(self._pred_terms)
        triples = np.array(sorted(self._triples), dtype=np.uint64).reshape(-1, 3)
        header = {"d": self.d, "b": self.b, "triple_count": self.triple_count}
        arrays = {
            "node_kinds": nk, "node_offsets": no, "node_bytes": nd,
            "pred_kinds": pk, "pred_offsets": po, "pred_bytes": pd,
            "triples": triples,
        }
        return write_container(path, KG_MAGIC, KG_VERSION, header, arrays)

    @classmethod
    def load(cls, path) -> "KnowledgeGraph":
        header, arrays = read_container(path, KG_MAGIC, KG_VERSION)

        def terms_from(kinds, offsets, data):
            blob = data.tobytes()
            out = []
            for i, kind in enumerate(kinds):
                lo, hi = int(offsets[i]), int(offsets[i + 1])
                out.append(Term(_CODE_KIND[int(kind)], blob[lo:hi].decode("utf-8")))
            return out

        nodes = terms_from(arrays["node_kinds"], arrays["node_offsets"], arrays["node_bytes"])
        preds = terms_from(arrays["pred_kinds"], arrays["pred_offsets"], arrays["pred_bytes"])
        triples = {tuple(int(x) for x in row) for row in arrays["triples"]}
        kg = cls(nodes, preds, triples)
        if kg.d != header["d"] or kg.b != header["b"] or kg.triple_count != header["triple_count"]:
            raise ValueError("snapshot header inconsistent with tables")
        return kg


# -- N-Triples parsing -----------------------------------------------------

_LANG_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-")
_BLANK_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-.")


def _scan_term(line: str, i: int, line_no: int) -> tuple[Term, int]:
    n = len(line)
    c = line[i]
    if c == "<":
        j = line.find(">", i + 1)
        if j < 0:
            raise MalformedTripleError(line_no, "unterminated IRI")
        if j == i + 1:
            raise MalformedTripleError(line_no, "empty IRI")
        iri = line[i + 1 : j]
        if any(ch in iri for ch in ' <"'):
            raise MalformedTripleError(line_no, f"invalid IRI {iri!r}")
        return Term("iri", iri), j + 1
    if c == '"':
        j = i + 1
        while j < n:
            if line[j] == "\\":
                j += 2
                continue
            if line[j] == '"':
                break
            j += 1
        if j >= n:
            raise MalformedTripleError(line_no, "unterminated literal")
        j += 1
        if line.startswith("^^", j):
            if j + 2 >= n or line[j + 2] != "<":
                raise MalformedTripleError(line_no, "datatype tag must be an IRI")
            k = line.find(">", j + 3)
            if k < 0:
                raise MalformedTripleError(line_no, "unterminated datatype IRI")
            j = k + 1
        elif line.startswith("@", j):
            k = j + 1
            while k < n and line[k] in _LANG_CHARS:
                k += 1
            if k == j + 1:
                raise MalformedTripleError(line_no, "empty language tag")
            j = k
        return Term("literal", line[i:j]), j
    if line.startswith("_:", i):
        j = i + 2
        while j < n and line[j] in _BLANK_CHARS:
            j += 1
        if j == i + 2:
            raise MalformedTripleError(line_no, "empty blank node label")
        return Term("blank", line[i + 2 : j]), j
    raise MalformedTripleError(line_no, f"unexpected character {c!r}")


def _skip_ws(line: str, i: int) -> int:
    n = len(line)
    while i < n and line[i] in " \t":
        i += 1
    return i


def _parse_line(line: str, line_no: int) -> tuple[Term, Term, Term] | None:
    i = _skip_ws(line, 0)
    if i >= len(line) or line[i] == "#":
        return None
    s, i = _scan_term(line, i, line_no)
    if s.kind == "literal":
        raise MalformedTripleError(line_no, "literal subject")
    i = _skip_ws(line, i)
    p, i = _scan_term(line, i, line_no)
    if p.kind != "iri":
        raise MalformedTripleError(line_no, "predicate must be an IRI")
    i = _skip_ws(line, i)
    o, i = _scan_term(line, i, line_no)
    i = _skip_ws(line, i)
    if i >= len(line) or line[i] != ".":
        raise MalformedTripleError(line_no, "missing '.' terminator")
    i = _skip_ws(line, i + 1)
    if i < len(line) and line[i] != "#":
        raise MalformedTripleError(line_no, "trailing content after '.'")
    return s, p, o


def _source_bytes(source) -> bytes:
    if isinstance(source, bytes):
        data = source
    elif isinstance(source, str) and "\n" not in source and os.path.exists(source):
        data = open(source, "rb").read()
    elif isinstance(source, (str,)):
        data = source.encode("utf-8")
    elif isinstance(source, os.PathLike):
        data = open(source, "rb").read()
    elif hasattr(source, "read"):
        data = source.read()
        if isinstance(data, str):
            data = data.encode("utf-8")
    else:
        raise TypeError(f"unsupported source type {type(source)!r}")
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def ingest_ntriples(source, on_error: str = "fail") -> KnowledgeGraph:
    """Parse an N-Triples source into a KnowledgeGraph.

    source may be a path, bytes, text, or a binary file object; gzip input
    is detected by magic bytes. on_error is "fail" (raise with the line
    number) or "skip_and_count". Duplicate triples are dropped and counted.
    The returned graph carries an IngestReport on .report.
    """
    if on_error not in ("fail", "skip_and_count"):
        raise ValueError(f"bad on_error mode {on_error!r}")
    try:
        text = _source_bytes(source).decode("utf-8")
    except UnicodeDecodeError as e:
        raise ValueError(f"input is not UTF-8: {e}") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    parsed: list[tuple[Term, Term, Term]] = []
    malformed = 0
    for line_no, line in enumerate(lines, start=1):
        try:
            triple = _parse_line(line, line_no)
        except MalformedTripleError:
            if on_error == "fail":
                raise
            malformed += 1
            continue
        if triple is not None:
            parsed.append(triple)
    return KnowledgeGraph.from_term_triples(parsed, report_extra=(len(lines), malformed))
