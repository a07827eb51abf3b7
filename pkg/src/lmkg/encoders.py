"""Bit-level query featurization.

Three layers: per-term one-hot/binary codes, flat pattern-bound vectors
tied to one (topology, k), and the subgraph form (A, X, E) that also
captures topology. Id 0 is the reserved all-zero "unbound" codeword in
every scheme; real ids start at 1, so unbound never collides with a term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .patterns import TOPOLOGIES, QueryPattern, Slot


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class EncodingSpec:
    """Domain sizes and term mode; widths leave room for the reserved id 0."""

    d: int
    b: int
    term_mode: str = "binary"

    def __post_init__(self):
        if self.d < 0 or self.b < 0:
            raise ValueError("domain sizes must be non-negative")
        if self.term_mode not in ("onehot", "binary"):
            raise ValueError(f"unknown term mode {self.term_mode!r}")

    @property
    def w_node(self) -> int:
        # ceil(log2(d + 1)): id d must fit and the zero codeword stays free
        return self.d.bit_length()

    @property
    def w_pred(self) -> int:
        return self.b.bit_length()

    @property
    def node_width(self) -> int:
        return self.d if self.term_mode == "onehot" else self.w_node

    @property
    def pred_width(self) -> int:
        return self.b if self.term_mode == "onehot" else self.w_pred

    @classmethod
    def from_kg(cls, kg, term_mode: str = "binary") -> "EncodingSpec":
        return cls(kg.d, kg.b, term_mode)

    def to_json(self) -> dict:
        return {"d": self.d, "b": self.b, "term_mode": self.term_mode}

    @classmethod
    def from_json(cls, obj: dict) -> "EncodingSpec":
        return cls(int(obj["d"]), int(obj["b"]), obj["term_mode"])


def onehot_encode(term_id: int, domain_size: int) -> np.ndarray:
    """Length-domain_size vector with bit term_id-1 set; id 0 is all-zero."""
    if term_id < 0 or term_id > domain_size:
        raise EncodingError(f"id {term_id} outside domain [0, {domain_size}]")
    out = np.zeros(domain_size, dtype=np.uint8)
    if term_id >= 1:
        out[term_id - 1] = 1
    return out


def binary_encode(term_id: int, width: int) -> np.ndarray:
    """Base-2 code, most-significant bit first; id 0 is all-zero."""
    if term_id < 0 or term_id >= (1 << width):
        raise EncodingError(f"id {term_id} does not fit in {width} bits")
    return np.array([(term_id >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def binary_decode(bits) -> int:
    value = 0
    for bit in bits:
        value = (value << 1) | int(bit)
    return value


def _encode_slot(slot: Slot, domain: int, width: int, mode: str) -> np.ndarray:
    term_id = slot.bound_id if slot.is_bound else 0
    if mode == "onehot":
        return onehot_encode(term_id, domain)
    return binary_encode(term_id, width)


# -- pattern-bound flat encoding ---------------------------------------------


@dataclass(frozen=True)
class FlatLayout:
    """Slot order and widths for a fixed (topology, k, term_mode)."""

    topology: str
    k: int
    term_mode: str
    slot_widths: tuple[int, ...]

    @property
    def width(self) -> int:
        return sum(self.slot_widths)

    @classmethod
    def for_shape(cls, spec: EncodingSpec, topology: str, k: int) -> "FlatLayout":
        if topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {topology!r}")
        if k < 1:
            raise ValueError("k must be >= 1")
        widths = [spec.node_width]
        for _ in range(k):
            widths.append(spec.pred_width)
            widths.append(spec.node_width)
        return cls(topology, k, spec.term_mode, tuple(widths))


@dataclass(frozen=True)
class FlatEncoding:
    bits: np.ndarray
    layout: FlatLayout


def encode_pattern_bound(qp: QueryPattern, spec: EncodingSpec, shape: tuple[str, int]) -> FlatEncoding:
    """Concatenated slot codes in canonical interleaved order.

    The star form is subject then each sorted (pred, obj) pair; the chain
    form is node, pred, node, ..., with shared link nodes encoded once.
    Both reduce to the same n0 p0 n1 ... p(k-1) nk slot sequence. qp must
    be canonical and match the declared shape.
    """
    topology, k = shape
    if qp.topology != topology or qp.k != k:
        raise EncodingError(f"pattern is {qp.topology} k={qp.k}, layout wants {topology} k={k}")
    layout = FlatLayout.for_shape(spec, topology, k)
    pieces = []
    for slot in qp.slots():
        is_pred = len(pieces) % 2 == 1
        domain = spec.b if is_pred else spec.d
        width = spec.pred_width if is_pred else spec.node_width
        pieces.append(_encode_slot(slot, domain, width, spec.term_mode))
    return FlatEncoding(np.concatenate(pieces), layout)


def decode_pattern_bound(enc: FlatEncoding, spec: EncodingSpec) -> QueryPattern:
    """Inverse of encode_pattern_bound on canonical patterns."""
    layout = enc.layout
    if len(enc.bits) != layout.width:
        raise EncodingError(f"bit length {len(enc.bits)} != layout width {layout.width}")
    slots: list[Slot] = []
    next_var = 0
    off = 0
    for i, width in enumerate(layout.slot_widths):
        chunk = enc.bits[off : off + width]
        off += width
        domain = spec.b if i % 2 == 1 else spec.d
        if layout.term_mode == "onehot":
            hot = np.flatnonzero(chunk)
            if len(hot) > 1:
                raise EncodingError(f"slot {i}: multiple bits set in one-hot code")
            term_id = int(hot[0]) + 1 if len(hot) == 1 else 0
        else:
            term_id = binary_decode(chunk)
        if term_id > domain:
            raise EncodingError(f"slot {i}: decoded id {term_id} exceeds domain {domain}")
        if term_id == 0:
            slots.append(Slot.variable(next_var))
            next_var += 1
        else:
            slots.append(Slot.bound(term_id))
    return QueryPattern(layout.topology, tuple(slots[0::2]), tuple(slots[1::2]))


# -- subgraph (A, X, E) encoding ----------------------------------------------


@dataclass(frozen=True)
class SgShape:
    """Node / edge capacities; a pattern of size k needs k+1 nodes, k edges."""

    n_max: int
    e_max: int

    def __post_init__(self):
        if self.n_max < 2 or self.e_max < 1:
            raise ValueError("need n_max >= 2 and e_max >= 1")

    def fits(self, k: int) -> bool:
        return self.n_max >= k + 1 and self.e_max >= k

    @classmethod
    def for_max_k(cls, k_max: int) -> "SgShape":
        return cls(k_max + 1, k_max)

    def to_json(self) -> dict:
        return {"n_max": self.n_max, "e_max": self.e_max}

    @classmethod
    def from_json(cls, obj: dict) -> "SgShape":
        return cls(int(obj["n_max"]), int(obj["e_max"]))


@dataclass(frozen=True)
class SgEncoding:
    """A[i, j, l] = 1 when triple l links node position i to node position j.

    Node positions follow canonical order (star: subject then objects in
    sorted-pair order; chain: path order); edge positions follow triple
    order. X rows are binary node-id codes, E rows binary predicate-id
    codes; unbound slots and unused rows are all-zero.
    """

    A: np.ndarray
    X: np.ndarray
    E: np.ndarray

    def flatten(self) -> np.ndarray:
        # model input order: X, A, E
        return np.concatenate([self.X.ravel(), self.A.ravel(), self.E.ravel()])


def sg_widths(spec: EncodingSpec, shape: SgShape) -> tuple[int, int, int]:
    """(X, A, E) flattened widths, in flatten() order components."""
    x_w = shape.n_max * spec.w_node
    a_w = shape.n_max * shape.n_max * shape.e_max
    e_w = shape.e_max * spec.w_pred
    return x_w, a_w, e_w


def encode_sg(qp: QueryPattern, spec: EncodingSpec, shape: SgShape) -> SgEncoding:
    n_nodes = qp.k + 1
    n_edges = qp.k
    if not shape.fits(qp.k):
        raise EncodingError(
            f"pattern needs n={n_nodes}, e={n_edges} but shape allows n_max={shape.n_max}, e_max={shape.e_max}"
        )
    A = np.zeros((shape.n_max, shape.n_max, shape.e_max), dtype=np.uint8)
    X = np.zeros((shape.n_max, spec.w_node), dtype=np.uint8)
    E = np.zeros((shape.e_max, spec.w_pred), dtype=np.uint8)
    for i, slot in enumerate(qp.nodes):
        X[i] = _encode_slot(slot, spec.d, spec.w_node, "binary")
    for l, slot in enumerate(qp.preds):
        E[l] = _encode_slot(slot, spec.b, spec.w_pred, "binary")
    for l in range(qp.k):
        i = 0 if qp.topology == "star" else l
        A[i, l + 1, l] = 1
    return SgEncoding(A, X, E)
