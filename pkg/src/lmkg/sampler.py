"""Training-data generation: bound pattern instances and masked labeled
queries, by exhaustive enumeration or by sampling.

Two sampling modes exist deliberately. ``uniform`` draws exactly uniformly
from the canonical instance population (star: subject weighted by the
number of k-subsets of its out-pairs, then a uniform subset; chain:
walk-count-weighted start, then step weights proportional to remaining
walk counts), which keeps population_size x model density an unbiased
count. ``random_walk`` is the cheaper degree-biased scheme: a uniform
start node followed by uniform out-edge steps, re-drawing duplicate star
edges and restarting dead-end chains within a fixed retry budget.
"""

from __future__ import annotations

import itertools
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

from .kg import KnowledgeGraph
from .patterns import (
    QueryPattern,
    Slot,
    canonical_key,
    canonicalize_pattern,
    chain_walk_counts,
    count_matches,
    make_chain,
    make_star,
    pattern_from_json,
    pattern_to_json,
    population_size,
)

RETRY_BUDGET = 64

MODES = ("enumerate", "uniform", "random_walk")


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LabeledQuery:
    """A pattern with at least one variable and its exact cardinality."""

    pattern: QueryPattern
    card: int


@dataclass(frozen=True)
class MaskPolicy:
    """Per-slot unbind probability plus the supervised-mode constraints."""

    prob: float = 0.5
    allow_unbound_predicates: bool = False
    min_unbound: int = 1

    def __post_init__(self):
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError("mask probability must be in [0, 1]")
        if self.min_unbound < 0:
            raise ValueError("min_unbound must be >= 0")


@dataclass(frozen=True)
class SamplerConfig:
    topology: str
    k: int
    count: int
    mode: str = "uniform"
    supervised: bool = False
    mask: MaskPolicy = field(default_factory=MaskPolicy)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_json(self) -> dict:
        return {
            "topology": self.topology,
            "k": self.k,
            "count": self.count,
            "mode": self.mode,
            "supervised": self.supervised,
            "mask": {
                "prob": self.mask.prob,
                "allow_unbound_predicates": self.mask.allow_unbound_predicates,
                "min_unbound": self.mask.min_unbound,
            },
            "seed": self.seed,
            "workers": self.workers,
        }


# -- enumeration --------------------------------------------------------------


def enumerate_instances(kg: KnowledgeGraph, topology: str, k: int, limit: int) -> list[QueryPattern]:
    """The full canonical population, in deterministic order."""
    population = population_size(kg, topology, k)
    if population > limit:
        raise SamplingError(f"population {population} exceeds limit {limit}")
    out: list[QueryPattern] = []
    if topology == "star":
        for s in kg.subjects():
            pairs = kg.out(s)
            if len(pairs) < k:
                continue
            for combo in itertools.combinations(pairs, k):
                out.append(
                    make_star(Slot.bound(s), [(Slot.bound(p), Slot.bound(o)) for p, o in combo])
                )
    else:
        def walk(node, remaining, acc_nodes, acc_preds):
            if remaining == 0:
                out.append(
                    make_chain([Slot.bound(n) for n in acc_nodes], [Slot.bound(p) for p in acc_preds])
                )
                return
            for p, o in kg.out(node):
                walk(o, remaining - 1, acc_nodes + [o], acc_preds + [p])

        for s in kg.subjects():
            walk(s, k, [s], [])
    return out


# -- single-instance sampling --------------------------------------------------


class InstanceSampler:
    """Samples canonical bound instances of one shape; precomputes weights."""

    def __init__(self, kg: KnowledgeGraph, topology: str, k: int, mode: str):
        if mode not in ("uniform", "random_walk"):
            raise ValueError(f"unknown sampling mode {mode!r}")
        self.kg = kg
        self.topology = topology
        self.k = k
        self.mode = mode
        self._star_weights = None
        self._walk_tables = None
        if mode == "uniform":
            if topology == "star":
                weights = []
                for s in kg.subjects():
                    w = math.comb(kg.out_degree(s), k)
                    if w:
                        weights.append((s, w))
                if not weights:
                    raise SamplingError(f"no star instance of size {k} exists")
                self._star_weights = weights
                self._star_total = sum(w for _, w in weights)
            else:
                tables = chain_walk_counts(kg, k)
                starts = [(s, tables[k][s]) for s in kg.subjects() if tables[k][s] > 0]
                if not starts:
                    raise SamplingError(f"no chain instance of size {k} exists")
                self._walk_tables = tables
                self._walk_starts = starts
                self._walk_total = sum(w for _, w in starts)
        else:
            if topology == "star":
                if all(kg.out_degree(s) < k for s in kg.subjects()):
                    raise SamplingError(f"no star instance of size {k} exists")
            else:
                tables = chain_walk_counts(kg, k)
                if all(tables[k][s] == 0 for s in kg.subjects()):
                    raise SamplingError(f"no chain instance of size {k} exists")

    def sample(self, rng: random.Random) -> QueryPattern:
        if self.mode == "uniform":
            inst = self._sample_uniform(rng)
        else:
            inst = self._sample_random_walk(rng)
        return canonicalize_pattern(inst)

    def _weighted_pick(self, rng, items, total):
        r = rng.randrange(total)
        acc = 0
        for value, w in items:
            acc += w
            if r < acc:
                return value
        raise AssertionError("weights exhausted")

    def _sample_uniform(self, rng) -> QueryPattern:
        kg, k = self.kg, self.k
        if self.topology == "star":
            s = self._weighted_pick(rng, self._star_weights, self._star_total)
            combo = sorted(rng.sample(list(kg.out(s)), k))
            return make_star(Slot.bound(s), [(Slot.bound(p), Slot.bound(o)) for p, o in combo])
        tables = self._walk_tables
        node = self._weighted_pick(rng, self._walk_starts, self._walk_total)
        nodes, preds = [node], []
        for remaining in range(k, 0, -1):
            edges = [((p, o), tables[remaining - 1][o]) for p, o in kg.out(node)]
            total = sum(w for _, w in edges)
            p, o = self._weighted_pick(rng, edges, total)
            preds.append(p)
            nodes.append(o)
            node = o
        return make_chain([Slot.bound(n) for n in nodes], [Slot.bound(p) for p in preds])

    def _sample_random_walk(self, rng) -> QueryPattern:
        kg, k = self.kg, self.k
        for _ in range(RETRY_BUDGET):
            s = rng.randint(1, kg.d)
            out = kg.out(s)
            if self.topology == "star":
                if len(out) < k:
                    continue
                picked: set = set()
                draws = 0
                while len(picked) < k and draws < 16 * k + RETRY_BUDGET:
                    picked.add(out[rng.randrange(len(out))])
                    draws += 1
                if len(picked) < k:
                    continue
                combo = sorted(picked)
                return make_star(Slot.bound(s), [(Slot.bound(p), Slot.bound(o)) for p, o in combo])
            nodes, preds = [s], []
            node = s
            ok = True
            for _ in range(k):
                edges = kg.out(node)
                if not edges:
                    ok = False
                    break
                p, o = edges[rng.randrange(len(edges))]
                preds.append(p)
                nodes.append(o)
                node = o
            if ok:
                return make_chain([Slot.bound(n) for n in nodes], [Slot.bound(p) for p in preds])
        raise SamplingError(f"retry budget ({RETRY_BUDGET}) exhausted sampling {self.topology} k={self.k}")


def sample_instance(kg: KnowledgeGraph, topology: str, k: int, mode: str, rng: random.Random) -> QueryPattern:
    return InstanceSampler(kg, topology, k, mode).sample(rng)


# -- masking -------------------------------------------------------------------


def _maskable_slot_indexes(qp: QueryPattern, policy: MaskPolicy) -> list[int]:
    # interleaved slot order: even indexes are nodes, odd are predicates
    n = 2 * qp.k + 1
    return [i for i in range(n) if i % 2 == 0 or policy.allow_unbound_predicates]


def _apply_mask(qp: QueryPattern, unbind: set[int]) -> QueryPattern:
    slots = list(qp.slots())
    for i in unbind:
        slots[i] = Slot.variable(i)
    pattern = QueryPattern(qp.topology, tuple(slots[0::2]), tuple(slots[1::2]))
    return canonicalize_pattern(pattern)


def mask_instance(
    kg: KnowledgeGraph, instance: QueryPattern, policy: MaskPolicy, rng: random.Random
) -> LabeledQuery:
    """Unbind slots of a bound canonical instance and label the result.

    Each maskable slot unbinds independently with policy.prob; draws are
    repeated until at least min_unbound slots are unbound, and if the
    budget runs out (always, when prob is 0) the shortfall is forced by
    unbinding uniformly chosen slots. The label is a fresh exact count.
    """
    if not instance.is_bound:
        raise ValueError("mask_instance expects a fully bound instance")
    maskable = _maskable_slot_indexes(instance, policy)
    want = min(policy.min_unbound, len(maskable))
    unbind: set[int] = set()
    if policy.prob > 0.0:
        for _ in range(RETRY_BUDGET):
            unbind = {i for i in maskable if rng.random() < policy.prob}
            if len(unbind) >= want:
                break
    if len(unbind) < want:
        missing = want - len(unbind)
        pool = [i for i in maskable if i not in unbind]
        unbind.update(rng.sample(pool, missing))
    masked = _apply_mask(instance, unbind)
    return LabeledQuery(masked, count_matches(kg, masked))


# -- dataset generation ----------------------------------------------------------


def _worker_rngs(seed: int, workers: int) -> list[random.Random]:
    root = random.Random(seed)
    return [random.Random(root.getrandbits(64)) for _ in range(workers)]


def generate_training_set(kg: KnowledgeGraph, config: SamplerConfig):
    """Build a dataset per the config.

    Unsupervised: ``count`` bound instances (sampling keeps duplicates --
    the empirical frequency is the training signal; enumerate mode emits
    the whole population exactly once, using count as the limit).
    Supervised: ``count`` distinct masked queries with fresh exact labels.
    Deterministic given (seed, workers).
    """
    if config.mode == "enumerate":
        instances = enumerate_instances(kg, config.topology, config.k, config.count)
        if not config.supervised:
            return instances
        rngs = _worker_rngs(config.seed, 1)
        records, seen = [], set()
        for inst in instances:
            lq = mask_instance(kg, inst, config.mask, rngs[0])
            key = canonical_key(lq.pattern)
            if key not in seen:
                seen.add(key)
                records.append(lq)
        return records

    sampler = InstanceSampler(kg, config.topology, config.k, config.mode)
    rngs = _worker_rngs(config.seed, config.workers)

    if not config.supervised:
        per_worker = [config.count // config.workers] * config.workers
        for i in range(config.count % config.workers):
            per_worker[i] += 1
        merged: list[QueryPattern] = []
        for rng, quota in zip(rngs, per_worker):
            merged.extend(sampler.sample(rng) for _ in range(quota))
        return merged

    records: list[LabeledQuery] = []
    seen: set[str] = set()
    attempts_left = config.count * RETRY_BUDGET
    while len(records) < config.count:
        round_quota = config.count - len(records)
        per_worker = [round_quota // config.workers] * config.workers
        for i in range(round_quota % config.workers):
            per_worker[i] += 1
        candidates: list[LabeledQuery] = []
        for rng, quota in zip(rngs, per_worker):
            for _ in range(quota):
                inst = sampler.sample(rng)
                candidates.append(mask_instance(kg, inst, config.mask, rng))
        for lq in candidates:
            key = canonical_key(lq.pattern)
            if key not in seen:
                seen.add(key)
                records.append(lq)
                if len(records) == config.count:
                    break
        attempts_left -= round_quota
        if attempts_left <= 0 and len(records) < config.count:
            raise SamplingError(
                f"could not collect {config.count} distinct queries "
                f"(got {len(records)}); population may be too small"
            )
    return records


# -- JSONL wire format -------------------------------------------------------------


def record_to_json(record, kg: KnowledgeGraph) -> dict:
    if isinstance(record, LabeledQuery):
        obj = pattern_to_json(record.pattern, kg)
        obj["card"] = record.card
    else:
        obj = pattern_to_json(record, kg)
        obj["card"] = None
    return obj


def record_from_json(obj: dict, kg: KnowledgeGraph):
    pattern = pattern_from_json(obj, kg)
    card = obj.get("card")
    if card is None:
        return pattern
    return LabeledQuery(pattern, int(card))


def write_jsonl(records, kg: KnowledgeGraph, path, config: SamplerConfig | None = None) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record_to_json(record, kg), sort_keys=True))
            f.write("\n")
    if config is not None:
        meta = {"config": config.to_json(), "records": len(records)}
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_jsonl(path, kg: KnowledgeGraph) -> list:
    records = []
    with Path(path).open("r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(record_from_json(json.loads(line), kg))
    return records
