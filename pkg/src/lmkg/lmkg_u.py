"""Unsupervised autoregressive cardinality estimator.

A masked residual network models the joint distribution of the 2k+1 term
ids of one query shape in canonical slot order, with an independent
learned embedding table per position. Densities convert to counts through
the recorded instance population size, and partially bound queries are
estimated by likelihood-weighted forward sampling: walk the positions in
order, multiply the running weight by the conditional probability at
bound slots, and draw from the conditional at unbound ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .kg import KnowledgeGraph
from .patterns import QueryPattern, canonical_key, canonicalize_pattern, population_size
from .sampler import InstanceSampler, SamplingError


class PositionVocab:
    """Ordered term ids seen at one position, plus one trailing UNK entry.

    Ids unseen in training map to UNK, which is trained on nothing and so
    keeps a small but nonzero probability: out-of-vocabulary terms degrade
    gracefully instead of crashing or returning zero.
    """

    def __init__(self, ids):
        self.ids: tuple[int, ...] = tuple(sorted(set(int(i) for i in ids)))
        if not self.ids:
            raise ValueError("empty vocabulary")
        self._index = {t: i for i, t in enumerate(self.ids)}

    @property
    def unk_index(self) -> int:
        return len(self.ids)

    @property
    def size(self) -> int:
        return len(self.ids) + 1

    def index_of(self, term_id: int) -> int:
        return self._index.get(term_id, self.unk_index)


@dataclass(frozen=True)
class TrainConfigU:
    epochs: int = 5
    batch_size: int = 128
    hidden_width: int = 64
    blocks: int = 2
    learning_rate: float = 1e-3
    lr_decay: str = "none"  # "none" | "cosine"; cosine anneals to 0 over the epochs
    embed_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.blocks < 0:
            raise ValueError("blocks must be >= 0")
        if self.lr_decay not in ("none", "cosine"):
            raise ValueError(f"unknown lr decay {self.lr_decay!r}")

    def to_json(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "hidden_width": self.hidden_width,
            "blocks": self.blocks,
            "learning_rate": self.learning_rate,
            "lr_decay": self.lr_decay,
            "embed_dim": self.embed_dim,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfigU":
        return cls(
            epochs=int(obj["epochs"]),
            batch_size=int(obj["batch_size"]),
            hidden_width=int(obj["hidden_width"]),
            blocks=int(obj["blocks"]),
            learning_rate=float(obj["learning_rate"]),
            lr_decay=obj.get("lr_decay", "none"),
            embed_dim=int(obj["embed_dim"]),
            seed=int(obj["seed"]),
        )


@dataclass(frozen=True)
class UEstimate:
    value: float  # clamped cardinality estimate, >= 1
    mass: float = 0.0  # raw probability mass, before population scaling
    zero_mass: bool = False


@dataclass
class LmkgUModel:
    topology: str
    k: int
    vocabs: list[PositionVocab]
    embeddings: list[np.ndarray]
    net: nn.Network
    plan: nn.MadeMaskPlan
    n_shape: int
    train_mode: str
    config: TrainConfigU
    metadata: dict = field(default_factory=dict)

    @property
    def D(self) -> int:
        return 2 * self.k + 1

    @property
    def group_sizes(self) -> list[int]:
        return [v.size for v in self.vocabs]

    def group_offsets(self) -> list[int]:
        offsets = [0]
        for size in self.group_sizes:
            offsets.append(offsets[-1] + size)
        return offsets

    def embed_indexes(self, idx: np.ndarray) -> np.ndarray:
        """[N, D] vocab indexes -> [N, D * embed_dim] network input."""
        return np.concatenate(
            [self.embeddings[p][idx[:, p]] for p in range(self.D)], axis=1
        )

    def indexes_for(self, qp: QueryPattern) -> list[int | None]:
        """Per-position vocab index for bound slots, None for variables."""
        if qp.topology != self.topology or qp.k != self.k:
            raise ValueError(f"model is {self.topology} k={self.k}, query is {qp.topology} k={qp.k}")
        out = []
        for p, slot in enumerate(qp.slots()):
            out.append(self.vocabs[p].index_of(slot.bound_id) if slot.is_bound else None)
        return out

    def log_density_indexes(self, idx: np.ndarray) -> np.ndarray:
        """log P(x) for whole rows of vocab indexes; [N] result."""
        idx = np.asarray(idx, dtype=np.int64)
        logits, _ = self.net.forward(self.embed_indexes(idx))
        log_probs = nn.grouped_log_softmax(logits, self.group_sizes)
        offsets = self.group_offsets()
        rows = np.arange(idx.shape[0])
        total = np.zeros(idx.shape[0])
        for p in range(self.D):
            total += log_probs[rows, offsets[p] + idx[:, p]]
        return total


def train_u(
    instances: list[QueryPattern],
    kg: KnowledgeGraph,
    config: TrainConfigU | None = None,
    train_mode: str = "uniform",
) -> LmkgUModel:
    """Fit the density model on canonical bound instances of one shape."""
    config = config or TrainConfigU()
    if not instances:
        raise ValueError("empty training set")
    topology, k = instances[0].topology, instances[0].k
    for inst in instances:
        if inst.topology != topology or inst.k != k:
            raise ValueError("mixed shapes in training set")
        if not inst.is_bound:
            raise ValueError("unsupervised training data must be fully bound")
        if canonicalize_pattern(inst) != inst:
            raise ValueError("instances must be canonical")
    D = 2 * k + 1
    columns = [[inst.slots()[p].bound_id for inst in instances] for p in range(D)]
    vocabs = [PositionVocab(col) for col in columns]
    idx = np.stack(
        [np.array([vocabs[p].index_of(t) for t in columns[p]], dtype=np.int64) for p in range(D)],
        axis=1,
    )

    n_shape = population_size(kg, topology, k)
    distinct = len({canonical_key(i) for i in instances})
    if distinct > n_shape:
        raise ValueError(
            f"{distinct} distinct training instances exceed the population size {n_shape}; "
            "training data does not come from this graph"
        )

    net, plan = nn.build_resmade(
        D,
        input_widths=[config.embed_dim] * D,
        hidden_width=config.hidden_width,
        n_blocks=config.blocks,
        output_widths=[v.size for v in vocabs],
        seed=config.seed,
    )
    emb_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 4]))
    embeddings = [nn.glorot_uniform(emb_rng, v.size, config.embed_dim) for v in vocabs]

    model = LmkgUModel(
        topology=topology,
        k=k,
        vocabs=vocabs,
        embeddings=embeddings,
        net=net,
        plan=plan,
        n_shape=n_shape,
        train_mode=train_mode,
        config=config,
        metadata={"instances": len(instances), "seed": config.seed},
    )

    params = net.parameters() + embeddings
    adam = nn.AdamState(params, learning_rate=config.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 5]))
    n = len(instances)
    group_sizes = model.group_sizes
    ed = config.embed_dim
    curve = []
    for epoch in range(config.epochs):
        if config.lr_decay == "cosine":
            adam.learning_rate = config.learning_rate * 0.5 * (
                1.0 + float(np.cos(np.pi * epoch / config.epochs))
            )
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, config.batch_size):
            rows = order[lo : lo + config.batch_size]
            batch_idx = idx[rows]
            x = model.embed_indexes(batch_idx)
            logits, caches = net.forward(x)
            loss, dlogits = nn.nll_loss(logits, batch_idx, group_sizes)
            net_grads, dx = net.backward(caches, dlogits)
            emb_grads = [np.zeros_like(t) for t in embeddings]
            for p in range(D):
                np.add.at(emb_grads[p], batch_idx[:, p], dx[:, p * ed : (p + 1) * ed])
            adam.step(net_grads + emb_grads)
            epoch_loss += loss * len(rows)
        curve.append(epoch_loss / n)
    model.metadata.update({"epochs_run": config.epochs, "final_loss": curve[-1], "loss_curve": curve})
    return model


def density(model: LmkgUModel, instance: QueryPattern) -> float:
    """Joint probability of one fully bound instance (UNK for unseen ids)."""
    if not instance.is_bound:
        raise ValueError("density needs a fully bound instance")
    idx = np.array([model.indexes_for(instance)], dtype=np.int64)
    return float(np.exp(model.log_density_indexes(idx)[0]))


def _conditional_probs(model: LmkgUModel, assigned: np.ndarray, position: int) -> np.ndarray:
    """P(x_position | earlier positions) for each row of assigned."""
    hidden = model.net.forward_prefix(model.embed_indexes(assigned), n_tail=1)
    offsets = model.group_offsets()
    logits = model.net.layers[-1].forward_rows(hidden, offsets[position], offsets[position + 1])
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def estimate_u(
    model: LmkgUModel,
    qp: QueryPattern,
    num_samples: int = 200,
    seed: int | np.random.Generator = 0,
) -> UEstimate:
    """Cardinality estimate for a canonical pattern of the model's shape.

    Fully bound patterns use the exact model density. Otherwise the
    probability mass of the bound slots is estimated by likelihood-weighted
    forward sampling and scaled by the instance population size. The
    result is floored at 1 unless the sampled mass is exactly zero, which
    is reported via the zero_mass flag.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    qp = canonicalize_pattern(qp)
    bound = model.indexes_for(qp)
    if all(i is not None for i in bound):
        mass = float(np.exp(model.log_density_indexes(np.array([bound], dtype=np.int64))[0]))
        value = model.n_shape * mass
        return UEstimate(max(value, 1.0) if mass > 0.0 else 1.0, mass=mass, zero_mass=mass == 0.0)

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    assigned = np.zeros((num_samples, model.D), dtype=np.int64)
    weights = np.ones(num_samples)
    for p in range(model.D):
        probs = _conditional_probs(model, assigned, p)
        if bound[p] is not None:
            weights *= probs[:, bound[p]]
            assigned[:, p] = bound[p]
        else:
            u = rng.random(num_samples)
            cum = probs.cumsum(axis=1)
            draw = (u[:, None] > cum).sum(axis=1)
            assigned[:, p] = np.minimum(draw, probs.shape[1] - 1)
    mass = float(weights.mean())
    value = model.n_shape * mass
    return UEstimate(max(value, 1.0) if mass > 0.0 else 1.0, mass=mass, zero_mass=mass == 0.0)


def default_train_mode(kg: KnowledgeGraph, topology: str, k: int) -> str:
    """uniform when the population is countable, else the walk scheme."""
    try:
        population_size(kg, topology, k)
        InstanceSampler(kg, topology, k, "uniform")
        return "uniform"
    except (OverflowError, SamplingError):
        return "random_walk"
