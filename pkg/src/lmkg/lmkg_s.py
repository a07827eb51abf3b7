"""Supervised cardinality regressor.

A feed-forward network over encoded patterns, trained with a mean
multiplicative-error objective on log/min-max scaled targets. The sigmoid
output u_hat inverts to exp(m + u_hat * (M - m)) where m and M are the
min and max of ln(card) over the training set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .encoders import EncodingSpec, FlatLayout, SgShape, encode_pattern_bound, encode_sg, sg_widths
from .patterns import QueryPattern, canonicalize_pattern
from .sampler import LabeledQuery

ENCODINGS = ("pattern_bound", "sg")


class RoutingError(ValueError):
    """Query shape not covered by the model."""


@dataclass(frozen=True)
class TrainConfigS:
    epochs: int = 200
    batch_size: int = 128
    hidden: tuple[int, ...] = (512, 512)
    learning_rate: float = 1e-3
    seed: int = 0
    # per-part projections kick in only for large subgraph inputs
    per_part_threshold: int = 4096
    per_part_width: int = 256

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    def to_json(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "hidden": list(self.hidden),
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "per_part_threshold": self.per_part_threshold,
            "per_part_width": self.per_part_width,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfigS":
        return cls(
            epochs=int(obj["epochs"]),
            batch_size=int(obj["batch_size"]),
            hidden=tuple(int(w) for w in obj["hidden"]),
            learning_rate=float(obj["learning_rate"]),
            seed=int(obj["seed"]),
            per_part_threshold=int(obj["per_part_threshold"]),
            per_part_width=int(obj["per_part_width"]),
        )


@dataclass(frozen=True)
class SEstimate:
    value: float
    novel_term: bool = False


def shape_input_width(spec: EncodingSpec, encoding: str, shape: tuple[str, int], sg_shape: SgShape | None) -> int:
    if encoding == "pattern_bound":
        return FlatLayout.for_shape(spec, *shape).width
    x_w, a_w, e_w = sg_widths(spec, sg_shape)
    return x_w + a_w + e_w


@dataclass
class LmkgSModel:
    encoding: str
    spec: EncodingSpec
    sg_shape: SgShape | None
    supported_shapes: frozenset
    net: nn.Network
    scale_min: float
    scale_max: float
    config: TrainConfigS
    metadata: dict = field(default_factory=dict)

    @property
    def input_width(self) -> int:
        return self.net.in_width

    def encode(self, qp: QueryPattern) -> np.ndarray:
        """Feature vector, zero-padded up to the model's input width."""
        if self.encoding == "pattern_bound":
            bits = encode_pattern_bound(qp, self.spec, (qp.topology, qp.k)).bits
        else:
            bits = encode_sg(qp, self.spec, self.sg_shape).flatten()
        x = np.zeros(self.input_width, dtype=np.float64)
        x[: len(bits)] = bits
        return x


def _validate_shapes(encoding: str, shapes) -> frozenset:
    shapes = frozenset((t, int(k)) for t, k in shapes)
    if not shapes:
        raise ValueError("no supported shapes")
    if encoding == "pattern_bound" and len({t for t, _ in shapes}) > 1:
        # star and chain collapse to identical flat vectors at equal k,
        # so one flat model cannot tell them apart
        raise ValueError("pattern_bound models cover a single topology; use sg for mixed")
    return shapes


def _build_net(spec, encoding, sg_shape, input_width, config) -> nn.Network:
    if encoding == "sg":
        x_w, a_w, e_w = sg_widths(spec, sg_shape)
        if a_w > config.per_part_threshold:
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
            slices = [(0, x_w), (x_w, x_w + a_w), (x_w + a_w, x_w + a_w + e_w)]
            first = nn.ConcatDenseLayer.create(rng, slices, config.per_part_width, activation="relu")
            layers = [first]
            prev = first.out_width
            for w in config.hidden:
                layers.append(nn.DenseLayer.create(rng, prev, w, activation="relu"))
                prev = w
            layers.append(nn.DenseLayer.create(rng, prev, 1, activation="sigmoid"))
            return nn.Network(layers)
    return nn.build_mlp(input_width, config.hidden, config.seed, out_width=1, out_activation="sigmoid")


def train_s(
    dataset: list[LabeledQuery],
    spec: EncodingSpec,
    encoding: str = "sg",
    config: TrainConfigS | None = None,
    sg_shape: SgShape | None = None,
    shapes=None,
) -> LmkgSModel:
    """Fit the regressor on labeled queries.

    Scaling bounds come from the training labels; when all labels are
    equal the scaled space is degenerate and every prediction inverts to
    that label, so the optimization loop is skipped.
    """
    config = config or TrainConfigS()
    if encoding not in ENCODINGS:
        raise ValueError(f"unknown encoding {encoding!r}")
    if not dataset:
        raise ValueError("empty training set")
    for lq in dataset:
        if lq.card < 1:
            raise ValueError("training labels must be >= 1 (masked existing instances)")
    patterns = [canonicalize_pattern(lq.pattern) for lq in dataset]
    shapes = _validate_shapes(encoding, shapes or {(p.topology, p.k) for p in patterns})
    if encoding == "sg" and sg_shape is None:
        sg_shape = SgShape.for_max_k(max(k for _, k in shapes))
    if encoding == "sg":
        bad = [k for _, k in shapes if not sg_shape.fits(k)]
        if bad:
            raise ValueError(f"sg shape {sg_shape} cannot hold k={max(bad)}")
    input_width = max(shape_input_width(spec, encoding, s, sg_shape) for s in shapes)

    net = _build_net(spec, encoding, sg_shape, input_width, config)
    model = LmkgSModel(
        encoding=encoding,
        spec=spec,
        sg_shape=sg_shape,
        supported_shapes=shapes,
        net=net,
        scale_min=0.0,
        scale_max=0.0,
        config=config,
        metadata={"init": "glorot_uniform", "seed": config.seed},
    )

    log_y = np.log([float(lq.card) for lq in dataset])
    m, mm = float(log_y.min()), float(log_y.max())
    model.scale_min, model.scale_max = m, mm
    if mm == m:
        # degenerate scaling: any output inverts to the single label
        model.metadata.update({"epochs_run": 0, "final_loss": 1.0, "loss_curve": []})
        return model

    x_all = np.stack([model.encode(p) for p in patterns])
    u_all = (log_y - m) / (mm - m)

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))
    params = net.parameters()
    adam = nn.AdamState(params, learning_rate=config.learning_rate)
    n = len(dataset)
    curve = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            out, caches = net.forward(x_all[idx])
            pred = out[:, 0]
            loss, dpred = nn.qerror_loss(pred, u_all[idx], m, mm)
            grads, _ = net.backward(caches, dpred[:, None])
            adam.step(grads)
            epoch_loss += loss * len(idx)
        curve.append(epoch_loss / n)
    model.metadata.update(
        {"epochs_run": config.epochs, "final_loss": curve[-1], "loss_curve": curve}
    )
    return model


def estimate_s(model: LmkgSModel, qp: QueryPattern) -> SEstimate:
    """Estimate the cardinality of a canonical pattern; always >= 1.

    Bound ids outside the model's encoding domains cannot come from the
    graph the model was trained on, so they yield the floor estimate with
    the novel-term flag set.
    """
    qp = canonicalize_pattern(qp)
    if (qp.topology, qp.k) not in model.supported_shapes:
        raise RoutingError(f"model does not cover {qp.topology} k={qp.k}")
    for i, slot in enumerate(qp.slots()):
        if not slot.is_bound:
            continue
        domain = model.spec.b if i % 2 == 1 else model.spec.d
        if slot.bound_id > domain:
            return SEstimate(1.0, novel_term=True)
    out, _ = model.net.forward(model.encode(qp))
    u_hat = float(out[0, 0])
    value = float(np.exp(model.scale_min + u_hat * (model.scale_max - model.scale_min)))
    return SEstimate(max(value, 1.0), novel_term=False)
