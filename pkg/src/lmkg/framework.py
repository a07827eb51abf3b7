"""Model registry, routing, the exact outlier side-table, persistence, and
the evaluation harness with log-5 result-size buckets."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .encoders import EncodingSpec, SgShape
from .lmkg_s import LmkgSModel, SEstimate, TrainConfigS, estimate_s
from .lmkg_u import LmkgUModel, PositionVocab, TrainConfigU, UEstimate, estimate_u
from .patterns import QueryPattern, canonical_key, canonicalize_pattern
from .sampler import LabeledQuery
from .serialize import pack_container, read_container, unpack_container, write_container

MODEL_MAGIC = b"LMKGM\x00"
MODEL_VERSION = 1


class NoRouteError(LookupError):
    pass


class RegistryError(ValueError):
    pass


# -- q-error and buckets -------------------------------------------------------


def qerror(estimate: float, truth: float) -> float:
    """max(e/t, t/e) with both sides clamped at 1 so the metric stays finite."""
    e = max(float(estimate), 1.0)
    t = max(float(truth), 1.0)
    return e / t if e >= t else t / e


def bucket_index(truth: int) -> int:
    """i such that truth lies in [5^i, 5^(i+1)), with truth clamped to >= 1."""
    t = max(int(truth), 1)
    i = 0
    bound = 5
    while t >= bound:
        i += 1
        bound *= 5
    return i


def bucket_label(i: int) -> str:
    return f"[5^{i},5^{i + 1})"


# -- registry --------------------------------------------------------------------


@dataclass(frozen=True)
class RegistryEntry:
    kind: str  # "lmkg_s" | "lmkg_u"
    topologies: frozenset
    k_min: int
    k_max: int
    model: object

    def covers(self, topology: str, k: int) -> bool:
        return topology in self.topologies and self.k_min <= k <= self.k_max

    def shapes(self):
        return {(t, k) for t in self.topologies for k in range(self.k_min, self.k_max + 1)}


def entry_for_model(model) -> RegistryEntry:
    if isinstance(model, LmkgSModel):
        ks = [k for _, k in model.supported_shapes]
        tops = frozenset(t for t, _ in model.supported_shapes)
        return RegistryEntry("lmkg_s", tops, min(ks), max(ks), model)
    if isinstance(model, LmkgUModel):
        return RegistryEntry("lmkg_u", frozenset([model.topology]), model.k, model.k, model)
    raise TypeError(f"unknown model type {type(model)!r}")


class ModelRegistry:
    """Maps (topology, k) to exactly one model; overlaps are rejected."""

    def __init__(self, entries, grouping: str = "by_type_and_size", coverage=None):
        self.entries = list(entries)
        self.grouping = grouping
        declared = set()
        for e in self.entries:
            for shape in e.shapes():
                if shape in declared:
                    raise RegistryError(f"overlapping route for {shape}")
                declared.add(shape)
        self.coverage = set(coverage) if coverage is not None else declared
        missing = self.coverage - declared
        if missing:
            raise RegistryError(f"declared coverage has gaps: {sorted(missing)}")

    @classmethod
    def from_models(cls, models, grouping: str = "by_type_and_size") -> "ModelRegistry":
        return cls([entry_for_model(m) for m in models], grouping)

    def route(self, qp: QueryPattern) -> RegistryEntry:
        qp = canonicalize_pattern(qp)
        for entry in self.entries:
            if entry.covers(qp.topology, qp.k):
                return entry
        raise NoRouteError(f"no model covers {qp.topology} k={qp.k}")


# -- outlier buffer -----------------------------------------------------------------


class OutlierBuffer:
    """Exact cardinalities for the K largest-card queries, keyed on the
    canonical pattern serialization; lookups are exact-match only."""

    def __init__(self, capacity: int = 100):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._table: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self._table)

    @classmethod
    def from_training(cls, queries: list[LabeledQuery], capacity: int = 100) -> "OutlierBuffer":
        buf = cls(capacity)
        ranked = sorted(
            queries, key=lambda lq: (-lq.card, canonical_key(canonicalize_pattern(lq.pattern)))
        )
        for lq in ranked[:capacity]:
            buf._table[canonical_key(canonicalize_pattern(lq.pattern))] = lq.card
        return buf

    def lookup(self, qp: QueryPattern) -> int | None:
        return self._table.get(canonical_key(canonicalize_pattern(qp)))

    def patterns(self) -> list[str]:
        return sorted(self._table)


# -- estimation front door ------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    value: float
    provenance: str  # "buffer" | "lmkg_s" | "lmkg_u"
    novel_term: bool = False
    zero_mass: bool = False


def estimate(
    registry: ModelRegistry,
    qp: QueryPattern,
    buffer: OutlierBuffer | None = None,
    use_buffer: bool = True,
    num_samples: int = 200,
    seed: int = 0,
) -> Estimate:
    qp = canonicalize_pattern(qp)
    if buffer is not None and use_buffer:
        hit = buffer.lookup(qp)
        if hit is not None:
            return Estimate(float(hit), "buffer")
    entry = registry.route(qp)
    if entry.kind == "lmkg_s":
        res: SEstimate = estimate_s(entry.model, qp)
        return Estimate(res.value, "lmkg_s", novel_term=res.novel_term)
    res_u: UEstimate = estimate_u(entry.model, qp, num_samples=num_samples, seed=seed)
    return Estimate(res_u.value, "lmkg_u", zero_mass=res_u.zero_mass)


# -- evaluation harness -----------------------------------------------------------------


@dataclass
class EvalRow:
    pattern_key: str
    truth: int
    estimate: float
    provenance: str
    q_error: float
    millis: float
    bucket: int


@dataclass
class EvalReport:
    rows: list[EvalRow]
    failures: int
    aggregates: dict
    buckets: list[dict]
    model_sizes: dict
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "aggregates": self.aggregates,
            "buckets": self.buckets,
            "model_sizes_bytes": self.model_sizes,
            "evaluated": len(self.rows),
            "routing_failures": self.failures,
            "config": self.config,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["pattern", "truth", "estimate", "provenance", "q_error", "millis", "bucket"])
            for r in self.rows:
                w.writerow(
                    [r.pattern_key, r.truth, f"{r.estimate:.6g}", r.provenance,
                     f"{r.q_error:.6g}", f"{r.millis:.4f}", bucket_label(r.bucket)]
                )


def _aggregate(qerrs: list[float]) -> dict:
    if not qerrs:
        return {"count": 0}
    arr = np.array(qerrs)
    return {
        "count": len(qerrs),
        "mean": float(arr.mean()),
        "median": float(np.median(arr)),
        "p95": float(np.percentile(arr, 95)),
        "p99": float(np.percentile(arr, 99)),
        "max": float(arr.max()),
    }


def evaluate_workload(
    registry: ModelRegistry,
    test_set: list[LabeledQuery],
    buffer: OutlierBuffer | None = None,
    use_buffer: bool = True,
    num_samples: int = 200,
    seed: int = 0,
    config: dict | None = None,
) -> EvalReport:
    """Estimate every test query individually on a warm model.

    Timing covers encoding plus the forward pass (and sampling for the
    autoregressive path); patterns arrive parsed, so parsing is excluded.
    Queries that fail to route are counted but excluded from aggregates.
    """
    if not test_set:
        raise ValueError("empty test set")
    rows: list[EvalRow] = []
    failures = 0
    for lq in test_set:
        qp = canonicalize_pattern(lq.pattern)
        try:
            t0 = time.perf_counter()
            res = estimate(registry, qp, buffer, use_buffer, num_samples, seed)
            millis = (time.perf_counter() - t0) * 1e3
        except NoRouteError:
            failures += 1
            continue
        rows.append(
            EvalRow(
                pattern_key=canonical_key(qp),
                truth=lq.card,
                estimate=res.value,
                provenance=res.provenance,
                q_error=qerror(res.value, lq.card),
                millis=millis,
                bucket=bucket_index(lq.card),
            )
        )
    rows.sort(key=lambda r: (r.bucket, r.pattern_key))
    buckets = []
    for i in sorted({r.bucket for r in rows}):
        sub = [r.q_error for r in rows if r.bucket == i]
        buckets.append({"bucket": bucket_label(i), "index": i, **_aggregate(sub)})
    sizes = {}
    for j, entry in enumerate(registry.entries):
        sizes[f"{entry.kind}[{j}]"] = len(model_to_bytes(entry.model))
    report = EvalReport(
        rows=rows,
        failures=failures,
        aggregates=_aggregate([r.q_error for r in rows]),
        buckets=buckets,
        model_sizes=sizes,
        config=config or {},
    )
    return report


# -- persistence -----------------------------------------------------------------------


def _dense_desc(layer) -> dict:
    if isinstance(layer, nn.ConcatDenseLayer):
        return {
            "type": "concat",
            "activation": layer.parts[0][2].activation,
            "slices": [[lo, hi] for lo, hi, _ in layer.parts],
            "out": layer.parts[0][2].out_width,
        }
    return {
        "type": "dense",
        "activation": layer.activation,
        "in": layer.in_width,
        "out": layer.out_width,
    }


def _s_payload(model: LmkgSModel) -> tuple[dict, dict]:
    header = {
        "kind": "s",
        "encoding": model.encoding,
        "spec": model.spec.to_json(),
        "sg_shape": model.sg_shape.to_json() if model.sg_shape else None,
        "shapes": sorted([t, k] for t, k in model.supported_shapes),
        "scale_min": model.scale_min,
        "scale_max": model.scale_max,
        "config": model.config.to_json(),
        "metadata": model.metadata,
        "arch": [_dense_desc(layer) for layer in model.net.layers],
    }
    arrays = {}
    for name, arr in zip(model.net.parameter_names(), model.net.parameters()):
        arrays[name] = arr
    return header, arrays


def _s_restore(header: dict, arrays: dict) -> LmkgSModel:
    spec = EncodingSpec.from_json(header["spec"])
    sg_shape = SgShape.from_json(header["sg_shape"]) if header["sg_shape"] else None
    layers = []
    for desc in header["arch"]:
        if desc["type"] == "concat":
            parts = []
            for lo, hi in desc["slices"]:
                parts.append(
                    (lo, hi, nn.DenseLayer(np.zeros((desc["out"], hi - lo)), np.zeros(desc["out"]), desc["activation"]))
                )
            layers.append(nn.ConcatDenseLayer(parts))
        else:
            layers.append(
                nn.DenseLayer(np.zeros((desc["out"], desc["in"])), np.zeros(desc["out"]), desc["activation"])
            )
    net = nn.Network(layers)
    net.load_parameters([arrays[name] for name in net.parameter_names()])
    model = LmkgSModel(
        encoding=header["encoding"],
        spec=spec,
        sg_shape=sg_shape,
        supported_shapes=frozenset((t, int(k)) for t, k in header["shapes"]),
        net=net,
        scale_min=float(header["scale_min"]),
        scale_max=float(header["scale_max"]),
        config=TrainConfigS.from_json(header["config"]),
        metadata=header["metadata"],
    )
    return model


def _u_payload(model: LmkgUModel) -> tuple[dict, dict]:
    header = {
        "kind": "u",
        "topology": model.topology,
        "k": model.k,
        "n_shape": model.n_shape,
        "train_mode": model.train_mode,
        "config": model.config.to_json(),
        "metadata": model.metadata,
    }
    arrays = dict(model.plan.to_arrays())
    for p, vocab in enumerate(model.vocabs):
        arrays[f"vocab.{p}"] = np.array(vocab.ids, dtype=np.int64)
        arrays[f"emb.{p}"] = model.embeddings[p]
    for name, arr in zip(model.net.parameter_names(), model.net.parameters()):
        arrays[f"net.{name}"] = arr
    return header, arrays


def _u_restore(header: dict, arrays: dict) -> LmkgUModel:
    config = TrainConfigU.from_json(header["config"])
    plan = nn.MadeMaskPlan.from_arrays(arrays, n_hidden=1)
    D = plan.D
    vocabs = [PositionVocab(arrays[f"vocab.{p}"]) for p in range(D)]
    embeddings = [np.asarray(arrays[f"emb.{p}"], dtype=np.float64) for p in range(D)]
    mask_in, mask_out = plan.layer_masks()
    deg = np.array(plan.hidden_degrees[0])
    mask_hh = (deg[:, None] >= deg[None, :]).astype(np.float64)
    h = config.hidden_width
    layers: list = [nn.MaskedDenseLayer(np.zeros((h, mask_in.shape[1])), np.zeros(h), mask_in)]
    for _ in range(config.blocks):
        layers.append(
            nn.MaskedResidualBlock(np.zeros((h, h)), np.zeros(h), np.zeros((h, h)), np.zeros(h), mask_hh)
        )
    out_w = mask_out.shape[0]
    layers.append(nn.MaskedDenseLayer(np.zeros((out_w, h)), np.zeros(out_w), mask_out))
    net = nn.Network(layers)
    net.load_parameters([arrays[f"net.{name}"] for name in net.parameter_names()])
    return LmkgUModel(
        topology=header["topology"],
        k=int(header["k"]),
        vocabs=vocabs,
        embeddings=embeddings,
        net=net,
        plan=plan,
        n_shape=int(header["n_shape"]),
        train_mode=header["train_mode"],
        config=config,
        metadata=header["metadata"],
    )


def model_to_bytes(model) -> bytes:
    if isinstance(model, LmkgSModel):
        header, arrays = _s_payload(model)
    elif isinstance(model, LmkgUModel):
        header, arrays = _u_payload(model)
    else:
        raise TypeError(f"cannot serialize {type(model)!r}")
    return pack_container(MODEL_MAGIC, MODEL_VERSION, header, arrays)


def model_from_bytes(data: bytes):
    header, arrays = unpack_container(data, MODEL_MAGIC, MODEL_VERSION)
    if header["kind"] == "s":
        return _s_restore(header, arrays)
    if header["kind"] == "u":
        return _u_restore(header, arrays)
    raise ValueError(f"unknown model kind {header['kind']!r}")


def save_model(model, path) -> int:
    """Write the versioned model container; returns the byte size."""
    data = model_to_bytes(model)
    Path(path).write_bytes(data)
    return len(data)


def load_model(path):
    return model_from_bytes(Path(path).read_bytes())


def model_info(path) -> dict:
    """Structural summary of a saved model plus its on-disk byte size."""
    raw = Path(path).read_bytes()
    header, arrays = unpack_container(raw, MODEL_MAGIC, MODEL_VERSION)
    params = sum(int(np.prod(a.shape)) for n, a in arrays.items() if not n.startswith(("vocab.", "plan.")))
    info = {
        "path": str(path),
        "file_bytes": len(raw),
        "kind": header["kind"],
        "parameters": params,
        "config": header.get("config", {}),
        "metadata": {k: v for k, v in header.get("metadata", {}).items() if k != "loss_curve"},
    }
    if header["kind"] == "s":
        info.update(
            {
                "encoding": header["encoding"],
                "shapes": header["shapes"],
                "spec": header["spec"],
                "sg_shape": header["sg_shape"],
                "scale": [header["scale_min"], header["scale_max"]],
            }
        )
    else:
        info.update(
            {
                "encoding": "pattern_bound",
                "topology": header["topology"],
                "k": header["k"],
                "n_shape": header["n_shape"],
                "vocab_sizes": [int(arrays[f"vocab.{p}"].size) + 1 for p in range(2 * int(header["k"]) + 1)],
            }
        )
    return info


def load_models_dir(path, kind: str | None = None) -> list:
    """All *.lmkgm models in a directory, optionally filtered by kind."""
    models = []
    for p in sorted(Path(path).glob("*.lmkgm")):
        model = load_model(p)
        model_kind = "s" if isinstance(model, LmkgSModel) else "u"
        if kind is None or kind == model_kind:
            models.append(model)
    if not models:
        raise FileNotFoundError(f"no models loaded from {path}")
    return models
