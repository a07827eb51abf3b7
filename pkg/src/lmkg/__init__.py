"""Learned cardinality estimation for star and chain queries over RDF
knowledge graphs: exact counting, samplers, encoders, two learned
estimators, and an evaluation harness."""

from .encoders import EncodingSpec, SgShape
from .framework import (
    Estimate,
    EvalReport,
    ModelRegistry,
    NoRouteError,
    OutlierBuffer,
    estimate,
    evaluate_workload,
    load_model,
    save_model,
)
from .kg import IngestReport, KnowledgeGraph, Term, ingest_ntriples
from .lmkg_s import LmkgSModel, TrainConfigS, estimate_s, train_s
from .lmkg_u import LmkgUModel, TrainConfigU, density, estimate_u, train_u
from .patterns import (
    QueryPattern,
    Slot,
    UnknownTermError,
    canonicalize_pattern,
    count_matches,
    parse_query_text,
    population_size,
)
from .sampler import (
    LabeledQuery,
    MaskPolicy,
    SamplerConfig,
    enumerate_instances,
    generate_training_set,
    mask_instance,
    sample_instance,
)

__version__ = "0.1.0"

__all__ = [
    "EncodingSpec",
    "SgShape",
    "Estimate",
    "EvalReport",
    "ModelRegistry",
    "NoRouteError",
    "OutlierBuffer",
    "estimate",
    "evaluate_workload",
    "load_model",
    "save_model",
    "IngestReport",
    "KnowledgeGraph",
    "Term",
    "ingest_ntriples",
    "LmkgSModel",
    "TrainConfigS",
    "estimate_s",
    "train_s",
    "LmkgUModel",
    "TrainConfigU",
    "density",
    "estimate_u",
    "train_u",
    "QueryPattern",
    "Slot",
    "UnknownTermError",
    "canonicalize_pattern",
    "count_matches",
    "parse_query_text",
    "population_size",
    "LabeledQuery",
    "MaskPolicy",
    "SamplerConfig",
    "enumerate_instances",
    "generate_training_set",
    "mask_instance",
    "sample_instance",
    "__version__",
]
