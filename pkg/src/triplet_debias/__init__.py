"""Debias long-tailed scene-graph relationship predictions with a within-triplet prior."""

__version__ = "0.1.0"

from .graphs import (
    BoundingBox,
    DebiasedGraph,
    DebiasedTriplet,
    EntityMeasurement,
    GroundTruthEntity,
    GroundTruthGraph,
    GroundTruthRelation,
    MeasurementGraph,
    PairMeasurement,
    ValidationError,
    Vocabulary,
    iou,
    load_ground_truth,
    load_measurements,
    load_vocabulary,
    vocabulary_hash,
)
from .prior import PriorModel, TripletCounts, accumulate_counts, estimate_prior
from .augment import (
    AugmentationConfig,
    EmbeddingTable,
    augment_counts,
    cosine_distance,
    epsilon_neighborhood,
    render_triplet_text,
)
from .inference import (
    InferenceConfig,
    PosteriorTable,
    TripletEvidence,
    debias_graph,
    measurement_argmax_graph,
    object_update,
    posterior_joint,
    relationship_entropy,
    relationship_update,
    wti_map,
)
from .metrics import EvalReport, apply_graph_constraint, evaluate, match_triplets

__all__ = [
    "AugmentationConfig",
    "BoundingBox",
    "DebiasedGraph",
    "DebiasedTriplet",
    "EmbeddingTable",
    "EntityMeasurement",
    "EvalReport",
    "GroundTruthEntity",
    "GroundTruthGraph",
    "GroundTruthRelation",
    "InferenceConfig",
    "MeasurementGraph",
    "PairMeasurement",
    "PosteriorTable",
    "PriorModel",
    "TripletCounts",
    "TripletEvidence",
    "ValidationError",
    "Vocabulary",
    "accumulate_counts",
    "apply_graph_constraint",
    "augment_counts",
    "cosine_distance",
    "debias_graph",
    "epsilon_neighborhood",
    "estimate_prior",
    "evaluate",
    "iou",
    "load_ground_truth",
    "load_measurements",
    "load_vocabulary",
    "match_triplets",
    "measurement_argmax_graph",
    "object_update",
    "posterior_joint",
    "relationship_entropy",
    "relationship_update",
    "render_triplet_text",
    "vocabulary_hash",
    "wti_map",
]
