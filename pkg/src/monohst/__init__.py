"""Online monotone embeddings into hierarchically well-separated trees."""
from .core import (
    ARRIVE,
    DEPART,
    MetricSpace,
    UpdateEvent,
    UpdateSequence,
    build_metric,
    metric_stats,
    read_sequence,
    relevant_scales,
    subset_scale_count_bound,
    write_sequence,
)
from .hst import EmbeddingTrace, Hst, PartitionStack, Snapshot, hst_distance, induced_hst, refine, validate_hst

__version__ = "0.1.0"
