"""Patch-decomposed face similarity: layouts, similarity breakdowns, fusion and verification."""

from ._core import (
    EmbeddingSet,
    FusionModel,
    PatchLayout,
    RRFError,
    best_threshold,
    cross_validate,
    decode_embeddings,
    encode_embeddings,
    fit_fusion,
    heatmap,
    layout_fingerprint,
    layout_patches,
    local_similarity,
    mirror_map,
    read_embeddings,
    region_similarity,
    rrfnet_breakdown,
    rrfnet_similarity,
    shape_plan,
    write_embeddings,
)

__all__ = [
    "EmbeddingSet",
    "FusionModel",
    "PatchLayout",
    "RRFError",
    "best_threshold",
    "cross_validate",
    "decode_embeddings",
    "encode_embeddings",
    "fit_fusion",
    "heatmap",
    "layout_fingerprint",
    "layout_patches",
    "local_similarity",
    "mirror_map",
    "read_embeddings",
    "region_similarity",
    "rrfnet_breakdown",
    "rrfnet_similarity",
    "shape_plan",
    "write_embeddings",
]
