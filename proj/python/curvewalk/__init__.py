"""Curve grouping and aggregation operators for point clouds."""

from curvewalk._core import (
    CurveNet,
    ball_query,
    farthest_point_sample,
    gradcheck,
    group_curves,
    interpolate_3nn,
    knn,
    normalize_unit_sphere,
    parse_off,
    sample_surface,
    synth_cloud,
)

__all__ = [
    "CurveNet",
    "ball_query",
    "farthest_point_sample",
    "gradcheck",
    "group_curves",
    "interpolate_3nn",
    "knn",
    "normalize_unit_sphere",
    "parse_off",
    "sample_surface",
    "synth_cloud",
]
