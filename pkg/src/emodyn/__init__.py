"""Clustering of irregular emotion time series with state-space mixtures."""

__version__ = "0.1.0"

from .types import (  # noqa: F401
    EMOTIONS,
    AssessmentRecord,
    ClusterParameters,
    FittedMixture,
    TimeSeries,
    validate_series,
)
