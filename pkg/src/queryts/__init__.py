"""Query-token embeddings and a hierarchical forecaster for irregular
multivariate time series, on a self-contained float64 autodiff core."""

__version__ = "0.1.0"
