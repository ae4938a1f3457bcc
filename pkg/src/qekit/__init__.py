"""Quality-estimation heads, ensembling, span derivation and metrics."""

__version__ = "0.1.0"
