"""ts2r: battery time-series to semantic descriptors, templated expressions,
and structured reports, with an offline evaluation harness."""

__version__ = "0.1.0"
