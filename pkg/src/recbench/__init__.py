"""Fair-comparison benchmark for tuning implicit-feedback top-N recommenders."""

__version__ = "0.1.0"
