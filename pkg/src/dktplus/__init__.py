"""Deep knowledge tracing with prediction-consistent regularization."""

__version__ = "0.1.0"
