"""CASTLE regularization: supervised prediction jointly with causal-DAG learning."""

__version__ = "0.1.0"
SPEC_VERSION = "1"
