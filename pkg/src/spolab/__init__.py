"""Single-stream policy optimization on tabular verifiable-reward environments."""

__version__ = "0.1.0"
