"""Graph representation learning for omics case-control classification."""

__version__ = "0.1.0"
