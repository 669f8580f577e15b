"""Multi-channel replay attack detection with a learnable filter-and-sum front end."""

__version__ = "0.1.0"
