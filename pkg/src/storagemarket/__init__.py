"""Energy-storage aggregator market simulation library."""

__version__ = "0.1.0"
