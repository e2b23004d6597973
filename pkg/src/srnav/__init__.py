"""Super-resolution visual navigation simulator for parallel-plane needle guides."""

__version__ = "0.1.0"
