"""Clock synchronization over circulant overlays of a complete network."""

__version__ = "0.1.0"
