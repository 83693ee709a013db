"""Graph-attention collision-distance estimation for planar arms in clutter."""

__version__ = "0.1.0"
