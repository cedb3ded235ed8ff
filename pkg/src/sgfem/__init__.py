"""Mixed finite elements for stress gradient elasticity in 2D."""

__version__ = "0.1.0"
