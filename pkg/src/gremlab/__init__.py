"""Desk-scale laboratory for the cascading two-level GREM under Random Hopping Dynamics."""
__version__ = "0.1.0"
