"""Simulation and verification toolkit for continuum percolation in the
Boolean model, its multiscale variant and the stable-marriage dominated
ball process."""

__version__ = "0.1.0"
