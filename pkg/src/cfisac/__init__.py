"""Monte Carlo engine for dynamic-TDD cell-free MIMO with integrated sensing."""

__version__ = "0.1.0"
