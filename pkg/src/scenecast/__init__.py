"""Entity-centric stochastic video prediction on toy toppling-block scenes."""

__version__ = "0.1.0"
