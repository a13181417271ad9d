"""Resource allocation for reliable V2X multicast over cellular base stations."""

__version__ = "0.1.0"
