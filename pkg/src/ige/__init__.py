"""Power-domain interference graph estimation for concurrent-flooding networks."""

__version__ = "0.1.0"
