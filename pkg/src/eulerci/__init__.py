"""One-step convex integration for Euler-Reynolds flows on the 3-torus, with a verification harness."""

__version__ = "0.1.0"
