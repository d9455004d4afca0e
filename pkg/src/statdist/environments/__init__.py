"""Ground-truth-bearing transition generators for the benchmark families."""

from . import gridworld, ou, potentials, queue

__all__ = ["queue", "ou", "potentials", "gridworld"]
