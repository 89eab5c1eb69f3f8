"""Load balancing on sparse bounded-degree queueing networks.

Schedulers sit on the nodes of a sparse graph, each owning one finite
FIFO queue, and may forward arriving packets only to direct neighbors.
The package provides exact epoch-level transition kernels, an exact
event simulator, classical and learned routing policies, a single
controller training loop, and a reproducible experiment harness.
"""
from . import env, harness, kernel, nn, policies, simulator, topology, traffic, trainer

__all__ = [
    "env",
    "harness",
    "kernel",
    "nn",
    "policies",
    "simulator",
    "topology",
    "traffic",
    "trainer",
]

__version__ = "0.1.0"
