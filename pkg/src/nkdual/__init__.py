"""Exact kernel duals of finite-width neural networks."""

from . import errors, global_dual, hermite, kernels, lenk, local_dual, netgraph, oracle

__all__ = [
    "errors", "global_dual", "hermite", "kernels", "lenk", "local_dual",
    "netgraph", "oracle",
]

__version__ = "0.1.0"
