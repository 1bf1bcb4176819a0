"""Topological-memory navigation on deterministic gridworlds.

The package is organised around a per-step navigation pipeline: a
capacity-bounded topological map of visited places (short-term memory),
a single recurrent global vector aggregating the map (long-term memory),
and a graph-attention encoding of both (working memory) that two
cross-attention decoders read to drive an LSTM policy. A forgetting
module can temporarily drop low-attention map nodes at evaluation time.
"""

__version__ = "0.1.0"
