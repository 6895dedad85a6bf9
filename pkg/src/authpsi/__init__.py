"""Authenticated private set intersection with tree-committed inputs.

Parties commit to their sets up front; any input that drifts from its
commitment makes every honest party abort instead of producing output. Two
engines are provided: a two-party protocol over oblivious key-value stores
and VOLE correlations, and an n-party protocol tolerating t collusions built
from XOR zero-sharing and programmable PRFs.
"""

__version__ = "0.1.0"
