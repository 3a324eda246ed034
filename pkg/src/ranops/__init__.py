"""ranops: agentic observability and control for a simulated Open RAN.

The platform wires together a deterministic RAN simulator, a versioned
declarative resource store with watch streams, a delta-fed retrieval
index, a tool-calling agent graph behind an HTTP/CLI surface, and an
evaluation harness for benchmarking language-model backends.
"""

__version__ = "0.1.0"
