"""Behavioral risk profiling and classification of stablecoin wallets.

The pipeline runs ingest -> graphstore -> features -> learners/gnn -> evaluation
-> explain; ``stableaml.synth`` produces labeled corpora for testing it.
"""

__version__ = "0.1.0"
