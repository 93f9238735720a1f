"""Graph-aware Transformer for single-step retrosynthesis on SMILES."""

__version__ = "0.1.0"
