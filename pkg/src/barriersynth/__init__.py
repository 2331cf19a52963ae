"""Synthesis of invariant barrier certificates for polynomial ODEs."""

__version__ = "0.1.0"
