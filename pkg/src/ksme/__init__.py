"""Kernel similarity metrics (KSMe) and behavioural metrics on finite MDPs."""

__version__ = "0.1.0"
