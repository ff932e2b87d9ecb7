"""Data-driven q-function learning with sampled linear programs."""

__version__ = "0.1.0"
