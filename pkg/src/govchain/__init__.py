"""Ledger-governed multi-agent decision pipeline on a simulated clock."""

__version__ = "0.1.0"
