"""Simulator of xApp conflict mitigation in an O-RAN Near-RT RIC."""

__version__ = "0.1.0"
