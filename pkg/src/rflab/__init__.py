"""Bluetooth RF fingerprinting with an embedding-assisted attentional network."""

__version__ = "0.1.0"
