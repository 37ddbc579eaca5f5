"""Desk-scale classical verification of quantum computation built on LWE trapdoor claw-free functions."""

__version__ = "0.1.0"
