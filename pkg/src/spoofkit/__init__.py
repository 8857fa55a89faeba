"""Desk-scale toolkit for training and evaluating audio anti-spoofing countermeasures."""

__version__ = "0.1.0"
