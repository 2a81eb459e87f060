"""Eco-driving and eco-heating simulation for a power-split hybrid."""

__version__ = "0.1.0"
