"""Inverse reinforcement learning of minimum-threat paths on grid threat fields."""

__version__ = "0.1.0"
