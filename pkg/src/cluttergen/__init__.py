"""Synthetic cluttered-scene generation with manipulation relationships and grasps."""
__version__ = "0.1.0"
