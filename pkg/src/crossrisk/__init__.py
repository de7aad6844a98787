"""Crosswalk camera analytics: tracked trajectories, scene-level behavioral
features, and pedestrian safety margin statistics."""

__version__ = "0.1.0"
