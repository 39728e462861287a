"""Waypoint-graph round simulator with learned pairwise damage models."""

__version__ = "0.1.0"
