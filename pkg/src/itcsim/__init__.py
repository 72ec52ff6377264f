"""Simulation engine for anchored indirect treatment comparisons under
non-collapsible effect measures."""

__version__ = "0.1.0"
