"""Virtual inertia scheduling for real-time economic dispatch."""

__version__ = "0.1.0"
