"""Physics-informed neural dead reckoning for inertial navigation."""

__version__ = "0.1.0"
