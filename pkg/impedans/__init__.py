"""Surface impedance inference from two-layer microphone array pressures."""

__version__ = "0.1.0"
