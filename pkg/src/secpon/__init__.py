"""Physical-layer simulator for key distribution over coherent PON pilot symbols."""

__version__ = "0.1.0"
