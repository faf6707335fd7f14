"""Audio-based liquid-height perception for simulated robotic pouring."""

__version__ = "0.1.0"
