"""Hardware-free UR-style robot control stack."""

__version__ = "0.1.0"
