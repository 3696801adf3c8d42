"""Dense per-point field coding for landmark and axis detection on 3D surfaces."""

__version__ = "0.1.0"
