"""facelab: desk-scale analysis-by-neural-synthesis face reconstruction."""

__version__ = "0.1.0"
