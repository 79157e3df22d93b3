"""Scale-adaptive encoder-decoder segmentation for whole-slide images."""

__version__ = "0.1.0"
