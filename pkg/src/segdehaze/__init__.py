"""Mask-guided single-image dehazing with grayscale-coded segmentation channels."""

__version__ = "0.1.0"
