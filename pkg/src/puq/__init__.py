"""Uncertainty-guided quantitative MRI: MC-dropout unrolled reconstruction and pixel-wise MLP fitting."""

__version__ = "0.1.0"
