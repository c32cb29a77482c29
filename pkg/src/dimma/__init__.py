"""Few-shot camera-calibrated dimming and lightness-conditioned brightening."""

__version__ = "0.1.0"
