"""Out-of-view audio-visual panorama segmentation bench."""

__version__ = "0.1.0"
