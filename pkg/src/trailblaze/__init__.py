"""Stereo-video trajectory toolkit: tracking, disparity fusion, encoding, classification."""

__version__ = "0.1.0"
