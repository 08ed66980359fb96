"""Salient-object extraction from video with attention priors and graph cuts."""
__version__ = "0.1.0"
