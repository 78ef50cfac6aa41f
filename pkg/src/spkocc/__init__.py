"""Spike-camera occlusion removal: simulation, SpkOccNet, training and evaluation."""

__version__ = "0.1.0"
