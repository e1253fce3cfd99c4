"""Detectors for unseen classes from image-level labels.

Strong/weak baseline detectors on a procedural shapes world, budgeted
fine-tuning of a relabelled slot, and similarity-weighted
classifier-to-detector weight adaptation.
"""

__version__ = "0.1.0"
